#include "omniinput/histogram.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>

namespace omni {

OutOfRangeError::OutOfRangeError(double z)
    : Error("out_of_range", [z] {
        std::ostringstream os;
        os << std::setprecision(17) << "z=" << z << " lies outside the bin grid";
        return os.str();
      }()),
      z_(z) {}

BinGrid::BinGrid(double z_min, double z_max, double width, OutOfRangePolicy policy)
    : z_min_(z_min), width_(width), bin_count_(0), policy_(policy) {
  if (!std::isfinite(z_min) || !std::isfinite(z_max)) {
    throw InvalidArgument("grid bounds must be finite");
  }
  if (!(width > 0.0) || !std::isfinite(width)) {
    throw InvalidArgument("bin width must be > 0");
  }
  if (!(z_max > z_min)) throw InvalidArgument("grid needs z_max > z_min");
  const double ratio = (z_max - z_min) / width;
  const double nearest = std::round(ratio);
  const double count =
      std::abs(ratio - nearest) <= 1e-9 * std::max(1.0, ratio) ? nearest : std::ceil(ratio);
  if (count > 1e8) throw InvalidArgument("grid has too many bins");
  bin_count_ = std::max(1, static_cast<int>(count));
}

std::optional<int> BinGrid::find(double z) const {
  if (std::isnan(z) || z < z_min_ || z >= z_max()) return std::nullopt;
  auto k = static_cast<int>(std::floor((z - z_min_) / width_));
  k = std::clamp(k, 0, bin_count_ - 1);
  // The division can land one bin off near an edge; settle on exact edges.
  while (k > 0 && z < edge(k)) --k;
  while (k + 1 < bin_count_ && z >= edge(k + 1)) ++k;
  return k;
}

int BinGrid::bin_of(double z) const {
  if (std::isnan(z)) throw OutOfRangeError(z);
  if (auto k = find(z)) return *k;
  if (policy_ == OutOfRangePolicy::kReject) throw OutOfRangeError(z);
  return z < z_min_ ? 0 : bin_count_ - 1;
}

std::optional<std::pair<int, int>> BinGrid::bins_with_lower_edge_in(double lo,
                                                                     double hi) const {
  int first = -1;
  int last = -1;
  for (int k = 0; k < bin_count_; ++k) {
    const double e = edge(k);
    // Tolerate rounding in user-typed window bounds.
    const double tol = 1e-9 * std::max(1.0, std::abs(e));
    if (e >= lo - tol && e <= hi + tol) {
      if (first < 0) first = k;
      last = k;
    }
  }
  if (first < 0) return std::nullopt;
  return std::make_pair(first, last);
}

nlohmann::json BinGrid::to_json() const {
  return {{"z_min", z_min_},
          {"z_max", z_max()},
          {"width", width_},
          {"bin_count", bin_count_},
          {"policy", policy_ == OutOfRangePolicy::kReject ? "reject" : "clamp"}};
}

BinGrid BinGrid::from_json(const nlohmann::json& j) {
  const auto policy = j.value("policy", "clamp") == "reject"
                          ? OutOfRangePolicy::kReject
                          : OutOfRangePolicy::kClampToEdgeBins;
  BinGrid g(j.at("z_min").get<double>(), j.at("z_max").get<double>(),
            j.at("width").get<double>(), policy);
  if (j.contains("bin_count") && j["bin_count"].get<int>() != g.bin_count()) {
    throw IoError("grid manifest bin_count disagrees with its bounds");
  }
  return g;
}

BinGrid BinGrid::parse(const std::string& spec, OutOfRangePolicy policy) {
  std::vector<double> parts;
  std::stringstream ss(spec);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      parts.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ConfigError("grid", "expected zmin,zmax,dz numbers, got \"" + spec + "\"");
    }
  }
  if (parts.size() != 3) throw ConfigError("grid", "expected zmin,zmax,dz");
  try {
    return BinGrid(parts[0], parts[1], parts[2], policy);
  } catch (const InvalidArgument& e) {
    throw ConfigError("grid", e.what());
  }
}

std::string to_string(Normalization n) {
  switch (n) {
    case Normalization::kRawVisits:
      return "raw_visits";
    case Normalization::kRelativeEntropy:
      return "relative_entropy";
    case Normalization::kNormalizedToSpace:
      return "normalized_to_space";
  }
  return "unknown";
}

Normalization normalization_from_string(const std::string& s) {
  if (s == "raw_visits") return Normalization::kRawVisits;
  if (s == "relative_entropy") return Normalization::kRelativeEntropy;
  if (s == "normalized_to_space") return Normalization::kNormalizedToSpace;
  throw IoError("unknown normalization state \"" + s + "\"");
}

OutputDistribution::OutputDistribution(BinGrid g, Normalization s)
    : grid(g),
      log_counts(static_cast<std::size_t>(g.bin_count()), kNegInf),
      visits(static_cast<std::size_t>(g.bin_count()), 0),
      state(s) {}

double OutputDistribution::log_total() const { return log_sum_exp(log_counts); }

void OutputDistribution::record_visit(int k, double weight) {
  if (k < 0 || k >= bin_count()) throw InvalidArgument("bin index out of range");
  if (!(weight >= 0.0)) throw InvalidArgument("visit weight must be >= 0");
  auto& lc = log_counts[static_cast<std::size_t>(k)];
  lc = log_add(lc, std::log(weight));
  ++visits[static_cast<std::size_t>(k)];
}

OutputDistribution merge(const OutputDistribution& a, const OutputDistribution& b) {
  if (!(a.grid == b.grid)) throw GridMismatchError();
  OutputDistribution out(a.grid, a.state);
  for (std::size_t k = 0; k < out.log_counts.size(); ++k) {
    out.log_counts[k] = log_add(a.log_counts[k], b.log_counts[k]);
    out.visits[k] = a.visits[k] + b.visits[k];
  }
  return out;
}

OutputDistribution normalize_to_space(const OutputDistribution& hist,
                                      const InputSpace& space) {
  const double total = hist.log_total();
  if (total == kNegInf) {
    throw Error("empty_histogram", "cannot normalize a histogram with no mass");
  }
  OutputDistribution out = hist;
  const double shift = space.log_total_size() - total;
  for (auto& lc : out.log_counts) {
    if (lc != kNegInf) lc += shift;
  }
  out.state = Normalization::kNormalizedToSpace;
  return out;
}

std::vector<double> entropy_anchor(const OutputDistribution& hist, int reference_bin) {
  if (reference_bin < 0 || reference_bin >= hist.bin_count()) {
    throw InvalidArgument("reference bin out of range");
  }
  if (!hist.has_mass(reference_bin)) {
    throw Error("unvisited_reference",
                "reference bin " + std::to_string(reference_bin) + " was never visited");
  }
  const double ref = hist.log_counts[static_cast<std::size_t>(reference_bin)];
  std::vector<double> s(hist.log_counts.size(), kNegInf);
  for (std::size_t k = 0; k < s.size(); ++k) {
    if (hist.log_counts[k] != kNegInf) s[k] = hist.log_counts[k] - ref;
  }
  return s;
}

namespace {

std::string format_double(double v) {
  if (v == kNegInf) return "-inf";
  if (v == std::numeric_limits<double>::infinity()) return "inf";
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

double parse_double(const std::string& s) {
  if (s == "-inf") return kNegInf;
  if (s == "inf") return std::numeric_limits<double>::infinity();
  return std::stod(s);
}

}  // namespace

void write_histogram_csv(std::ostream& out, const OutputDistribution& hist) {
  out << "bin_lo,bin_hi,log_count,visits\n";
  for (int k = 0; k < hist.bin_count(); ++k) {
    out << format_double(hist.grid.lo(k)) << ',' << format_double(hist.grid.hi(k)) << ','
        << format_double(hist.log_counts[static_cast<std::size_t>(k)]) << ','
        << hist.visits[static_cast<std::size_t>(k)] << '\n';
  }
}

OutputDistribution read_histogram_csv(std::istream& in, const BinGrid& grid,
                                      Normalization state) {
  OutputDistribution hist(grid, state);
  std::string line;
  if (!std::getline(in, line) || line.rfind("bin_lo,bin_hi,log_count,visits", 0) != 0) {
    throw IoError("histogram CSV: missing header bin_lo,bin_hi,log_count,visits");
  }
  int row = 0;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string lo, hi, lc, visits;
    std::getline(ss, lo, ',');
    std::getline(ss, hi, ',');
    std::getline(ss, lc, ',');
    std::getline(ss, visits, ',');
    if (row >= grid.bin_count()) throw IoError("histogram CSV has more rows than bins");
    try {
      const double lo_v = parse_double(lo);
      if (std::abs(lo_v - grid.lo(row)) > 1e-9 * std::max(1.0, std::abs(lo_v))) {
        throw IoError("histogram CSV row " + std::to_string(row) +
                      " does not match the grid edge");
      }
      hist.log_counts[static_cast<std::size_t>(row)] = parse_double(lc);
      hist.visits[static_cast<std::size_t>(row)] = std::stoull(visits);
    } catch (const std::invalid_argument&) {
      throw IoError("histogram CSV row " + std::to_string(row) + " is malformed");
    }
    ++row;
  }
  if (row != grid.bin_count()) throw IoError("histogram CSV has fewer rows than bins");
  return hist;
}

nlohmann::json histogram_manifest(const OutputDistribution& hist,
                                  const std::string& model, const std::string& source) {
  return {{"grid", hist.grid.to_json()},
          {"normalization_state", to_string(hist.state)},
          {"model", model},
          {"source", source}};
}

void save_histogram(const std::string& stem, const OutputDistribution& hist,
                    const std::string& model, const std::string& source,
                    const nlohmann::json& extra) {
  {
    std::ofstream csv(stem + ".csv");
    if (!csv) throw IoError("cannot write " + stem + ".csv");
    write_histogram_csv(csv, hist);
  }
  auto manifest = histogram_manifest(hist, model, source);
  for (auto it = extra.begin(); it != extra.end(); ++it) manifest[it.key()] = it.value();
  std::ofstream js(stem + ".json");
  if (!js) throw IoError("cannot write " + stem + ".json");
  js << manifest.dump(2) << '\n';
}

OutputDistribution load_histogram(const std::string& stem, nlohmann::json* manifest_out) {
  std::ifstream js(stem + ".json");
  if (!js) throw IoError("cannot read " + stem + ".json");
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(js);
  } catch (const nlohmann::json::exception& e) {
    throw IoError(stem + ".json: " + e.what());
  }
  std::ifstream csv(stem + ".csv");
  if (!csv) throw IoError("cannot read " + stem + ".csv");
  auto hist = read_histogram_csv(csv, BinGrid::from_json(manifest.at("grid")),
                                 normalization_from_string(manifest.at("normalization_state")));
  if (manifest_out) *manifest_out = std::move(manifest);
  return hist;
}

}  // namespace omni
