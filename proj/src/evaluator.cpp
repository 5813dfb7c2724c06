#include "omniinput/evaluator.hpp"

#include <cmath>
#include <iomanip>
#include <istream>
#include <ostream>
#include <sstream>

namespace omni {

PrecisionPerBin::PrecisionPerBin(BinGrid g)
    : grid(g),
      r(static_cast<std::size_t>(g.bin_count())),
      support(static_cast<std::size_t>(g.bin_count()), 0) {}

PrecisionPerBin::PrecisionPerBin(BinGrid g, std::vector<std::optional<double>> values)
    : grid(g), r(std::move(values)), support(r.size(), 0) {
  if (r.size() != static_cast<std::size_t>(grid.bin_count())) {
    throw InvalidArgument("precision table size must equal the bin count");
  }
  for (std::size_t k = 0; k < r.size(); ++k) {
    if (!r[k]) continue;
    if (!(*r[k] >= 0.0 && *r[k] <= 1.0)) {
      throw InvalidArgument("precision per bin must lie in [0, 1]");
    }
    support[k] = 1;
  }
}

void PrecisionPerBin::set(int k, double value, std::uint64_t n) {
  if (!(value >= 0.0 && value <= 1.0)) {
    throw InvalidArgument("precision per bin must lie in [0, 1]");
  }
  r.at(static_cast<std::size_t>(k)) = value;
  support.at(static_cast<std::size_t>(k)) = n;
}

Window Window::parse(const std::string& spec) {
  const auto comma = spec.find(',');
  if (comma == std::string::npos) throw ConfigError("window", "expected zlo,zhi");
  Window w;
  try {
    w.lo = std::stod(spec.substr(0, comma));
    w.hi = std::stod(spec.substr(comma + 1));
  } catch (const std::exception&) {
    throw ConfigError("window", "expected zlo,zhi numbers, got \"" + spec + "\"");
  }
  if (!(w.lo <= w.hi)) throw ConfigError("window", "needs zlo <= zhi");
  return w;
}

Window full_window(const BinGrid& grid) {
  return {grid.lo(0), grid.lo(grid.bin_count() - 1)};
}

namespace {

std::string join_bins(const std::vector<int>& bins) {
  std::string s;
  for (std::size_t i = 0; i < bins.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(bins[i]);
  }
  return s;
}

bool edge_le(double a, double b) { return a <= b + 1e-9 * std::max(1.0, std::abs(b)); }

bool admitted(const BinGrid& grid, int k, double lambda, Direction direction,
              const std::optional<Window>& window) {
  const double z = grid.lo(k);
  if (window && !(edge_le(window->lo, z) && edge_le(z, window->hi))) return false;
  return direction == Direction::kLowerIsConfident ? edge_le(z, lambda) : edge_le(lambda, z);
}

void check_grids(const PrecisionPerBin& r, const OutputDistribution& rho) {
  if (!(r.grid == rho.grid)) throw GridMismatchError();
}

}  // namespace

MissingPrecisionError::MissingPrecisionError(std::vector<int> bins)
    : Error("missing_precision",
            "no annotations for bins with nonzero mass: " + join_bins(bins)),
      bins_(std::move(bins)) {}

UndefinedPrecisionError::UndefinedPrecisionError(double lambda)
    : Error("undefined_precision", [lambda] {
        std::ostringstream os;
        os << "no mass admitted at lambda=" << lambda << "; precision is undefined";
        return os.str();
      }()) {}

CumulativeSums cumulative_sums(double lambda, const PrecisionPerBin& r,
                               const OutputDistribution& rho, Direction direction,
                               const std::optional<Window>& window) {
  check_grids(r, rho);
  const BinGrid& grid = rho.grid;
  const int n = grid.bin_count();
  CumulativeSums out;
  LogSum tp, fp, total;
  std::vector<int> missing;
  double best = kNegInf;
  // Confident end first so that ">=" hands ties to the less confident bin.
  for (int i = 0; i < n; ++i) {
    const int k = direction == Direction::kLowerIsConfident ? i : n - 1 - i;
    if (!admitted(grid, k, lambda, direction, window)) continue;
    const double lr = rho.log_counts[static_cast<std::size_t>(k)];
    if (lr == kNegInf) continue;
    if (!r.has(k)) {
      missing.push_back(k);
      continue;
    }
    const double p = r.at(k);
    tp.add(lr + std::log(p));
    fp.add(lr + std::log1p(-p));
    total.add(lr);
    ++out.admitted_bins;
    if (lr >= best) {
      best = lr;
      out.dominant_bin = k;
    }
  }
  if (!missing.empty()) {
    std::sort(missing.begin(), missing.end());
    throw MissingPrecisionError(std::move(missing));
  }
  out.log_tp = tp.value();
  out.log_fp = fp.value();
  out.log_total = total.value();
  return out;
}

double precision_at(double lambda, const PrecisionPerBin& r, const OutputDistribution& rho,
                    Direction direction, const std::optional<Window>& window) {
  const auto s = cumulative_sums(lambda, r, rho, direction, window);
  if (s.log_total == kNegInf) throw UndefinedPrecisionError(lambda);
  if (s.log_tp == kNegInf) return 0.0;
  return std::clamp(std::exp(s.log_tp - s.log_total), 0.0, 1.0);
}

Recall recall_at(double lambda, const PrecisionPerBin& r, const OutputDistribution& rho,
                 Direction direction, const std::optional<Window>& window) {
  const auto s = cumulative_sums(lambda, r, rho, direction, window);
  const Window w = window.value_or(full_window(rho.grid));
  const double far = direction == Direction::kLowerIsConfident ? w.hi : w.lo;
  const auto end = cumulative_sums(far, r, rho, direction, w);
  Recall out;
  out.log_unnormalized = s.log_tp;
  out.unnormalized = std::exp(s.log_tp);
  if (end.log_tp != kNegInf && s.log_tp != kNegInf) {
    out.window_normalized = std::clamp(std::exp(s.log_tp - end.log_tp), 0.0, 1.0);
  }
  return out;
}

double dominant_bin_precision(double lambda, const PrecisionPerBin& r,
                              const OutputDistribution& rho, Direction direction,
                              const std::optional<Window>& window) {
  const auto s = cumulative_sums(lambda, r, rho, direction, window);
  if (s.dominant_bin < 0) throw UndefinedPrecisionError(lambda);
  return r.at(s.dominant_bin);
}

PRCurve pr_curve(const PrecisionPerBin& r, const OutputDistribution& rho,
                 Direction direction, const Window& window) {
  check_grids(r, rho);
  const BinGrid& grid = rho.grid;
  const auto range = grid.bins_with_lower_edge_in(window.lo, window.hi);
  if (!range) throw InvalidArgument("window contains no bin of the grid");
  PRCurve curve;
  curve.window = window;
  curve.direction = direction;

  const double far = direction == Direction::kLowerIsConfident ? window.hi : window.lo;
  const auto end = cumulative_sums(far, r, rho, direction, window);
  curve.log_window_mass = end.log_total;

  // One pass from the confident end, accumulating in log space.
  LogSum tp, total;
  const auto [first, last] = *range;
  const int count = last - first + 1;
  for (int i = 0; i < count; ++i) {
    const int k = direction == Direction::kLowerIsConfident ? first + i : last - i;
    const double lr = rho.log_counts[static_cast<std::size_t>(k)];
    if (lr == kNegInf) continue;
    const double p = r.at(k);
    tp.add(lr + std::log(p));
    total.add(lr);
    PRPoint pt;
    pt.lambda = grid.lo(k);
    pt.log_recall_unnorm = tp.value();
    pt.precision = tp.empty() ? 0.0 : std::clamp(std::exp(tp.value() - total.value()), 0.0, 1.0);
    pt.recall_norm = (tp.empty() || end.log_tp == kNegInf)
                         ? 0.0
                         : std::clamp(std::exp(tp.value() - end.log_tp), 0.0, 1.0);
    curve.points.push_back(pt);
  }
  return curve;
}

double aupr(const PRCurve& curve) {
  if (curve.points.empty()) return 0.0;
  double area = 0.0;
  double prev_r = 0.0;
  double prev_p = curve.points.front().precision;
  for (const auto& pt : curve.points) {
    area += (pt.recall_norm - prev_r) * 0.5 * (pt.precision + prev_p);
    prev_r = pt.recall_norm;
    prev_p = pt.precision;
  }
  return area;
}

double RocPoint::tp() const { return std::exp(log_tp); }
double RocPoint::fp() const { return std::exp(log_fp); }
double RocPoint::total() const { return std::exp(log_total); }

std::vector<RocPoint> roc_unnormalized(const PrecisionPerBin& r,
                                       const OutputDistribution& rho, Direction direction,
                                       const Window& window) {
  check_grids(r, rho);
  const auto range = rho.grid.bins_with_lower_edge_in(window.lo, window.hi);
  if (!range) throw InvalidArgument("window contains no bin of the grid");
  std::vector<RocPoint> out;
  const auto [first, last] = *range;
  for (int i = 0; i <= last - first; ++i) {
    const int k = direction == Direction::kLowerIsConfident ? first + i : last - i;
    if (!rho.has_mass(k)) continue;
    const double lambda = rho.grid.lo(k);
    const auto s = cumulative_sums(lambda, r, rho, direction, window);
    out.push_back({lambda, s.log_tp, s.log_fp, s.log_total});
  }
  return out;
}

namespace {

std::string fmt(double v) {
  if (v == kNegInf) return "-inf";
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

}  // namespace

void write_pr_csv(std::ostream& out, const PRCurve& curve) {
  out << "lambda,recall_unnorm_log,recall_norm,precision\n";
  for (const auto& p : curve.points) {
    out << fmt(p.lambda) << ',' << fmt(p.log_recall_unnorm) << ',' << fmt(p.recall_norm)
        << ',' << fmt(p.precision) << '\n';
  }
}

PRCurve read_pr_csv(std::istream& in) {
  PRCurve curve;
  std::string line;
  if (!std::getline(in, line) || line.rfind("lambda,recall_unnorm_log,recall_norm,precision", 0) != 0) {
    throw IoError("PR CSV: missing header lambda,recall_unnorm_log,recall_norm,precision");
  }
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string a, b, c, d;
    std::getline(ss, a, ',');
    std::getline(ss, b, ',');
    std::getline(ss, c, ',');
    std::getline(ss, d, ',');
    try {
      PRPoint p;
      p.lambda = std::stod(a);
      p.log_recall_unnorm = b == "-inf" ? kNegInf : std::stod(b);
      p.recall_norm = std::stod(c);
      p.precision = std::stod(d);
      curve.points.push_back(p);
    } catch (const std::exception&) {
      throw IoError("PR CSV: malformed row \"" + line + "\"");
    }
  }
  if (!curve.points.empty()) {
    curve.window = {std::min(curve.points.front().lambda, curve.points.back().lambda),
                    std::max(curve.points.front().lambda, curve.points.back().lambda)};
    if (curve.points.size() > 1 && curve.points.front().lambda > curve.points.back().lambda) {
      curve.direction = Direction::kHigherIsConfident;
    }
    const auto& last = curve.points.back();
    if (last.precision > 0.0) curve.log_window_mass = last.log_recall_unnorm - std::log(last.precision);
  }
  return curve;
}

nlohmann::json pr_plot_json(const PRCurve& curve, const std::string& label) {
  nlohmann::json cols = {{"lambda", nlohmann::json::array()},
                         {"recall_norm", nlohmann::json::array()},
                         {"precision", nlohmann::json::array()},
                         {"recall_unnorm_log", nlohmann::json::array()}};
  for (const auto& p : curve.points) {
    cols["lambda"].push_back(p.lambda);
    cols["recall_norm"].push_back(p.recall_norm);
    cols["precision"].push_back(p.precision);
    cols["recall_unnorm_log"].push_back(p.log_recall_unnorm == kNegInf
                                            ? nlohmann::json()
                                            : nlohmann::json(p.log_recall_unnorm));
  }
  return {{"label", label},
          {"window", curve.window.to_json()},
          {"direction", to_string(curve.direction)},
          {"aupr", aupr(curve)},
          {"columns", cols}};
}

void write_precision_csv(std::ostream& out, const PrecisionPerBin& r,
                         const std::vector<double>* spread) {
  out << "bin_lo,bin_hi,r,support" << (spread ? ",spread" : "") << '\n';
  for (int k = 0; k < r.grid.bin_count(); ++k) {
    out << fmt(r.grid.lo(k)) << ',' << fmt(r.grid.hi(k)) << ','
        << (r.has(k) ? fmt(r.at(k)) : std::string("")) << ','
        << r.support[static_cast<std::size_t>(k)];
    if (spread) {
      const double s = (*spread)[static_cast<std::size_t>(k)];
      out << ',' << (std::isnan(s) ? std::string("") : fmt(s));
    }
    out << '\n';
  }
}

}  // namespace omni
