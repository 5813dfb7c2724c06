#include "omniinput/models.hpp"

#include <fstream>
#include <sstream>
#include <vector>

#include "omniinput/external_model.hpp"

namespace omni {

namespace {

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream is(s);
  while (std::getline(is, cur, sep)) out.push_back(cur);
  if (!s.empty() && s.back() == sep) out.emplace_back();
  return out;
}

double parse_double(const std::string& s, const std::string& field) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used == s.size()) return v;
  } catch (const std::exception&) {
  }
  throw ConfigError(field, "expected a number, got \"" + s + "\"");
}

std::uint64_t parse_u64(const std::string& s, const std::string& field) {
  try {
    std::size_t used = 0;
    const auto v = std::stoull(s, &used);
    if (used == s.size() && s.find('-') == std::string::npos) return v;
  } catch (const std::exception&) {
  }
  throw ConfigError(field, "expected a non-negative integer, got \"" + s + "\"");
}

InputSpace space_of(const ModelSpec& spec) {
  if (spec.length < 1) throw ConfigError("D", "must be >= 1");
  if (spec.max_token < 1) throw ConfigError("N", "must be >= 1");
  return InputSpace(spec.max_token + 1, spec.length);
}

}  // namespace

nlohmann::json ModelSpec::to_json() const {
  return {{"spec", spec}, {"D", length}, {"N", max_token}};
}

ModelSpec ModelSpec::from_json(const nlohmann::json& j) {
  try {
    return {j.at("spec").get<std::string>(), j.at("D").get<int>(), j.at("N").get<int>()};
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("model spec: ") + e.what());
  }
}

std::unique_ptr<EnergyModel> make_band_model(const InputSpace& space, std::uint64_t lo,
                                             std::uint64_t hi) {
  if (lo >= hi) throw ConfigError("model", "band needs lo < hi");
  const std::string name = "band:" + std::to_string(lo) + ":" + std::to_string(hi);
  return std::make_unique<FunctionModel>(
      name, space, Direction::kLowerIsConfident, [space, lo, hi](const Sequence& seq) {
        const auto i = space.index_of(seq);
        return (i >= lo && i < hi) ? 0.0 : 1.0;
      });
}

std::unique_ptr<EnergyModel> make_model(const ModelSpec& spec) {
  const auto colon = spec.spec.find(':');
  const std::string kind = spec.spec.substr(0, colon);
  const std::string rest = colon == std::string::npos ? "" : spec.spec.substr(colon + 1);

  if (kind == "sum") {
    const double offset = rest.empty() ? 0.0 : parse_double(rest, "model");
    return std::make_unique<SumEnergy>(space_of(spec), offset);
  }
  if (kind == "band") {
    const auto parts = split(rest, ':');
    if (parts.size() != 2) throw ConfigError("model", "expected band:<lo>:<hi>");
    return make_band_model(space_of(spec), parse_u64(parts[0], "model"),
                           parse_u64(parts[1], "model"));
  }
  if (kind == "ngram") {
    const auto parts = split(rest, ':');
    if (parts.empty() || parts[0].empty() || parts.size() > 3) {
      throw ConfigError("model", "expected ngram:<corpus>[:order[:alpha]]");
    }
    const int order = parts.size() > 1 ? static_cast<int>(parse_u64(parts[1], "model")) : 2;
    const double alpha = parts.size() > 2 ? parse_double(parts[2], "model") : 0.1;
    std::ifstream in(parts[0]);
    if (!in) throw IoError("cannot read corpus " + parts[0]);
    if (spec.length < 1) throw ConfigError("D", "must be >= 1");
    return std::make_unique<NGramModel>(NGramModel::from_text(in, order, alpha, spec.length));
  }
  if (kind == "external") {
    if (rest.empty()) throw ConfigError("model", "expected external:<command>");
    return ExternalModel::spawn(rest, space_of(spec));
  }
  throw ConfigError("model", "unknown model \"" + spec.spec +
                                 "\" (expected sum, ngram:<path>, external:<cmd> or band:<lo>:<hi>)");
}

std::unique_ptr<OracleAnnotator> make_oracle(const std::string& spec) {
  const auto colon = spec.find(':');
  const std::string kind = spec.substr(0, colon);
  if (kind == "modulo") {
    const int m = colon == std::string::npos
                      ? 30
                      : static_cast<int>(parse_u64(spec.substr(colon + 1), "oracle"));
    return std::make_unique<ModuloAnnotator>(m);
  }
  throw ConfigError("oracle", "unknown oracle \"" + spec + "\" (expected modulo[:m])");
}

std::optional<BinGrid> default_grid(const ModelSpec& spec) {
  const auto colon = spec.spec.find(':');
  const std::string kind = spec.spec.substr(0, colon);
  if (kind == "sum") {
    const double offset =
        colon == std::string::npos ? 0.0 : parse_double(spec.spec.substr(colon + 1), "model");
    const double top = static_cast<double>(spec.max_token) * spec.length + 1.0;
    return BinGrid(offset, offset + top, 1.0);
  }
  if (kind == "band") return BinGrid(0.0, 2.0, 1.0);
  return std::nullopt;
}

std::function<std::string(const Sequence&)> detokenizer(const EnergyModel& model) {
  if (const auto* ng = dynamic_cast<const NGramModel*>(&model)) {
    const Vocabulary vocab = ng->vocabulary();
    return [vocab](const Sequence& seq) { return vocab.decode(seq); };
  }
  return nullptr;
}

}  // namespace omni
