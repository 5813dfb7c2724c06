#include "omniinput/comparison.hpp"

#include <cmath>
#include <iomanip>
#include <map>
#include <ostream>
#include <unordered_set>

namespace omni {

OverlapCount overlap_count(std::span<const Sequence> samples, const Window& window,
                           const EnergyModel& other) {
  std::unordered_set<std::uint64_t> seen;
  std::vector<Sequence> distinct;
  for (const auto& s : samples) {
    if (seen.insert(canonical_hash(s)).second) distinct.push_back(s);
  }
  OverlapCount out;
  out.n = static_cast<double>(distinct.size());
  if (distinct.empty()) return out;
  const auto z = other.score_batch(distinct);
  for (double v : z) {
    if (score_in_window(v, window)) out.x += 1.0;
  }
  return out;
}

OverlapCount weighted_overlap_count(std::span<const SampledInput> samples,
                                    const OutputDistribution& rho, const Window& window,
                                    const EnergyModel& other) {
  std::unordered_set<std::uint64_t> seen;
  std::vector<Sequence> distinct;
  std::vector<int> bins;
  for (const auto& s : samples) {
    if (!score_in_window(s.z, window)) continue;
    if (s.bin < 0 || s.bin >= rho.bin_count()) {
      throw InvalidArgument("sample bin " + std::to_string(s.bin) + " is outside the grid");
    }
    if (seen.insert(s.hash ? s.hash : canonical_hash(s.seq)).second) {
      distinct.push_back(s.seq);
      bins.push_back(s.bin);
    }
  }
  OverlapCount out;
  out.n = static_cast<double>(distinct.size());
  if (distinct.empty()) return out;
  const auto z = other.score_batch(distinct);

  std::map<int, std::pair<double, double>> per_bin;  // bin -> (overlapping, total)
  for (std::size_t i = 0; i < z.size(); ++i) {
    auto& c = per_bin[bins[i]];
    c.second += 1.0;
    if (score_in_window(z[i], window)) c.first += 1.0;
  }
  double ref = kNegInf;
  for (const auto& [bin, c] : per_bin) ref = std::max(ref, rho.log_counts[static_cast<std::size_t>(bin)]);
  if (ref == kNegInf) throw InvalidArgument("in-window samples fall only in bins without mass");
  double num = 0.0, den = 0.0;
  for (const auto& [bin, c] : per_bin) {
    const double w = std::exp(rho.log_counts[static_cast<std::size_t>(bin)] - ref);
    num += w * c.first / c.second;
    den += w;
  }
  out.x = out.n * num / den;
  return out;
}

IncomparableModelsError::IncomparableModelsError(const std::string& model)
    : Error("incomparable_models",
            "no sample of " + model +
                " falls in the window under the other model; widen the window") {}

double ModelOverlap::rho_hat() const {
  if (!(x > 0.0)) throw IncomparableModelsError(model);
  return n / x;
}

double ModelOverlap::rho_hat_se() const {
  const double rh = rho_hat();
  const double p = x / n;
  return rh * std::sqrt((1.0 - p) / (n * p));
}

nlohmann::json OverlapReport::to_json() const {
  auto model_json = [](const ModelOverlap& m) {
    nlohmann::json j = {{"model", m.model}, {"n", m.n}, {"x", m.x}};
    if (m.x > 0.0) {
      j["rho_hat"] = m.rho_hat();
      j["rho_hat_se"] = m.rho_hat_se();
    } else {
      j["rho_hat"] = nullptr;
      j["rho_hat_se"] = nullptr;
    }
    return j;
  };
  nlohmann::json j = {{"window", window.to_json()},
                      {"models", {model_json(first), model_json(second)}}};
  if (first.x > 0.0 && second.x > 0.0) {
    const auto s = normalized_scales(*this);
    j["ratio"] = s.ratio;
    j["ratio_reverse"] = 1.0 / s.ratio;
  } else {
    j["ratio"] = nullptr;
  }
  return j;
}

OverlapReport OverlapReport::from_json(const nlohmann::json& j) {
  OverlapReport r;
  try {
    r.window = {j.at("window").at(0).get<double>(), j.at("window").at(1).get<double>()};
    auto read = [](const nlohmann::json& m) {
      return ModelOverlap{m.at("model").get<std::string>(), m.at("n").get<double>(),
                          m.at("x").get<double>()};
    };
    r.first = read(j.at("models").at(0));
    r.second = read(j.at("models").at(1));
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("comparison report: ") + e.what());
  }
  return r;
}

NormalizedScales normalized_scales(const OverlapReport& report) {
  NormalizedScales s;
  s.rho_hat_first = report.first.rho_hat();
  s.rho_hat_second = report.second.rho_hat();
  s.ratio = s.rho_hat_first / s.rho_hat_second;
  return s;
}

Overlay overlay_pr(std::span<const NamedCurve> curves,
                   const std::optional<OverlapReport>& report) {
  if (curves.empty()) throw InvalidArgument("overlay needs at least one curve");
  if (curves.size() > 1 && !report) {
    throw InvalidArgument("overlaying several models needs an overlap report");
  }
  Overlay out;
  out.window = curves.front().curve.window;
  for (const auto& c : curves) {
    if (!(c.curve.window == out.window) || (report && !(report->window == out.window))) {
      throw Error("window_mismatch", "curves and report must share one window");
    }
  }

  std::vector<double> shift(curves.size(), 0.0);
  double log_norm = kNegInf;
  for (std::size_t i = 0; i < curves.size(); ++i) {
    const auto& c = curves[i];
    OverlaySeries s;
    s.model = c.model;
    if (report) {
      if (c.model == report->first.model) {
        s.rho_hat = report->first.rho_hat();
      } else if (c.model == report->second.model) {
        s.rho_hat = report->second.rho_hat();
      } else {
        throw InvalidArgument("model " + c.model + " is not in the overlap report");
      }
    }
    if (c.curve.log_window_mass != kNegInf) {
      shift[i] = std::log(s.rho_hat) - c.curve.log_window_mass;
    }
    for (const auto& p : c.curve.points) {
      OverlayPoint o;
      o.lambda = p.lambda;
      o.precision = p.precision;
      o.log_recall_scaled = p.log_recall_unnorm == kNegInf ? kNegInf : p.log_recall_unnorm + shift[i];
      log_norm = std::max(log_norm, o.log_recall_scaled);
      s.points.push_back(o);
    }
    out.series.push_back(std::move(s));
  }

  for (auto& s : out.series) {
    double prev_r = 0.0;
    double prev_p = s.points.empty() ? 0.0 : s.points.front().precision;
    for (auto& p : s.points) {
      p.recall_common = (p.log_recall_scaled == kNegInf || log_norm == kNegInf)
                            ? 0.0
                            : std::exp(p.log_recall_scaled - log_norm);
      s.aupr += (p.recall_common - prev_r) * 0.5 * (p.precision + prev_p);
      prev_r = p.recall_common;
      prev_p = p.precision;
    }
  }
  return out;
}

nlohmann::json Overlay::to_json() const {
  nlohmann::json series_json = nlohmann::json::array();
  for (const auto& s : series) {
    series_json.push_back({{"model", s.model}, {"rho_hat", s.rho_hat}, {"aupr", s.aupr}});
  }
  return {{"window", window.to_json()}, {"series", series_json}};
}

void write_overlay_csv(std::ostream& out, const Overlay& overlay) {
  out << "model,lambda,recall_scaled_log,recall_common,precision\n";
  out << std::setprecision(17);
  for (const auto& s : overlay.series) {
    for (const auto& p : s.points) {
      out << s.model << ',' << p.lambda << ',';
      if (p.log_recall_scaled == kNegInf) {
        out << "-inf";
      } else {
        out << p.log_recall_scaled;
      }
      out << ',' << p.recall_common << ',' << p.precision << '\n';
    }
  }
}

}  // namespace omni
