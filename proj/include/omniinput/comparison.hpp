#pragma once

#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "omniinput/energy.hpp"
#include "omniinput/evaluator.hpp"
#include "omniinput/histogram.hpp"
#include "omniinput/reservoir.hpp"

namespace omni {

// True when z lies in the closed interval [window.lo, window.hi].
inline bool score_in_window(double z, const Window& window) {
  return z >= window.lo && z <= window.hi;
}

// In-window sample count n and how many of those samples the other model also
// maps into the window (x). Counts are real-valued so that histogram-weighted
// estimates fit the same shape.
struct OverlapCount {
  double n = 0.0;
  double x = 0.0;
};

// Distinct samples (by canonical hash) scored by `other`; x counts those whose
// score falls in the window.
OverlapCount overlap_count(std::span<const Sequence> samples, const Window& window,
                           const EnergyModel& other);

// Same, for samples drawn per bin with a flattened sampler: each in-window
// bin's overlap fraction is weighted by its mass under rho, and n is the
// number of distinct in-window samples.
OverlapCount weighted_overlap_count(std::span<const SampledInput> samples,
                                    const OutputDistribution& rho, const Window& window,
                                    const EnergyModel& other);

struct ModelOverlap {
  std::string model;
  double n = 0.0;
  double x = 0.0;

  // n / x; throws IncomparableModelsError when x is 0.
  double rho_hat() const;
  // Delta-method binomial standard error of rho_hat.
  double rho_hat_se() const;
};

struct OverlapReport {
  Window window;
  ModelOverlap first;
  ModelOverlap second;

  nlohmann::json to_json() const;
  static OverlapReport from_json(const nlohmann::json& j);
};

class IncomparableModelsError : public Error {
 public:
  explicit IncomparableModelsError(const std::string& model);
};

struct NormalizedScales {
  double rho_hat_first = 0.0;
  double rho_hat_second = 0.0;
  double ratio = 0.0;  // rho_hat_first / rho_hat_second
};

NormalizedScales normalized_scales(const OverlapReport& report);

struct OverlayPoint {
  double lambda = 0.0;
  double precision = 0.0;
  double log_recall_scaled = kNegInf;  // ln sum r*rho with rho in units of |X|
  double recall_common = 0.0;          // scaled recall over the largest final scaled recall
};

struct OverlaySeries {
  std::string model;
  double rho_hat = 1.0;
  std::vector<OverlayPoint> points;
  double aupr = 0.0;  // trapezoidal, over recall_common
};

struct Overlay {
  Window window;
  std::vector<OverlaySeries> series;

  nlohmann::json to_json() const;
};

struct NamedCurve {
  std::string model;
  PRCurve curve;
};

// Rescales each model's unnormalized recall so its in-window mass equals its
// rho_hat, then normalizes every series by the same constant. Curves are
// matched to the report by model id; a report is needed for two or more
// curves.
Overlay overlay_pr(std::span<const NamedCurve> curves,
                   const std::optional<OverlapReport>& report);

// Long format: `model,lambda,recall_scaled_log,recall_common,precision`.
void write_overlay_csv(std::ostream& out, const Overlay& overlay);

}  // namespace omni
