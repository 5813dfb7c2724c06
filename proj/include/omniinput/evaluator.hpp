#pragma once

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "omniinput/energy.hpp"
#include "omniinput/histogram.hpp"

namespace omni {

// Mean annotation score per bin. Bins without annotations are missing.
struct PrecisionPerBin {
  BinGrid grid;
  std::vector<std::optional<double>> r;
  std::vector<std::uint64_t> support;

  explicit PrecisionPerBin(BinGrid g);
  PrecisionPerBin(BinGrid g, std::vector<std::optional<double>> values);

  bool has(int k) const { return r[static_cast<std::size_t>(k)].has_value(); }
  double at(int k) const { return *r[static_cast<std::size_t>(k)]; }
  void set(int k, double value, std::uint64_t n = 1);
};

// Output window [lo, hi] in units of z; a bin belongs to it when its lower
// edge does.
struct Window {
  double lo = 0.0;
  double hi = 0.0;

  static Window parse(const std::string& spec);  // "zlo,zhi"
  nlohmann::json to_json() const { return {lo, hi}; }
  friend bool operator==(const Window&, const Window&) = default;
};

class MissingPrecisionError : public Error {
 public:
  explicit MissingPrecisionError(std::vector<int> bins);
  const std::vector<int>& bins() const noexcept { return bins_; }

 private:
  std::vector<int> bins_;
};

class UndefinedPrecisionError : public Error {
 public:
  explicit UndefinedPrecisionError(double lambda);
};

// Sums over the bins a threshold admits: bins whose lower edge z satisfies
// z <= lambda (lower is confident) or z >= lambda (higher is confident),
// restricted to the window when one is given. All sums are in log space.
struct CumulativeSums {
  double log_tp = kNegInf;     // ln sum r * rho
  double log_fp = kNegInf;     // ln sum (1 - r) * rho
  double log_total = kNegInf;  // ln sum rho
  int dominant_bin = -1;       // argmax rho among admitted bins
  int admitted_bins = 0;
};

CumulativeSums cumulative_sums(double lambda, const PrecisionPerBin& r,
                               const OutputDistribution& rho, Direction direction,
                               const std::optional<Window>& window = std::nullopt);

// sum r*rho / sum rho over admitted bins.
double precision_at(double lambda, const PrecisionPerBin& r, const OutputDistribution& rho,
                    Direction direction, const std::optional<Window>& window = std::nullopt);

struct Recall {
  double unnormalized = 0.0;  // sum r*rho (may overflow to inf; see log_unnormalized)
  double log_unnormalized = kNegInf;
  double window_normalized = 0.0;  // divided by the same sum at the window's far end
};

Recall recall_at(double lambda, const PrecisionPerBin& r, const OutputDistribution& rho,
                 Direction direction, const std::optional<Window>& window = std::nullopt);

// r(z*) where z* maximizes rho among admitted bins; ties go to the less
// confident bin.
double dominant_bin_precision(double lambda, const PrecisionPerBin& r,
                              const OutputDistribution& rho, Direction direction,
                              const std::optional<Window>& window = std::nullopt);

struct PRPoint {
  double lambda = 0.0;
  double log_recall_unnorm = kNegInf;
  double recall_norm = 0.0;
  double precision = 0.0;
};

struct PRCurve {
  Window window;
  Direction direction = Direction::kLowerIsConfident;
  std::vector<PRPoint> points;  // confident end first
  double log_window_mass = kNegInf;  // ln sum rho over the window
};

// One point per bin lower edge inside the window, swept from the confident
// end outward. Bins with no mass and no annotation are skipped.
PRCurve pr_curve(const PrecisionPerBin& r, const OutputDistribution& rho,
                 Direction direction, const Window& window);

// Trapezoidal area of precision over window-normalized recall, starting
// from recall 0 at the first point's precision.
double aupr(const PRCurve& curve);

struct RocPoint {
  double lambda = 0.0;
  double log_tp = kNegInf;
  double log_fp = kNegInf;
  double log_total = kNegInf;

  double tp() const;
  double fp() const;
  double total() const;
};

// Unnormalized ROC: TP = sum r*rho, FP = sum rho*(1-r), TP + FP = sum rho.
std::vector<RocPoint> roc_unnormalized(const PrecisionPerBin& r,
                                       const OutputDistribution& rho, Direction direction,
                                       const Window& window);

// Window covering the whole grid.
Window full_window(const BinGrid& grid);

// CSV `lambda,recall_unnorm_log,recall_norm,precision`.
void write_pr_csv(std::ostream& out, const PRCurve& curve);
PRCurve read_pr_csv(std::istream& in);
// Column-oriented plot data (gnuplot-friendly when flattened).
nlohmann::json pr_plot_json(const PRCurve& curve, const std::string& label);

void write_precision_csv(std::ostream& out, const PrecisionPerBin& r,
                         const std::vector<double>* spread = nullptr);

}  // namespace omni
