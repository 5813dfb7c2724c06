#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "omniinput/errors.hpp"
#include "omniinput/logmath.hpp"
#include "omniinput/space.hpp"

namespace omni {

enum class OutOfRangePolicy { kClampToEdgeBins, kReject };

class OutOfRangeError : public Error {
 public:
  explicit OutOfRangeError(double z);
  double z() const noexcept { return z_; }

 private:
  double z_;
};

// Uniform half-open bins [edge_k, edge_k + width) with edge_k = z_min + k*width.
class BinGrid {
 public:
  // bin_count = ceil((z_max - z_min) / width), with ratios within 1e-9 of an
  // integer snapped to it so that e.g. [2, 4) at 0.1 has 20 bins.
  BinGrid(double z_min, double z_max, double width,
          OutOfRangePolicy policy = OutOfRangePolicy::kClampToEdgeBins);

  double z_min() const { return z_min_; }
  double width() const { return width_; }
  int bin_count() const { return bin_count_; }
  double z_max() const { return edge(bin_count_); }
  OutOfRangePolicy policy() const { return policy_; }

  double edge(int k) const { return z_min_ + static_cast<double>(k) * width_; }
  double lo(int k) const { return edge(k); }
  double hi(int k) const { return edge(k + 1); }
  double mid(int k) const { return z_min_ + (static_cast<double>(k) + 0.5) * width_; }

  // Bin holding z, applying the out-of-range policy. NaN always throws.
  int bin_of(double z) const;
  // Bin holding z, or nullopt outside the grid.
  std::optional<int> find(double z) const;

  // Bins whose lower edge lies in [lo, hi] (inclusive), as [first, last].
  std::optional<std::pair<int, int>> bins_with_lower_edge_in(double lo, double hi) const;

  // The reference experiments used 150-600 bins; outside that range is
  // legal but worth a warning.
  bool bin_count_outside_typical_range() const {
    return bin_count_ < 150 || bin_count_ > 600;
  }

  nlohmann::json to_json() const;
  static BinGrid from_json(const nlohmann::json& j);
  // "zmin,zmax,dz"
  static BinGrid parse(const std::string& spec,
                       OutOfRangePolicy policy = OutOfRangePolicy::kClampToEdgeBins);

  friend bool operator==(const BinGrid& a, const BinGrid& b) {
    return a.z_min_ == b.z_min_ && a.width_ == b.width_ &&
           a.bin_count_ == b.bin_count_ && a.policy_ == b.policy_;
  }

 private:
  double z_min_;
  double width_;
  int bin_count_;
  OutOfRangePolicy policy_;
};

enum class Normalization { kRawVisits, kRelativeEntropy, kNormalizedToSpace };

std::string to_string(Normalization n);
Normalization normalization_from_string(const std::string& s);

// Per-bin natural-log masses over a grid. Never-visited bins hold -inf.
struct OutputDistribution {
  BinGrid grid;
  std::vector<double> log_counts;
  std::vector<std::uint64_t> visits;
  Normalization state = Normalization::kRawVisits;

  explicit OutputDistribution(BinGrid g, Normalization s = Normalization::kRawVisits);

  int bin_count() const { return grid.bin_count(); }
  bool has_mass(int k) const { return log_counts[static_cast<std::size_t>(k)] != kNegInf; }
  double log_total() const;
  bool empty() const { return log_total() == kNegInf; }

  // Adds `weight` (linear, >= 0) to bin k and counts one visit.
  void record_visit(int k, double weight = 1.0);
};

class GridMismatchError : public Error {
 public:
  GridMismatchError() : Error("grid_mismatch", "histograms use different bin grids") {}
};

// Bin-wise log-sum-exp of the masses and sum of visits. Commutative bit for
// bit; associative up to rounding.
OutputDistribution merge(const OutputDistribution& a, const OutputDistribution& b);

// Shifts log_counts so the masses sum to the size of the space.
OutputDistribution normalize_to_space(const OutputDistribution& hist,
                                      const InputSpace& space);

// S(z) = log_counts(z) - log_counts(reference). Unvisited bins stay -inf.
std::vector<double> entropy_anchor(const OutputDistribution& hist, int reference_bin);

// CSV `bin_lo,bin_hi,log_count,visits`; the grid and normalization state
// live in a JSON manifest next to it.
void write_histogram_csv(std::ostream& out, const OutputDistribution& hist);
OutputDistribution read_histogram_csv(std::istream& in, const BinGrid& grid,
                                      Normalization state);

nlohmann::json histogram_manifest(const OutputDistribution& hist,
                                  const std::string& model, const std::string& source);

// Writes <stem>.csv and <stem>.json.
void save_histogram(const std::string& stem, const OutputDistribution& hist,
                    const std::string& model, const std::string& source,
                    const nlohmann::json& extra = nlohmann::json::object());
OutputDistribution load_histogram(const std::string& stem,
                                  nlohmann::json* manifest_out = nullptr);

}  // namespace omni
