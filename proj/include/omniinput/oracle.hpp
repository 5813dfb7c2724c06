#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "omniinput/energy.hpp"
#include "omniinput/evaluator.hpp"
#include "omniinput/histogram.hpp"
#include "omniinput/proposal.hpp"

namespace omni {

struct EnumerationOptions {
  std::uint64_t cap = 100'000'000;
  int threads = 1;
  // Called from worker threads (serialized) with (scored so far, total).
  std::function<void(std::uint64_t, std::uint64_t)> progress;
  std::uint64_t progress_every = 10'000'000;
};

class BudgetExceededError : public Error {
 public:
  BudgetExceededError(const BigCount& required, std::uint64_t cap);
};

struct ExactTables {
  OutputDistribution rho;                // normalized to the space; visits are exact counts
  std::optional<PrecisionPerBin> r;      // present when an annotator was given
  std::uint64_t out_of_range = 0;        // inputs dropped by a rejecting grid
};

// Scores every input once. Per-bin counts are integers, so the result does
// not depend on the thread partition.
ExactTables enumerate_exact(const EnergyModel& model, const BinGrid& grid,
                            const OracleAnnotator* annotator,
                            const EnumerationOptions& options = {});

OutputDistribution exact_output_distribution(const EnergyModel& model, const BinGrid& grid,
                                             const EnumerationOptions& options = {});

// Composition counts of token sums by dynamic programming; no enumeration.
OutputDistribution sum_energy_dp(const SumEnergy& model, const BinGrid& grid);

// Mean annotator score per bin over all inputs in it; empty bins are missing.
PrecisionPerBin exact_precision_per_bin(const EnergyModel& model,
                                        const OracleAnnotator& annotator,
                                        const BinGrid& grid,
                                        const EnumerationOptions& options = {});

struct Divergence {
  double max_abs = 0.0;
  double mean_abs = 0.0;
  int reference_bin = -1;
  std::vector<int> bins;  // the covering set, most massive first
};

// Anchors both tables at `reference_bin` (default: the exact modal bin) and
// compares ln masses over the smallest set of bins holding at least
// mass_coverage of the exact mass. An estimate that misses a covered bin
// gives an infinite deviation.
Divergence entropy_divergence(const OutputDistribution& estimated,
                              const OutputDistribution& exact, double mass_coverage = 0.99,
                              std::optional<int> reference_bin = std::nullopt);

struct StationarityResult {
  double statistic = 0.0;
  int degrees_of_freedom = 0;
  double p_value = 1.0;
  std::vector<double> expected;  // per state, exact Boltzmann weight
  std::vector<std::uint64_t> observed;
};

struct StationarityOptions {
  double temperature = 1.0;
  std::uint64_t samples = 20'000;
  std::uint64_t thin = 20;
  std::uint64_t burn_in = 1'000;
  std::uint64_t seed = 1;
};

// Runs a chain with the given proposer and compares its occupancy with the
// exact distribution exp(sign * z / T) by a chi-square test. Cells with
// expected count below 5 are pooled.
StationarityResult stationarity_test(const EnergyModel& model, const Proposer& proposer,
                                     const StationarityOptions& options);

// Pearson chi-square with pooling; exposed for tests.
StationarityResult chi_square_pooled(std::span<const std::uint64_t> observed,
                                     std::span<const double> probabilities);

// Negative control: moves one site up with probability 2/3 and down with
// 1/3, clamped to the vocabulary, and claims a symmetric proposal.
Proposer biased_step_proposer(const InputSpace& space);

}  // namespace omni
