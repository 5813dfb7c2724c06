#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "omniinput/energy.hpp"
#include "omniinput/histogram.hpp"
#include "omniinput/proposal.hpp"
#include "omniinput/reservoir.hpp"
#include "omniinput/rng.hpp"

namespace omni {

// One Markov chain. current_z always equals model.score(current).
struct ChainState {
  Sequence current;
  double current_z = 0.0;
  Rng rng;
  std::uint64_t steps = 0;
  std::uint64_t accepted = 0;

  static ChainState start(const EnergyModel& model, Sequence initial, std::uint64_t seed);
  static ChainState start_uniform(const EnergyModel& model, std::uint64_t seed);
};

// One Metropolis-Hastings transition targeting exp(sign * z / T), where sign
// makes the model's confident end the likely end. Returns whether the move
// was accepted. T may be +infinity. A scoring failure leaves the state as it
// was.
bool metropolis_step(ChainState& state, const EnergyModel& model,
                     const Proposer& proposer, double temperature);
bool metropolis_step(ChainState& state, const EnergyModel& model,
                     const ProposalKernel& kernel, double temperature);

// ------------------------------------------------------------- Wang-Landau

struct WLConfig {
  double initial_log_f = 1.0;
  double flatness_ratio = 0.8;
  double log_f_floor = 1e-4;
  std::uint64_t check_interval = 10'000;
  std::uint64_t max_steps = 1'000'000'000;
  // Steps without discovering a new bin before the stagnation warning fires.
  std::uint64_t stagnation_budget = 10'000'000;
  int reservoir_capacity = 30;

  void validate() const;
  nlohmann::json to_json() const;
};

struct WLStage {
  double log_f = 0.0;
  std::uint64_t steps = 0;
  double flatness = 0.0;  // min/mean of the stage's visit histogram at exit
  int visited_bins = 0;
};

struct WLDiagnostics {
  std::vector<WLStage> stages;
  std::uint64_t total_steps = 0;
  std::uint64_t accepted = 0;
  bool converged = false;  // log_f reached the floor before max_steps
  std::vector<std::string> warnings;

  nlohmann::json to_json() const;
};

struct WLResult {
  // log_counts hold the entropy estimate S~ (arbitrary additive constant);
  // visits are cumulative over all stages.
  OutputDistribution entropy;
  BinReservoir reservoir;
  WLDiagnostics diagnostics;
};

// Flat-histogram estimation of S(z) = ln rho(z). Acceptance uses
// exp(S~(old bin) - S~(new bin)) times the proposal correction; after every
// step the current bin gets S~ += log_f and one visit. When the stage's
// visits are flat (min >= ratio * mean over every bin seen so far), visits
// reset and log_f halves. The reservoir is filled during the final stage.
WLResult wang_landau_run(const EnergyModel& model, const BinGrid& grid,
                         const ProposalKernel& kernel, const WLConfig& config,
                         std::uint64_t seed,
                         std::optional<Sequence> start = std::nullopt);

// Walks with a fixed entropy table (no updates) and returns the visit counts.
std::vector<std::uint64_t> fixed_entropy_walk(const EnergyModel& model,
                                              const BinGrid& grid,
                                              const ProposalKernel& kernel,
                                              std::span<const double> entropy,
                                              std::uint64_t steps, std::uint64_t seed);

// ------------------------------------------------------- Parallel tempering

struct PTConfig {
  // Monotone ladder (either direction); equal neighbours are allowed.
  std::vector<double> temperatures;
  std::uint64_t swap_interval = 10;
  std::uint64_t steps_per_replica = 1'000'000;
  std::uint64_t burn_in = 0;
  int threads = 1;
  int reservoir_capacity = 30;
  bool enable_swaps = true;

  // K temperatures spaced geometrically from t_max down to t_min.
  static std::vector<double> geometric_ladder(double t_max, double t_min, int k);

  void validate() const;
  nlohmann::json to_json() const;
};

// Visit counts at one temperature, with the running mean z per bin.
struct TemperatureHistogram {
  double temperature = 1.0;
  std::vector<std::uint64_t> counts;
  std::vector<double> mean_z;
  std::uint64_t total = 0;

  void record(int bin, double z);
};

struct PTResult {
  std::vector<TemperatureHistogram> histograms;  // one per ladder slot
  BinReservoir reservoir;
  std::vector<std::uint64_t> swap_attempts;   // pair (i, i+1) at index i
  std::vector<std::uint64_t> swap_accepted;
  std::vector<double> move_acceptance;        // per slot
  std::vector<std::string> warnings;

  double swap_rate(std::size_t pair) const;
  nlohmann::json diagnostics() const;
};

// Replicas at each ladder temperature run metropolis_step; every
// swap_interval steps alternating even/odd neighbour pairs exchange states
// with probability min(1, exp((1/T_i - 1/T_j)(g_j - g_i))), g = sign * z.
PTResult pt_run(const EnergyModel& model, const BinGrid& grid,
                const ProposalKernel& kernel, const PTConfig& config,
                std::uint64_t seed, std::optional<Sequence> start = std::nullopt);

class ReweightGapError : public Error {
 public:
  ReweightGapError(double t_a, double t_b);
};

struct ReweightOptions {
  double tolerance = 1e-8;
  std::uint64_t max_iterations = 1'000'000;
  // Use each bin's sampled mean z instead of its midpoint.
  bool use_mean_energy = false;
};

// Multiple-histogram (WHAM) combination of tempered histograms into ln rho.
// Iterates
//   ln rho(b) = ln sum_k n_k(b) - ln sum_k N_k exp(-ln Z_k + g(b)/T_k)
//   ln Z_k    = ln sum_b rho(b) exp(g(b)/T_k)
// until max |delta ln Z_k| < tolerance, with g(b) = sign * midpoint(b).
OutputDistribution reweight(std::span<const TemperatureHistogram> histograms,
                            const BinGrid& grid, Direction direction,
                            const ReweightOptions& options = {});

}  // namespace omni
