#include "omniinput/samplers.hpp"

#include <algorithm>
#include <atomic>
#include <barrier>
#include <cassert>
#include <cmath>
#include <exception>
#include <iomanip>
#include <mutex>
#include <sstream>
#include <thread>

#include "omniinput/logmath.hpp"

namespace omni {

ChainState ChainState::start(const EnergyModel& model, Sequence initial,
                             std::uint64_t seed) {
  model.space().validate(initial);
  ChainState s;
  s.current_z = model.score(initial);
  s.current = std::move(initial);
  s.rng = Rng(seed);
  return s;
}

ChainState ChainState::start_uniform(const EnergyModel& model, std::uint64_t seed) {
  ChainState s;
  s.rng = Rng(seed);
  s.current = uniform_sample(model.space(), s.rng);
  s.current_z = model.score(s.current);
  return s;
}

namespace {

// Log acceptance for a move from negative energy g_old to g_new at T.
double tempered_log_ratio(double g_old, double g_new, double temperature) {
  const double dg = g_new - g_old;
  if (std::isnan(dg)) return 0.0;  // both at the same infinity
  if (std::isinf(temperature)) return std::isinf(dg) ? dg : 0.0;
  return dg / temperature;
}

}  // namespace

bool metropolis_step(ChainState& state, const EnergyModel& model,
                     const Proposer& proposer, double temperature) {
  assert(temperature > 0.0);
  Proposal p = proposer(state.current, state.rng);
  const double z_new = p.z ? *p.z : model.score(p.seq);
  const double sign = direction_sign(model.direction());
  const double log_a =
      tempered_log_ratio(sign * state.current_z, sign * z_new, temperature) - p.log_q_ratio;
  ++state.steps;
  if (!state.rng.accept_log(std::isnan(log_a) ? kNegInf : log_a)) return false;
  state.current = std::move(p.seq);
  state.current_z = z_new;
  ++state.accepted;
#ifndef NDEBUG
  {
    const double check = model.score(state.current);
    assert(check == state.current_z || (std::isnan(check) && std::isnan(state.current_z)) ||
           std::abs(check - state.current_z) <= 1e-9 * std::max(1.0, std::abs(check)));
  }
#endif
  return true;
}

bool metropolis_step(ChainState& state, const EnergyModel& model,
                     const ProposalKernel& kernel, double temperature) {
  return metropolis_step(state, model, kernel.bind(model), temperature);
}

// ------------------------------------------------------------- Wang-Landau

void WLConfig::validate() const {
  if (!(initial_log_f > 0.0)) throw ConfigError("wl.initial_log_f", "must be > 0");
  if (!(flatness_ratio > 0.0 && flatness_ratio <= 1.0)) {
    throw ConfigError("wl.flatness_ratio", "must lie in (0, 1]");
  }
  if (!(log_f_floor > 0.0)) throw ConfigError("wl.log_f_floor", "must be > 0");
  if (check_interval < 1) throw ConfigError("wl.check_interval", "must be >= 1");
  if (max_steps < 1) throw ConfigError("wl.max_steps", "must be >= 1");
  if (reservoir_capacity < 1) throw ConfigError("wl.reservoir_capacity", "must be >= 1");
}

nlohmann::json WLConfig::to_json() const {
  return {{"initial_log_f", initial_log_f},         {"flatness_ratio", flatness_ratio},
          {"log_f_floor", log_f_floor},             {"check_interval", check_interval},
          {"max_steps", max_steps},                 {"stagnation_budget", stagnation_budget},
          {"reservoir_capacity", reservoir_capacity}};
}

nlohmann::json WLDiagnostics::to_json() const {
  nlohmann::json stages_j = nlohmann::json::array();
  for (const auto& s : stages) {
    stages_j.push_back({{"log_f", s.log_f},
                        {"steps", s.steps},
                        {"flatness", s.flatness},
                        {"visited_bins", s.visited_bins}});
  }
  return {{"stages", stages_j},
          {"total_steps", total_steps},
          {"acceptance_rate",
           total_steps ? static_cast<double>(accepted) / static_cast<double>(total_steps) : 0.0},
          {"converged", converged},
          {"warnings", warnings}};
}

namespace {

// min/mean of the stage histogram over bins seen at any point of the run.
double flatness_of(const std::vector<std::uint64_t>& stage_visits,
                   const std::vector<bool>& seen) {
  double sum = 0.0;
  double lo = std::numeric_limits<double>::infinity();
  int n = 0;
  for (std::size_t k = 0; k < seen.size(); ++k) {
    if (!seen[k]) continue;
    const auto v = static_cast<double>(stage_visits[k]);
    sum += v;
    lo = std::min(lo, v);
    ++n;
  }
  if (n == 0 || sum == 0.0) return 0.0;
  return lo / (sum / n);
}

// Bin for a proposed z; nullopt means the move must be rejected.
std::optional<int> proposal_bin(const BinGrid& grid, double z) {
  if (std::isnan(z)) return std::nullopt;
  if (auto k = grid.find(z)) return k;
  if (grid.policy() == OutOfRangePolicy::kReject) return std::nullopt;
  return grid.bin_of(z);
}

}  // namespace

WLResult wang_landau_run(const EnergyModel& model, const BinGrid& grid,
                         const ProposalKernel& kernel, const WLConfig& config,
                         std::uint64_t seed, std::optional<Sequence> start) {
  config.validate();
  kernel.validate(model.space());
  const auto nbins = static_cast<std::size_t>(grid.bin_count());

  ChainState st = start ? ChainState::start(model, *start, Rng::derive(seed, 0))
                        : ChainState::start_uniform(model, Rng::derive(seed, 0));
  auto cur = proposal_bin(grid, st.current_z);
  if (!cur) {
    throw Error("no_reachable_bins",
                "the starting input scores outside the grid; widen the grid or "
                "use the clamp policy");
  }
  int bin = *cur;

  WLResult result{OutputDistribution(grid, Normalization::kRelativeEntropy),
                  BinReservoir(grid.bin_count(), config.reservoir_capacity,
                               Rng::derive(seed, 1)),
                  {}};
  auto& diag = result.diagnostics;

  std::vector<double> entropy(nbins, 0.0);
  std::vector<std::uint64_t> stage_visits(nbins, 0);
  std::vector<bool> seen(nbins, false);
  seen[static_cast<std::size_t>(bin)] = true;
  int n_seen = 1;

  const bool single_bin = grid.bin_count() == 1;
  double log_f = config.initial_log_f;
  auto is_final_stage = [&] { return single_bin || log_f * 0.5 <= config.log_f_floor; };
  bool final_stage = is_final_stage();
  std::uint64_t stage_steps = 0;
  std::uint64_t since_new_bin = 0;
  bool stagnation_warned = false;
  const Proposer proposer = kernel.bind(model);

  while (diag.total_steps < config.max_steps) {
    Proposal p = proposer(st.current, st.rng);
    const double z_new = p.z ? *p.z : model.score(p.seq);
    ++st.steps;
    if (auto nb = proposal_bin(grid, z_new)) {
      const double log_a = entropy[static_cast<std::size_t>(bin)] -
                           entropy[static_cast<std::size_t>(*nb)] - p.log_q_ratio;
      if (st.rng.accept_log(std::isnan(log_a) ? kNegInf : log_a)) {
        st.current = std::move(p.seq);
        st.current_z = z_new;
        bin = *nb;
        ++diag.accepted;
      }
    }
    const auto b = static_cast<std::size_t>(bin);
    entropy[b] += log_f;
    ++stage_visits[b];
    ++result.entropy.visits[b];
    if (!seen[b]) {
      seen[b] = true;
      ++n_seen;
      since_new_bin = 0;
    } else {
      ++since_new_bin;
    }
    if (final_stage) result.reservoir.offer(bin, st.current, st.current_z);
    ++diag.total_steps;
    ++stage_steps;

    if (stage_steps % config.check_interval != 0) continue;
    const double flat = flatness_of(stage_visits, seen);
    if (flat >= config.flatness_ratio) {
      diag.stages.push_back({log_f, stage_steps, flat, n_seen});
      if (single_bin) {
        diag.converged = true;
        break;
      }
      log_f *= 0.5;
      std::fill(stage_visits.begin(), stage_visits.end(), 0);
      stage_steps = 0;
      if (log_f <= config.log_f_floor) {
        diag.converged = true;
        break;
      }
      final_stage = is_final_stage();
    } else if (!stagnation_warned && since_new_bin >= config.stagnation_budget) {
      stagnation_warned = true;
      std::ostringstream os;
      os << "stagnation: no new bin discovered in " << since_new_bin
         << " steps while the histogram is not flat (flatness " << std::setprecision(3)
         << flat << "); the kernel may not be ergodic on this grid";
      diag.warnings.push_back(os.str());
    }
  }
  if (!diag.converged) {
    std::ostringstream os;
    os << "max_steps " << config.max_steps << " reached at log_f " << log_f
       << " before the floor " << config.log_f_floor;
    diag.warnings.push_back(os.str());
    if (stage_steps > 0) {
      diag.stages.push_back({log_f, stage_steps, flatness_of(stage_visits, seen), n_seen});
    }
  }
  if (result.reservoir.total_size() == 0) {
    diag.warnings.push_back("reservoir is empty: the final stage was never reached");
  }

  // Report S~ with its minimum over visited bins at zero.
  double lo = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < nbins; ++k) {
    if (seen[k]) lo = std::min(lo, entropy[k]);
  }
  for (std::size_t k = 0; k < nbins; ++k) {
    result.entropy.log_counts[k] = seen[k] ? entropy[k] - lo : kNegInf;
  }
  return result;
}

std::vector<std::uint64_t> fixed_entropy_walk(const EnergyModel& model,
                                              const BinGrid& grid,
                                              const ProposalKernel& kernel,
                                              std::span<const double> entropy,
                                              std::uint64_t steps, std::uint64_t seed) {
  if (entropy.size() != static_cast<std::size_t>(grid.bin_count())) {
    throw InvalidArgument("entropy table size must equal the bin count");
  }
  ChainState st = ChainState::start_uniform(model, seed);
  int bin = grid.bin_of(st.current_z);
  const Proposer proposer = kernel.bind(model);
  std::vector<std::uint64_t> visits(entropy.size(), 0);
  for (std::uint64_t i = 0; i < steps; ++i) {
    Proposal p = proposer(st.current, st.rng);
    const double z_new = p.z ? *p.z : model.score(p.seq);
    if (auto nb = proposal_bin(grid, z_new)) {
      const double log_a = entropy[static_cast<std::size_t>(bin)] -
                           entropy[static_cast<std::size_t>(*nb)] - p.log_q_ratio;
      if (st.rng.accept_log(std::isnan(log_a) ? kNegInf : log_a)) {
        st.current = std::move(p.seq);
        st.current_z = z_new;
        bin = *nb;
      }
    }
    ++visits[static_cast<std::size_t>(bin)];
  }
  return visits;
}

// ------------------------------------------------------- Parallel tempering

std::vector<double> PTConfig::geometric_ladder(double t_max, double t_min, int k) {
  if (k < 2) throw ConfigError("pt.temperatures", "ladder needs K >= 2");
  if (!(t_max > 0.0 && t_min > 0.0)) throw ConfigError("pt.temperatures", "must be > 0");
  std::vector<double> out(static_cast<std::size_t>(k));
  const double ratio = std::pow(t_min / t_max, 1.0 / (k - 1));
  for (int i = 0; i < k; ++i) out[static_cast<std::size_t>(i)] = t_max * std::pow(ratio, i);
  out.back() = t_min;
  return out;
}

void PTConfig::validate() const {
  if (temperatures.size() < 2) throw ConfigError("pt.temperatures", "ladder needs K >= 2");
  for (double t : temperatures) {
    if (!(t > 0.0) || !std::isfinite(t)) {
      throw ConfigError("pt.temperatures", "every temperature must be finite and > 0");
    }
  }
  const bool non_increasing =
      std::is_sorted(temperatures.rbegin(), temperatures.rend());
  const bool non_decreasing = std::is_sorted(temperatures.begin(), temperatures.end());
  if (!non_increasing && !non_decreasing) {
    throw ConfigError("pt.temperatures", "ladder must be monotone");
  }
  if (swap_interval < 1) throw ConfigError("pt.swap_interval", "must be >= 1");
  if (steps_per_replica < 1) throw ConfigError("pt.steps_per_replica", "must be >= 1");
  if (burn_in >= steps_per_replica) {
    throw ConfigError("pt.burn_in", "must be smaller than steps_per_replica");
  }
  if (threads < 1) throw ConfigError("threads", "must be >= 1");
  if (reservoir_capacity < 1) throw ConfigError("pt.reservoir_capacity", "must be >= 1");
}

nlohmann::json PTConfig::to_json() const {
  return {{"temperatures", temperatures},     {"swap_interval", swap_interval},
          {"steps_per_replica", steps_per_replica}, {"burn_in", burn_in},
          {"threads", threads},               {"reservoir_capacity", reservoir_capacity},
          {"enable_swaps", enable_swaps}};
}

void TemperatureHistogram::record(int bin, double z) {
  const auto b = static_cast<std::size_t>(bin);
  ++counts[b];
  ++total;
  mean_z[b] += (z - mean_z[b]) / static_cast<double>(counts[b]);
}

double PTResult::swap_rate(std::size_t pair) const {
  return swap_attempts[pair] ? static_cast<double>(swap_accepted[pair]) /
                                   static_cast<double>(swap_attempts[pair])
                             : 0.0;
}

nlohmann::json PTResult::diagnostics() const {
  nlohmann::json pairs = nlohmann::json::array();
  for (std::size_t i = 0; i < swap_attempts.size(); ++i) {
    pairs.push_back({{"pair", {i, i + 1}},
                     {"temperatures", {histograms[i].temperature, histograms[i + 1].temperature}},
                     {"attempts", swap_attempts[i]},
                     {"accepted", swap_accepted[i]},
                     {"rate", swap_rate(i)}});
  }
  return {{"swap_acceptance", pairs}, {"move_acceptance", move_acceptance}, {"warnings", warnings}};
}

PTResult pt_run(const EnergyModel& model, const BinGrid& grid,
                const ProposalKernel& kernel, const PTConfig& config,
                std::uint64_t seed, std::optional<Sequence> start) {
  config.validate();
  kernel.validate(model.space());
  const std::size_t k_count = config.temperatures.size();
  const auto nbins = static_cast<std::size_t>(grid.bin_count());
  const double sign = direction_sign(model.direction());

  std::vector<ChainState> slots;
  slots.reserve(k_count);
  for (std::size_t k = 0; k < k_count; ++k) {
    const auto s = Rng::derive(seed, k);
    slots.push_back(start ? ChainState::start(model, *start, s)
                          : ChainState::start_uniform(model, s));
  }

  PTResult result{{},
                  BinReservoir(grid.bin_count(), config.reservoir_capacity,
                               Rng::derive(seed, 1001)),
                  std::vector<std::uint64_t>(k_count - 1, 0),
                  std::vector<std::uint64_t>(k_count - 1, 0),
                  std::vector<double>(k_count, 0.0),
                  {}};
  for (double t : config.temperatures) {
    result.histograms.push_back({t, std::vector<std::uint64_t>(nbins, 0),
                                 std::vector<double>(nbins, 0.0), 0});
  }
  Rng swap_rng(Rng::derive(seed, 1000));
  const Proposer proposer = kernel.bind(model);

  auto run_slot = [&](std::size_t k, std::uint64_t n) {
    auto& st = slots[k];
    const double t = config.temperatures[k];
    for (std::uint64_t i = 0; i < n; ++i) {
      metropolis_step(st, model, proposer, t);
      if (st.steps <= config.burn_in) continue;
      if (auto b = proposal_bin(grid, st.current_z)) result.histograms[k].record(*b, st.current_z);
    }
  };

  const std::uint64_t n_segments =
      (config.steps_per_replica + config.swap_interval - 1) / config.swap_interval;
  auto segment_length = [&](std::uint64_t s) {
    return std::min(config.swap_interval, config.steps_per_replica - s * config.swap_interval);
  };

  auto between_segments = [&](std::uint64_t s) {
    if (config.enable_swaps) {
      for (std::size_t i = s % 2; i + 1 < k_count; i += 2) {
        const double ti = config.temperatures[i];
        const double tj = config.temperatures[i + 1];
        const double gi = sign * slots[i].current_z;
        const double gj = sign * slots[i + 1].current_z;
        double log_a = (1.0 / ti - 1.0 / tj) * (gj - gi);
        if (std::isnan(log_a)) log_a = 0.0;
        ++result.swap_attempts[i];
        if (swap_rng.accept_log(log_a)) {
          ++result.swap_accepted[i];
          std::swap(slots[i].current, slots[i + 1].current);
          std::swap(slots[i].current_z, slots[i + 1].current_z);
        }
      }
    }
    for (std::size_t k = 0; k < k_count; ++k) {
      if (slots[k].steps <= config.burn_in) continue;
      if (auto b = proposal_bin(grid, slots[k].current_z)) {
        result.reservoir.offer(*b, slots[k].current, slots[k].current_z,
                               config.temperatures[k]);
      }
    }
  };

  const auto workers = static_cast<std::size_t>(
      std::min<std::size_t>(static_cast<std::size_t>(config.threads), k_count));
  if (workers <= 1) {
    for (std::uint64_t s = 0; s < n_segments; ++s) {
      const auto n = segment_length(s);
      for (std::size_t k = 0; k < k_count; ++k) run_slot(k, n);
      between_segments(s);
    }
  } else {
    std::uint64_t segment = 0;
    std::atomic<bool> done{n_segments == 0};
    std::exception_ptr failure;
    std::mutex failure_mu;
    auto record_failure = [&] {
      std::lock_guard lock(failure_mu);
      if (!failure) failure = std::current_exception();
    };
    auto on_barrier = [&]() noexcept {
      if (!failure) {
        try {
          between_segments(segment);
        } catch (...) {
          failure = std::current_exception();
        }
      }
      ++segment;
      if (segment >= n_segments || failure) done = true;
    };
    std::barrier sync(static_cast<std::ptrdiff_t>(workers), on_barrier);
    auto work = [&](std::size_t w) {
      while (!done.load()) {
        const auto n = segment_length(segment);
        try {
          for (std::size_t k = w; k < k_count; k += workers) run_slot(k, n);
        } catch (...) {
          record_failure();
        }
        sync.arrive_and_wait();
      }
    };
    std::vector<std::thread> pool;
    for (std::size_t w = 1; w < workers; ++w) pool.emplace_back(work, w);
    work(0);
    for (auto& t : pool) t.join();
    if (failure) std::rethrow_exception(failure);
  }

  for (std::size_t k = 0; k < k_count; ++k) {
    result.move_acceptance[k] =
        static_cast<double>(slots[k].accepted) / static_cast<double>(slots[k].steps);
  }
  for (std::size_t i = 0; i + 1 < k_count; ++i) {
    const double r = result.swap_rate(i);
    if (config.enable_swaps && result.swap_attempts[i] > 0 && (r < 0.2 || r > 0.6) &&
        config.temperatures[i] != config.temperatures[i + 1]) {
      std::ostringstream os;
      os << "swap rate " << std::setprecision(3) << r << " between T="
         << config.temperatures[i] << " and T=" << config.temperatures[i + 1]
         << " is outside the 20-60% target";
      result.warnings.push_back(os.str());
    }
  }
  return result;
}

// ---------------------------------------------------------------- Reweight

namespace {

std::string temperature_label(double t) {
  std::ostringstream os;
  os << std::setprecision(6) << t;
  return os.str();
}

}  // namespace

ReweightGapError::ReweightGapError(double t_a, double t_b)
    : Error("reweight_gap", "no overlapping bins between T=" + temperature_label(t_a) +
                                " and T=" + temperature_label(t_b) +
                                "; add temperatures between them or sample longer") {}

OutputDistribution reweight(std::span<const TemperatureHistogram> histograms,
                            const BinGrid& grid, Direction direction,
                            const ReweightOptions& options) {
  if (histograms.empty()) throw InvalidArgument("reweight needs at least one histogram");
  const auto nbins = static_cast<std::size_t>(grid.bin_count());
  const std::size_t k_count = histograms.size();
  for (const auto& h : histograms) {
    if (h.counts.size() != nbins) throw GridMismatchError();
    if (h.total == 0) {
      throw Error("empty_histogram",
                  "no samples at T=" + temperature_label(h.temperature));
    }
  }
  for (std::size_t k = 0; k + 1 < k_count; ++k) {
    bool overlap = false;
    for (std::size_t b = 0; b < nbins && !overlap; ++b) {
      overlap = histograms[k].counts[b] > 0 && histograms[k + 1].counts[b] > 0;
    }
    if (!overlap) throw ReweightGapError(histograms[k].temperature, histograms[k + 1].temperature);
  }

  const double sign = direction_sign(direction);
  std::vector<double> log_h(nbins, kNegInf);
  std::vector<double> g(nbins, 0.0);
  std::vector<std::uint64_t> visits(nbins, 0);
  for (std::size_t b = 0; b < nbins; ++b) {
    std::uint64_t n = 0;
    double zsum = 0.0;
    for (const auto& h : histograms) {
      n += h.counts[b];
      zsum += h.mean_z[b] * static_cast<double>(h.counts[b]);
    }
    visits[b] = n;
    if (n > 0) log_h[b] = std::log(static_cast<double>(n));
    const double z = options.use_mean_energy && n > 0
                         ? zsum / static_cast<double>(n)
                         : grid.mid(static_cast<int>(b));
    g[b] = sign * z;
  }
  std::vector<double> log_n(k_count), beta(k_count);
  for (std::size_t k = 0; k < k_count; ++k) {
    log_n[k] = std::log(static_cast<double>(histograms[k].total));
    beta[k] = 1.0 / histograms[k].temperature;
  }

  std::vector<double> log_z(k_count, 0.0);
  std::vector<double> log_rho(nbins, kNegInf);
  std::vector<double> terms(std::max(k_count, nbins));
  bool converged = false;
  for (std::uint64_t it = 0; it < options.max_iterations; ++it) {
    for (std::size_t b = 0; b < nbins; ++b) {
      if (log_h[b] == kNegInf) continue;
      for (std::size_t k = 0; k < k_count; ++k) {
        terms[k] = log_n[k] - log_z[k] + g[b] * beta[k];
      }
      log_rho[b] = log_h[b] - log_sum_exp(std::span<const double>(terms.data(), k_count));
    }
    std::vector<double> next(k_count);
    for (std::size_t k = 0; k < k_count; ++k) {
      LogSum acc;
      for (std::size_t b = 0; b < nbins; ++b) {
        if (log_rho[b] != kNegInf) acc.add(log_rho[b] + g[b] * beta[k]);
      }
      next[k] = acc.value();
    }
    const double gauge = next[0];
    double delta = 0.0;
    for (std::size_t k = 0; k < k_count; ++k) {
      next[k] -= gauge;
      delta = std::max(delta, std::abs(next[k] - log_z[k]));
    }
    log_z = std::move(next);
    if (delta < options.tolerance) {
      converged = true;
      break;
    }
  }
  if (!converged) {
    throw Error("reweight_not_converged",
                "histogram reweighting did not converge within " +
                    std::to_string(options.max_iterations) + " iterations");
  }
  // Final density consistent with the converged normalizations.
  for (std::size_t b = 0; b < nbins; ++b) {
    if (log_h[b] == kNegInf) continue;
    for (std::size_t k = 0; k < k_count; ++k) terms[k] = log_n[k] - log_z[k] + g[b] * beta[k];
    log_rho[b] = log_h[b] - log_sum_exp(std::span<const double>(terms.data(), k_count));
  }

  OutputDistribution out(grid, Normalization::kRelativeEntropy);
  out.log_counts = std::move(log_rho);
  out.visits = std::move(visits);
  return out;
}

}  // namespace omni
