#include "omniinput/oracle.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <mutex>
#include <numeric>
#include <thread>

#include <boost/math/distributions/chi_squared.hpp>

#include "omniinput/samplers.hpp"

namespace omni {

namespace {

double log_big(const BigCount& x) {
  if (x <= 0) return kNegInf;
  const auto bits = boost::multiprecision::msb(x);
  if (bits < 1000) return std::log(x.convert_to<double>());
  const unsigned shift = static_cast<unsigned>(bits) - 60;
  const BigCount top = x >> shift;
  return std::log(top.convert_to<double>()) + static_cast<double>(shift) * std::log(2.0);
}

std::uint64_t saturate_u64(const BigCount& x) {
  if (x > BigCount(std::numeric_limits<std::uint64_t>::max())) {
    return std::numeric_limits<std::uint64_t>::max();
  }
  return x.convert_to<std::uint64_t>();
}

struct Partial {
  std::vector<std::uint64_t> counts;
  std::vector<double> score_sums;
  std::uint64_t out_of_range = 0;
};

}  // namespace

BudgetExceededError::BudgetExceededError(const BigCount& required, std::uint64_t cap)
    : Error("budget_exceeded", "enumeration needs " + required.str() +
                                   " model evaluations; the cap is " + std::to_string(cap) +
                                   " (raise the cap or shrink D/N)") {}

ExactTables enumerate_exact(const EnergyModel& model, const BinGrid& grid,
                            const OracleAnnotator* annotator,
                            const EnumerationOptions& options) {
  const InputSpace& space = model.space();
  if (space.total_size() > BigCount(options.cap)) {
    throw BudgetExceededError(space.total_size(), options.cap);
  }
  const std::uint64_t total = space.total_size_u64();
  const int threads = static_cast<int>(
      std::clamp<std::uint64_t>(static_cast<std::uint64_t>(std::max(1, options.threads)), 1,
                                std::max<std::uint64_t>(1, total / 4096)));
  const auto bins = static_cast<std::size_t>(grid.bin_count());

  std::vector<Partial> partials(static_cast<std::size_t>(threads));
  std::atomic<std::uint64_t> done{0};
  std::mutex progress_mutex;
  std::exception_ptr failure;
  std::mutex failure_mutex;

  auto work = [&](int t) {
    Partial& part = partials[static_cast<std::size_t>(t)];
    part.counts.assign(bins, 0);
    part.score_sums.assign(bins, 0.0);
    const std::uint64_t begin = total / static_cast<std::uint64_t>(threads) * static_cast<std::uint64_t>(t);
    const std::uint64_t end = t + 1 == threads
                                  ? total
                                  : total / static_cast<std::uint64_t>(threads) * static_cast<std::uint64_t>(t + 1);
    constexpr std::size_t kBatch = 4096;
    std::vector<Sequence> buffer(kBatch, Sequence(std::vector<Token>(static_cast<std::size_t>(space.length()))));
    std::size_t filled = 0;

    auto flush = [&] {
      const auto z = model.score_batch(std::span<const Sequence>(buffer.data(), filled));
      for (std::size_t i = 0; i < filled; ++i) {
        std::optional<int> k;
        if (grid.policy() == OutOfRangePolicy::kReject) {
          k = grid.find(z[i]);
        } else {
          k = grid.bin_of(z[i]);
        }
        if (!k) {
          ++part.out_of_range;
          continue;
        }
        ++part.counts[static_cast<std::size_t>(*k)];
        if (annotator) part.score_sums[static_cast<std::size_t>(*k)] += annotator->annotate(buffer[i]);
      }
      const auto before = done.fetch_add(filled);
      if (options.progress && options.progress_every > 0 &&
          (before + filled) / options.progress_every != before / options.progress_every) {
        std::lock_guard lock(progress_mutex);
        options.progress(before + filled, total);
      }
      filled = 0;
    };

    try {
      enumerate_range(space, begin, end, [&](const Sequence& seq) {
        buffer[filled++].tokens = seq.tokens;
        if (filled == kBatch) flush();
        return true;
      });
      if (filled) flush();
    } catch (...) {
      std::lock_guard lock(failure_mutex);
      if (!failure) failure = std::current_exception();
    }
  };

  if (threads == 1) {
    work(0);
  } else {
    std::vector<std::jthread> pool;
    for (int t = 0; t < threads; ++t) pool.emplace_back(work, t);
  }
  if (failure) std::rethrow_exception(failure);

  ExactTables out{OutputDistribution(grid, Normalization::kNormalizedToSpace), std::nullopt, 0};
  std::vector<std::uint64_t> counts(bins, 0);
  std::vector<double> sums(bins, 0.0);
  for (const auto& p : partials) {
    for (std::size_t k = 0; k < bins; ++k) {
      counts[k] += p.counts[k];
      sums[k] += p.score_sums[k];
    }
    out.out_of_range += p.out_of_range;
  }
  for (std::size_t k = 0; k < bins; ++k) {
    out.rho.visits[k] = counts[k];
    out.rho.log_counts[k] = counts[k] ? std::log(static_cast<double>(counts[k])) : kNegInf;
  }
  if (annotator) {
    PrecisionPerBin r(grid);
    for (std::size_t k = 0; k < bins; ++k) {
      if (counts[k]) {
        r.set(static_cast<int>(k),
              std::clamp(sums[k] / static_cast<double>(counts[k]), 0.0, 1.0), counts[k]);
      }
    }
    out.r = std::move(r);
  }
  return out;
}

OutputDistribution exact_output_distribution(const EnergyModel& model, const BinGrid& grid,
                                             const EnumerationOptions& options) {
  return enumerate_exact(model, grid, nullptr, options).rho;
}

OutputDistribution sum_energy_dp(const SumEnergy& model, const BinGrid& grid) {
  const int n = model.space().max_token();
  const int d = model.space().length();
  // ways[s] = number of sequences of the current length with token sum s.
  std::vector<BigCount> ways{1};
  for (int pos = 0; pos < d; ++pos) {
    std::vector<BigCount> next(ways.size() + static_cast<std::size_t>(n));
    for (std::size_t s = 0; s < ways.size(); ++s) {
      if (ways[s] == 0) continue;
      for (int v = 0; v <= n; ++v) next[s + static_cast<std::size_t>(v)] += ways[s];
    }
    ways = std::move(next);
  }
  std::vector<BigCount> per_bin(static_cast<std::size_t>(grid.bin_count()));
  for (std::size_t s = 0; s < ways.size(); ++s) {
    const double z = static_cast<double>(s) + model.offset();
    std::optional<int> k = grid.policy() == OutOfRangePolicy::kReject ? grid.find(z)
                                                                      : std::optional<int>(grid.bin_of(z));
    if (k) per_bin[static_cast<std::size_t>(*k)] += ways[s];
  }
  OutputDistribution out(grid, Normalization::kNormalizedToSpace);
  for (std::size_t k = 0; k < per_bin.size(); ++k) {
    out.log_counts[k] = log_big(per_bin[k]);
    out.visits[k] = saturate_u64(per_bin[k]);
  }
  return out;
}

PrecisionPerBin exact_precision_per_bin(const EnergyModel& model,
                                        const OracleAnnotator& annotator,
                                        const BinGrid& grid,
                                        const EnumerationOptions& options) {
  return *enumerate_exact(model, grid, &annotator, options).r;
}

Divergence entropy_divergence(const OutputDistribution& estimated,
                              const OutputDistribution& exact, double mass_coverage,
                              std::optional<int> reference_bin) {
  if (!(estimated.grid == exact.grid)) throw GridMismatchError();
  if (!(mass_coverage > 0.0 && mass_coverage <= 1.0)) {
    throw InvalidArgument("mass_coverage must lie in (0, 1]");
  }
  if (exact.empty()) throw Error("empty_histogram", "exact distribution has no mass");
  const auto& ex = exact.log_counts;
  const auto& es = estimated.log_counts;
  Divergence out;
  out.reference_bin = reference_bin.value_or(
      static_cast<int>(std::max_element(ex.begin(), ex.end()) - ex.begin()));
  const auto ref = static_cast<std::size_t>(out.reference_bin);
  if (ex[ref] == kNegInf) throw Error("unvisited_reference", "reference bin has no exact mass");
  if (es[ref] == kNegInf) {
    throw Error("unvisited_reference",
                "reference bin " + std::to_string(out.reference_bin) + " is unvisited in the estimate");
  }

  std::vector<int> order(ex.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return ex[static_cast<std::size_t>(a)] > ex[static_cast<std::size_t>(b)];
  });
  const double log_total = exact.log_total();
  double covered = 0.0;
  double sum = 0.0;
  for (int k : order) {
    const auto i = static_cast<std::size_t>(k);
    if (ex[i] == kNegInf || covered >= mass_coverage) break;
    covered += std::exp(ex[i] - log_total);
    out.bins.push_back(k);
    const double dev = es[i] == kNegInf
                           ? std::numeric_limits<double>::infinity()
                           : std::abs((es[i] - es[ref]) - (ex[i] - ex[ref]));
    out.max_abs = std::max(out.max_abs, dev);
    sum += dev;
  }
  out.mean_abs = sum / static_cast<double>(out.bins.size());
  return out;
}

StationarityResult chi_square_pooled(std::span<const std::uint64_t> observed,
                                     std::span<const double> probabilities) {
  if (observed.size() != probabilities.size()) {
    throw InvalidArgument("observed and probabilities differ in length");
  }
  StationarityResult out;
  out.observed.assign(observed.begin(), observed.end());
  const double n = static_cast<double>(std::accumulate(observed.begin(), observed.end(), std::uint64_t{0}));
  for (double p : probabilities) out.expected.push_back(n * p);

  std::vector<std::size_t> order(observed.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return out.expected[a] < out.expected[b]; });

  std::vector<std::pair<double, double>> cells;  // (expected, observed)
  double e = 0.0, o = 0.0;
  for (std::size_t i : order) {
    e += out.expected[i];
    o += static_cast<double>(observed[i]);
    if (e >= 5.0) {
      cells.emplace_back(e, o);
      e = o = 0.0;
    }
  }
  if (e > 0.0 || o > 0.0) {
    if (cells.empty()) {
      cells.emplace_back(e, o);
    } else {
      cells.back().first += e;
      cells.back().second += o;
    }
  }
  for (const auto& [ce, co] : cells) {
    if (ce > 0.0) {
      out.statistic += (co - ce) * (co - ce) / ce;
    } else if (co > 0.0) {
      out.statistic = std::numeric_limits<double>::infinity();
    }
  }
  out.degrees_of_freedom = static_cast<int>(cells.size()) - 1;
  if (out.degrees_of_freedom < 1) {
    out.p_value = 1.0;
  } else if (!std::isfinite(out.statistic)) {
    out.p_value = 0.0;
  } else {
    boost::math::chi_squared dist(out.degrees_of_freedom);
    out.p_value = boost::math::cdf(boost::math::complement(dist, out.statistic));
  }
  return out;
}

StationarityResult stationarity_test(const EnergyModel& model, const Proposer& proposer,
                                     const StationarityOptions& options) {
  const InputSpace& space = model.space();
  if (space.total_size() > 4096) {
    throw InvalidArgument("stationarity test needs a space of at most 4096 states");
  }
  const auto states = static_cast<std::size_t>(space.total_size_u64());
  std::vector<double> log_w(states);
  enumerate(space, [&](const Sequence& seq) {
    const double g = model.negative_energy(model.score(seq));
    log_w[space.index_of(seq)] = std::isinf(options.temperature) ? 0.0 : g / options.temperature;
    return true;
  });
  const double log_z = log_sum_exp(log_w);
  std::vector<double> p(states);
  for (std::size_t i = 0; i < states; ++i) p[i] = std::exp(log_w[i] - log_z);

  auto chain = ChainState::start_uniform(model, options.seed);
  for (std::uint64_t s = 0; s < options.burn_in; ++s) {
    metropolis_step(chain, model, proposer, options.temperature);
  }
  std::vector<std::uint64_t> observed(states, 0);
  for (std::uint64_t s = 0; s < options.samples; ++s) {
    for (std::uint64_t t = 0; t < options.thin; ++t) {
      metropolis_step(chain, model, proposer, options.temperature);
    }
    ++observed[space.index_of(chain.current)];
  }
  return chi_square_pooled(observed, p);
}

Proposer biased_step_proposer(const InputSpace& space) {
  return [space](const Sequence& current, Rng& rng) {
    Proposal p;
    p.seq = current;
    const auto site = static_cast<std::size_t>(rng.below(static_cast<std::uint64_t>(space.length())));
    const Token t = current[site];
    p.seq[site] = rng.uniform01() < 2.0 / 3.0 ? std::min<Token>(t + 1, space.max_token())
                                              : std::max<Token>(t - 1, 0);
    return p;
  };
}

}  // namespace omni
