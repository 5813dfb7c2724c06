#pragma once

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "omniinput/energy.hpp"
#include "omniinput/rng.hpp"

namespace omni {

// A proposed move together with log q(x'|x) - log q(x|x').
struct Proposal {
  Sequence seq;
  double log_q_ratio = 0.0;
  // Score of `seq` when the proposer already knows it.
  std::optional<double> z;
};

// Any proposal mechanism; the kernels below and test doubles share this shape.
using Proposer = std::function<Proposal(const Sequence& current, Rng& rng)>;

enum class KernelKind {
  kSingleSiteUniform,
  // Locally informed: token weights exp(beta * single-site score) with one
  // beta shared by the forward and backward move, beta drawn uniformly from
  // [beta_lo, beta_hi] per proposal.
  kSharedBetaInformed,
};

struct ProposalKernel {
  KernelKind kind = KernelKind::kSingleSiteUniform;
  double beta_lo = -2.0;
  double beta_hi = 2.0;
  int sites_per_step = 1;

  // Throws ConfigError on an invalid combination.
  void validate(const InputSpace& space) const;

  Proposal propose(const EnergyModel& model, const Sequence& current, Rng& rng) const;
  Proposer bind(const EnergyModel& model) const;

  nlohmann::json to_json() const;
  static ProposalKernel from_json(const nlohmann::json& j);
  // "uniform", "uniform:<sites>", "informed", "informed:<lo>:<hi>[:<sites>]"
  static ProposalKernel parse(const std::string& spec);
};

// Picks `count` distinct positions uniformly at random.
std::vector<int> choose_sites(int length, int count, Rng& rng);

// Informed proposal at the given positions. Each position's new token is
// drawn from softmax(beta * single_site_scores(current, position)); the
// reverse move is scored with the same beta.
Proposal shared_beta_propose(const EnergyModel& model, const Sequence& current,
                             double beta, std::span<const int> positions, Rng& rng);

// Same, with `sites` positions chosen uniformly.
Proposal shared_beta_propose(const EnergyModel& model, const Sequence& current,
                             double beta, int sites, Rng& rng);

// log softmax(beta * scores), with non-finite scores given zero weight.
std::vector<double> log_softmax_weights(std::span<const double> scores, double beta);

}  // namespace omni
