#include "omniinput/proposal.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "omniinput/logmath.hpp"

namespace omni {

void ProposalKernel::validate(const InputSpace& space) const {
  if (sites_per_step < 1) throw ConfigError("kernel.sites_per_step", "must be >= 1");
  if (sites_per_step > space.length()) {
    throw ConfigError("kernel.sites_per_step", "must not exceed sequence length " +
                                                   std::to_string(space.length()));
  }
  if (kind == KernelKind::kSharedBetaInformed) {
    if (!std::isfinite(beta_lo) || !std::isfinite(beta_hi)) {
      throw ConfigError("kernel.beta_range", "bounds must be finite");
    }
    if (!(beta_lo < 0.0 && 0.0 < beta_hi)) {
      throw ConfigError("kernel.beta_range", "needs beta_lo < 0 < beta_hi");
    }
  }
}

std::vector<int> choose_sites(int length, int count, Rng& rng) {
  // Partial Fisher-Yates over positions.
  std::vector<int> pos(static_cast<std::size_t>(length));
  for (int i = 0; i < length; ++i) pos[static_cast<std::size_t>(i)] = i;
  for (int i = 0; i < count; ++i) {
    const auto j = i + static_cast<int>(rng.below(static_cast<std::uint64_t>(length - i)));
    std::swap(pos[static_cast<std::size_t>(i)], pos[static_cast<std::size_t>(j)]);
  }
  pos.resize(static_cast<std::size_t>(count));
  return pos;
}

std::vector<double> log_softmax_weights(std::span<const double> scores, double beta) {
  std::vector<double> logits(scores.size());
  for (std::size_t v = 0; v < scores.size(); ++v) {
    if (beta == 0.0) {
      logits[v] = 0.0;
    } else {
      const double l = beta * scores[v];
      // A +inf logit would swamp everything; an infinite score is treated as
      // unreachable whichever sign beta has.
      logits[v] = std::isfinite(l) ? l : kNegInf;
    }
  }
  const double norm = log_sum_exp(logits);
  for (auto& l : logits) l = l == kNegInf ? kNegInf : l - norm;
  return logits;
}

namespace {

int draw_categorical(std::span<const double> log_weights, Rng& rng) {
  const double u = rng.uniform01();
  double acc = 0.0;
  int last_positive = -1;
  for (std::size_t v = 0; v < log_weights.size(); ++v) {
    if (log_weights[v] == kNegInf) continue;
    acc += std::exp(log_weights[v]);
    last_positive = static_cast<int>(v);
    if (u < acc) return static_cast<int>(v);
  }
  return last_positive;
}

}  // namespace

Proposal shared_beta_propose(const EnergyModel& model, const Sequence& current,
                             double beta, std::span<const int> positions, Rng& rng) {
  Proposal p{current, 0.0, std::nullopt};
  double log_forward = 0.0;
  std::vector<double> last_scores;
  for (int pos : positions) {
    auto scores = model.single_site_scores(current, pos);
    const auto lw = log_softmax_weights(scores, beta);
    const int v = draw_categorical(lw, rng);
    p.seq[static_cast<std::size_t>(pos)] = v;
    log_forward += lw[static_cast<std::size_t>(v)];
    last_scores = std::move(scores);
  }
  if (positions.size() == 1) {
    // With one site the reverse move sees the same single-site scores.
    const auto pos = static_cast<std::size_t>(positions[0]);
    const auto lw = log_softmax_weights(last_scores, beta);
    p.log_q_ratio = log_forward - lw[static_cast<std::size_t>(current[pos])];
    p.z = last_scores[static_cast<std::size_t>(p.seq[pos])];
    return p;
  }
  double log_backward = 0.0;
  for (int pos : positions) {
    const auto scores = model.single_site_scores(p.seq, pos);
    const auto lw = log_softmax_weights(scores, beta);
    log_backward += lw[static_cast<std::size_t>(current[static_cast<std::size_t>(pos)])];
  }
  p.log_q_ratio = log_forward - log_backward;
  return p;
}

Proposal shared_beta_propose(const EnergyModel& model, const Sequence& current,
                             double beta, int sites, Rng& rng) {
  const auto positions = choose_sites(model.space().length(), sites, rng);
  return shared_beta_propose(model, current, beta, positions, rng);
}

Proposal ProposalKernel::propose(const EnergyModel& model, const Sequence& current,
                                 Rng& rng) const {
  const auto& space = model.space();
  if (kind == KernelKind::kSingleSiteUniform) {
    Proposal p{current, 0.0, std::nullopt};
    const auto positions = choose_sites(space.length(), sites_per_step, rng);
    for (int pos : positions) {
      p.seq[static_cast<std::size_t>(pos)] =
          static_cast<Token>(rng.below(static_cast<std::uint64_t>(space.vocab_size())));
    }
    return p;
  }
  const double beta = rng.uniform(beta_lo, beta_hi);
  return shared_beta_propose(model, current, beta, sites_per_step, rng);
}

Proposer ProposalKernel::bind(const EnergyModel& model) const {
  return [kernel = *this, &model](const Sequence& current, Rng& rng) {
    return kernel.propose(model, current, rng);
  };
}

nlohmann::json ProposalKernel::to_json() const {
  nlohmann::json j;
  j["kind"] = kind == KernelKind::kSingleSiteUniform ? "single_site_uniform"
                                                      : "shared_beta_informed";
  j["sites_per_step"] = sites_per_step;
  if (kind == KernelKind::kSharedBetaInformed) j["beta_range"] = {beta_lo, beta_hi};
  return j;
}

ProposalKernel ProposalKernel::from_json(const nlohmann::json& j) {
  ProposalKernel k;
  const auto kind = j.value("kind", "single_site_uniform");
  if (kind == "single_site_uniform") {
    k.kind = KernelKind::kSingleSiteUniform;
  } else if (kind == "shared_beta_informed") {
    k.kind = KernelKind::kSharedBetaInformed;
  } else {
    throw ConfigError("kernel.kind", "unknown kernel \"" + kind + "\"");
  }
  k.sites_per_step = j.value("sites_per_step", 1);
  if (j.contains("beta_range")) {
    k.beta_lo = j["beta_range"].at(0).get<double>();
    k.beta_hi = j["beta_range"].at(1).get<double>();
  }
  return k;
}

ProposalKernel ProposalKernel::parse(const std::string& spec) {
  std::vector<std::string> parts;
  std::stringstream ss(spec);
  std::string item;
  while (std::getline(ss, item, ':')) parts.push_back(item);
  if (parts.empty()) throw ConfigError("kernel", "empty kernel spec");
  ProposalKernel k;
  try {
    if (parts[0] == "uniform") {
      k.kind = KernelKind::kSingleSiteUniform;
      if (parts.size() > 2) throw ConfigError("kernel", "uniform[:sites]");
      if (parts.size() == 2) k.sites_per_step = std::stoi(parts[1]);
    } else if (parts[0] == "informed") {
      k.kind = KernelKind::kSharedBetaInformed;
      if (parts.size() == 2 || parts.size() > 4) {
        throw ConfigError("kernel", "informed[:beta_lo:beta_hi[:sites]]");
      }
      if (parts.size() >= 3) {
        k.beta_lo = std::stod(parts[1]);
        k.beta_hi = std::stod(parts[2]);
      }
      if (parts.size() == 4) k.sites_per_step = std::stoi(parts[3]);
    } else {
      throw ConfigError("kernel", "unknown kernel \"" + parts[0] + "\"");
    }
  } catch (const std::invalid_argument&) {
    throw ConfigError("kernel", "malformed number in \"" + spec + "\"");
  }
  return k;
}

}  // namespace omni
