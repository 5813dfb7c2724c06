#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <string>

#include "omniinput/energy.hpp"
#include "omniinput/histogram.hpp"

namespace omni {

// Model selectors understood by the command line:
//   sum[:offset]                     token sum (+ offset)
//   ngram:<corpus>[:order[:alpha]]   n-gram trained on a whitespace corpus
//   external:<command>               wire-protocol subprocess
//   band:<lo>:<hi>                   0 when the lexicographic index is in [lo, hi), else 1
struct ModelSpec {
  std::string spec = "sum";
  int length = 4;     // D
  int max_token = 9;  // N

  nlohmann::json to_json() const;
  static ModelSpec from_json(const nlohmann::json& j);
};

std::unique_ptr<EnergyModel> make_model(const ModelSpec& spec);

// z = 0 inside the lexicographic band [lo, hi), 1 outside; lower is confident.
std::unique_ptr<EnergyModel> make_band_model(const InputSpace& space, std::uint64_t lo,
                                             std::uint64_t hi);

// "modulo[:m]"
std::unique_ptr<OracleAnnotator> make_oracle(const std::string& spec);

// Integer-aligned grid covering a model's whole range when it is known.
std::optional<BinGrid> default_grid(const ModelSpec& spec);

// Token-to-text rendering for annotation; null when the model has no vocabulary.
std::function<std::string(const Sequence&)> detokenizer(const EnergyModel& model);

}  // namespace omni
