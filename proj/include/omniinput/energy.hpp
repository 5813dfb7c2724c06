#pragma once

#include <functional>
#include <iosfwd>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "omniinput/errors.hpp"
#include "omniinput/space.hpp"

namespace omni {

// Which end of the output axis the model treats as confident.
enum class Direction {
  kLowerIsConfident,   // e.g. NLL
  kHigherIsConfident,  // e.g. a logit
};

std::string to_string(Direction d);
Direction direction_from_string(const std::string& s);

// +1 for kHigherIsConfident, -1 for kLowerIsConfident. Samplers maximize
// sign * z, so the confident end is always the high-probability end.
inline double direction_sign(Direction d) {
  return d == Direction::kHigherIsConfident ? 1.0 : -1.0;
}

// A scoring failure carries the sequence that could not be scored.
class ScoringError : public Error {
 public:
  ScoringError(const std::string& message, Sequence seq)
      : Error("scoring_error", message), sequence_(std::move(seq)) {}
  const Sequence& sequence() const noexcept { return sequence_; }

 private:
  Sequence sequence_;
};

// f: sequence -> z. Analytic implementations must be safe to call from many
// threads at once.
class EnergyModel {
 public:
  virtual ~EnergyModel() = default;

  virtual std::string name() const = 0;
  virtual Direction direction() const = 0;
  virtual const InputSpace& space() const = 0;

  virtual double score(const Sequence& seq) const = 0;

  // Element-wise score, order preserved. Either every element is scored or
  // the call throws.
  virtual std::vector<double> score_batch(std::span<const Sequence> seqs) const;

  // Entry v is score(seq with seq[position] = v), for v in 0..N.
  virtual std::vector<double> single_site_scores(const Sequence& seq,
                                                 int position) const;

  double negative_energy(double z) const { return direction_sign(direction()) * z; }
};

// Exhaustive single-site scores through score(); the reference that fast
// paths are checked against.
std::vector<double> single_site_scores_exhaustive(const EnergyModel& model,
                                                  const Sequence& seq,
                                                  int position);

// z(x) = sum_i x_i + offset. Lower is confident.
class SumEnergy final : public EnergyModel {
 public:
  explicit SumEnergy(InputSpace space, double offset = 0.0)
      : space_(std::move(space)), offset_(offset) {}

  std::string name() const override;
  Direction direction() const override { return Direction::kLowerIsConfident; }
  const InputSpace& space() const override { return space_; }
  double score(const Sequence& seq) const override;
  std::vector<double> single_site_scores(const Sequence& seq,
                                         int position) const override;

  double offset() const { return offset_; }

 private:
  InputSpace space_;
  double offset_;
};

// Wraps an arbitrary callable; used for fixtures and tests.
class FunctionModel final : public EnergyModel {
 public:
  using Fn = std::function<double(const Sequence&)>;

  FunctionModel(std::string name, InputSpace space, Direction direction, Fn fn)
      : name_(std::move(name)),
        space_(std::move(space)),
        direction_(direction),
        fn_(std::move(fn)) {}

  std::string name() const override { return name_; }
  Direction direction() const override { return direction_; }
  const InputSpace& space() const override { return space_; }
  double score(const Sequence& seq) const override { return fn_(seq); }

 private:
  std::string name_;
  InputSpace space_;
  Direction direction_;
  Fn fn_;
};

// Word <-> token id table.
class Vocabulary {
 public:
  Vocabulary() = default;
  explicit Vocabulary(std::vector<std::string> words);

  // Returns the id, adding the word if it is new.
  Token intern(const std::string& word);
  // Throws InvalidArgument for unknown words.
  Token id(const std::string& word) const;
  const std::string& word(Token id) const { return words_.at(static_cast<std::size_t>(id)); }
  int size() const { return static_cast<int>(words_.size()); }
  const std::vector<std::string>& words() const { return words_; }

  Sequence encode(const std::string& text) const;
  std::string decode(const Sequence& seq) const;

  // `id\ttext` per line.
  static Vocabulary read_tsv(std::istream& in);
  void write_tsv(std::ostream& out) const;

 private:
  std::vector<std::string> words_;
  std::unordered_map<std::string, Token> ids_;
};

// n-gram language model with additive smoothing. The score is the mean
// per-token negative log-probability, each token conditioned on the previous
// order-1 tokens with begin-of-sequence padding.
class NGramModel final : public EnergyModel {
 public:
  // corpus: token-id sentences over ids 0..vocab_size-1 (any length).
  NGramModel(int vocab_size, int order, double alpha, int length,
             std::span<const std::vector<Token>> corpus);

  // Whitespace-tokenized text, one sentence per line. The vocabulary is built
  // in order of first appearance.
  static NGramModel from_text(std::istream& in, int order, double alpha,
                              int length);

  std::string name() const override;
  Direction direction() const override { return Direction::kLowerIsConfident; }
  const InputSpace& space() const override { return space_; }
  double score(const Sequence& seq) const override;
  std::vector<double> single_site_scores(const Sequence& seq,
                                         int position) const override;

  // log p(token | context) where context holds the order-1 preceding tokens
  // (BOS-padded).
  double log_prob(std::span<const Token> context, Token token) const;
  // Sum over tokens of p(token | context); 1 up to rounding.
  double total_probability(std::span<const Token> context) const;

  int order() const { return order_; }
  double alpha() const { return alpha_; }
  const Vocabulary& vocabulary() const { return vocab_; }

 private:
  std::uint64_t context_key(std::span<const Token> context) const;
  // log p(seq[i] | preceding tokens of seq).
  double term(const Sequence& seq, int i) const;

  struct ContextCounts {
    double total = 0.0;
    std::unordered_map<Token, double> next;
  };

  InputSpace space_;
  int order_;
  double alpha_;
  Token bos_;
  Vocabulary vocab_;
  std::unordered_map<std::uint64_t, ContextCounts> counts_;
};

// Machine stand-in for a human judge: maps a sequence to a score in [0,1].
class OracleAnnotator {
 public:
  virtual ~OracleAnnotator() = default;
  virtual std::string name() const = 0;
  virtual double annotate(const Sequence& seq) const = 0;
};

// 1.0 when the token sum is divisible by the modulus, else 0.0.
class ModuloAnnotator final : public OracleAnnotator {
 public:
  explicit ModuloAnnotator(int modulus = 30);
  std::string name() const override;
  double annotate(const Sequence& seq) const override;
  int modulus() const { return modulus_; }

 private:
  int modulus_;
};

}  // namespace omni
