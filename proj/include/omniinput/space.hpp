#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include <boost/multiprecision/cpp_int.hpp>
#include <json.hpp>

#include "omniinput/rng.hpp"

namespace omni {

using Token = std::int32_t;
using BigCount = boost::multiprecision::cpp_int;

// A fixed-length token sequence. Tokens are opaque small integers; mapping
// them to text is the job of a detokenizer table.
struct Sequence {
  std::vector<Token> tokens;

  Sequence() = default;
  explicit Sequence(std::vector<Token> t) : tokens(std::move(t)) {}
  Sequence(std::initializer_list<Token> t) : tokens(t) {}

  std::size_t size() const { return tokens.size(); }
  Token operator[](std::size_t i) const { return tokens[i]; }
  Token& operator[](std::size_t i) { return tokens[i]; }

  friend bool operator==(const Sequence&, const Sequence&) = default;
  friend auto operator<=>(const Sequence&, const Sequence&) = default;
};

// The discrete space {0..N}^D under a uniform prior.
class InputSpace {
 public:
  // vocab_size is N+1; throws InvalidArgument unless vocab_size >= 2 and
  // length >= 1.
  InputSpace(int vocab_size, int length);

  int vocab_size() const { return vocab_size_; }
  int max_token() const { return vocab_size_ - 1; }
  int length() const { return length_; }

  // (N+1)^D, exact.
  const BigCount& total_size() const { return total_size_; }
  double log_total_size() const;

  bool contains(const Sequence& seq) const;
  // Throws InvalidArgument naming the offending position.
  void validate(const Sequence& seq) const;

  // Position of seq in lexicographic order, and its inverse. Both need the
  // index to fit in 64 bits.
  std::uint64_t index_of(const Sequence& seq) const;
  Sequence at(std::uint64_t index) const;
  // total_size as uint64; throws if it does not fit.
  std::uint64_t total_size_u64() const;

  friend bool operator==(const InputSpace& a, const InputSpace& b) {
    return a.vocab_size_ == b.vocab_size_ && a.length_ == b.length_;
  }

 private:
  int vocab_size_;
  int length_;
  BigCount total_size_;
};

// Visits every sequence once, in lexicographic order. The visitor receives a
// reference that is mutated in place between calls; copy it to keep it.
// Returning false from the visitor stops the walk early.
void enumerate(const InputSpace& space,
               const std::function<bool(const Sequence&)>& visit);

// Visits the lexicographic index range [begin, end).
void enumerate_range(const InputSpace& space, std::uint64_t begin,
                     std::uint64_t end,
                     const std::function<bool(const Sequence&)>& visit);

// Advances seq to its lexicographic successor; false when it wraps.
bool next_sequence(const InputSpace& space, Sequence& seq);

Sequence uniform_sample(const InputSpace& space, Rng& rng);
Sequence uniform_sample(const InputSpace& space, std::uint64_t seed);

// 64-bit FNV-1a over the length and little-endian token bytes. Stable across
// runs and platforms.
std::uint64_t canonical_hash(std::span<const Token> tokens);
inline std::uint64_t canonical_hash(const Sequence& seq) {
  return canonical_hash(seq.tokens);
}
std::string hash_hex(std::uint64_t digest);

// JSONL sequence records: {"tokens":[...], ...}. Unknown fields are kept in
// `extra` and written back unchanged.
struct SequenceRecord {
  Sequence seq;
  nlohmann::json extra = nlohmann::json::object();

  nlohmann::json to_json() const;
  static SequenceRecord from_json(const nlohmann::json& j);
};

std::vector<SequenceRecord> read_sequence_jsonl(std::istream& in);
void write_sequence_jsonl(std::ostream& out,
                          std::span<const SequenceRecord> records);

}  // namespace omni
