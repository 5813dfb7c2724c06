#include "omniinput/space.hpp"

#include <cmath>
#include <cstdio>
#include <istream>
#include <limits>
#include <ostream>

#include "omniinput/errors.hpp"

namespace omni {

InputSpace::InputSpace(int vocab_size, int length)
    : vocab_size_(vocab_size), length_(length) {
  if (vocab_size < 2) {
    throw InvalidArgument("vocab_size must be >= 2, got " +
                          std::to_string(vocab_size));
  }
  if (length < 1) {
    throw InvalidArgument("length must be >= 1, got " + std::to_string(length));
  }
  total_size_ = boost::multiprecision::pow(BigCount(vocab_size), length);
}

double InputSpace::log_total_size() const {
  return static_cast<double>(length_) * std::log(static_cast<double>(vocab_size_));
}

bool InputSpace::contains(const Sequence& seq) const {
  if (seq.size() != static_cast<std::size_t>(length_)) return false;
  for (Token t : seq.tokens) {
    if (t < 0 || t >= vocab_size_) return false;
  }
  return true;
}

void InputSpace::validate(const Sequence& seq) const {
  if (seq.size() != static_cast<std::size_t>(length_)) {
    throw InvalidArgument("sequence length " + std::to_string(seq.size()) +
                          " does not match space length " +
                          std::to_string(length_));
  }
  for (std::size_t i = 0; i < seq.size(); ++i) {
    if (seq[i] < 0 || seq[i] >= vocab_size_) {
      throw InvalidArgument("token " + std::to_string(seq[i]) + " at position " +
                            std::to_string(i) + " outside [0, " +
                            std::to_string(vocab_size_ - 1) + "]");
    }
  }
}

std::uint64_t InputSpace::total_size_u64() const {
  if (total_size_ > BigCount(std::numeric_limits<std::uint64_t>::max())) {
    throw InvalidArgument("space size " + total_size_.str() +
                          " does not fit in 64 bits");
  }
  return total_size_.convert_to<std::uint64_t>();
}

std::uint64_t InputSpace::index_of(const Sequence& seq) const {
  total_size_u64();
  std::uint64_t idx = 0;
  for (Token t : seq.tokens) {
    idx = idx * static_cast<std::uint64_t>(vocab_size_) +
          static_cast<std::uint64_t>(t);
  }
  return idx;
}

Sequence InputSpace::at(std::uint64_t index) const {
  Sequence seq;
  seq.tokens.assign(static_cast<std::size_t>(length_), 0);
  for (int i = length_ - 1; i >= 0; --i) {
    seq[static_cast<std::size_t>(i)] =
        static_cast<Token>(index % static_cast<std::uint64_t>(vocab_size_));
    index /= static_cast<std::uint64_t>(vocab_size_);
  }
  return seq;
}

bool next_sequence(const InputSpace& space, Sequence& seq) {
  for (int i = space.length() - 1; i >= 0; --i) {
    auto& t = seq[static_cast<std::size_t>(i)];
    if (t + 1 < space.vocab_size()) {
      ++t;
      return true;
    }
    t = 0;
  }
  return false;
}

void enumerate(const InputSpace& space,
               const std::function<bool(const Sequence&)>& visit) {
  Sequence seq;
  seq.tokens.assign(static_cast<std::size_t>(space.length()), 0);
  do {
    if (!visit(seq)) return;
  } while (next_sequence(space, seq));
}

void enumerate_range(const InputSpace& space, std::uint64_t begin,
                     std::uint64_t end,
                     const std::function<bool(const Sequence&)>& visit) {
  if (begin >= end) return;
  Sequence seq = space.at(begin);
  for (std::uint64_t i = begin; i < end; ++i) {
    if (!visit(seq)) return;
    next_sequence(space, seq);
  }
}

Sequence uniform_sample(const InputSpace& space, Rng& rng) {
  Sequence seq;
  seq.tokens.resize(static_cast<std::size_t>(space.length()));
  for (auto& t : seq.tokens) {
    t = static_cast<Token>(rng.below(static_cast<std::uint64_t>(space.vocab_size())));
  }
  return seq;
}

Sequence uniform_sample(const InputSpace& space, std::uint64_t seed) {
  Rng rng(seed);
  return uniform_sample(space, rng);
}

std::uint64_t canonical_hash(std::span<const Token> tokens) {
  constexpr std::uint64_t kOffset = 0xcbf29ce484222325ULL;
  constexpr std::uint64_t kPrime = 0x100000001b3ULL;
  std::uint64_t h = kOffset;
  auto mix_u32 = [&h](std::uint32_t v) {
    for (int b = 0; b < 4; ++b) {
      h ^= (v >> (8 * b)) & 0xFFu;
      h *= kPrime;
    }
  };
  mix_u32(static_cast<std::uint32_t>(tokens.size()));
  for (Token t : tokens) mix_u32(static_cast<std::uint32_t>(t));
  return h;
}

std::string hash_hex(std::uint64_t digest) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(digest));
  return buf;
}

nlohmann::json SequenceRecord::to_json() const {
  nlohmann::json j = extra;
  j["tokens"] = seq.tokens;
  return j;
}

SequenceRecord SequenceRecord::from_json(const nlohmann::json& j) {
  if (!j.is_object() || !j.contains("tokens") || !j["tokens"].is_array()) {
    throw IoError("sequence record missing \"tokens\" array");
  }
  SequenceRecord rec;
  rec.seq.tokens = j["tokens"].get<std::vector<Token>>();
  rec.extra = j;
  rec.extra.erase("tokens");
  return rec;
}

std::vector<SequenceRecord> read_sequence_jsonl(std::istream& in) {
  std::vector<SequenceRecord> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(SequenceRecord::from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw IoError("line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

void write_sequence_jsonl(std::ostream& out,
                          std::span<const SequenceRecord> records) {
  for (const auto& r : records) out << r.to_json().dump() << '\n';
}

}  // namespace omni
