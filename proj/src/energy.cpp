#include "omniinput/energy.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>

#include "omniinput/logmath.hpp"

namespace omni {

std::string to_string(Direction d) {
  return d == Direction::kLowerIsConfident ? "lower" : "higher";
}

Direction direction_from_string(const std::string& s) {
  if (s == "lower") return Direction::kLowerIsConfident;
  if (s == "higher") return Direction::kHigherIsConfident;
  throw InvalidArgument("direction must be \"lower\" or \"higher\", got \"" + s +
                        "\"");
}

std::vector<double> EnergyModel::score_batch(std::span<const Sequence> seqs) const {
  std::vector<double> out;
  out.reserve(seqs.size());
  for (const auto& s : seqs) out.push_back(score(s));
  return out;
}

std::vector<double> EnergyModel::single_site_scores(const Sequence& seq,
                                                    int position) const {
  return single_site_scores_exhaustive(*this, seq, position);
}

std::vector<double> single_site_scores_exhaustive(const EnergyModel& model,
                                                  const Sequence& seq,
                                                  int position) {
  const auto& space = model.space();
  if (position < 0 || position >= space.length()) {
    throw InvalidArgument("position " + std::to_string(position) +
                          " outside [0, " + std::to_string(space.length()) + ")");
  }
  std::vector<Sequence> variants(static_cast<std::size_t>(space.vocab_size()), seq);
  for (int v = 0; v < space.vocab_size(); ++v) {
    variants[static_cast<std::size_t>(v)][static_cast<std::size_t>(position)] = v;
  }
  return model.score_batch(variants);
}

// ---------------------------------------------------------------- SumEnergy

std::string SumEnergy::name() const {
  std::ostringstream os;
  os << "sum";
  if (offset_ != 0.0) os << "+" << offset_;
  return os.str();
}

double SumEnergy::score(const Sequence& seq) const {
  long long s = 0;
  for (Token t : seq.tokens) s += t;
  return static_cast<double>(s) + offset_;
}

std::vector<double> SumEnergy::single_site_scores(const Sequence& seq,
                                                  int position) const {
  const double rest = score(seq) - seq[static_cast<std::size_t>(position)];
  std::vector<double> out(static_cast<std::size_t>(space_.vocab_size()));
  for (int v = 0; v < space_.vocab_size(); ++v) out[static_cast<std::size_t>(v)] = rest + v;
  return out;
}

// --------------------------------------------------------------- Vocabulary

Vocabulary::Vocabulary(std::vector<std::string> words) {
  for (auto& w : words) intern(w);
}

Token Vocabulary::intern(const std::string& word) {
  auto [it, inserted] = ids_.try_emplace(word, static_cast<Token>(words_.size()));
  if (inserted) words_.push_back(word);
  return it->second;
}

Token Vocabulary::id(const std::string& word) const {
  auto it = ids_.find(word);
  if (it == ids_.end()) throw InvalidArgument("unknown word \"" + word + "\"");
  return it->second;
}

Sequence Vocabulary::encode(const std::string& text) const {
  std::istringstream is(text);
  Sequence seq;
  std::string w;
  while (is >> w) seq.tokens.push_back(id(w));
  return seq;
}

std::string Vocabulary::decode(const Sequence& seq) const {
  std::string out;
  for (std::size_t i = 0; i < seq.size(); ++i) {
    if (i) out += ' ';
    const auto t = seq[i];
    if (t >= 0 && t < size()) {
      out += word(t);
    } else {
      out += "<" + std::to_string(t) + ">";
    }
  }
  return out;
}

Vocabulary Vocabulary::read_tsv(std::istream& in) {
  std::vector<std::pair<Token, std::string>> rows;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) {
      throw IoError("vocabulary line " + std::to_string(lineno) + ": expected id<TAB>text");
    }
    rows.emplace_back(static_cast<Token>(std::stol(line.substr(0, tab))),
                      line.substr(tab + 1));
  }
  std::vector<std::string> words(rows.size());
  for (auto& [id, text] : rows) {
    if (id < 0 || static_cast<std::size_t>(id) >= rows.size()) {
      throw IoError("vocabulary ids must be dense 0..n-1; got " + std::to_string(id));
    }
    words[static_cast<std::size_t>(id)] = std::move(text);
  }
  return Vocabulary(std::move(words));
}

void Vocabulary::write_tsv(std::ostream& out) const {
  for (std::size_t i = 0; i < words_.size(); ++i) out << i << '\t' << words_[i] << '\n';
}

// --------------------------------------------------------------- NGramModel

NGramModel::NGramModel(int vocab_size, int order, double alpha, int length,
                       std::span<const std::vector<Token>> corpus)
    : space_(vocab_size, length), order_(order), alpha_(alpha), bos_(vocab_size) {
  if (order < 1) throw InvalidArgument("n-gram order must be >= 1");
  if (!(alpha >= 0.0)) throw InvalidArgument("smoothing alpha must be >= 0");
  const auto ctx_len = static_cast<std::size_t>(order_ - 1);
  std::vector<Token> ctx(ctx_len);
  for (const auto& sentence : corpus) {
    std::fill(ctx.begin(), ctx.end(), bos_);
    for (Token t : sentence) {
      if (t < 0 || t >= vocab_size) {
        throw InvalidArgument("corpus token " + std::to_string(t) + " out of range");
      }
      auto& c = counts_[context_key(ctx)];
      c.total += 1.0;
      c.next[t] += 1.0;
      if (ctx_len > 0) {
        std::rotate(ctx.begin(), ctx.begin() + 1, ctx.end());
        ctx.back() = t;
      }
    }
  }
}

NGramModel NGramModel::from_text(std::istream& in, int order, double alpha,
                                 int length) {
  Vocabulary vocab;
  std::vector<std::vector<Token>> corpus;
  std::string line;
  while (std::getline(in, line)) {
    std::istringstream is(line);
    std::vector<Token> sentence;
    std::string w;
    while (is >> w) sentence.push_back(vocab.intern(w));
    if (!sentence.empty()) corpus.push_back(std::move(sentence));
  }
  NGramModel model(vocab.size(), order, alpha, length, corpus);
  model.vocab_ = std::move(vocab);
  return model;
}

std::string NGramModel::name() const {
  std::ostringstream os;
  os << "ngram(n=" << order_ << ",alpha=" << alpha_ << ")";
  return os.str();
}

std::uint64_t NGramModel::context_key(std::span<const Token> context) const {
  const auto base = static_cast<std::uint64_t>(space_.vocab_size()) + 1;
  std::uint64_t key = 0;
  for (Token t : context) key = key * base + static_cast<std::uint64_t>(t);
  return key;
}

double NGramModel::log_prob(std::span<const Token> context, Token token) const {
  const double v = static_cast<double>(space_.vocab_size());
  double count = 0.0;
  double total = 0.0;
  if (auto it = counts_.find(context_key(context)); it != counts_.end()) {
    total = it->second.total;
    if (auto jt = it->second.next.find(token); jt != it->second.next.end()) {
      count = jt->second;
    }
  }
  const double num = count + alpha_;
  const double den = total + alpha_ * v;
  if (num <= 0.0 || den <= 0.0) return kNegInf;
  return std::log(num) - std::log(den);
}

double NGramModel::total_probability(std::span<const Token> context) const {
  double p = 0.0;
  for (Token t = 0; t < space_.vocab_size(); ++t) p += std::exp(log_prob(context, t));
  return p;
}

double NGramModel::term(const Sequence& seq, int i) const {
  const int ctx_len = order_ - 1;
  Token ctx[16];
  std::vector<Token> big;
  Token* buf = ctx;
  if (ctx_len > 16) {
    big.resize(static_cast<std::size_t>(ctx_len));
    buf = big.data();
  }
  for (int k = 0; k < ctx_len; ++k) {
    const int src = i - ctx_len + k;
    buf[k] = src < 0 ? bos_ : seq[static_cast<std::size_t>(src)];
  }
  return log_prob(std::span<const Token>(buf, static_cast<std::size_t>(ctx_len)),
                  seq[static_cast<std::size_t>(i)]);
}

double NGramModel::score(const Sequence& seq) const {
  double total = 0.0;
  for (int i = 0; i < space_.length(); ++i) total += term(seq, i);
  return -total / space_.length();
}

std::vector<double> NGramModel::single_site_scores(const Sequence& seq,
                                                   int position) const {
  if (position < 0 || position >= space_.length()) {
    throw InvalidArgument("position out of range");
  }
  // Only the terms at position..position+order-1 see the changed token.
  const int last = std::min(space_.length() - 1, position + order_ - 1);
  double fixed = 0.0;
  for (int i = 0; i < space_.length(); ++i) {
    if (i < position || i > last) fixed += term(seq, i);
  }
  Sequence work = seq;
  std::vector<double> out(static_cast<std::size_t>(space_.vocab_size()));
  for (Token v = 0; v < space_.vocab_size(); ++v) {
    work[static_cast<std::size_t>(position)] = v;
    double s = fixed;
    for (int i = position; i <= last; ++i) s += term(work, i);
    out[static_cast<std::size_t>(v)] = -s / space_.length();
  }
  return out;
}

// ---------------------------------------------------------- ModuloAnnotator

ModuloAnnotator::ModuloAnnotator(int modulus) : modulus_(modulus) {
  if (modulus < 1) throw InvalidArgument("modulus must be >= 1");
}

std::string ModuloAnnotator::name() const { return "modulo:" + std::to_string(modulus_); }

double ModuloAnnotator::annotate(const Sequence& seq) const {
  long long s = 0;
  for (Token t : seq.tokens) s += t;
  return s % modulus_ == 0 ? 1.0 : 0.0;
}

}  // namespace omni
