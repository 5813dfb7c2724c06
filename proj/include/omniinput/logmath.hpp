#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>

namespace omni {

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// ln(exp(a) + exp(b)); symmetric in its arguments bit for bit.
inline double log_add(double a, double b) {
  if (a < b) std::swap(a, b);
  if (b == kNegInf) return a;
  return a + std::log1p(std::exp(b - a));
}

inline double log_sum_exp(std::span<const double> xs) {
  double hi = kNegInf;
  for (double x : xs) hi = std::max(hi, x);
  if (hi == kNegInf) return kNegInf;
  double acc = 0.0;
  for (double x : xs) acc += std::exp(x - hi);
  return hi + std::log(acc);
}

// Streaming log-sum-exp accumulator.
class LogSum {
 public:
  void add(double log_value) { value_ = log_add(value_, log_value); }
  double value() const { return value_; }
  bool empty() const { return value_ == kNegInf; }

 private:
  double value_ = kNegInf;
};

}  // namespace omni
