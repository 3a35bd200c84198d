#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <vector>

#include "pixforge/autodiff.hpp"

namespace testing {

// Small deterministic generator for hand-rolled property tests.
class Gen {
 public:
  explicit Gen(std::uint64_t seed) : key_(pixforge::ad::mix64(seed)) {}
  std::uint64_t bits() { return pixforge::ad::mix64(key_ + counter_++ * 0x9e3779b97f4a7c15ULL); }
  double uniform(double lo, double hi) { return lo + (hi - lo) * static_cast<double>(bits() >> 11) * 0x1.0p-53; }
  std::size_t index(std::size_t n) { return static_cast<std::size_t>(bits() % n); }
  std::vector<double> values(std::size_t n, double lo = -1.0, double hi = 1.0) {
    std::vector<double> v(n);
    for (auto& x : v) x = uniform(lo, hi);
    return v;
  }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

inline double rel_error(double a, double b) { return std::abs(a - b) / std::max({1e-8, std::abs(a), std::abs(b)}); }

// Central difference of f with respect to coordinate i of x.
inline double central_difference(const std::function<double()>& f, pixforge::ad::Tensor& x, std::size_t i,
                                  double h = 1e-5) {
  auto data = x.mutable_data();
  const double orig = data[i];
  data[i] = orig + h;
  const double up = f();
  data[i] = orig - h;
  const double down = f();
  data[i] = orig;
  return (up - down) / (2.0 * h);
}

// Worst relative error between the analytic gradient of build() w.r.t. each
// input and central differences.
inline double max_gradient_error(std::vector<pixforge::ad::Tensor>& inputs,
                                 const std::function<pixforge::ad::Tensor()>& build, double h = 1e-5) {
  for (auto& t : inputs) t.zero_grad();
  pixforge::ad::backward(build());
  std::vector<std::vector<double>> analytic;
  for (auto& t : inputs) analytic.emplace_back(t.grad().begin(), t.grad().end());
  auto f = [&build] {
    pixforge::ad::NoGradGuard guard;
    return build().item();
  };
  double worst = 0.0;
  for (std::size_t k = 0; k < inputs.size(); ++k)
    for (std::size_t i = 0; i < inputs[k].numel(); ++i) {
      const double g = analytic[k].empty() ? 0.0 : analytic[k][i];
      const double fd = central_difference(f, inputs[k], i, h);
      worst = std::max(worst, std::abs(fd - g) / std::max({1e-6, std::abs(fd), std::abs(g)}));
    }
  return worst;
}

}  // namespace testing
