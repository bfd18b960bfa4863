#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "mgalign/tensor.hpp"

namespace testing {

inline mgalign::Tensor random_tensor(mgalign::Shape shape, std::mt19937_64& rng, double scale = 1.0,
                                     bool requires_grad = false) {
  std::normal_distribution<double> dist(0.0, scale);
  std::vector<double> v(mgalign::shape_numel(shape));
  for (double& x : v) x = dist(rng);
  return mgalign::Tensor(std::move(shape), std::move(v), requires_grad);
}

inline int uniform_int(std::mt19937_64& rng, int lo, int hi) {
  return std::uniform_int_distribution<int>(lo, hi)(rng);
}

// Agreement test used for every analytic vs numeric gradient comparison.
inline bool grad_close(double analytic, double numeric, double rel = 1e-3, double abs_floor = 1e-8) {
  const double diff = std::abs(analytic - numeric);
  if (diff <= abs_floor) return true;
  return diff / std::max(std::abs(analytic), std::abs(numeric)) <= rel;
}

// Central difference of `loss` with respect to element i of `t`.
inline double numeric_grad(mgalign::Tensor& t, std::size_t i, const std::function<double()>& loss, double h = 1e-6) {
  const double saved = t.values()[i];
  t.values()[i] = saved + h;
  const double up = loss();
  t.values()[i] = saved - h;
  const double down = loss();
  t.values()[i] = saved;
  return (up - down) / (2.0 * h);
}

// Backpropagates `build()` once, then compares every element of each input
// against central differences. Returns the number of mismatches.
inline int check_gradients(const std::function<mgalign::Tensor()>& build, std::vector<mgalign::Tensor*> inputs,
                           double rel = 1e-5) {
  for (auto* t : inputs) t->zero_grad();
  build().backward();
  std::vector<std::vector<double>> analytic;
  for (auto* t : inputs) {
    analytic.emplace_back(t->grad().begin(), t->grad().end());
  }
  int bad = 0;
  auto value = [&] {
    mgalign::NoGradGuard guard;
    return build().item();
  };
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    for (std::size_t i = 0; i < inputs[k]->numel(); ++i) {
      if (!grad_close(analytic[k][i], numeric_grad(*inputs[k], i, value), rel, 1e-7)) ++bad;
    }
  }
  return bad;
}

}  // namespace testing
