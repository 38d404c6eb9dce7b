#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "tpose/numcore/params.hpp"

namespace tpose::nc {

struct AdamState {
  std::uint64_t step = 0;
  std::vector<Tensor> first_moment;
  std::vector<Tensor> second_moment;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  AdamState() = default;
  AdamState(const ModelParameters& params, double lr) : learning_rate(lr) {
    for (const auto& e : params.entries()) {
      first_moment.emplace_back(e.value.shape());
      second_moment.emplace_back(e.value.shape());
    }
  }
};

/// Bias-corrected Adam update; clears gradients afterward.
/// A non-finite gradient aborts the update (parameters and state untouched) with NumericError.
inline void adam_step(ModelParameters& params, AdamState& state) {
  if (state.first_moment.size() != params.count()) {
    throw StateError("adam state has " + std::to_string(state.first_moment.size()) +
                     " moment slots for " + std::to_string(params.count()) + " parameters");
  }
  for (std::size_t i = 0; i < params.count(); ++i) {
    const auto& e = params.entry(i);
    if (state.first_moment[i].shape() != e.value.shape()) {
      throw ShapeError("adam moment " + shape_string(state.first_moment[i].shape()) +
                       " does not match parameter '" + e.name + "' " + shape_string(e.value.shape()));
    }
    if (!e.grad.all_finite()) throw NumericError("non-finite gradient in parameter '" + e.name + "'");
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t i = 0; i < params.count(); ++i) {
    auto& e = params.entry(i);
    auto& m = state.first_moment[i];
    auto& v = state.second_moment[i];
    for (std::size_t k = 0; k < e.value.size(); ++k) {
      const double gk = e.grad[k];
      m[k] = state.beta1 * m[k] + (1.0 - state.beta1) * gk;
      v[k] = state.beta2 * v[k] + (1.0 - state.beta2) * gk * gk;
      const double mhat = m[k] / c1;
      const double vhat = v[k] / c2;
      e.value[k] -= state.learning_rate * mhat / (std::sqrt(vhat) + state.epsilon);
    }
  }
  params.zero_grad();
}

}  // namespace tpose::nc
