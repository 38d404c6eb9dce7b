#pragma once

#include <algorithm>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "tpose/numcore/errors.hpp"

namespace tpose::belief {

/// Discretized pose grid: n independent dimensions with d bins each; the middle bin is the origin.
struct StateSpaceSpec {
  std::size_t n = 4;
  std::size_t d = 11;
  /// Physical size of one bin per dimension, e.g. "2mm" or "1deg". Informational only.
  std::vector<std::string> resolution = {"2mm", "2mm", "1deg", "1deg"};

  void validate() const {
    if (n < 1) throw ConfigError("state space needs n >= 1");
    if (d < 3) throw ConfigError("state space needs d >= 3, got " + std::to_string(d));
    if (d % 2 == 0) throw ConfigError("state space needs odd d so the middle bin is the origin, got " + std::to_string(d));
    if (d > 255) throw ConfigError("state space d must fit in one byte");
  }

  std::size_t origin() const { return d / 2; }
  std::size_t cells() const { return n * d; }

  friend bool operator==(const StateSpaceSpec&, const StateSpaceSpec&) = default;
};

inline constexpr int kMaxDelta = 2;
inline constexpr std::size_t kMovesPerDim = 2 * kMaxDelta + 1;

/// One bin index per dimension.
struct FactoredState {
  std::vector<int> indices;

  std::size_t size() const { return indices.size(); }
  int operator[](std::size_t i) const { return indices[i]; }
  int& operator[](std::size_t i) { return indices[i]; }

  void validate(const StateSpaceSpec& spec) const {
    if (indices.size() != spec.n) throw ShapeError("state has " + std::to_string(indices.size()) + " dims, expected " + std::to_string(spec.n));
    for (int v : indices) {
      if (v < 0 || v >= static_cast<int>(spec.d)) throw ConfigError("state index " + std::to_string(v) + " out of range");
    }
  }

  friend bool operator==(const FactoredState&, const FactoredState&) = default;
};

/// Per-dimension bin shift in {-2, ..., +2}.
struct DeltaAction {
  std::vector<int> deltas;

  DeltaAction() = default;
  explicit DeltaAction(std::vector<int> d) : deltas(std::move(d)) {
    for (int v : deltas) {
      if (v < -kMaxDelta || v > kMaxDelta) throw ConfigError("delta " + std::to_string(v) + " outside [-2, 2]");
    }
  }
  static DeltaAction zero(std::size_t n) { return DeltaAction(std::vector<int>(n, 0)); }

  /// Category index 0..4 maps to delta -2..+2.
  static int delta_of(std::size_t category) { return static_cast<int>(category) - kMaxDelta; }
  static std::size_t category_of(int delta) { return static_cast<std::size_t>(delta + kMaxDelta); }

  std::size_t size() const { return deltas.size(); }
  int operator[](std::size_t i) const { return deltas[i]; }

  friend bool operator==(const DeltaAction&, const DeltaAction&) = default;
};

inline int clamp_bin(int index, std::size_t d) { return std::clamp(index, 0, static_cast<int>(d) - 1); }

/// The true dynamics: per-dimension shift clamped to the workspace.
inline FactoredState apply_action(const FactoredState& s, const DeltaAction& a, const StateSpaceSpec& spec) {
  if (a.size() != s.size()) throw ShapeError("action has " + std::to_string(a.size()) + " dims, state has " + std::to_string(s.size()));
  FactoredState out = s;
  for (std::size_t i = 0; i < s.size(); ++i) out[i] = clamp_bin(s[i] + a[i], spec.d);
  return out;
}

/// Row-major n x d matrix of per-dimension values.
struct FactorMatrix {
  std::size_t n = 0;
  std::size_t d = 0;
  std::vector<double> values;

  FactorMatrix() = default;
  FactorMatrix(std::size_t n_, std::size_t d_, double fill = 0.0) : n(n_), d(d_), values(n_ * d_, fill) {}
  FactorMatrix(std::size_t n_, std::size_t d_, std::vector<double> v) : n(n_), d(d_), values(std::move(v)) {
    if (values.size() != n * d) throw ShapeError("factor matrix needs " + std::to_string(n * d) + " values, got " + std::to_string(values.size()));
  }

  std::span<double> row(std::size_t i) { return {values.data() + i * d, d}; }
  std::span<const double> row(std::size_t i) const { return {values.data() + i * d, d}; }
  double& at(std::size_t i, std::size_t j) { return values[i * d + j]; }
  double at(std::size_t i, std::size_t j) const { return values[i * d + j]; }

  friend bool operator==(const FactorMatrix&, const FactorMatrix&) = default;
};

/// n x d matrix whose rows are the per-dimension posterior mass functions.
struct FactoredBelief : FactorMatrix {
  using FactorMatrix::FactorMatrix;
};

/// n x d non-negative per-dimension observation likelihoods.
struct Likelihood : FactorMatrix {
  using FactorMatrix::FactorMatrix;
};

}  // namespace tpose::belief
