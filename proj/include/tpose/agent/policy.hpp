#pragma once

#include <cmath>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "tpose/belief/filter.hpp"
#include "tpose/numcore.hpp"
#include "tpose/rng.hpp"

namespace tpose::agent {

/// Belief-input policy/value network.
///
/// Per state dimension the belief row and goal row form a 2 x d signal. Two same-padded
/// kernel-3 convolutions with tanh (weights tied across dimensions, shared by both heads)
/// map it to `channels` x d features; the flattened features of all dimensions feed a
/// 5n-way policy head and a scalar value head.
struct PolicyNetConfig {
  std::size_t n = 4;
  std::size_t d = 11;
  std::size_t channels = 1;
  double head_init_scale = 0.01;  ///< policy head starts near uniform
  double value_init_scale = 0.0;  ///< value head starts at exactly 0

  std::size_t input_dim() const { return n * 2 * d; }
  std::size_t feature_dim() const { return n * channels * d; }
  std::size_t action_logits() const { return n * belief::kMovesPerDim; }
  nc::Segments segments() const { return nc::Segments(n, belief::kMovesPerDim); }
};

inline nc::ModelParameters init_policy(const PolicyNetConfig& cfg, std::uint64_t seed) {
  if (cfg.channels < 1) throw ConfigError("policy conv channels must be >= 1");
  nc::ModelParameters p(seed);
  Rng rng = make_rng(seed, 0x9011C7);
  p.add("pv.conv1.k", nc::fan_in_uniform({cfg.channels, 2, 3}, 2 * 3, rng));
  p.add("pv.conv1.b", nc::fan_in_uniform({cfg.channels}, 2 * 3, rng));
  p.add("pv.conv2.k", nc::fan_in_uniform({cfg.channels, cfg.channels, 3}, cfg.channels * 3, rng));
  p.add("pv.conv2.b", nc::fan_in_uniform({cfg.channels}, cfg.channels * 3, rng));
  auto pi_w = nc::fan_in_uniform({cfg.feature_dim(), cfg.action_logits()}, cfg.feature_dim(), rng);
  for (auto& v : pi_w.raw()) v *= cfg.head_init_scale;
  p.add("pv.pi.w", std::move(pi_w));
  p.add("pv.pi.b", nc::Tensor({cfg.action_logits()}));
  auto v_w = nc::fan_in_uniform({cfg.feature_dim(), 1}, cfg.feature_dim(), rng);
  for (auto& v : v_w.raw()) v *= cfg.value_init_scale;
  p.add("pv.v.w", std::move(v_w));
  p.add("pv.v.b", nc::Tensor({1}));
  return p;
}

/// Flattened [n, 2, d] input: channel 0 the belief row, channel 1 the goal one-hot (or zeros).
inline std::vector<double> policy_input(const belief::FactoredBelief& bel, const std::optional<belief::FactoredState>& goal) {
  std::vector<double> x(bel.n * 2 * bel.d, 0.0);
  for (std::size_t i = 0; i < bel.n; ++i) {
    const auto row = bel.row(i);
    std::copy(row.begin(), row.end(), x.begin() + static_cast<std::ptrdiff_t>(i * 2 * bel.d));
    if (goal) x[i * 2 * bel.d + bel.d + static_cast<std::size_t>((*goal)[i])] = 1.0;
  }
  return x;
}

struct PolicyValue {
  nc::Var logits;  ///< [B, 5n]
  nc::Var value;   ///< [B, 1]
};

/// Recorded forward pass for a batch of flattened policy inputs [B, n*2*d].
inline PolicyValue policy_value_forward(nc::Graph& g, nc::Var input, const PolicyNetConfig& cfg) {
  const auto& x = g.value(input);
  if (x.rank() != 2 || x.dim(1) != cfg.input_dim()) {
    throw ShapeError("policy input " + shape_string(x.shape()) + " does not match [B, " +
                     std::to_string(cfg.input_dim()) + "]");
  }
  const std::size_t batch = x.dim(0);
  auto h = nc::reshape(input, {batch * cfg.n, 2, cfg.d});
  h = nc::tanh(nc::conv1d(h, g.param("pv.conv1.k"), g.param("pv.conv1.b")));
  h = nc::tanh(nc::conv1d(h, g.param("pv.conv2.k"), g.param("pv.conv2.b")));
  h = nc::reshape(h, {batch, cfg.feature_dim()});
  return {nc::linear(h, g.param("pv.pi.w"), g.param("pv.pi.b")), nc::linear(h, g.param("pv.v.w"), g.param("pv.v.b"))};
}

/// Values only, for acting.
struct PolicyOutput {
  nc::Tensor logits;  ///< [B, 5n]
  std::vector<double> values;
};

inline PolicyOutput policy_value(nc::ModelParameters& params, const PolicyNetConfig& cfg, std::vector<double> inputs,
                                 std::size_t batch) {
  nc::Graph g(params);
  auto out = policy_value_forward(g, g.constant(nc::Tensor({batch, cfg.input_dim()}, std::move(inputs))), cfg);
  return {g.value(out.logits), g.value(out.value).raw()};
}

/// Factored action drawn from per-dimension categoricals.
struct SampledAction {
  belief::DeltaAction action;
  std::vector<std::size_t> choices;  ///< category per dimension, 0..4
  double log_prob = 0.0;             ///< sum of per-dimension log-probabilities
};

/// Samples one category per segment of `logits_row` (length 5n).
inline SampledAction sample_joint_action(std::span<const double> logits_row, std::size_t n, Rng& rng) {
  const auto segments = nc::Segments(n, belief::kMovesPerDim);
  const auto logp = nc::log_softmax(nc::Tensor({logits_row.size()}, std::vector<double>(logits_row.begin(), logits_row.end())), segments);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  SampledAction s;
  s.choices.resize(n);
  std::vector<int> deltas(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double u = unit(rng);
    double cdf = 0.0;
    std::size_t pick = belief::kMovesPerDim - 1;
    for (std::size_t j = 0; j < belief::kMovesPerDim; ++j) {
      cdf += std::exp(logp[i * belief::kMovesPerDim + j]);
      if (u < cdf) {
        pick = j;
        break;
      }
    }
    // Never pick a zero-probability tail category through rounding.
    while (std::exp(logp[i * belief::kMovesPerDim + pick]) == 0.0 && pick > 0) --pick;
    s.choices[i] = pick;
    s.log_prob += logp[i * belief::kMovesPerDim + pick];
    deltas[i] = belief::DeltaAction::delta_of(pick);
  }
  s.action = belief::DeltaAction(std::move(deltas));
  return s;
}

/// Most likely category per segment (lowest index on ties).
inline SampledAction greedy_action(std::span<const double> logits_row, std::size_t n) {
  const auto segments = nc::Segments(n, belief::kMovesPerDim);
  const auto logp = nc::log_softmax(nc::Tensor({logits_row.size()}, std::vector<double>(logits_row.begin(), logits_row.end())), segments);
  SampledAction s;
  s.choices.resize(n);
  std::vector<int> deltas(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < belief::kMovesPerDim; ++j) {
      if (logp[i * belief::kMovesPerDim + j] > logp[i * belief::kMovesPerDim + best]) best = j;
    }
    s.choices[i] = best;
    s.log_prob += logp[i * belief::kMovesPerDim + best];
    deltas[i] = belief::DeltaAction::delta_of(best);
  }
  s.action = belief::DeltaAction(std::move(deltas));
  return s;
}

}  // namespace tpose::agent
