#pragma once

#include <optional>
#include <vector>

#include "tpose/agent/policy.hpp"
#include "tpose/env/signature.hpp"

namespace tpose::agent {

/// Memory-based baseline: raw finger features + goal -> tanh encoder -> GRU cell -> policy/value heads.
struct RecurrentConfig {
  std::size_t n = 4;
  std::size_t d = 11;
  std::size_t feature_dim = 32;  ///< per finger
  std::size_t encoder = 128;
  std::size_t hidden = 128;
  double head_init_scale = 0.01;

  std::size_t input_dim() const { return 2 * feature_dim + n * d; }
  std::size_t action_logits() const { return n * belief::kMovesPerDim; }
  nc::Segments segments() const { return nc::Segments(n, belief::kMovesPerDim); }
};

inline nc::ModelParameters init_recurrent(const RecurrentConfig& cfg, std::uint64_t seed) {
  nc::ModelParameters p(seed);
  Rng rng = make_rng(seed, 0x2EC);
  const std::size_t in = cfg.input_dim(), e = cfg.encoder, h = cfg.hidden;
  p.add("rec.enc.w", nc::fan_in_uniform({in, e}, in, rng));
  p.add("rec.enc.b", nc::fan_in_uniform({e}, in, rng));
  for (const char* gate : {"z", "r", "n"}) {
    const std::string g(gate);
    p.add("rec.gru.w" + g, nc::fan_in_uniform({e, h}, h, rng));
    p.add("rec.gru.u" + g, nc::fan_in_uniform({h, h}, h, rng));
    p.add("rec.gru.b" + g, nc::fan_in_uniform({h}, h, rng));
  }
  p.add("rec.gru.bhn", nc::fan_in_uniform({h}, h, rng));
  auto pi_w = nc::fan_in_uniform({h, cfg.action_logits()}, h, rng);
  for (auto& v : pi_w.raw()) v *= cfg.head_init_scale;
  p.add("rec.pi.w", std::move(pi_w));
  p.add("rec.pi.b", nc::Tensor({cfg.action_logits()}));
  p.add("rec.v.w", nc::fan_in_uniform({h, 1}, h, rng));
  p.add("rec.v.b", nc::Tensor({1}));
  return p;
}

/// Flattened [left m, right m, goal one-hot n*d (zeros without a goal)].
inline std::vector<double> recurrent_input(const env::TactileObservation& obs, const std::optional<belief::FactoredState>& goal,
                                           const RecurrentConfig& cfg) {
  std::vector<double> x;
  x.reserve(cfg.input_dim());
  x.insert(x.end(), obs.left.begin(), obs.left.end());
  x.insert(x.end(), obs.right.begin(), obs.right.end());
  const std::size_t base = x.size();
  x.resize(base + cfg.n * cfg.d, 0.0);
  if (goal) {
    for (std::size_t i = 0; i < cfg.n; ++i) x[base + i * cfg.d + static_cast<std::size_t>((*goal)[i])] = 1.0;
  }
  if (x.size() != cfg.input_dim()) throw ShapeError("recurrent input size does not match config");
  return x;
}

struct RecurrentStep {
  nc::Var logits;  ///< [B, 5n]
  nc::Var value;   ///< [B, 1]
  nc::Var hidden;  ///< [B, H]
};

/// One time step: z = s(xWz + hUz + bz), r = s(xWr + hUr + br),
/// c = tanh(xWn + bn + r * (hUn + bhn)), h' = (1 - z) * c + z * h.
inline RecurrentStep recurrent_forward(nc::Graph& g, nc::Var x, nc::Var h, const RecurrentConfig& cfg) {
  const auto& hv = g.value(h);
  if (hv.rank() != 2 || hv.dim(1) != cfg.hidden) {
    throw ShapeError("recurrent hidden " + shape_string(hv.shape()) + " does not match width " + std::to_string(cfg.hidden));
  }
  const nc::Var zero_bias = g.constant(nc::Tensor({cfg.hidden}));
  auto e = nc::tanh(nc::linear(x, g.param("rec.enc.w"), g.param("rec.enc.b")));
  auto gate = [&](const char* name) {
    const std::string s(name);
    return nc::add(nc::linear(e, g.param("rec.gru.w" + s), g.param("rec.gru.b" + s)),
                   nc::linear(h, g.param("rec.gru.u" + s), zero_bias));
  };
  auto z = nc::sigmoid(gate("z"));
  auto r = nc::sigmoid(gate("r"));
  auto hn = nc::linear(h, g.param("rec.gru.un"), g.param("rec.gru.bhn"));
  auto c = nc::tanh(nc::add(nc::linear(e, g.param("rec.gru.wn"), g.param("rec.gru.bn")), nc::mul(r, hn)));
  auto h_new = nc::add(nc::mul(nc::affine(z, -1.0, 1.0), c), nc::mul(z, h));
  return {nc::linear(h_new, g.param("rec.pi.w"), g.param("rec.pi.b")),
          nc::linear(h_new, g.param("rec.v.w"), g.param("rec.v.b")), h_new};
}

}  // namespace tpose::agent
