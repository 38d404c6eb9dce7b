#pragma once

#include <cmath>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tpose/belief/filter.hpp"
#include "tpose/numcore.hpp"
#include "tpose/rng.hpp"

namespace tpose::obs {

enum class Fusion { kProduct, kMean };

inline std::string to_string(Fusion f) { return f == Fusion::kMean ? "mean" : "product"; }
inline Fusion fusion_from_string(const std::string& s) {
  if (s == "product") return Fusion::kProduct;
  if (s == "mean") return Fusion::kMean;
  throw ConfigError("unknown fusion rule '" + s + "' (expected product or mean)");
}

/// Single-finger network: m features -> hidden ReLU layers -> n*d logits -> per-dimension softmax.
struct ObsModelConfig {
  std::size_t feature_dim = 32;
  std::vector<std::size_t> hidden = {512};
  std::size_t n = 4;
  std::size_t d = 11;
  double learning_rate = 0.0005;
  std::size_t batch_size = 64;
  std::size_t epochs = 20;
  double input_noise = 0.1;  ///< Gaussian noise added to training inputs
  Fusion fusion = Fusion::kProduct;

  std::size_t output_dim() const { return n * d; }
  nc::Segments segments() const { return nc::Segments(n, d); }

  void validate() const {
    if (feature_dim < 1) throw ConfigError("obsmodel feature_dim must be >= 1");
    if (n < 1 || d < 2) throw ConfigError("obsmodel output must be at least 1 x 2");
    for (auto h : hidden) {
      if (h < 1) throw ConfigError("obsmodel hidden layers must be non-empty");
    }
    if (learning_rate <= 0.0) throw ConfigError("obsmodel learning_rate must be > 0");
    if (batch_size < 1) throw ConfigError("obsmodel batch_size must be >= 1");
    if (input_noise < 0.0) throw ConfigError("obsmodel input_noise must be >= 0");
  }
};

inline void to_json(nlohmann::json& j, const ObsModelConfig& c) {
  j = {{"feature_dim", c.feature_dim}, {"hidden", c.hidden},         {"n", c.n},
       {"d", c.d},                     {"learning_rate", c.learning_rate}, {"batch_size", c.batch_size},
       {"epochs", c.epochs},           {"input_noise", c.input_noise}, {"fusion", to_string(c.fusion)}};
}

inline void from_json(const nlohmann::json& j, ObsModelConfig& c) {
  ObsModelConfig def;
  c.feature_dim = j.value("feature_dim", def.feature_dim);
  c.hidden = j.value("hidden", def.hidden);
  c.n = j.value("n", def.n);
  c.d = j.value("d", def.d);
  c.learning_rate = j.value("learning_rate", def.learning_rate);
  c.batch_size = j.value("batch_size", def.batch_size);
  c.epochs = j.value("epochs", def.epochs);
  c.input_noise = j.value("input_noise", def.input_noise);
  c.fusion = fusion_from_string(j.value("fusion", to_string(def.fusion)));
}

inline std::string layer_name(std::size_t i, const char* what) { return "obs.fc" + std::to_string(i) + "." + what; }

inline nc::ModelParameters init_obsmodel(const ObsModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  nc::ModelParameters params(seed);
  Rng rng = make_rng(seed, 0x0B5);
  std::size_t in = cfg.feature_dim;
  std::vector<std::size_t> widths = cfg.hidden;
  widths.push_back(cfg.output_dim());
  for (std::size_t i = 0; i < widths.size(); ++i) {
    params.add(layer_name(i, "w"), nc::fan_in_uniform({in, widths[i]}, in, rng));
    params.add(layer_name(i, "b"), nc::fan_in_uniform({widths[i]}, in, rng));
    in = widths[i];
  }
  return params;
}

/// Recorded forward pass: inputs [B, m] -> per-dimension probabilities [B, n*d].
inline nc::Var obsmodel_forward(nc::Graph& g, nc::Var x, const ObsModelConfig& cfg) {
  const std::size_t layers = cfg.hidden.size() + 1;
  nc::Var h = x;
  for (std::size_t i = 0; i < layers; ++i) {
    h = nc::linear(h, g.param(layer_name(i, "w")), g.param(layer_name(i, "b")));
    if (i + 1 < layers) h = nc::relu(h);
  }
  return nc::softmax(h, cfg.segments());
}

/// Tape-free batched inference. `features` holds B rows of m values.
inline nc::Tensor predict_batch(const nc::ModelParameters& params, const ObsModelConfig& cfg,
                                const std::vector<double>& features, std::size_t batch) {
  if (features.size() != batch * cfg.feature_dim) {
    throw ShapeError("obsmodel input has " + std::to_string(features.size()) + " values, expected " +
                     std::to_string(batch) + "x" + std::to_string(cfg.feature_dim));
  }
  const std::size_t layers = cfg.hidden.size() + 1;
  std::vector<double> cur = features;
  std::size_t in = cfg.feature_dim;
  for (std::size_t i = 0; i < layers; ++i) {
    const auto& w = params.value(layer_name(i, "w"));
    const auto& b = params.value(layer_name(i, "b"));
    const std::size_t out = w.dim(1);
    std::vector<double> next(batch * out);
    nc::affine(cur, batch, in, w.values(), b.values(), out, next);
    if (i + 1 < layers) {
      for (auto& v : next) v = v > 0.0 ? v : 0.0;
    }
    cur = std::move(next);
    in = out;
  }
  return nc::softmax(nc::Tensor({batch, in}, std::move(cur)), cfg.segments());
}

/// Row-stochastic n x d output for one finger's features.
inline belief::Likelihood forward_single(const std::vector<double>& features, const nc::ModelParameters& params,
                                         const ObsModelConfig& cfg) {
  for (double v : features) {
    if (!std::isfinite(v)) throw NumericError("obsmodel input contains non-finite values");
  }
  auto probs = predict_batch(params, cfg, features, 1);
  return belief::Likelihood(cfg.n, cfg.d, std::move(probs.raw()));
}

struct FusionEvents {
  std::size_t uniform_fallbacks = 0;
};

/// Combines the two finger outputs row by row: product (default) or arithmetic mean, renormalized.
inline belief::Likelihood fuse_fingers(const belief::FactorMatrix& left, const belief::FactorMatrix& right,
                                       Fusion rule = Fusion::kProduct, FusionEvents* events = nullptr) {
  if (left.n != right.n || left.d != right.d) {
    throw ShapeError("finger outputs differ in shape: " + std::to_string(left.n) + "x" + std::to_string(left.d) +
                     " vs " + std::to_string(right.n) + "x" + std::to_string(right.d));
  }
  belief::Likelihood out(left.n, left.d);
  for (std::size_t i = 0; i < left.n; ++i) {
    const auto l = left.row(i);
    const auto r = right.row(i);
    auto o = out.row(i);
    double z = 0.0;
    for (std::size_t j = 0; j < left.d; ++j) {
      o[j] = rule == Fusion::kProduct ? l[j] * r[j] : 0.5 * (l[j] + r[j]);
      z += o[j];
    }
    if (!(z > 0.0) || !std::isfinite(z)) {
      std::fill(o.begin(), o.end(), 1.0 / static_cast<double>(left.d));
      if (events) ++events->uniform_fallbacks;
      continue;
    }
    for (auto& v : o) v /= z;
  }
  return out;
}

/// Fused likelihood for one two-finger observation.
inline belief::Likelihood likelihood(const std::vector<double>& left, const std::vector<double>& right,
                                     const nc::ModelParameters& params, const ObsModelConfig& cfg) {
  std::vector<double> both(left);
  both.insert(both.end(), right.begin(), right.end());
  auto probs = predict_batch(params, cfg, both, 2);
  const std::size_t w = cfg.output_dim();
  belief::FactorMatrix l(cfg.n, cfg.d, std::vector<double>(probs.raw().begin(), probs.raw().begin() + static_cast<std::ptrdiff_t>(w)));
  belief::FactorMatrix r(cfg.n, cfg.d, std::vector<double>(probs.raw().begin() + static_cast<std::ptrdiff_t>(w), probs.raw().end()));
  return fuse_fingers(l, r, cfg.fusion);
}

}  // namespace tpose::obs
