#pragma once

#include <cmath>
#include <functional>
#include <numeric>
#include <random>
#include <vector>

#include "tpose/env/dataset.hpp"
#include "tpose/obsmodel/model.hpp"

namespace tpose::obs {

struct EpochLog {
  std::size_t epoch = 0;
  double loss = 0.0;            ///< mean per-example, per-finger factored cross-entropy
  double train_accuracy = 0.0;  ///< mean per-dimension top-1 of single-finger outputs during the epoch
  std::size_t saturated = 0;    ///< probabilities clamped at the log floor
};

struct TrainResult {
  nc::ModelParameters params;
  double initial_loss = 0.0;  ///< loss on the first batch before any update
  std::vector<EpochLog> epochs;
  bool diverged = false;  ///< loss went non-finite; params hold the last good epoch
};

namespace detail {

inline void gather_batch(const env::Dataset& ds, const std::vector<std::size_t>& order, std::size_t begin,
                         std::size_t end, bool left, double noise, Rng& rng, std::vector<double>& x) {
  const std::size_t m = ds.m;
  x.resize((end - begin) * m);
  std::normal_distribution<double> gauss(0.0, noise > 0.0 ? noise : 1.0);
  for (std::size_t i = begin; i < end; ++i) {
    const float* src = left ? ds.left_row(order[i]) : ds.right_row(order[i]);
    double* dst = x.data() + (i - begin) * m;
    for (std::size_t k = 0; k < m; ++k) dst[k] = static_cast<double>(src[k]) + (noise > 0.0 ? gauss(rng) : 0.0);
  }
}

inline std::size_t count_correct(const nc::Tensor& probs, const nc::Tensor& labels, std::size_t n, std::size_t d) {
  std::size_t correct = 0;
  const std::size_t rows = probs.size() / (n * d);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t i = 0; i < n; ++i) {
      const double* p = probs.data() + r * n * d + i * d;
      const double* t = labels.data() + r * n * d + i * d;
      std::size_t best = 0;
      for (std::size_t j = 1; j < d; ++j) {
        if (p[j] > p[best]) best = j;
      }
      if (t[best] == 1.0) ++correct;
    }
  }
  return correct;
}

}  // namespace detail

/// Mean per-example factored cross-entropy of one finger over a batch; gradients accumulate into params.
inline double finger_loss_and_grad(nc::ModelParameters& params, const ObsModelConfig& cfg, const std::vector<double>& x,
                                   const nc::Tensor& labels, std::size_t batch, std::size_t* saturated,
                                   std::size_t* correct) {
  nc::Graph g(params);
  auto input = g.constant(nc::Tensor({batch, cfg.feature_dim}, x));
  auto probs = obsmodel_forward(g, input, cfg);
  auto loss = nc::affine(nc::factored_cross_entropy(probs, labels, saturated), 1.0 / static_cast<double>(batch), 0.0);
  if (correct) *correct += detail::count_correct(g.value(probs), labels, cfg.n, cfg.d);
  const double value = g.value(loss)[0];
  g.backward(loss);
  return value;
}

using EpochCallback = std::function<void(const EpochLog&)>;

/// Minibatch Adam training. Each batch runs the left-finger pass and the right-finger pass,
/// accumulating both gradients, then takes one optimizer step. Deterministic in `seed`.
inline TrainResult train(const env::Dataset& data, const ObsModelConfig& cfg, std::uint64_t seed,
                         const EpochCallback& on_epoch = {}) {
  cfg.validate();
  if (data.empty()) throw ConfigError("obsmodel training needs a non-empty dataset");
  if (data.m != cfg.feature_dim || data.spec.n != cfg.n || data.spec.d != cfg.d) {
    throw ShapeError("dataset layout (n, d, m) does not match the obsmodel config");
  }
  TrainResult result{init_obsmodel(cfg, seed), 0.0, {}, false};
  nc::ModelParameters& params = result.params;
  nc::AdamState adam(params, cfg.learning_rate);
  Rng rng = make_rng(seed, 0x7A1);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);

  std::vector<double> x;
  std::vector<double> label_buf;
  nc::ModelParameters last_good = params;

  {
    const std::size_t b = std::min(cfg.batch_size, data.size());
    label_buf.clear();
    for (std::size_t i = 0; i < b; ++i) data.label(i, label_buf);
    nc::Tensor labels({b, cfg.output_dim()}, label_buf);
    detail::gather_batch(data, order, 0, b, true, 0.0, rng, x);
    nc::Graph g(params);
    auto probs = obsmodel_forward(g, g.constant(nc::Tensor({b, cfg.feature_dim}, x)), cfg);
    result.initial_loss = nc::factored_cross_entropy(g.value(probs), labels).loss / static_cast<double>(b);
  }

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    EpochLog log{epoch, 0.0, 0.0, 0};
    std::size_t correct = 0;
    double loss_sum = 0.0;
    for (std::size_t begin = 0; begin < order.size(); begin += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), begin + cfg.batch_size);
      const std::size_t b = end - begin;
      label_buf.clear();
      for (std::size_t i = begin; i < end; ++i) data.label(order[i], label_buf);
      nc::Tensor labels({b, cfg.output_dim()}, label_buf);
      double batch_loss = 0.0;
      for (bool left : {true, false}) {
        detail::gather_batch(data, order, begin, end, left, cfg.input_noise, rng, x);
        batch_loss += finger_loss_and_grad(params, cfg, x, labels, b, &log.saturated, &correct);
      }
      if (!std::isfinite(batch_loss) || !params.grads_finite()) {
        result.diverged = true;
        params = last_good;
        params.zero_grad();
        return result;
      }
      nc::adam_step(params, adam);
      loss_sum += 0.5 * batch_loss * static_cast<double>(b);
    }
    log.loss = loss_sum / static_cast<double>(data.size());
    log.train_accuracy = static_cast<double>(correct) / static_cast<double>(2 * data.size() * cfg.n);
    result.epochs.push_back(log);
    last_good = params;
    if (on_epoch) on_epoch(log);
  }
  return result;
}

}  // namespace tpose::obs
