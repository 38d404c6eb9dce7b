#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include <nlohmann/json.hpp>

#include "tpose/numcore.hpp"

namespace tpose::agent {

struct PPOConfig {
  double clip = 0.2;
  double gamma = 0.99;
  double lambda = 0.95;
  double learning_rate = 3e-3;  ///< 3e-4 left the 4-d reaching task unlearned within 4M steps
  std::size_t num_envs = 8;
  std::size_t rollout_steps = 2048;  ///< transitions per update, summed over environments
  std::size_t update_epochs = 4;
  std::size_t minibatches = 8;
  double entropy_coef = 0.01;
  double value_coef = 0.5;
  double max_grad_norm = 0.5;
  double advantage_std_floor = 0.0;
  std::size_t total_steps = 500000;
  std::size_t eval_episodes = 100;
  std::size_t eval_every = 1;  ///< updates between evaluations

  std::size_t steps_per_env() const { return rollout_steps / num_envs; }

  void validate() const {
    if (!(clip > 0.0 && clip < 1.0)) throw ConfigError("ppo clip must be in (0, 1)");
    if (gamma < 0.0 || gamma > 1.0) throw ConfigError("ppo gamma must be in [0, 1]");
    if (lambda < 0.0 || lambda > 1.0) throw ConfigError("ppo lambda must be in [0, 1]");
    if (learning_rate <= 0.0) throw ConfigError("ppo learning_rate must be > 0");
    if (num_envs < 1 || rollout_steps < num_envs) throw ConfigError("ppo needs rollout_steps >= num_envs >= 1");
    if (update_epochs < 1 || minibatches < 1) throw ConfigError("ppo needs at least one epoch and minibatch");
    if (eval_every < 1) throw ConfigError("ppo eval_every must be >= 1");
  }
};

inline void to_json(nlohmann::json& j, const PPOConfig& c) {
  j = {{"clip", c.clip},
       {"gamma", c.gamma},
       {"lambda", c.lambda},
       {"learning_rate", c.learning_rate},
       {"num_envs", c.num_envs},
       {"rollout_steps", c.rollout_steps},
       {"update_epochs", c.update_epochs},
       {"minibatches", c.minibatches},
       {"entropy_coef", c.entropy_coef},
       {"value_coef", c.value_coef},
       {"max_grad_norm", c.max_grad_norm},
       {"advantage_std_floor", c.advantage_std_floor},
       {"total_steps", c.total_steps},
       {"eval_episodes", c.eval_episodes},
       {"eval_every", c.eval_every}};
}

inline void from_json(const nlohmann::json& j, PPOConfig& c) {
  PPOConfig def;
  c.clip = j.value("clip", def.clip);
  c.gamma = j.value("gamma", def.gamma);
  c.lambda = j.value("lambda", def.lambda);
  c.learning_rate = j.value("learning_rate", def.learning_rate);
  c.num_envs = j.value("num_envs", def.num_envs);
  c.rollout_steps = j.value("rollout_steps", def.rollout_steps);
  c.update_epochs = j.value("update_epochs", def.update_epochs);
  c.minibatches = j.value("minibatches", def.minibatches);
  c.entropy_coef = j.value("entropy_coef", def.entropy_coef);
  c.value_coef = j.value("value_coef", def.value_coef);
  c.max_grad_norm = j.value("max_grad_norm", def.max_grad_norm);
  c.advantage_std_floor = j.value("advantage_std_floor", def.advantage_std_floor);
  c.total_steps = j.value("total_steps", def.total_steps);
  c.eval_episodes = j.value("eval_episodes", def.eval_episodes);
  c.eval_every = j.value("eval_every", def.eval_every);
}

/// Rollout storage, time-major: index t * envs + e.
struct TrajectoryBatch {
  std::size_t steps = 0;
  std::size_t envs = 0;
  std::size_t input_dim = 0;
  std::size_t action_dims = 0;
  std::vector<double> inputs;               ///< policy input per transition
  std::vector<std::size_t> choices;         ///< action category per dimension
  std::vector<double> log_probs;            ///< joint log-prob under the behavior policy
  std::vector<double> rewards;
  std::vector<double> values;
  std::vector<char> dones;                  ///< episode ended after this transition
  std::vector<char> starts;                 ///< transition is the first of its episode
  std::vector<double> hiddens;              ///< recurrent state before the transition (recurrent agent only)
  std::vector<double> last_values;          ///< bootstrap value per env after the final step
  std::vector<double> advantages;
  std::vector<double> returns;

  std::size_t size() const { return steps * envs; }
};

/// Generalized advantage estimation; bootstrapping stops at done flags.
inline void compute_gae(TrajectoryBatch& b, double gamma, double lambda) {
  const std::size_t n = b.size();
  if (b.rewards.size() != n || b.values.size() != n || b.dones.size() != n || b.last_values.size() != b.envs) {
    throw ShapeError("trajectory batch arrays are inconsistent");
  }
  b.advantages.assign(n, 0.0);
  b.returns.assign(n, 0.0);
  for (std::size_t e = 0; e < b.envs; ++e) {
    double next_adv = 0.0;
    for (std::size_t t = b.steps; t-- > 0;) {
      const std::size_t i = t * b.envs + e;
      const double next_value = t + 1 == b.steps ? b.last_values[e] : b.values[i + b.envs];
      const double live = b.dones[i] ? 0.0 : 1.0;
      const double delta = b.rewards[i] + gamma * next_value * live - b.values[i];
      next_adv = delta + gamma * lambda * live * next_adv;
      b.advantages[i] = next_adv;
      b.returns[i] = next_adv + b.values[i];
    }
  }
}

/// Shift/scale to mean 0 and (population) std 1; left centered if the std is 0.
/// A positive `std_floor` divides by max(std, std_floor) instead.
inline void normalize_advantages(std::vector<double>& adv, double std_floor = 0.0) {
  if (adv.empty()) return;
  double mean = 0.0;
  for (double a : adv) mean += a;
  mean /= static_cast<double>(adv.size());
  double var = 0.0;
  for (double a : adv) var += (a - mean) * (a - mean);
  const double sd = std::max(std::sqrt(var / static_cast<double>(adv.size())), std_floor);
  for (auto& a : adv) a = sd > 0.0 ? (a - mean) / sd : a - mean;
}

struct PPODiagnostics {
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double entropy = 0.0;
  double approx_kl = 0.0;
  double clip_fraction = 0.0;
  double weight = 0.0;  ///< total sample weight accumulated

  void merge(const PPODiagnostics& o) {
    policy_loss += o.policy_loss;
    value_loss += o.value_loss;
    entropy += o.entropy;
    approx_kl += o.approx_kl;
    clip_fraction += o.clip_fraction;
    weight += o.weight;
  }
};

/// Per-sample data for one loss evaluation.
struct PPOSamples {
  std::vector<std::size_t> choices;  ///< rows x action dims
  std::vector<double> old_log_probs;
  std::vector<double> advantages;
  std::vector<double> returns;
  std::vector<double> weights;  ///< per-row loss weight (1/N, or 0 for padding)
};

struct PPOLoss {
  nc::Var total;
  PPODiagnostics diag;  ///< weighted sums (divide by weight for means)
};

/// Clipped surrogate + value regression - entropy bonus for one batch of rows.
///   L = -sum w min(r A, clip(r) A) + c_v sum w (V - R)^2 - c_e sum w H
inline PPOLoss ppo_loss(nc::Var logits, nc::Var values, const nc::Segments& segments, const PPOSamples& s,
                        const PPOConfig& cfg) {
  nc::Graph& g = *logits.graph;
  const std::size_t rows = s.old_log_probs.size();
  auto lp = nc::log_softmax(logits, segments);
  auto logp = nc::pick_segments(lp, segments, s.choices);
  auto ratio = nc::exp(nc::sub(logp, g.constant(nc::Tensor({rows}, s.old_log_probs))));
  auto adv = g.constant(nc::Tensor({rows}, s.advantages));
  auto surr = nc::minimum(nc::mul(ratio, adv), nc::mul(nc::clamp(ratio, 1.0 - cfg.clip, 1.0 + cfg.clip), adv));
  std::vector<double> neg_w(s.weights);
  for (auto& w : neg_w) w = -w;
  auto policy_loss = nc::weighted_sum(surr, neg_w);
  auto v = nc::reshape(values, {rows});
  auto value_loss = nc::weighted_sum(nc::square(nc::sub(v, g.constant(nc::Tensor({rows}, s.returns)))), s.weights);
  auto entropy = nc::weighted_sum(nc::segment_entropy(lp, segments), s.weights);
  auto total = nc::add(nc::add(policy_loss, nc::affine(value_loss, cfg.value_coef, 0.0)),
                       nc::affine(entropy, -cfg.entropy_coef, 0.0));

  PPOLoss out{total, {}};
  out.diag.policy_loss = g.value(policy_loss)[0];
  out.diag.value_loss = g.value(value_loss)[0];
  out.diag.entropy = g.value(entropy)[0];
  const auto& r = g.value(ratio);
  for (std::size_t i = 0; i < rows; ++i) {
    const double w = s.weights[i];
    out.diag.weight += w;
    out.diag.approx_kl += w * ((r[i] - 1.0) - std::log(r[i]));
    if (std::abs(r[i] - 1.0) > cfg.clip) out.diag.clip_fraction += w;
  }
  return out;
}

/// Rescales all gradients so their global L2 norm is at most max_norm; returns the norm before clipping.
inline double clip_grad_norm(nc::ModelParameters& params, double max_norm) {
  double sq = 0.0;
  for (const auto& e : params.entries()) {
    for (double v : e.grad.values()) sq += v * v;
  }
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double scale = max_norm / norm;
    for (auto& e : params.entries()) {
      for (auto& v : e.grad.raw()) v *= scale;
    }
  }
  return norm;
}

}  // namespace tpose::agent
