#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "tpose/agent/runner.hpp"

namespace tpose::agent {

/// One learning-curve row: training diagnostics of the update plus the evaluation that followed it.
struct UpdateMetrics {
  std::size_t update = 0;  ///< 0 is the evaluation before any training
  std::size_t env_steps = 0;
  bool evaluated = false;
  EvalSummary eval;
  std::size_t train_episodes = 0;
  double train_success_rate = 0.0;
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double entropy = 0.0;
  double approx_kl = 0.0;
  double clip_fraction = 0.0;
};

struct TrainingRun {
  nc::ModelParameters params;
  std::vector<UpdateMetrics> curve;
};

using UpdateCallback = std::function<void(const UpdateMetrics&)>;

namespace detail {

inline void finish_diagnostics(UpdateMetrics& m, const PPODiagnostics& d) {
  if (d.weight <= 0.0) return;
  m.policy_loss = d.policy_loss / d.weight;
  m.value_loss = d.value_loss / d.weight;
  m.entropy = d.entropy / d.weight;
  m.approx_kl = d.approx_kl / d.weight;
  m.clip_fraction = d.clip_fraction / d.weight;
}

inline void check_loss(const PPOLoss& loss, std::size_t update) {
  const auto& v = loss.total.graph->value(loss.total);
  if (!std::isfinite(v[0])) {
    throw NumericError("ppo loss is not finite at update " + std::to_string(update) +
                       " (policy " + std::to_string(loss.diag.policy_loss) + ", value " +
                       std::to_string(loss.diag.value_loss) + ", entropy " + std::to_string(loss.diag.entropy) + ")");
  }
}

inline void optimizer_step(nc::ModelParameters& params, nc::AdamState& adam, const PPOConfig& cfg) {
  clip_grad_norm(params, cfg.max_grad_norm);
  nc::adam_step(params, adam);
}

/// Counters that make episode resets reproducible regardless of which env finishes first.
struct EpisodeSource {
  const World* world;
  std::uint64_t seed;
  Rng pick_rng;
  std::uint64_t counter = 0;

  EpisodeSource(const World& w, std::uint64_t s) : world(&w), seed(s), pick_rng(make_rng(s, 0xB1)) {}

  std::pair<const env::ObjectSignature*, Rng> next() {
    const auto* obj = &world->pick(pick_rng);
    return {obj, make_rng(seed, 0xA0000000ULL + counter++)};
  }
};

inline std::size_t update_count(const PPOConfig& cfg) { return cfg.total_steps / (cfg.steps_per_env() * cfg.num_envs); }

}  // namespace detail

/// PPO over belief inputs. Episodes draw objects from `train_world`; evaluation uses `eval_world`
/// with the greedy policy and the same fixed episode set at every evaluation.
inline TrainingRun train_belief_agent(const World& train_world, const World& eval_world, const Perception& perception,
                                      const PolicyNetConfig& net, const PPOConfig& cfg, std::uint64_t seed,
                                      const UpdateCallback& on_update = {}) {
  cfg.validate();
  if (train_world.task.spec.n != net.n || train_world.task.spec.d != net.d) {
    throw ConfigError("policy network and state space disagree on n or d");
  }
  TrainingRun run{init_policy(net, seed), {}};
  nc::AdamState adam(run.params, cfg.learning_rate);
  const auto& spec = train_world.task.spec;
  const std::size_t envs = cfg.num_envs, steps = cfg.steps_per_env();
  const std::uint64_t eval_seed = mix_seed(seed, 0xEEA1);
  Rng action_rng = make_rng(seed, 0xB2);
  Rng shuffle_rng = make_rng(seed, 0xB3);
  detail::EpisodeSource source(train_world, seed);

  struct Slot {
    env::EpisodeState ep;
    belief::FactoredBelief bel;
    const env::ObjectSignature* obj;
  };
  std::vector<Slot> slots;
  auto start_episode = [&]() {
    auto [obj, rng] = source.next();
    auto [ep, obs] = env::reset(train_world.task, *obj, std::move(rng));
    auto bel = belief::update(belief::uniform_belief(spec), perception.likelihood(obs, ep));
    return Slot{std::move(ep), std::move(bel), obj};
  };
  for (std::size_t e = 0; e < envs; ++e) slots.push_back(start_episode());

  auto evaluate = [&](UpdateMetrics& m) {
    m.evaluated = true;
    m.eval = summarize(evaluate_belief_policy(learned_policy(run.params, net, true), eval_world, perception,
                                              cfg.eval_episodes, eval_seed));
  };
  {
    UpdateMetrics m;
    evaluate(m);
    run.curve.push_back(m);
    if (on_update) on_update(m);
  }

  std::vector<char> fresh(envs, 1);
  const std::size_t in_dim = net.input_dim();
  const auto segments = net.segments();
  for (std::size_t update = 1; update <= detail::update_count(cfg); ++update) {
    TrajectoryBatch b;
    b.steps = steps;
    b.envs = envs;
    b.input_dim = in_dim;
    b.action_dims = spec.n;
    std::size_t finished = 0, successes = 0;

    for (std::size_t t = 0; t < steps; ++t) {
      std::vector<double> inputs;
      inputs.reserve(envs * in_dim);
      for (const auto& s : slots) {
        const auto x = policy_input(s.bel, s.ep.goal);
        inputs.insert(inputs.end(), x.begin(), x.end());
      }
      b.inputs.insert(b.inputs.end(), inputs.begin(), inputs.end());
      const auto out = policy_value(run.params, net, std::move(inputs), envs);

      std::vector<SampledAction> acts;
      std::vector<env::TactileObservation> obs;
      std::vector<const env::EpisodeState*> eps;
      for (std::size_t e = 0; e < envs; ++e) {
        acts.push_back(sample_joint_action(out.logits.row(e), spec.n, action_rng));
        obs.push_back(env::move(slots[e].ep, train_world.task, *slots[e].obj, acts.back().action));
        eps.push_back(&slots[e].ep);
      }
      const auto liks = perception.likelihoods(obs, eps);
      for (std::size_t e = 0; e < envs; ++e) {
        auto& s = slots[e];
        s.bel = belief::step(s.bel, acts[e].action, liks[e]);
        const auto [reward, done] = env::settle(s.ep, train_world.task, belief::map_estimate(s.bel));
        b.choices.insert(b.choices.end(), acts[e].choices.begin(), acts[e].choices.end());
        b.log_probs.push_back(acts[e].log_prob);
        b.values.push_back(out.values[e]);
        b.rewards.push_back(reward);
        b.dones.push_back(done ? 1 : 0);
        b.starts.push_back(fresh[e]);
        fresh[e] = 0;
        if (done) {
          ++finished;
          if (reward == 1.0) ++successes;
          s = start_episode();
          fresh[e] = 1;
        }
      }
    }
    {
      std::vector<double> inputs;
      for (const auto& s : slots) {
        const auto x = policy_input(s.bel, s.ep.goal);
        inputs.insert(inputs.end(), x.begin(), x.end());
      }
      b.last_values = policy_value(run.params, net, std::move(inputs), envs).values;
    }
    compute_gae(b, cfg.gamma, cfg.lambda);
    auto adv = b.advantages;
    normalize_advantages(adv, cfg.advantage_std_floor);

    PPODiagnostics diag;
    std::vector<std::size_t> order(b.size());
    std::iota(order.begin(), order.end(), 0);
    const std::size_t per_mb = std::max<std::size_t>(1, b.size() / cfg.minibatches);
    for (std::size_t epoch = 0; epoch < cfg.update_epochs; ++epoch) {
      std::shuffle(order.begin(), order.end(), shuffle_rng);
      for (std::size_t lo = 0; lo < order.size(); lo += per_mb) {
        const std::size_t hi = order.size() - lo < 2 * per_mb ? order.size() : lo + per_mb;
        const std::size_t rows = hi - lo;
        std::vector<double> x(rows * in_dim);
        PPOSamples s;
        s.weights.assign(rows, 1.0 / static_cast<double>(rows));
        for (std::size_t r = 0; r < rows; ++r) {
          const std::size_t i = order[lo + r];
          std::copy_n(b.inputs.begin() + static_cast<std::ptrdiff_t>(i * in_dim), in_dim,
                      x.begin() + static_cast<std::ptrdiff_t>(r * in_dim));
          s.choices.insert(s.choices.end(), b.choices.begin() + static_cast<std::ptrdiff_t>(i * spec.n),
                           b.choices.begin() + static_cast<std::ptrdiff_t>((i + 1) * spec.n));
          s.old_log_probs.push_back(b.log_probs[i]);
          s.advantages.push_back(adv[i]);
          s.returns.push_back(b.returns[i]);
        }
        nc::Graph g(run.params);
        const auto pv = policy_value_forward(g, g.constant(nc::Tensor({rows, in_dim}, std::move(x))), net);
        const auto loss = ppo_loss(pv.logits, pv.value, segments, s, cfg);
        detail::check_loss(loss, update);
        g.backward(loss.total);
        detail::optimizer_step(run.params, adam, cfg);
        diag.merge(loss.diag);
        if (hi == order.size()) break;
      }
    }

    UpdateMetrics m;
    m.update = update;
    m.env_steps = update * steps * envs;
    m.train_episodes = finished;
    m.train_success_rate = finished ? static_cast<double>(successes) / static_cast<double>(finished) : 0.0;
    detail::finish_diagnostics(m, diag);
    if (update % cfg.eval_every == 0 || update == detail::update_count(cfg)) evaluate(m);
    run.curve.push_back(m);
    if (on_update) on_update(m);
  }
  return run;
}

/// One contiguous piece of a single environment's rollout that lies inside one episode.
struct SequenceChunk {
  std::size_t env = 0;
  std::size_t begin = 0;  ///< first time step
  std::size_t length = 0;
};

/// Cuts each environment's timeline at episode starts.
inline std::vector<SequenceChunk> episode_chunks(const TrajectoryBatch& b) {
  std::vector<SequenceChunk> chunks;
  for (std::size_t e = 0; e < b.envs; ++e) {
    for (std::size_t t = 0; t < b.steps; ++t) {
      if (t == 0 || b.starts[t * b.envs + e]) chunks.push_back({e, t, 0});
      ++chunks.back().length;
    }
  }
  return chunks;
}

/// PPO loss over a group of chunks, unrolled through time from each chunk's stored hidden state.
/// Padded steps carry zero weight; live steps weigh 1 / (live steps in the group).
inline PPOLoss recurrent_sequence_loss(nc::Graph& g, const TrajectoryBatch& b, const std::vector<double>& advantages,
                                       const std::vector<SequenceChunk>& group, const RecurrentConfig& net,
                                       const PPOConfig& cfg) {
  const std::size_t rows = group.size(), in_dim = b.input_dim, hid = net.hidden;
  std::size_t longest = 0, live = 0;
  for (const auto& c : group) {
    longest = std::max(longest, c.length);
    live += c.length;
  }
  nc::Tensor h0({rows, hid});
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t i = group[r].begin * b.envs + group[r].env;
    std::copy_n(b.hiddens.begin() + static_cast<std::ptrdiff_t>(i * hid), hid,
                h0.raw().begin() + static_cast<std::ptrdiff_t>(r * hid));
  }
  nc::Var h = g.constant(std::move(h0));
  std::optional<nc::Var> total;
  PPODiagnostics diag;
  for (std::size_t tau = 0; tau < longest; ++tau) {
    nc::Tensor x({rows, in_dim});
    PPOSamples s;
    s.choices.assign(rows * b.action_dims, 0);
    s.old_log_probs.assign(rows, 0.0);
    s.advantages.assign(rows, 0.0);
    s.returns.assign(rows, 0.0);
    s.weights.assign(rows, 0.0);
    for (std::size_t r = 0; r < rows; ++r) {
      if (tau >= group[r].length) continue;
      const std::size_t i = (group[r].begin + tau) * b.envs + group[r].env;
      std::copy_n(b.inputs.begin() + static_cast<std::ptrdiff_t>(i * in_dim), in_dim,
                  x.raw().begin() + static_cast<std::ptrdiff_t>(r * in_dim));
      std::copy_n(b.choices.begin() + static_cast<std::ptrdiff_t>(i * b.action_dims), b.action_dims,
                  s.choices.begin() + static_cast<std::ptrdiff_t>(r * b.action_dims));
      s.old_log_probs[r] = b.log_probs[i];
      s.advantages[r] = advantages[i];
      s.returns[r] = b.returns[i];
      s.weights[r] = 1.0 / static_cast<double>(live);
    }
    const auto step = recurrent_forward(g, g.constant(std::move(x)), h, net);
    auto loss = ppo_loss(step.logits, step.value, net.segments(), s, cfg);
    diag.merge(loss.diag);
    total = total ? nc::add(*total, loss.total) : loss.total;
    h = step.hidden;
  }
  if (!total) throw StateError("recurrent loss over an empty chunk group");
  return {*total, diag};
}

/// PPO for the memory-based baseline on the reaching task (raw finger features, no filter).
inline TrainingRun train_recurrent_agent(const World& train_world, const World& eval_world, const RecurrentConfig& net,
                                         const PPOConfig& cfg, std::uint64_t seed, const UpdateCallback& on_update = {}) {
  cfg.validate();
  if (train_world.task.kind != env::TaskKind::kReaching) throw ConfigError("the recurrent baseline supports the reaching task only");
  TrainingRun run{init_recurrent(net, seed), {}};
  nc::AdamState adam(run.params, cfg.learning_rate);
  const auto& spec = train_world.task.spec;
  const std::size_t envs = cfg.num_envs, steps = cfg.steps_per_env(), in_dim = net.input_dim(), hid = net.hidden;
  const std::uint64_t eval_seed = mix_seed(seed, 0xEEA1);
  Rng action_rng = make_rng(seed, 0xB2);
  Rng shuffle_rng = make_rng(seed, 0xB3);
  detail::EpisodeSource source(train_world, seed);

  struct Slot {
    env::EpisodeState ep;
    env::TactileObservation obs;
    std::vector<double> h;
    const env::ObjectSignature* obj;
  };
  std::vector<Slot> slots;
  auto start_episode = [&]() {
    auto [obj, rng] = source.next();
    auto [ep, obs] = env::reset(train_world.task, *obj, std::move(rng));
    return Slot{std::move(ep), std::move(obs), std::vector<double>(hid, 0.0), obj};
  };
  for (std::size_t e = 0; e < envs; ++e) slots.push_back(start_episode());

  auto evaluate = [&](UpdateMetrics& m) {
    m.evaluated = true;
    m.eval = summarize(evaluate_recurrent_policy(run.params, net, eval_world, cfg.eval_episodes, eval_seed));
  };
  {
    UpdateMetrics m;
    evaluate(m);
    run.curve.push_back(m);
    if (on_update) on_update(m);
  }

  auto forward_all = [&](nc::Graph& g) {
    nc::Tensor x({envs, in_dim}), h({envs, hid});
    for (std::size_t e = 0; e < envs; ++e) {
      const auto xi = recurrent_input(slots[e].obs, slots[e].ep.goal, net);
      std::copy(xi.begin(), xi.end(), x.raw().begin() + static_cast<std::ptrdiff_t>(e * in_dim));
      std::copy(slots[e].h.begin(), slots[e].h.end(), h.raw().begin() + static_cast<std::ptrdiff_t>(e * hid));
    }
    return std::make_tuple(x, h, recurrent_forward(g, g.constant(x), g.constant(h), net));
  };

  std::vector<char> fresh(envs, 1);
  for (std::size_t update = 1; update <= detail::update_count(cfg); ++update) {
    TrajectoryBatch b;
    b.steps = steps;
    b.envs = envs;
    b.input_dim = in_dim;
    b.action_dims = spec.n;
    std::size_t finished = 0, successes = 0;

    for (std::size_t t = 0; t < steps; ++t) {
      nc::Graph g(run.params);
      const auto [x, h, step] = forward_all(g);
      b.inputs.insert(b.inputs.end(), x.values().begin(), x.values().end());
      b.hiddens.insert(b.hiddens.end(), h.values().begin(), h.values().end());
      const auto& logits = g.value(step.logits);
      const auto& values = g.value(step.value);
      const auto& h_new = g.value(step.hidden);
      for (std::size_t e = 0; e < envs; ++e) {
        auto& s = slots[e];
        const auto act = sample_joint_action(logits.row(e), spec.n, action_rng);
        s.obs = env::move(s.ep, train_world.task, *s.obj, act.action);
        const auto [reward, done] = env::settle(s.ep, train_world.task, std::nullopt);
        const auto hr = h_new.row(e);
        s.h.assign(hr.begin(), hr.end());
        b.choices.insert(b.choices.end(), act.choices.begin(), act.choices.end());
        b.log_probs.push_back(act.log_prob);
        b.values.push_back(values[e]);
        b.rewards.push_back(reward);
        b.dones.push_back(done ? 1 : 0);
        b.starts.push_back(fresh[e]);
        fresh[e] = 0;
        if (done) {
          ++finished;
          if (reward == 1.0) ++successes;
          s = start_episode();
          fresh[e] = 1;
        }
      }
    }
    {
      nc::Graph g(run.params);
      const auto [x, h, step] = forward_all(g);
      b.last_values = g.value(step.value).raw();
    }
    compute_gae(b, cfg.gamma, cfg.lambda);
    auto adv = b.advantages;
    normalize_advantages(adv, cfg.advantage_std_floor);

    PPODiagnostics diag;
    auto chunks = episode_chunks(b);
    const std::size_t groups = std::min(cfg.minibatches, chunks.size());
    for (std::size_t epoch = 0; epoch < cfg.update_epochs; ++epoch) {
      std::shuffle(chunks.begin(), chunks.end(), shuffle_rng);
      for (std::size_t k = 0; k < groups; ++k) {
        const std::vector<SequenceChunk> group(chunks.begin() + static_cast<std::ptrdiff_t>(k * chunks.size() / groups),
                                               chunks.begin() + static_cast<std::ptrdiff_t>((k + 1) * chunks.size() / groups));
        nc::Graph g(run.params);
        const auto loss = recurrent_sequence_loss(g, b, adv, group, net, cfg);
        detail::check_loss(loss, update);
        g.backward(loss.total);
        detail::optimizer_step(run.params, adam, cfg);
        diag.merge(loss.diag);
      }
    }

    UpdateMetrics m;
    m.update = update;
    m.env_steps = update * steps * envs;
    m.train_episodes = finished;
    m.train_success_rate = finished ? static_cast<double>(successes) / static_cast<double>(finished) : 0.0;
    detail::finish_diagnostics(m, diag);
    if (update % cfg.eval_every == 0 || update == detail::update_count(cfg)) evaluate(m);
    run.curve.push_back(m);
    if (on_update) on_update(m);
  }
  return run;
}

}  // namespace tpose::agent
