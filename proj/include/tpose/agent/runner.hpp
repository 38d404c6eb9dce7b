#pragma once

#include <algorithm>
#include <functional>
#include <numeric>
#include <optional>
#include <vector>

#include "tpose/agent/policy.hpp"
#include "tpose/agent/ppo.hpp"
#include "tpose/agent/recurrent.hpp"
#include "tpose/belief/filter.hpp"
#include "tpose/env/task.hpp"
#include "tpose/obsmodel/model.hpp"

namespace tpose::agent {

/// Where per-step likelihoods come from: the learned two-finger model, or the true pose.
struct Perception {
  const nc::ModelParameters* obs_params = nullptr;
  obs::ObsModelConfig obs_cfg;
  bool oracle = false;

  static Perception learned(const nc::ModelParameters& params, const obs::ObsModelConfig& cfg) {
    return {&params, cfg, false};
  }
  static Perception perfect(const obs::ObsModelConfig& cfg) { return {nullptr, cfg, true}; }

  /// One fused likelihood per observation; the oracle returns one-hot rows at the true pose.
  std::vector<belief::Likelihood> likelihoods(const std::vector<env::TactileObservation>& obs,
                                              const std::vector<const env::EpisodeState*>& eps) const {
    std::vector<belief::Likelihood> out;
    out.reserve(obs.size());
    if (oracle) {
      for (const auto* ep : eps) {
        belief::Likelihood l(obs_cfg.n, obs_cfg.d, 0.0);
        for (std::size_t i = 0; i < obs_cfg.n; ++i) l.at(i, static_cast<std::size_t>(ep->true_state[i])) = 1.0;
        out.push_back(std::move(l));
      }
      return out;
    }
    if (!obs_params) throw StateError("perception has no observation model loaded");
    const std::size_t b = obs.size();
    const std::size_t m = obs_cfg.feature_dim;
    std::vector<double> x(2 * b * m);
    for (std::size_t i = 0; i < b; ++i) {
      std::copy(obs[i].left.begin(), obs[i].left.end(), x.begin() + static_cast<std::ptrdiff_t>(i * m));
      std::copy(obs[i].right.begin(), obs[i].right.end(), x.begin() + static_cast<std::ptrdiff_t>((b + i) * m));
    }
    const auto probs = obs::predict_batch(*obs_params, obs_cfg, x, 2 * b);
    const std::size_t w = obs_cfg.output_dim();
    for (std::size_t i = 0; i < b; ++i) {
      belief::FactorMatrix l(obs_cfg.n, obs_cfg.d, std::vector<double>(probs.data() + i * w, probs.data() + (i + 1) * w));
      belief::FactorMatrix r(obs_cfg.n, obs_cfg.d, std::vector<double>(probs.data() + (b + i) * w, probs.data() + (b + i + 1) * w));
      out.push_back(obs::fuse_fingers(l, r, obs_cfg.fusion));
    }
    return out;
  }

  belief::Likelihood likelihood(const env::TactileObservation& o, const env::EpisodeState& ep) const {
    return likelihoods({o}, {&ep}).front();
  }
};

/// Task, shared object pool, and the ids episodes draw from.
struct World {
  env::TaskConfig task;
  const std::vector<env::ObjectSignature>* objects = nullptr;
  std::vector<std::uint32_t> object_ids;

  const env::ObjectSignature& pick(Rng& rng) const { return objects->at(object_ids[uniform_index(rng, object_ids.size())]); }
};

/// Chooses the next move from the current belief (and goal).
using BeliefPolicyFn =
    std::function<SampledAction(const belief::FactoredBelief&, const std::optional<belief::FactoredState>&, Rng&)>;

inline BeliefPolicyFn learned_policy(nc::ModelParameters& params, const PolicyNetConfig& cfg, bool greedy) {
  return [&params, cfg, greedy](const belief::FactoredBelief& bel, const std::optional<belief::FactoredState>& goal, Rng& rng) {
    const auto out = policy_value(params, cfg, policy_input(bel, goal), 1);
    return greedy ? greedy_action(out.logits.values(), cfg.n) : sample_joint_action(out.logits.values(), cfg.n, rng);
  };
}

inline BeliefPolicyFn random_policy(std::size_t n) {
  return [n](const belief::FactoredBelief&, const std::optional<belief::FactoredState>&, Rng& rng) {
    return sample_joint_action(std::vector<double>(n * belief::kMovesPerDim, 0.0), n, rng);
  };
}

/// Moves the MAP estimate toward the goal along a shortest path (stays when already there).
inline BeliefPolicyFn greedy_goal_policy(std::size_t n) {
  return [n](const belief::FactoredBelief& bel, const std::optional<belief::FactoredState>& goal, Rng&) {
    if (!goal) throw StateError("goal-seeking policy needs a goal");
    const auto est = belief::map_estimate(bel);
    SampledAction s;
    std::vector<int> deltas(n);
    s.choices.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      deltas[i] = std::clamp((*goal)[i] - est[i], -belief::kMaxDelta, belief::kMaxDelta);
      s.choices[i] = belief::DeltaAction::category_of(deltas[i]);
    }
    s.action = belief::DeltaAction(std::move(deltas));
    return s;
  };
}

struct StepTrace {
  belief::FactoredState true_state;
  belief::Likelihood likelihood;
  belief::FactoredBelief belief;
  std::optional<belief::DeltaAction> action;  ///< action that led here (absent for the initial observation)
  double reward = 0.0;
};

struct EpisodeRecord {
  bool success = false;
  std::size_t length = 0;
  std::size_t oracle_length = 0;  ///< shortest path start -> goal (reaching only)
  std::uint32_t object_id = 0;
  belief::FactoredState start;
  std::optional<belief::FactoredState> goal;
  /// Per step index (0 = after the first observation): fraction of dimensions whose MAP bin is correct.
  std::vector<double> map_accuracy;
  std::vector<double> mean_entropy;
  std::vector<std::size_t> filter_resets;
  std::vector<StepTrace> trace;  ///< filled when requested
};

/// One episode: observe, fuse, filter, act, until the task ends.
inline EpisodeRecord run_agent_episode(const BeliefPolicyFn& policy, const World& world, const Perception& perception,
                                       const env::ObjectSignature& obj, Rng episode_rng, Rng& action_rng,
                                       bool keep_trace = false) {
  const auto& spec = world.task.spec;
  auto [ep, obs0] = env::reset(world.task, obj, std::move(episode_rng));
  EpisodeRecord rec;
  rec.object_id = obj.object_id;
  rec.start = ep.true_state;
  rec.goal = ep.goal;
  if (ep.goal) rec.oracle_length = env::shortest_path_length(spec, ep.true_state, *ep.goal);

  auto score_step = [&](const belief::FactoredBelief& bel, const belief::Likelihood& lik,
                        const std::optional<belief::DeltaAction>& act, double reward, std::size_t resets) {
    const auto est = belief::map_estimate(bel);
    double correct = 0.0;
    for (std::size_t i = 0; i < spec.n; ++i) correct += est[i] == ep.true_state[i] ? 1.0 : 0.0;
    rec.map_accuracy.push_back(correct / static_cast<double>(spec.n));
    const auto h = belief::belief_entropy(bel);
    rec.mean_entropy.push_back(std::accumulate(h.begin(), h.end(), 0.0) / static_cast<double>(spec.n));
    rec.filter_resets.push_back(resets);
    if (keep_trace) rec.trace.push_back({ep.true_state, lik, bel, act, reward});
  };

  belief::FilterEvents events;
  auto lik = perception.likelihood(obs0, ep);
  auto bel = belief::update(belief::uniform_belief(spec), lik, &events);
  score_step(bel, lik, std::nullopt, 0.0, events.resets);

  while (!ep.done) {
    const auto act = policy(bel, ep.goal, action_rng);
    const auto obs = env::move(ep, world.task, obj, act.action);
    lik = perception.likelihood(obs, ep);
    events = {};
    bel = belief::step(bel, act.action, lik, &events);
    const auto [reward, done] = env::settle(ep, world.task, belief::map_estimate(bel));
    score_step(bel, lik, act.action, reward, events.resets);
    if (reward == 1.0) rec.success = true;
  }
  rec.length = ep.step_count;
  return rec;
}

struct EvalSummary {
  std::size_t episodes = 0;
  double success_rate = 0.0;
  double mean_length = 0.0;
  double mean_success_length = 0.0;
  double mean_success_oracle_length = 0.0;  ///< shortest-path length averaged over the successful episodes
  std::vector<double> map_accuracy_by_step;
  std::vector<double> entropy_by_step;
  std::vector<std::size_t> episodes_by_step;
};

inline EvalSummary summarize(const std::vector<EpisodeRecord>& recs) {
  EvalSummary s;
  s.episodes = recs.size();
  std::size_t successes = 0;
  for (const auto& r : recs) {
    s.mean_length += static_cast<double>(r.length);
    if (r.success) {
      ++successes;
      s.mean_success_length += static_cast<double>(r.length);
      s.mean_success_oracle_length += static_cast<double>(r.oracle_length);
    }
    if (s.map_accuracy_by_step.size() < r.map_accuracy.size()) {
      s.map_accuracy_by_step.resize(r.map_accuracy.size(), 0.0);
      s.entropy_by_step.resize(r.map_accuracy.size(), 0.0);
      s.episodes_by_step.resize(r.map_accuracy.size(), 0);
    }
    for (std::size_t t = 0; t < r.map_accuracy.size(); ++t) {
      s.map_accuracy_by_step[t] += r.map_accuracy[t];
      s.entropy_by_step[t] += r.mean_entropy[t];
      ++s.episodes_by_step[t];
    }
  }
  if (!recs.empty()) {
    s.success_rate = static_cast<double>(successes) / static_cast<double>(recs.size());
    s.mean_length /= static_cast<double>(recs.size());
  }
  if (successes) {
    s.mean_success_length /= static_cast<double>(successes);
    s.mean_success_oracle_length /= static_cast<double>(successes);
  }
  for (std::size_t t = 0; t < s.map_accuracy_by_step.size(); ++t) {
    s.map_accuracy_by_step[t] /= static_cast<double>(s.episodes_by_step[t]);
    s.entropy_by_step[t] /= static_cast<double>(s.episodes_by_step[t]);
  }
  return s;
}

/// `episodes` episodes with a fixed seed so repeated evaluations see the same starts, goals, and noise.
inline std::vector<EpisodeRecord> evaluate_belief_policy(const BeliefPolicyFn& policy, const World& world,
                                                         const Perception& perception, std::size_t episodes,
                                                         std::uint64_t seed) {
  std::vector<EpisodeRecord> recs;
  Rng pick_rng = make_rng(seed, 0xE7A1);
  Rng action_rng = make_rng(seed, 0xE7A2);
  for (std::size_t k = 0; k < episodes; ++k) {
    const auto& obj = world.pick(pick_rng);
    recs.push_back(run_agent_episode(policy, world, perception, obj, make_rng(seed, 0xE0000000ULL + k), action_rng));
  }
  return recs;
}

// ---------------------------------------------------------------------------
// Recurrent baseline episodes (no filter; the GRU state carries the history)
// ---------------------------------------------------------------------------

inline EpisodeRecord run_recurrent_episode(nc::ModelParameters& params, const RecurrentConfig& cfg, const World& world,
                                           const env::ObjectSignature& obj, Rng episode_rng, Rng& action_rng, bool greedy) {
  if (world.task.kind != env::TaskKind::kReaching) throw ConfigError("the recurrent baseline supports the reaching task only");
  auto [ep, obs] = env::reset(world.task, obj, std::move(episode_rng));
  EpisodeRecord rec;
  rec.object_id = obj.object_id;
  rec.start = ep.true_state;
  rec.goal = ep.goal;
  rec.oracle_length = env::shortest_path_length(world.task.spec, ep.true_state, *ep.goal);
  nc::Tensor h({1, cfg.hidden});
  while (!ep.done) {
    nc::Graph g(params);
    auto step = recurrent_forward(g, g.constant(nc::Tensor({1, cfg.input_dim()}, recurrent_input(obs, ep.goal, cfg))),
                                  g.constant(h), cfg);
    const auto& logits = g.value(step.logits);
    const auto act = greedy ? greedy_action(logits.values(), cfg.n) : sample_joint_action(logits.values(), cfg.n, action_rng);
    h = g.value(step.hidden);
    obs = env::move(ep, world.task, obj, act.action);
    const auto [reward, done] = env::settle(ep, world.task, std::nullopt);
    if (reward == 1.0) rec.success = true;
  }
  rec.length = ep.step_count;
  return rec;
}

inline std::vector<EpisodeRecord> evaluate_recurrent_policy(nc::ModelParameters& params, const RecurrentConfig& cfg,
                                                            const World& world, std::size_t episodes, std::uint64_t seed) {
  std::vector<EpisodeRecord> recs;
  Rng pick_rng = make_rng(seed, 0xE7A1);
  Rng action_rng = make_rng(seed, 0xE7A2);
  for (std::size_t k = 0; k < episodes; ++k) {
    const auto& obj = world.pick(pick_rng);
    recs.push_back(run_recurrent_episode(params, cfg, world, obj, make_rng(seed, 0xE0000000ULL + k), action_rng, true));
  }
  return recs;
}

}  // namespace tpose::agent
