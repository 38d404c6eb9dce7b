#pragma once

#include <cstdlib>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "tpose/belief/state_space.hpp"
#include "tpose/env/signature.hpp"
#include "tpose/rng.hpp"

namespace tpose::env {

enum class TaskKind { kActivePoseEstimation, kReaching };

inline std::string to_string(TaskKind k) { return k == TaskKind::kReaching ? "reaching" : "active"; }

inline TaskKind task_from_string(const std::string& s) {
  if (s == "reaching") return TaskKind::kReaching;
  if (s == "active" || s == "active_pose_estimation") return TaskKind::kActivePoseEstimation;
  throw ConfigError("unknown task '" + s + "' (expected active or reaching)");
}

struct TaskConfig {
  TaskKind kind = TaskKind::kReaching;
  std::size_t horizon = 16;
  belief::StateSpaceSpec spec;
  double noise_sigma = 0.1;

  void validate() const {
    spec.validate();
    if (horizon < 1) throw ConfigError("task horizon must be >= 1");
    if (noise_sigma < 0.0) throw ConfigError("noise_sigma must be >= 0");
  }
};

struct EpisodeState {
  belief::FactoredState true_state;
  std::optional<belief::FactoredState> goal;
  std::size_t step_count = 0;
  std::uint32_t object_id = 0;
  bool done = false;
  Rng rng;
};

struct StepResult {
  TactileObservation observation;
  double reward = 0.0;
  bool done = false;
};

/// Maps the freshly drawn observation to the agent's current state estimate (active task).
using Estimator = std::function<belief::FactoredState(const TactileObservation&)>;

inline belief::FactoredState random_state(const belief::StateSpaceSpec& spec, Rng& rng) {
  belief::FactoredState s;
  s.indices.resize(spec.n);
  for (auto& v : s.indices) v = static_cast<int>(uniform_index(rng, spec.d));
  return s;
}

/// Random start pose (and, for reaching, a goal different from the start) plus the first observation.
inline std::pair<EpisodeState, TactileObservation> reset(const TaskConfig& cfg, const ObjectSignature& obj, Rng rng) {
  cfg.validate();
  EpisodeState ep;
  ep.object_id = obj.object_id;
  ep.true_state = random_state(cfg.spec, rng);
  if (cfg.kind == TaskKind::kReaching) {
    belief::FactoredState g;
    do {
      g = random_state(cfg.spec, rng);
    } while (g == ep.true_state);
    ep.goal = std::move(g);
  }
  auto obs = observe(obj, ep.true_state, cfg.spec, cfg.noise_sigma, rng);
  ep.rng = std::move(rng);
  return {std::move(ep), std::move(obs)};
}

/// Moves the gripper and grasps: applies the clamped action and returns the new observation.
/// Counts as one step of the horizon. Follow with settle().
inline TactileObservation move(EpisodeState& ep, const TaskConfig& cfg, const ObjectSignature& obj,
                               const belief::DeltaAction& action) {
  if (ep.done) throw StateError("env step after episode end");
  ep.true_state = belief::apply_action(ep.true_state, action, cfg.spec);
  ++ep.step_count;
  return observe(obj, ep.true_state, cfg.spec, cfg.noise_sigma, ep.rng);
}

/// Sparse reward and termination for the current step. `estimate` is the agent's MAP pose
/// (active task); the reaching task compares against the goal and ignores it.
inline std::pair<double, bool> settle(EpisodeState& ep, const TaskConfig& cfg,
                                      const std::optional<belief::FactoredState>& estimate) {
  if (ep.done) throw StateError("env step after episode end");
  double reward = 0.0;
  if (cfg.kind == TaskKind::kReaching) {
    reward = ep.true_state == *ep.goal ? 1.0 : 0.0;
  } else {
    if (!estimate) throw StateError("active pose estimation step needs the agent's estimate");
    reward = *estimate == ep.true_state ? 1.0 : 0.0;
  }
  ep.done = reward == 1.0 || ep.step_count >= cfg.horizon;
  return {reward, ep.done};
}

/// move() then settle(); for the active task the estimator sees the new observation first.
inline StepResult env_step(EpisodeState& ep, const TaskConfig& cfg, const ObjectSignature& obj,
                           const belief::DeltaAction& action, const Estimator& estimator = {}) {
  if (ep.done) throw StateError("env step after episode end");
  if (cfg.kind == TaskKind::kActivePoseEstimation && !estimator) {
    throw StateError("active pose estimation step needs an estimator");
  }
  StepResult r;
  r.observation = move(ep, cfg, obj, action);
  std::optional<belief::FactoredState> est;
  if (cfg.kind == TaskKind::kActivePoseEstimation) est = estimator(r.observation);
  std::tie(r.reward, r.done) = settle(ep, cfg, est);
  return r;
}

/// Fewest moves from `from` to `to` in one dimension with steps in {-2..2}, clamped to [0, d-1].
inline std::size_t moves_needed(int from, int to, std::size_t d) {
  // Breadth-first search over at most d bins.
  std::vector<int> dist(d, -1);
  std::vector<int> frontier{from};
  dist[static_cast<std::size_t>(from)] = 0;
  while (!frontier.empty()) {
    std::vector<int> next;
    for (int s : frontier) {
      if (s == to) return static_cast<std::size_t>(dist[static_cast<std::size_t>(s)]);
      for (int delta = -belief::kMaxDelta; delta <= belief::kMaxDelta; ++delta) {
        const int t = belief::clamp_bin(s + delta, d);
        if (dist[static_cast<std::size_t>(t)] < 0) {
          dist[static_cast<std::size_t>(t)] = dist[static_cast<std::size_t>(s)] + 1;
          next.push_back(t);
        }
      }
    }
    frontier = std::move(next);
  }
  return static_cast<std::size_t>(dist[static_cast<std::size_t>(to)]);
}

/// Fewest joint steps to reach `goal`: all dimensions move at once, so it is the worst dimension.
inline std::size_t shortest_path_length(const belief::StateSpaceSpec& spec, const belief::FactoredState& start,
                                        const belief::FactoredState& goal) {
  std::size_t worst = 0;
  for (std::size_t i = 0; i < spec.n; ++i) worst = std::max(worst, moves_needed(start[i], goal[i], spec.d));
  return worst;
}

}  // namespace tpose::env
