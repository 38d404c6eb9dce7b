#pragma once

#include <cstdint>
#include <fstream>
#include <set>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

#include "tpose/agent/policy.hpp"
#include "tpose/agent/ppo.hpp"
#include "tpose/agent/recurrent.hpp"
#include "tpose/env/dataset.hpp"
#include "tpose/env/signature.hpp"
#include "tpose/env/task.hpp"
#include "tpose/obsmodel/model.hpp"

namespace tpose::harness {

enum class Baseline { kTpn, kRecurrent };

inline std::string to_string(Baseline b) { return b == Baseline::kRecurrent ? "recurrent" : "tpn"; }
inline Baseline baseline_from_string(const std::string& s) {
  if (s == "tpn") return Baseline::kTpn;
  if (s == "recurrent") return Baseline::kRecurrent;
  throw ConfigError("unknown baseline '" + s + "' (expected tpn or recurrent)");
}

struct ObjectPoolConfig {
  std::size_t count = 60;
  std::size_t holdout = 10;
  env::SignatureParams signature;
};

struct DatasetConfig {
  std::size_t samples_per_state = 1;
  bool include_noiseless = true;
  double noise_sigma = 0.1;
  double validation_fraction = 0.1;
};

struct AgentConfig {
  std::size_t seeds = 4;  ///< independent training runs, seeds seed+0 .. seed+seeds-1
  std::size_t threads = 1;
  bool oracle_filter = false;  ///< one-hot likelihoods at the true pose instead of the learned model
  agent::PolicyNetConfig policy;
  agent::RecurrentConfig recurrent;
  agent::PPOConfig ppo;
};

/// Everything a command needs. n and d live in `space` and are copied into the model configs.
struct ExperimentConfig {
  std::uint64_t seed = 1;
  std::string out = "runs/default";
  env::TaskKind task = env::TaskKind::kReaching;
  Baseline baseline = Baseline::kTpn;
  belief::StateSpaceSpec space;
  ObjectPoolConfig objects;
  DatasetConfig dataset;
  std::size_t horizon = 16;
  double env_noise_sigma = 0.1;
  obs::ObsModelConfig obsmodel;
  std::size_t topk_max = 5;
  AgentConfig agent;
  std::size_t eval_episodes = 100;

  /// Keeps the model configs' copies of n, d, m in sync with the primary fields.
  void sync() {
    obsmodel.n = space.n;
    obsmodel.d = space.d;
    obsmodel.feature_dim = objects.signature.feature_dim;
    agent.policy.n = space.n;
    agent.policy.d = space.d;
    agent.recurrent.n = space.n;
    agent.recurrent.d = space.d;
    agent.recurrent.feature_dim = objects.signature.feature_dim;
  }

  env::TaskConfig task_config() const {
    env::TaskConfig t;
    t.kind = task;
    t.horizon = horizon;
    t.spec = space;
    t.noise_sigma = env_noise_sigma;
    return t;
  }

  env::DatasetParams dataset_params(std::uint64_t stream) const {
    return {dataset.samples_per_state, dataset.include_noiseless, dataset.noise_sigma, mix_seed(seed, stream)};
  }

  // Independent streams per stage so changing one stage's settings never shifts another's randomness.
  std::uint64_t object_seed() const { return mix_seed(seed, 1); }
  std::uint64_t split_seed() const { return mix_seed(seed, 3); }
  std::uint64_t obsmodel_seed() const { return mix_seed(seed, 4); }
  std::uint64_t eval_seed() const { return mix_seed(seed, 5); }
  std::uint64_t agent_seed(std::size_t k) const { return seed + k; }

  void validate() const {
    space.validate();
    if (space.resolution.size() != space.n) {
      throw ConfigError("space.resolution needs one label per dimension (" + std::to_string(space.n) + ")");
    }
    if (objects.count < 2) throw ConfigError("objects.count must be >= 2");
    if (objects.holdout < 1 || objects.holdout >= objects.count) {
      throw ConfigError("objects.holdout must be in [1, count)");
    }
    if (objects.signature.feature_dim < 1 || objects.signature.components < 1) {
      throw ConfigError("signature needs feature_dim >= 1 and components >= 1");
    }
    if (objects.signature.f_max < 0.0 || objects.signature.f_min < 0.0) throw ConfigError("signature frequencies must be >= 0");
    if (dataset.samples_per_state < 1 && !dataset.include_noiseless) {
      throw ConfigError("dataset needs samples_per_state >= 1 or include_noiseless");
    }
    if (dataset.noise_sigma < 0.0) throw ConfigError("dataset.noise_sigma must be >= 0");
    if (dataset.validation_fraction <= 0.0 || dataset.validation_fraction >= 1.0) {
      throw ConfigError("dataset.validation_fraction must be in (0, 1)");
    }
    task_config().validate();
    obsmodel.validate();
    if (obsmodel.n != space.n || obsmodel.d != space.d || obsmodel.feature_dim != objects.signature.feature_dim) {
      throw ConfigError("obsmodel shape disagrees with space/signature");
    }
    if (topk_max < 1 || topk_max > space.d) throw ConfigError("topk_max must be in [1, d]");
    if (agent.seeds < 1) throw ConfigError("agent.seeds must be >= 1");
    if (agent.threads < 1) throw ConfigError("agent.threads must be >= 1");
    if (agent.policy.channels < 1) throw ConfigError("agent.policy.channels must be >= 1");
    if (agent.recurrent.encoder < 1 || agent.recurrent.hidden < 1) throw ConfigError("recurrent widths must be >= 1");
    agent.ppo.validate();
    if (eval_episodes < 1) throw ConfigError("eval_episodes must be >= 1");
    if (baseline == Baseline::kRecurrent && task != env::TaskKind::kReaching) {
      throw ConfigError("the recurrent baseline supports the reaching task only");
    }
    if (out.empty()) throw ConfigError("out must be a directory path");
  }
};

namespace detail {

inline void check_keys(const nlohmann::json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
  for (const auto& [key, _] : j.items()) {
    if (!allowed.count(key)) throw ConfigError("unknown key '" + key + "' in " + where);
  }
}

}  // namespace detail

inline nlohmann::json to_json(const ExperimentConfig& c) {
  nlohmann::json obs = c.obsmodel;
  obs.erase("n");
  obs.erase("d");
  obs.erase("feature_dim");
  return {
      {"seed", c.seed},
      {"out", c.out},
      {"task", env::to_string(c.task)},
      {"baseline", to_string(c.baseline)},
      {"space", {{"n", c.space.n}, {"d", c.space.d}, {"resolution", c.space.resolution}}},
      {"objects", {{"count", c.objects.count}, {"holdout", c.objects.holdout}, {"signature", c.objects.signature}}},
      {"dataset",
       {{"samples_per_state", c.dataset.samples_per_state},
        {"include_noiseless", c.dataset.include_noiseless},
        {"noise_sigma", c.dataset.noise_sigma},
        {"validation_fraction", c.dataset.validation_fraction}}},
      {"env", {{"horizon", c.horizon}, {"noise_sigma", c.env_noise_sigma}}},
      {"obsmodel", obs},
      {"topk_max", c.topk_max},
      {"agent",
       {{"seeds", c.agent.seeds},
        {"threads", c.agent.threads},
        {"oracle_filter", c.agent.oracle_filter},
        {"policy",
         {{"channels", c.agent.policy.channels},
          {"head_init_scale", c.agent.policy.head_init_scale},
          {"value_init_scale", c.agent.policy.value_init_scale}}},
        {"recurrent",
         {{"encoder", c.agent.recurrent.encoder},
          {"hidden", c.agent.recurrent.hidden},
          {"head_init_scale", c.agent.recurrent.head_init_scale}}},
        {"ppo", c.agent.ppo}}},
      {"eval_episodes", c.eval_episodes},
  };
}

/// Missing keys keep their defaults; unknown keys are rejected so typos surface as validation errors.
inline ExperimentConfig config_from_json(const nlohmann::json& j) {
  using detail::check_keys;
  ExperimentConfig c;
  try {
    check_keys(j, {"seed", "out", "task", "baseline", "space", "objects", "dataset", "env", "obsmodel", "topk_max",
                   "agent", "eval_episodes"},
               "config");
    c.seed = j.value("seed", c.seed);
    c.out = j.value("out", c.out);
    c.task = env::task_from_string(j.value("task", env::to_string(c.task)));
    c.baseline = baseline_from_string(j.value("baseline", to_string(c.baseline)));
    if (j.contains("space")) {
      const auto& s = j["space"];
      check_keys(s, {"n", "d", "resolution"}, "space");
      c.space.n = s.value("n", c.space.n);
      c.space.d = s.value("d", c.space.d);
      if (s.contains("resolution")) {
        c.space.resolution = s["resolution"].get<std::vector<std::string>>();
      } else if (c.space.n != c.space.resolution.size()) {
        c.space.resolution.assign(c.space.n, "1bin");
      }
    }
    if (j.contains("objects")) {
      const auto& o = j["objects"];
      check_keys(o, {"count", "holdout", "signature"}, "objects");
      c.objects.count = o.value("count", c.objects.count);
      c.objects.holdout = o.value("holdout", c.objects.holdout);
      if (o.contains("signature")) {
        check_keys(o["signature"], {"feature_dim", "components", "f_max", "f_min", "coupling", "amplitude_jitter",
                                    "phase_jitter", "frequency_jitter"},
                   "objects.signature");
        c.objects.signature = o["signature"].get<env::SignatureParams>();
      }
    }
    if (j.contains("dataset")) {
      const auto& d = j["dataset"];
      check_keys(d, {"samples_per_state", "include_noiseless", "noise_sigma", "validation_fraction"}, "dataset");
      c.dataset.samples_per_state = d.value("samples_per_state", c.dataset.samples_per_state);
      c.dataset.include_noiseless = d.value("include_noiseless", c.dataset.include_noiseless);
      c.dataset.noise_sigma = d.value("noise_sigma", c.dataset.noise_sigma);
      c.dataset.validation_fraction = d.value("validation_fraction", c.dataset.validation_fraction);
    }
    if (j.contains("env")) {
      const auto& e = j["env"];
      check_keys(e, {"horizon", "noise_sigma"}, "env");
      c.horizon = e.value("horizon", c.horizon);
      c.env_noise_sigma = e.value("noise_sigma", c.env_noise_sigma);
    }
    if (j.contains("obsmodel")) {
      check_keys(j["obsmodel"], {"hidden", "learning_rate", "batch_size", "epochs", "input_noise", "fusion"}, "obsmodel");
      c.obsmodel = j["obsmodel"].get<obs::ObsModelConfig>();
    }
    c.topk_max = j.value("topk_max", c.topk_max);
    if (j.contains("agent")) {
      const auto& a = j["agent"];
      check_keys(a, {"seeds", "threads", "oracle_filter", "policy", "recurrent", "ppo"}, "agent");
      c.agent.seeds = a.value("seeds", c.agent.seeds);
      c.agent.threads = a.value("threads", c.agent.threads);
      c.agent.oracle_filter = a.value("oracle_filter", c.agent.oracle_filter);
      if (a.contains("policy")) {
        const auto& p = a["policy"];
        check_keys(p, {"channels", "head_init_scale", "value_init_scale"}, "agent.policy");
        c.agent.policy.channels = p.value("channels", c.agent.policy.channels);
        c.agent.policy.head_init_scale = p.value("head_init_scale", c.agent.policy.head_init_scale);
        c.agent.policy.value_init_scale = p.value("value_init_scale", c.agent.policy.value_init_scale);
      }
      if (a.contains("recurrent")) {
        const auto& r = a["recurrent"];
        check_keys(r, {"encoder", "hidden", "head_init_scale"}, "agent.recurrent");
        c.agent.recurrent.encoder = r.value("encoder", c.agent.recurrent.encoder);
        c.agent.recurrent.hidden = r.value("hidden", c.agent.recurrent.hidden);
        c.agent.recurrent.head_init_scale = r.value("head_init_scale", c.agent.recurrent.head_init_scale);
      }
      if (a.contains("ppo")) {
        check_keys(a["ppo"], {"clip", "gamma", "lambda", "learning_rate", "num_envs", "rollout_steps", "update_epochs",
                              "minibatches", "entropy_coef", "value_coef", "max_grad_norm", "advantage_std_floor",
                              "total_steps", "eval_episodes", "eval_every"},
                   "agent.ppo");
        c.agent.ppo = a["ppo"].get<agent::PPOConfig>();
      }
    }
    c.eval_episodes = j.value("eval_episodes", c.eval_episodes);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config has a malformed value: ") + e.what());
  }
  c.sync();
  return c;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("config " + path + " is not valid JSON: " + e.what());
  }
  return config_from_json(j);
}

inline ExperimentConfig default_config() {
  ExperimentConfig c;
  c.sync();
  return c;
}

/// 64-bit FNV-1a.
inline std::uint64_t fnv1a(std::string_view bytes, std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char ch : bytes) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

/// Hash of the canonical (sorted-key, compact) JSON form, ignoring where outputs go.
inline std::string config_hash(const ExperimentConfig& c) {
  auto j = to_json(c);
  j.erase("out");
  return hex64(fnv1a(j.dump()));
}

}  // namespace tpose::harness
