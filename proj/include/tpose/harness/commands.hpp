#pragma once

#include <exception>
#include <iostream>
#include <mutex>
#include <optional>
#include <sstream>
#include <thread>

#include "tpose/agent/train.hpp"
#include "tpose/harness/io.hpp"
#include "tpose/obsmodel/topk.hpp"
#include "tpose/obsmodel/train.hpp"

namespace tpose::harness {

/// A required input (dataset, checkpoint) is absent; reported as a runtime failure.
class MissingInputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Layout {
  fs::path root;

  fs::path data() const { return root / "data"; }
  fs::path obsmodel() const { return root / "obsmodel"; }
  fs::path obsmodel_checkpoint() const { return obsmodel() / "obsmodel.ckpt"; }
  fs::path agent(env::TaskKind task, Baseline b) const { return root / ("agent-" + env::to_string(task) + "-" + to_string(b)); }
  fs::path eval(env::TaskKind task, Baseline b) const { return root / ("eval-" + env::to_string(task) + "-" + to_string(b)); }
  fs::path filter_demo() const { return root / "filter-demo"; }
  static std::string seed_dir(std::size_t k) { return "seed-" + std::to_string(k); }
};

inline constexpr const char* kRecordFormat = "tpose-records v1";

/// Objects are regenerated from the config; the pool file in data/ (if present) must agree.
struct ObjectPool {
  std::vector<env::ObjectSignature> objects;
  env::ObjectSplit split;
};

inline ObjectPool make_pool(const ExperimentConfig& cfg) {
  return {env::generate_objects(cfg.objects.count, cfg.object_seed(), cfg.space.n, cfg.objects.signature),
          env::split_objects(cfg.objects.count, cfg.objects.holdout)};
}

inline nlohmann::json pool_json(const ExperimentConfig& cfg) {
  return env::pool_to_json(cfg.objects.count, cfg.objects.holdout, cfg.object_seed(), cfg.space.n, cfg.objects.signature);
}

inline void check_pool_file(const ExperimentConfig& cfg, const Layout& layout) {
  const auto path = layout.data() / "objects.json";
  if (!fs::exists(path)) return;
  if (nlohmann::json::parse(read_file(path)) != pool_json(cfg)) {
    throw ConfigError("config does not match the object pool in " + path.string());
  }
}

inline void log_line(std::ostream* log, const std::string& s) {
  static std::mutex mu;
  if (!log) return;
  std::lock_guard<std::mutex> lock(mu);
  *log << s << std::endl;
}

// ---------------------------------------------------------------------------
// gen
// ---------------------------------------------------------------------------

struct GenResult {
  std::size_t train = 0, validation = 0, holdout = 0;
  RunManifest manifest;
};

inline GenResult cmd_gen(const ExperimentConfig& cfg, bool force, std::ostream* log = nullptr) {
  cfg.validate();
  const Layout layout{cfg.out};
  prepare_output_dir(layout.data(), force);
  StageWriter w(layout.data(), "gen", cfg);
  const auto pool = make_pool(cfg);
  w.write_json("objects.json", pool_json(cfg));

  const auto all = env::build_dataset(pool.objects, pool.split.train, cfg.space, cfg.dataset_params(2));
  const auto parts = env::split_dataset(all, cfg.dataset.validation_fraction, cfg.split_seed());
  const auto holdout = env::build_dataset(pool.objects, pool.split.holdout, cfg.space, cfg.dataset_params(6));
  GenResult r{parts.train.size(), parts.validation.size(), holdout.size(), {}};
  for (const auto& [name, ds] : {std::pair<std::string, const env::Dataset*>{"train.bin", &parts.train},
                                 {"validation.bin", &parts.validation},
                                 {"holdout.bin", &holdout}}) {
    env::write_records(*ds, w.dir() / name);
    w.record(name);
  }
  w.write_json("dataset.json",
               {{"format", kRecordFormat},
                {"record", {{"object_id", "u32"},
                            {"state", "n x u8"},
                            {"left", "m x f32 little-endian"},
                            {"right", "m x f32 little-endian"}}},
                {"record_bytes", env::record_bytes(cfg.space, cfg.objects.signature.feature_dim)},
                {"n", cfg.space.n},
                {"d", cfg.space.d},
                {"m", cfg.objects.signature.feature_dim},
                {"resolution", cfg.space.resolution},
                {"samples_per_state", cfg.dataset.samples_per_state},
                {"include_noiseless", cfg.dataset.include_noiseless},
                {"noise_sigma", cfg.dataset.noise_sigma},
                {"validation_fraction", cfg.dataset.validation_fraction},
                {"counts", {{"train", r.train}, {"validation", r.validation}, {"holdout", r.holdout}}},
                {"objects", "objects.json"}});
  r.manifest = w.finish();
  log_line(log, "gen: " + std::to_string(r.train) + " train, " + std::to_string(r.validation) + " validation, " +
                    std::to_string(r.holdout) + " holdout records in " + layout.data().string());
  return r;
}

/// Loads one split written by gen after checking the sidecar matches the config.
inline env::Dataset load_split(const ExperimentConfig& cfg, const std::string& name) {
  const Layout layout{cfg.out};
  const auto sidecar = layout.data() / "dataset.json";
  const auto file = layout.data() / (name + ".bin");
  if (!fs::exists(sidecar) || !fs::exists(file)) {
    throw MissingInputError("dataset not found in " + layout.data().string() + " (run gen first)");
  }
  const auto meta = nlohmann::json::parse(read_file(sidecar));
  if (meta.value("format", "") != kRecordFormat) throw std::runtime_error("unsupported dataset format in " + sidecar.string());
  if (meta.at("n") != cfg.space.n || meta.at("d") != cfg.space.d || meta.at("m") != cfg.objects.signature.feature_dim) {
    throw ConfigError("dataset in " + layout.data().string() + " was generated for a different n, d, or m");
  }
  return env::read_records(file, cfg.space, cfg.objects.signature.feature_dim);
}

// ---------------------------------------------------------------------------
// train-obs
// ---------------------------------------------------------------------------

struct TrainObsResult {
  obs::TrainResult training;
  obs::TopkTable validation, holdout;
  RunManifest manifest;
};

inline TrainObsResult cmd_train_obs(const ExperimentConfig& cfg, bool force, std::ostream* log = nullptr) {
  cfg.validate();
  const Layout layout{cfg.out};
  auto train = load_split(cfg, "train");
  const auto validation = load_split(cfg, "validation");
  const auto holdout = load_split(cfg, "holdout");
  prepare_output_dir(layout.obsmodel(), force);
  StageWriter w(layout.obsmodel(), "train-obs", cfg);
  for (const char* f : {"train.bin", "validation.bin", "holdout.bin"}) w.record_input(layout.data() / f, layout.root);

  auto result = obs::train(train, cfg.obsmodel, cfg.obsmodel_seed(), [&](const obs::EpochLog& e) {
    log_line(log, "train-obs: epoch " + std::to_string(e.epoch + 1) + "/" + std::to_string(cfg.obsmodel.epochs) +
                      " loss " + fmt(e.loss, 4) + " train top-1 " + fmt(100.0 * e.train_accuracy, 2) + "%");
  });
  train = {};
  if (result.diverged) throw NumericError("obsmodel training diverged (non-finite loss); last good epoch kept in memory only");

  TrainObsResult r{std::move(result), {}, {}, {}};
  r.validation = obs::evaluate_topk(r.training.params, cfg.obsmodel, validation, cfg.topk_max);
  r.holdout = obs::evaluate_topk(r.training.params, cfg.obsmodel, holdout, cfg.topk_max);
  w.checkpoint("obsmodel.ckpt", r.training.params);
  w.write_json("obsmodel.json", cfg.obsmodel);
  std::ostringstream topk;
  obs::write_topk_csv(topk, {{"validation", r.validation}, {"holdout", r.holdout}});
  w.write("topk.csv", topk.str());
  std::ostringstream epochs;
  epochs << "# tpose-obs-train v1\nepoch,loss,train_accuracy,saturated\n";
  epochs << "0," << fmt(r.training.initial_loss) << ",,\n";
  for (const auto& e : r.training.epochs) {
    epochs << e.epoch + 1 << "," << fmt(e.loss) << "," << fmt(e.train_accuracy) << "," << e.saturated << "\n";
  }
  w.write("train_log.csv", epochs.str());
  r.manifest = w.finish();
  log_line(log, obs::format_topk("validation", r.validation) + obs::format_topk("holdout", r.holdout));
  return r;
}

inline nc::ModelParameters load_obsmodel(const ExperimentConfig& cfg) {
  const Layout layout{cfg.out};
  if (!fs::exists(layout.obsmodel_checkpoint())) {
    throw MissingInputError("observation model checkpoint not found at " + layout.obsmodel_checkpoint().string() +
                            " (run train-obs first)");
  }
  return nc::load_checkpoint(layout.obsmodel_checkpoint());
}

// ---------------------------------------------------------------------------
// train-agent
// ---------------------------------------------------------------------------

struct TrainAgentResult {
  std::vector<agent::TrainingRun> runs;
  std::vector<CurvePoint> mean;
  RunManifest manifest;
};

/// Runs `count` jobs on up to `threads` workers; the first exception is rethrown after all finish.
template <typename Job>
void run_parallel(std::size_t count, std::size_t threads, Job job) {
  std::vector<std::exception_ptr> errors(count);
  std::size_t next = 0;
  std::mutex mu;
  auto worker = [&]() {
    for (;;) {
      std::size_t k;
      {
        std::lock_guard<std::mutex> lock(mu);
        if (next >= count) return;
        k = next++;
      }
      try {
        job(k);
      } catch (...) {
        errors[k] = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < std::min(threads, count); ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

inline agent::Perception make_perception(const ExperimentConfig& cfg, const nc::ModelParameters* obs_params) {
  if (cfg.agent.oracle_filter) return agent::Perception::perfect(cfg.obsmodel);
  return agent::Perception::learned(*obs_params, cfg.obsmodel);
}

inline TrainAgentResult cmd_train_agent(const ExperimentConfig& cfg, bool force, std::ostream* log = nullptr) {
  cfg.validate();
  const Layout layout{cfg.out};
  check_pool_file(cfg, layout);
  const bool tpn = cfg.baseline == Baseline::kTpn;
  std::optional<nc::ModelParameters> obs_params;
  if (tpn && !cfg.agent.oracle_filter) obs_params = load_obsmodel(cfg);

  const auto dir = layout.agent(cfg.task, cfg.baseline);
  prepare_output_dir(dir, force);
  StageWriter w(dir, "train-agent", cfg);
  if (obs_params) w.record_input(layout.obsmodel_checkpoint(), layout.root);

  const auto pool = make_pool(cfg);
  const agent::World train_world{cfg.task_config(), &pool.objects, pool.split.train};
  const agent::World eval_world{cfg.task_config(), &pool.objects, pool.split.holdout};
  const auto perception = make_perception(cfg, obs_params ? &*obs_params : nullptr);

  TrainAgentResult r;
  r.runs.resize(cfg.agent.seeds, agent::TrainingRun{nc::ModelParameters(0), {}});
  const std::string label = env::to_string(cfg.task) + "/" + to_string(cfg.baseline);
  run_parallel(cfg.agent.seeds, cfg.agent.threads, [&](std::size_t k) {
    const auto seed = cfg.agent_seed(k);
    auto report = [&, k](const agent::UpdateMetrics& m) {
      if (!m.evaluated) return;
      log_line(log, "train-agent " + label + " seed " + std::to_string(k) + ": update " + std::to_string(m.update) +
                        " steps " + std::to_string(m.env_steps) + " success " + fmt(m.eval.success_rate, 2) +
                        " length " + fmt(m.eval.mean_length, 2));
    };
    r.runs[k] = tpn ? agent::train_belief_agent(train_world, eval_world, perception, cfg.agent.policy, cfg.agent.ppo, seed, report)
                    : agent::train_recurrent_agent(train_world, eval_world, cfg.agent.recurrent, cfg.agent.ppo, seed, report);
  });

  std::vector<std::vector<agent::UpdateMetrics>> curves;
  nlohmann::json seeds = nlohmann::json::array();
  for (std::size_t k = 0; k < r.runs.size(); ++k) {
    const auto sd = Layout::seed_dir(k);
    w.checkpoint(sd + "/policy.ckpt", r.runs[k].params);
    w.write(sd + "/curve.csv", curve_csv(r.runs[k].curve, cfg.agent.ppo.eval_every));
    curves.push_back(r.runs[k].curve);
    const auto& last = r.runs[k].curve.back();
    seeds.push_back({{"seed", cfg.agent_seed(k)},
                     {"final_success_rate", last.eval.success_rate},
                     {"final_mean_length", last.eval.mean_length},
                     {"final_mean_success_length", last.eval.mean_success_length},
                     {"final_mean_success_oracle_length", last.eval.mean_success_oracle_length}});
  }
  r.mean = mean_curve(curves);
  w.write("curve_mean.csv", mean_curve_csv(r.mean, cfg.agent.seeds));
  nlohmann::json first_80 = nullptr;
  for (const auto& p : r.mean) {
    if (p.success_mean >= 0.8) {
      first_80 = p.env_steps;
      break;
    }
  }
  w.write_json("summary.json", {{"task", env::to_string(cfg.task)},
                                {"baseline", to_string(cfg.baseline)},
                                {"oracle_filter", cfg.agent.oracle_filter},
                                {"seeds", seeds},
                                {"final_success_mean", r.mean.back().success_mean},
                                {"final_success_std", r.mean.back().success_std},
                                {"first_env_steps_mean_success_ge_0_8", first_80}});
  r.manifest = w.finish();
  return r;
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

struct EvalResult {
  agent::EvalSummary policy;
  std::optional<agent::EvalSummary> random;  ///< uniform-random actions, same episodes (filter-based agents only)
  RunManifest manifest;
};

inline fs::path default_agent_checkpoint(const ExperimentConfig& cfg) {
  return Layout{cfg.out}.agent(cfg.task, cfg.baseline) / Layout::seed_dir(0) / "policy.ckpt";
}

inline EvalResult cmd_eval(const ExperimentConfig& cfg, bool force, const std::optional<fs::path>& checkpoint = std::nullopt,
                           std::ostream* log = nullptr) {
  cfg.validate();
  const Layout layout{cfg.out};
  check_pool_file(cfg, layout);
  const auto ckpt = checkpoint.value_or(default_agent_checkpoint(cfg));
  if (!fs::exists(ckpt)) throw MissingInputError("policy checkpoint not found at " + ckpt.string() + " (run train-agent first)");
  auto policy_params = nc::load_checkpoint(ckpt);
  const bool tpn = cfg.baseline == Baseline::kTpn;
  std::optional<nc::ModelParameters> obs_params;
  if (tpn && !cfg.agent.oracle_filter) obs_params = load_obsmodel(cfg);

  const auto dir = layout.eval(cfg.task, cfg.baseline);
  prepare_output_dir(dir, force);
  StageWriter w(dir, "eval", cfg);
  w.record_input(ckpt, fs::exists(layout.root) ? layout.root : ckpt.parent_path());
  if (obs_params) w.record_input(layout.obsmodel_checkpoint(), layout.root);

  const auto pool = make_pool(cfg);
  const agent::World world{cfg.task_config(), &pool.objects, pool.split.holdout};
  EvalResult r;
  if (tpn) {
    const auto perception = make_perception(cfg, obs_params ? &*obs_params : nullptr);
    r.policy = agent::summarize(agent::evaluate_belief_policy(agent::learned_policy(policy_params, cfg.agent.policy, true),
                                                              world, perception, cfg.eval_episodes, cfg.eval_seed()));
    r.random = agent::summarize(agent::evaluate_belief_policy(agent::random_policy(cfg.space.n), world, perception,
                                                              cfg.eval_episodes, cfg.eval_seed()));
  } else {
    r.policy = agent::summarize(
        agent::evaluate_recurrent_policy(policy_params, cfg.agent.recurrent, world, cfg.eval_episodes, cfg.eval_seed()));
  }
  nlohmann::json report = {{"task", env::to_string(cfg.task)},
                           {"baseline", to_string(cfg.baseline)},
                           {"objects", "holdout"},
                           {"policy", summary_json(r.policy)}};
  if (r.random) report["random_policy"] = summary_json(*r.random);
  w.write_json("report.json", report);
  w.write("series.csv", series_csv(r.policy));
  r.manifest = w.finish();
  log_line(log, "eval: success " + fmt(r.policy.success_rate, 3) + " mean length " + fmt(r.policy.mean_length, 2) +
                    (r.random ? " (random policy success " + fmt(r.random->success_rate, 3) + ")" : ""));
  return r;
}

// ---------------------------------------------------------------------------
// filter-demo
// ---------------------------------------------------------------------------

inline nlohmann::json trace_json(const agent::EpisodeRecord& rec, const belief::StateSpaceSpec& spec) {
  nlohmann::json steps = nlohmann::json::array();
  for (std::size_t t = 0; t < rec.trace.size(); ++t) {
    const auto& s = rec.trace[t];
    const auto est = belief::map_estimate(s.belief);
    steps.push_back({{"step", t},
                     {"true_state", s.true_state.indices},
                     {"action", s.action ? nlohmann::json(s.action->deltas) : nlohmann::json(nullptr)},
                     {"likelihood", belief::to_json(s.likelihood)["rows"]},
                     {"belief", belief::to_json(s.belief)["rows"]},
                     {"map_estimate", est.indices},
                     {"entropy", belief::belief_entropy(s.belief)},
                     {"reward", s.reward}});
  }
  return {{"n", spec.n},
          {"d", spec.d},
          {"object_id", rec.object_id},
          {"start", rec.start.indices},
          {"goal", rec.goal ? nlohmann::json(rec.goal->indices) : nlohmann::json(nullptr)},
          {"success", rec.success},
          {"length", rec.length},
          {"steps", steps}};
}

struct FilterDemoResult {
  agent::EpisodeRecord episode;
  bool used_policy = false;
  RunManifest manifest;
};

/// One holdout episode with the trained TPN policy when its checkpoint exists, otherwise random moves.
inline FilterDemoResult cmd_filter_demo(const ExperimentConfig& cfg, bool force, std::ostream* log = nullptr) {
  cfg.validate();
  const Layout layout{cfg.out};
  check_pool_file(cfg, layout);
  std::optional<nc::ModelParameters> obs_params;
  if (!cfg.agent.oracle_filter) obs_params = load_obsmodel(cfg);
  const auto ckpt = layout.agent(cfg.task, Baseline::kTpn) / Layout::seed_dir(0) / "policy.ckpt";
  std::optional<nc::ModelParameters> policy_params;
  if (fs::exists(ckpt)) policy_params = nc::load_checkpoint(ckpt);

  prepare_output_dir(layout.filter_demo(), force);
  StageWriter w(layout.filter_demo(), "filter-demo", cfg);
  if (obs_params) w.record_input(layout.obsmodel_checkpoint(), layout.root);
  if (policy_params) w.record_input(ckpt, layout.root);

  const auto pool = make_pool(cfg);
  const agent::World world{cfg.task_config(), &pool.objects, pool.split.holdout};
  const auto perception = make_perception(cfg, obs_params ? &*obs_params : nullptr);
  const auto policy = policy_params ? agent::learned_policy(*policy_params, cfg.agent.policy, true)
                                    : agent::random_policy(cfg.space.n);
  Rng pick = make_rng(cfg.eval_seed(), 0xDE30);
  Rng actions = make_rng(cfg.eval_seed(), 0xDE31);
  const auto& obj = world.pick(pick);
  FilterDemoResult r{agent::run_agent_episode(policy, world, perception, obj, make_rng(cfg.eval_seed(), 0xDE32), actions, true),
                     policy_params.has_value(), {}};
  auto j = trace_json(r.episode, cfg.space);
  j["task"] = env::to_string(cfg.task);
  j["policy"] = r.used_policy ? "tpn" : "random";
  w.write_json("episode.json", j);
  r.manifest = w.finish();
  log_line(log, "filter-demo: " + std::string(r.episode.success ? "success" : "no success") + " after " +
                    std::to_string(r.episode.length) + " steps (" + j["policy"].get<std::string>() + " policy)");
  return r;
}

}  // namespace tpose::harness
