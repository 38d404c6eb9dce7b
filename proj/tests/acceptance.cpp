// Acceptance run: one PASS/FAIL line per criterion. Exit status is nonzero if any criterion fails.
//
//   acceptance --work-dir DIR [--only 1,3,8]
//
// Criteria 3-7 train at full scale (d=11, n=4, 50+10 objects); a complete run takes a few hours on one core.

#include <chrono>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>

#include <CLI11.hpp>

#include "oracles.hpp"
#include "tpose/harness/commands.hpp"

namespace fs = std::filesystem;
namespace ag = tpose::agent;
namespace b = tpose::belief;
namespace env = tpose::env;
namespace h = tpose::harness;
using tpose::make_rng;

namespace {

// Pinned thresholds.
constexpr double kFilterTolerance = 1e-9;
constexpr double kFilterSeconds = 10.0;
constexpr std::size_t kFilterEpisodes = 1000;
constexpr std::size_t kFilterHorizon = 16;
constexpr double kGradSeconds = 60.0;
constexpr double kNoiselessTop1 = 0.99;
constexpr double kObsSeconds = 30.0 * 60.0;
constexpr std::size_t kFilteringEpisodes = 500;
constexpr std::size_t kFilteringStep = 8;  // 1-based observation index
constexpr double kFilteringMargin = 0.05;
constexpr double kReachSuccess = 0.8;
constexpr std::size_t kReachBudget = 500000;
constexpr double kLengthRatio = 1.5;
constexpr std::size_t kTpnLongBudget = 8000000;  // how far TPN trains when searching for its 80% crossing
constexpr double kActiveSuccess = 0.8;
constexpr std::size_t kActiveBudget = 500000;
constexpr std::size_t kActiveEpisodes = 500;

constexpr std::uint64_t kSeed = 20261017;

using Clock = std::chrono::steady_clock;

double since(Clock::time_point t) { return std::chrono::duration<double>(Clock::now() - t).count(); }

std::string num(double v, int digits = 4) {
  std::ostringstream os;
  os.precision(digits);
  os << v;
  return os.str();
}

std::string pct(double v) { return h::fmt(100.0 * v, 2) + "%"; }

struct Verdict {
  bool pass = false;
  std::string detail;
};

/// Full-scale pipeline state shared by criteria 3-7; stages run on first use.
class Pipeline {
 public:
  explicit Pipeline(fs::path root) : root_(std::move(root)) {}

  h::ExperimentConfig base() const {
    auto c = h::default_config();
    c.seed = kSeed;
    c.out = (root_ / "default").string();
    return c;
  }

  const h::TrainObsResult& obsmodel() {
    if (!obs_) {
      const auto cfg = base();
      const auto t = Clock::now();
      h::cmd_gen(cfg, true, &std::cout);
      obs_ = h::cmd_train_obs(cfg, true, &std::cout);
      obs_seconds_ = since(t);
    }
    return *obs_;
  }
  double obs_seconds() const { return obs_seconds_; }

  const h::TrainAgentResult& tpn_reaching() {
    if (!tpn_) {
      obsmodel();
      auto cfg = base();
      cfg.agent.ppo.total_steps = kTpnLongBudget;
      tpn_ = h::cmd_train_agent(cfg, true, &std::cout);
    }
    return *tpn_;
  }

  const h::TrainAgentResult& recurrent_reaching(std::size_t budget) {
    if (!rec_) {
      auto cfg = base();
      cfg.baseline = h::Baseline::kRecurrent;
      cfg.agent.ppo.total_steps = budget;
      rec_ = h::cmd_train_agent(cfg, true, &std::cout);
    }
    return *rec_;
  }

  const h::TrainAgentResult& tpn_active() {
    if (!active_) {
      obsmodel();
      auto cfg = base();
      cfg.task = env::TaskKind::kActivePoseEstimation;
      cfg.agent.ppo.total_steps = kActiveBudget;
      active_ = h::cmd_train_agent(cfg, true, &std::cout);
    }
    return *active_;
  }

  const fs::path& root() const { return root_; }

 private:
  fs::path root_;
  std::optional<h::TrainObsResult> obs_;
  double obs_seconds_ = 0.0;
  std::optional<h::TrainAgentResult> tpn_, rec_, active_;
};

Verdict filter_equivalence() {
  const auto t = Clock::now();
  const auto r = tpose::oracle::filter_vs_matrix_oracle(kFilterEpisodes, kFilterHorizon, kSeed);
  const double s = since(t);
  return {r.max_abs_error < kFilterTolerance && s < kFilterSeconds && r.episodes == kFilterEpisodes,
          "max |factored - matrix| " + num(r.max_abs_error, 3) + " over " + std::to_string(r.episodes) + " episodes / " +
              std::to_string(r.steps) + " steps in " + h::fmt(s, 2) + " s (limits " + num(kFilterTolerance) + ", " +
              num(kFilterSeconds) + " s)"};
}

Verdict gradients() {
  const auto t = Clock::now();
  double worst = 0.0;
  std::string worst_name;
  std::size_t checks = 0;
  for (std::uint64_t seed : {kSeed, kSeed + 1, kSeed + 2}) {
    for (const auto& c : tpose::oracle::gradient_suite(seed)) {
      ++checks;
      if (c.max_rel_error >= worst) {
        worst = c.max_rel_error;
        worst_name = c.name;
      }
    }
  }
  const double s = since(t);
  return {worst < tpose::oracle::kGradTolerance && s < kGradSeconds,
          std::to_string(checks) + " checks over 3 seeds, worst relative error " + num(worst, 3) + " (" + worst_name +
              ") in " + h::fmt(s, 2) + " s (limits " + num(tpose::oracle::kGradTolerance) + ", " + num(kGradSeconds) + " s)"};
}

Verdict obsmodel_accuracy(Pipeline& p) {
  auto cfg = p.base();
  cfg.out = (p.root() / "noiseless").string();
  cfg.dataset.noise_sigma = 0.0;
  cfg.obsmodel.input_noise = 0.0;
  cfg.env_noise_sigma = 0.0;
  h::cmd_gen(cfg, true, &std::cout);
  const auto clean = h::cmd_train_obs(cfg, true, &std::cout);
  const double clean_top1 = clean.validation.mean_at(1);

  const auto& noisy = p.obsmodel();
  bool monotone = true;
  for (const auto& row : noisy.holdout.accuracy) {
    for (std::size_t k = 1; k < row.size(); ++k) monotone = monotone && row[k] >= row[k - 1];
  }
  const double top1 = noisy.holdout.mean_at(1), top5 = noisy.holdout.mean_at(5);
  const bool pass = clean_top1 >= kNoiselessTop1 && top5 >= top1 && monotone && p.obs_seconds() < kObsSeconds;
  return {pass, "noiseless validation top-1 " + pct(clean_top1) + " (need " + pct(kNoiselessTop1) +
                    "); default-noise holdout top-1 " + pct(top1) + ", top-5 " + pct(top5) +
                    (monotone ? ", monotone in k" : ", NOT monotone in k") + "; gen + train + eval " +
                    h::fmt(p.obs_seconds() / 60.0, 1) + " min (limit 30)"};
}

Verdict filtering_beats_single_shot(Pipeline& p) {
  const auto cfg = p.base();
  const auto& obs = p.obsmodel();
  const auto pool = h::make_pool(cfg);
  const auto perception = ag::Perception::learned(obs.training.params, cfg.obsmodel);
  auto task = cfg.task_config();
  task.kind = env::TaskKind::kActivePoseEstimation;  // no goal; the episode only supplies noisy observations
  const std::size_t n = cfg.space.n;
  double single = 0.0, filtered = 0.0;
  auto actions = make_rng(kSeed, 42);
  for (std::size_t e = 0; e < kFilteringEpisodes; ++e) {
    const auto& obj = pool.objects[pool.split.holdout[e % pool.split.holdout.size()]];
    auto [ep, first] = env::reset(task, obj, make_rng(kSeed, 1000 + e));
    const auto lik0 = perception.likelihood(first, ep);
    const auto shot = b::map_estimate(b::update(b::uniform_belief(cfg.space), lik0));
    auto bel = b::update(b::uniform_belief(cfg.space), lik0);
    for (std::size_t i = 0; i < n; ++i) single += shot[i] == ep.true_state[i] ? 1.0 : 0.0;
    for (std::size_t t = 1; t < kFilteringStep; ++t) {
      const auto a = tpose::oracle::random_action(n, actions);
      const auto o = env::move(ep, task, obj, a);
      bel = b::step(bel, a, perception.likelihood(o, ep));
    }
    const auto est = b::map_estimate(bel);
    for (std::size_t i = 0; i < n; ++i) filtered += est[i] == ep.true_state[i] ? 1.0 : 0.0;
  }
  single /= static_cast<double>(kFilteringEpisodes * n);
  filtered /= static_cast<double>(kFilteringEpisodes * n);
  return {filtered - single >= kFilteringMargin,
          "per-dimension MAP accuracy at observation " + std::to_string(kFilteringStep) + " " + pct(filtered) +
              " vs single-observation argmax " + pct(single) + " over " + std::to_string(kFilteringEpisodes) +
              " holdout episodes (need +" + h::fmt(100 * kFilteringMargin, 0) + " pp)"};
}

struct SeedMeans {
  double success = 0.0, length = 0.0, oracle = 0.0;
};

SeedMeans at_update(const h::TrainAgentResult& r, std::size_t update) {
  SeedMeans m;
  for (const auto& run : r.runs) {
    const auto& e = run.curve.at(update).eval;
    m.success += e.success_rate;
    m.length += e.mean_success_length;
    m.oracle += e.mean_success_oracle_length;
  }
  const double k = static_cast<double>(r.runs.size());
  return {m.success / k, m.length / k, m.oracle / k};
}

Verdict reaching(Pipeline& p) {
  const auto& r = p.tpn_reaching();
  double best = 0.0;
  std::size_t best_steps = 0;
  for (const auto& pt : r.mean) {
    if (pt.env_steps > kReachBudget) break;
    if (pt.success_mean > best) best = pt.success_mean, best_steps = pt.env_steps;
    if (pt.success_mean >= kReachSuccess) {
      const auto m = at_update(r, pt.update);
      const bool short_enough = m.length <= kLengthRatio * m.oracle;
      return {short_enough, "mean success " + pct(pt.success_mean) + " at " + std::to_string(pt.env_steps) +
                                " steps over " + std::to_string(r.runs.size()) + " seeds; successful length " +
                                h::fmt(m.length, 2) + " vs oracle " + h::fmt(m.oracle, 2) + " (ratio limit 1.5)"};
    }
  }
  std::string later = "never within " + std::to_string(kTpnLongBudget) + " steps";
  for (const auto& pt : r.mean) {
    if (pt.success_mean >= kReachSuccess) {
      const auto m = at_update(r, pt.update);
      later = "first at " + std::to_string(pt.env_steps) + " steps (successful length " + h::fmt(m.length, 2) +
              " vs oracle " + h::fmt(m.oracle, 2) + ")";
      break;
    }
  }
  return {false, "best mean success within " + std::to_string(kReachBudget) + " steps " + pct(best) + " at " +
                     std::to_string(best_steps) + " steps over " + std::to_string(r.runs.size()) + " seeds; 80% reached " +
                     later};
}

Verdict baseline_ordering(Pipeline& p) {
  const auto& tpn = p.tpn_reaching();
  const h::CurvePoint* cross = nullptr;
  for (const auto& pt : tpn.mean) {
    if (pt.success_mean > kReachSuccess) {
      cross = &pt;
      break;
    }
  }
  if (!cross) {
    return {false, "not evaluable: TPN mean success never exceeded 80% within " + std::to_string(kTpnLongBudget) + " steps"};
  }
  const auto& rec = p.recurrent_reaching(cross->env_steps);
  const auto& last = rec.mean.back();
  if (last.env_steps != cross->env_steps) {
    return {false, "recurrent curve ends at " + std::to_string(last.env_steps) + " steps, expected " +
                       std::to_string(cross->env_steps)};
  }
  double rec_best = 0.0;
  for (const auto& pt : rec.mean) rec_best = std::max(rec_best, pt.success_mean);
  return {last.success_mean < cross->success_mean,
          "at " + std::to_string(cross->env_steps) + " steps: TPN " + pct(cross->success_mean) + " vs recurrent " +
              pct(last.success_mean) + " (recurrent best along its curve " + pct(rec_best) + ")"};
}

Verdict active_pose(Pipeline& p) {
  const auto& r = p.tpn_active();
  const auto cfg = p.base();
  auto task_cfg = cfg;
  task_cfg.task = env::TaskKind::kActivePoseEstimation;
  const auto pool = h::make_pool(task_cfg);
  const ag::World world{task_cfg.task_config(), &pool.objects, pool.split.holdout};
  const auto perception = ag::Perception::learned(p.obsmodel().training.params, cfg.obsmodel);
  const auto random = ag::summarize(
      ag::evaluate_belief_policy(ag::random_policy(cfg.space.n), world, perception, kActiveEpisodes, cfg.eval_seed()));
  double learned = 0.0, worst = 1.0, length = 0.0;
  for (const auto& run : r.runs) {
    auto params = run.params;
    const auto s = ag::summarize(ag::evaluate_belief_policy(ag::learned_policy(params, cfg.agent.policy, true), world,
                                                            perception, kActiveEpisodes, cfg.eval_seed()));
    learned += s.success_rate;
    length += s.mean_length;
    worst = std::min(worst, s.success_rate);
  }
  learned /= static_cast<double>(r.runs.size());
  length /= static_cast<double>(r.runs.size());
  return {learned >= kActiveSuccess && learned >= random.success_rate,
          "learned policy correct MAP within horizon on " + pct(learned) + " of " + std::to_string(kActiveEpisodes) +
              " holdout episodes (mean over " + std::to_string(r.runs.size()) + " seeds, worst seed " + pct(worst) +
              ", mean length " + h::fmt(length, 2) + "); uniform-random policy " + pct(random.success_rate) +
              " (mean length " + h::fmt(random.mean_length, 2) + ") on the same episodes"};
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(TPOSE_CLI_PATH) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

Verdict determinism(const fs::path& root) {
  const auto dir = root / "determinism";
  fs::remove_all(dir);
  fs::create_directories(dir);
  auto cfg = nlohmann::json::parse(R"({
    "space": {"n": 2, "d": 5, "resolution": ["2mm", "2mm"]},
    "objects": {"count": 6, "holdout": 2},
    "obsmodel": {"epochs": 3},
    "agent": {"seeds": 3, "threads": 2, "recurrent": {"encoder": 32, "hidden": 32},
              "ppo": {"total_steps": 8192, "rollout_steps": 1024, "eval_episodes": 20, "eval_every": 2}},
    "eval_episodes": 50
  })");
  cfg["seed"] = kSeed;
  cfg["out"] = (dir / "run").string();
  std::ofstream(dir / "config.json") << cfg.dump(2);
  const std::string base = "--config " + (dir / "config.json").string() + " ";
  const std::vector<std::string> stages = {"gen",
                                           "train-obs",
                                           "train-agent",
                                           "--baseline recurrent train-agent",
                                           "--task active train-agent",
                                           "eval",
                                           "--baseline recurrent eval",
                                           "--task active eval",
                                           "filter-demo"};
  for (int pass = 0; pass < 2; ++pass) {
    for (const auto& s : stages) {
      if (run_cli(base + s) != 0) return {false, "command '" + s + "' failed"};
    }
    if (pass == 0) fs::rename(dir / "run", dir / "first");
  }
  std::size_t compared = 0, checkpoints = 0;
  std::vector<std::string> diffs;
  for (const auto& e : fs::recursive_directory_iterator(dir / "first")) {
    if (!e.is_regular_file()) continue;
    const auto rel = fs::relative(e.path(), dir / "first");
    const auto other = dir / "run" / rel;
    if (!fs::exists(other)) {
      diffs.push_back(rel.string() + " missing");
      continue;
    }
    if (rel.filename() == "manifest.json") {
      // Identical apart from wall-clock time.
      auto a = nlohmann::json::parse(slurp(e.path())), c = nlohmann::json::parse(slurp(other));
      a.erase("wall_clock_seconds");
      c.erase("wall_clock_seconds");
      if (a != c) diffs.push_back(rel.string());
    } else if (slurp(e.path()) != slurp(other)) {
      diffs.push_back(rel.string());
    }
    ++compared;
    if (rel.extension() == ".ckpt") ++checkpoints;
  }
  std::string detail = std::to_string(compared) + " files (" + std::to_string(checkpoints) +
                       " checkpoints) compared across two full pipeline runs";
  if (!diffs.empty()) detail += "; differing: " + diffs.front() + (diffs.size() > 1 ? " and others" : "");
  return {diffs.empty() && checkpoints > 0, detail};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria"};
  std::string work_dir = "acceptance-work";
  std::vector<int> only;
  app.add_option("--work-dir", work_dir, "Scratch directory for pipeline outputs");
  app.add_option("--only", only, "Criteria to run (default: all)")->delimiter(',');
  CLI11_PARSE(app, argc, argv);
  std::set<int> selected(only.begin(), only.end());
  if (selected.empty()) selected = {1, 2, 3, 4, 5, 6, 7, 8};

  const fs::path root = fs::absolute(work_dir);
  fs::create_directories(root);
  Pipeline pipeline(root);

  const std::vector<std::pair<std::string, std::function<Verdict()>>> criteria = {
      {"filter-oracle equivalence", filter_equivalence},
      {"gradient suite", gradients},
      {"observation-model accuracy", [&] { return obsmodel_accuracy(pipeline); }},
      {"filtering beats single-shot", [&] { return filtering_beats_single_shot(pipeline); }},
      {"reaching learnability", [&] { return reaching(pipeline); }},
      {"baseline ordering", [&] { return baseline_ordering(pipeline); }},
      {"active pose estimation", [&] { return active_pose(pipeline); }},
      {"determinism", [&] { return determinism(root); }},
  };

  std::vector<std::string> lines;
  bool all = true;
  nlohmann::json report = nlohmann::json::array();
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i + 1);
    if (!selected.count(id)) continue;
    Verdict v;
    const auto t = Clock::now();
    try {
      v = criteria[i].second();
    } catch (const std::exception& e) {
      v = {false, std::string("error: ") + e.what()};
    }
    const std::string line =
        std::string(v.pass ? "PASS" : "FAIL") + " [" + std::to_string(id) + "] " + criteria[i].first + ": " + v.detail;
    std::cout << line << "  (" << h::fmt(since(t), 1) << " s)" << std::endl;
    lines.push_back(line);
    report.push_back({{"criterion", id}, {"name", criteria[i].first}, {"pass", v.pass}, {"detail", v.detail}});
    all = all && v.pass;
  }
  std::ofstream(root / "acceptance.json") << report.dump(2) << "\n";
  std::cout << "\nsummary\n";
  for (const auto& l : lines) std::cout << l << "\n";
  return all ? 0 : 1;
}
