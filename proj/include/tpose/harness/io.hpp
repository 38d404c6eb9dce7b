#pragma once

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tpose/agent/train.hpp"
#include "tpose/harness/config.hpp"

namespace tpose::harness {

namespace fs = std::filesystem;

inline constexpr const char* kToolVersion = "0.1.0";
inline constexpr const char* kCurveSchema = "# tpose-curve v1";
inline constexpr const char* kCurveMeanSchema = "# tpose-curve-mean v1";
inline constexpr const char* kSeriesSchema = "# tpose-eval-series v1";

/// Write-temp-then-rename so readers never see a half-written file.
inline void write_file_atomic(const fs::path& path, const std::string& bytes) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("short write to " + tmp.string());
  }
  fs::rename(tmp, path);
}

inline void write_json_atomic(const fs::path& path, const nlohmann::json& j) { write_file_atomic(path, j.dump(2) + "\n"); }

inline std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline std::string file_checksum(const fs::path& path) { return hex64(fnv1a(read_file(path))); }

/// Creates `dir` for a stage. An existing non-empty directory is an error unless `force`,
/// in which case its previous contents are removed first.
inline void prepare_output_dir(const fs::path& dir, bool force) {
  if (fs::exists(dir)) {
    if (!fs::is_directory(dir)) throw ConfigError(dir.string() + " exists and is not a directory");
    if (!fs::is_empty(dir)) {
      if (!force) throw ConfigError("output directory " + dir.string() + " already exists (use --force to overwrite)");
      fs::remove_all(dir);
    }
  }
  fs::create_directories(dir);
}

/// Provenance record for one stage: what ran, with which config, and what it produced.
struct RunManifest {
  std::string stage;
  std::string config_hash;
  double wall_clock_seconds = 0.0;
  std::map<std::string, std::string> inputs;  ///< relative path -> checksum of files consumed
  std::map<std::string, std::string> files;   ///< relative path -> checksum of files produced

  nlohmann::json to_json() const {
    return {{"tool", "tpose"},
            {"version", kToolVersion},
            {"checkpoint_format", nc::kCheckpointVersion},
            {"stage", stage},
            {"config_hash", config_hash},
            {"wall_clock_seconds", wall_clock_seconds},
            {"inputs", inputs},
            {"files", files}};
  }
};

/// Collects output files of one stage and writes config.json + manifest.json next to them.
class StageWriter {
 public:
  StageWriter(fs::path dir, std::string stage, const ExperimentConfig& cfg)
      : dir_(std::move(dir)), start_(std::chrono::steady_clock::now()) {
    manifest_.stage = std::move(stage);
    manifest_.config_hash = config_hash(cfg);
    write_json_atomic(dir_ / "config.json", harness::to_json(cfg));
  }

  const fs::path& dir() const { return dir_; }

  void record_input(const fs::path& file, const fs::path& base) {
    manifest_.inputs[fs::relative(file, base).generic_string()] = file_checksum(file);
  }

  /// Registers a file that already exists under dir().
  void record(const std::string& relative) { manifest_.files[relative] = file_checksum(dir_ / relative); }

  void write(const std::string& relative, const std::string& bytes) {
    fs::create_directories((dir_ / relative).parent_path());
    write_file_atomic(dir_ / relative, bytes);
    record(relative);
  }

  void write_json(const std::string& relative, const nlohmann::json& j) { write(relative, j.dump(2) + "\n"); }

  void checkpoint(const std::string& relative, const nc::ModelParameters& params) {
    fs::create_directories((dir_ / relative).parent_path());
    nc::save_checkpoint(params, dir_ / relative);
    record(relative);
  }

  RunManifest finish() {
    manifest_.wall_clock_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    write_json_atomic(dir_ / "manifest.json", manifest_.to_json());
    return manifest_;
  }

 private:
  fs::path dir_;
  std::chrono::steady_clock::time_point start_;
  RunManifest manifest_;
};

inline std::string fmt(double v, int digits = 6) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
  return buf;
}

/// One row per update; evaluation columns are empty for updates that were not evaluated.
inline std::string curve_csv(const std::vector<agent::UpdateMetrics>& curve, std::size_t eval_every) {
  std::ostringstream os;
  os << kCurveSchema << " eval_schedule=every_" << eval_every << "_updates\n"
     << "update,env_steps,evaluated,success_rate,mean_length,mean_success_length,mean_success_oracle_length,"
        "train_episodes,train_success_rate,policy_loss,value_loss,entropy,approx_kl,clip_fraction\n";
  for (const auto& m : curve) {
    os << m.update << "," << m.env_steps << "," << (m.evaluated ? 1 : 0) << ",";
    if (m.evaluated) {
      os << fmt(m.eval.success_rate, 4) << "," << fmt(m.eval.mean_length, 4) << "," << fmt(m.eval.mean_success_length, 4)
         << "," << fmt(m.eval.mean_success_oracle_length, 4);
    } else {
      os << ",,,";
    }
    os << "," << m.train_episodes << "," << fmt(m.train_success_rate, 4) << "," << fmt(m.policy_loss) << ","
       << fmt(m.value_loss) << "," << fmt(m.entropy) << "," << fmt(m.approx_kl) << "," << fmt(m.clip_fraction) << "\n";
  }
  return os.str();
}

/// Across-seed mean and population std of success rate and episode length at each evaluated update.
struct CurvePoint {
  std::size_t update = 0;
  std::size_t env_steps = 0;
  double success_mean = 0.0, success_std = 0.0;
  double length_mean = 0.0, length_std = 0.0;
};

inline std::vector<CurvePoint> mean_curve(const std::vector<std::vector<agent::UpdateMetrics>>& runs) {
  std::vector<CurvePoint> out;
  if (runs.empty()) return out;
  for (std::size_t i = 0; i < runs.front().size(); ++i) {
    if (!runs.front()[i].evaluated) continue;
    CurvePoint p{runs.front()[i].update, runs.front()[i].env_steps};
    std::vector<double> s, l;
    for (const auto& r : runs) {
      if (i >= r.size() || !r[i].evaluated) throw StateError("seed curves have different evaluation schedules");
      s.push_back(r[i].eval.success_rate);
      l.push_back(r[i].eval.mean_length);
    }
    auto stats = [](const std::vector<double>& v, double& mean, double& sd) {
      mean = 0.0;
      for (double x : v) mean += x;
      mean /= static_cast<double>(v.size());
      double var = 0.0;
      for (double x : v) var += (x - mean) * (x - mean);
      sd = std::sqrt(var / static_cast<double>(v.size()));
    };
    stats(s, p.success_mean, p.success_std);
    stats(l, p.length_mean, p.length_std);
    out.push_back(p);
  }
  return out;
}

inline std::string mean_curve_csv(const std::vector<CurvePoint>& pts, std::size_t seeds) {
  std::ostringstream os;
  os << kCurveMeanSchema << " seeds=" << seeds << "\n"
     << "update,env_steps,success_mean,success_std,length_mean,length_std\n";
  for (const auto& p : pts) {
    os << p.update << "," << p.env_steps << "," << fmt(p.success_mean, 4) << "," << fmt(p.success_std, 4) << ","
       << fmt(p.length_mean, 4) << "," << fmt(p.length_std, 4) << "\n";
  }
  return os.str();
}

inline nlohmann::json summary_json(const agent::EvalSummary& s) {
  return {{"episodes", s.episodes},
          {"success_rate", s.success_rate},
          {"mean_length", s.mean_length},
          {"mean_success_length", s.mean_success_length},
          {"mean_success_oracle_length", s.mean_success_oracle_length},
          {"map_accuracy_by_step", s.map_accuracy_by_step},
          {"entropy_by_step", s.entropy_by_step},
          {"episodes_by_step", s.episodes_by_step}};
}

/// Filter accuracy and entropy against step index (step 0 is the first observation).
inline std::string series_csv(const agent::EvalSummary& s) {
  std::ostringstream os;
  os << kSeriesSchema << "\n" << "step,episodes,map_accuracy,mean_entropy\n";
  for (std::size_t t = 0; t < s.map_accuracy_by_step.size(); ++t) {
    os << t << "," << s.episodes_by_step[t] << "," << fmt(s.map_accuracy_by_step[t]) << ","
       << fmt(s.entropy_by_step[t]) << "\n";
  }
  return os.str();
}

}  // namespace tpose::harness
