#pragma once

#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "tpose/env/dataset.hpp"
#include "tpose/obsmodel/model.hpp"

namespace tpose::obs {

/// accuracy[i][k-1]: fraction of examples whose true bin in dimension i ranks within the top k.
struct TopkTable {
  std::size_t n = 0;
  std::size_t k_max = 0;
  std::size_t examples = 0;
  std::vector<std::vector<double>> accuracy;

  double mean_at(std::size_t k) const {
    double s = 0.0;
    for (const auto& row : accuracy) s += row.at(k - 1);
    return s / static_cast<double>(n);
  }
};

/// Rank of the true bin: bins with higher probability, plus equal ones at lower index, come first.
inline std::size_t true_bin_rank(std::span<const double> row, std::size_t truth) {
  std::size_t rank = 0;
  for (std::size_t j = 0; j < row.size(); ++j) {
    if (row[j] > row[truth] || (row[j] == row[truth] && j < truth)) ++rank;
  }
  return rank;
}

class TopkAccumulator {
 public:
  TopkAccumulator(std::size_t n, std::size_t k_max) : n_(n), k_max_(k_max), hits_(n, std::vector<std::size_t>(k_max, 0)) {}

  void add(const belief::FactorMatrix& probs, const belief::FactoredState& truth) {
    for (std::size_t i = 0; i < n_; ++i) {
      const std::size_t rank = true_bin_rank(probs.row(i), static_cast<std::size_t>(truth[i]));
      for (std::size_t k = rank; k < k_max_; ++k) ++hits_[i][k];
    }
    ++count_;
  }

  TopkTable table() const {
    TopkTable t{n_, k_max_, count_, std::vector<std::vector<double>>(n_, std::vector<double>(k_max_, 0.0))};
    for (std::size_t i = 0; i < n_; ++i) {
      for (std::size_t k = 0; k < k_max_; ++k) {
        t.accuracy[i][k] = count_ ? static_cast<double>(hits_[i][k]) / static_cast<double>(count_) : 0.0;
      }
    }
    return t;
  }

 private:
  std::size_t n_, k_max_;
  std::size_t count_ = 0;
  std::vector<std::vector<std::size_t>> hits_;
};

/// Top-1..top-k accuracy of fused two-finger likelihoods on every record of `data`.
inline TopkTable evaluate_topk(const nc::ModelParameters& params, const ObsModelConfig& cfg, const env::Dataset& data,
                               std::size_t k_max = 5) {
  if (k_max < 1 || k_max > cfg.d) throw ConfigError("top-k needs 1 <= k <= d");
  TopkAccumulator acc(cfg.n, k_max);
  const std::size_t chunk = 1024;
  const std::size_t w = cfg.output_dim();
  std::vector<double> x;
  for (std::size_t begin = 0; begin < data.size(); begin += chunk) {
    const std::size_t end = std::min(data.size(), begin + chunk);
    const std::size_t b = end - begin;
    x.resize(2 * b * data.m);
    for (std::size_t r = begin; r < end; ++r) {
      std::copy_n(data.left_row(r), data.m, x.begin() + static_cast<std::ptrdiff_t>((r - begin) * data.m));
      std::copy_n(data.right_row(r), data.m, x.begin() + static_cast<std::ptrdiff_t>((b + r - begin) * data.m));
    }
    const auto probs = predict_batch(params, cfg, x, 2 * b);
    for (std::size_t r = 0; r < b; ++r) {
      belief::FactorMatrix l(cfg.n, cfg.d, std::vector<double>(probs.data() + r * w, probs.data() + (r + 1) * w));
      belief::FactorMatrix rr(cfg.n, cfg.d, std::vector<double>(probs.data() + (b + r) * w, probs.data() + (b + r + 1) * w));
      acc.add(fuse_fingers(l, rr, cfg.fusion), data.state(begin + r));
    }
  }
  return acc.table();
}

inline std::string dimension_name(std::size_t i, std::size_t n) {
  static const char* kBottle[] = {"position_y", "position_z", "rotation_x", "rotation_y"};
  if (n == 4) return kBottle[i];
  return "dim" + std::to_string(i);
}

inline constexpr const char* kTopkSchema = "# tpose-topk v1";

/// CSV rows (split, dimension, k, accuracy); accuracy in percent with two decimals.
inline void write_topk_csv(std::ostream& out, const std::vector<std::pair<std::string, TopkTable>>& tables) {
  out << kTopkSchema << "\n" << "split,dimension,k,accuracy\n";
  for (const auto& [split, t] : tables) {
    for (std::size_t i = 0; i < t.n; ++i) {
      for (std::size_t k = 1; k <= t.k_max; ++k) {
        char buf[64];
        std::snprintf(buf, sizeof(buf), "%.2f", 100.0 * t.accuracy[i][k - 1]);
        out << split << "," << dimension_name(i, t.n) << "," << k << "," << buf << "\n";
      }
    }
  }
}

/// Human-readable table, one section per split.
inline std::string format_topk(const std::string& split, const TopkTable& t) {
  std::ostringstream os;
  os << split << " (" << t.examples << " examples)\n" << "state        ";
  for (std::size_t k = 1; k <= t.k_max; ++k) os << " top-" << k << " ";
  os << "\n";
  for (std::size_t i = 0; i < t.n; ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "%-12s", dimension_name(i, t.n).c_str());
    os << name;
    for (std::size_t k = 1; k <= t.k_max; ++k) {
      char buf[32];
      std::snprintf(buf, sizeof(buf), " %6.2f", 100.0 * t.accuracy[i][k - 1]);
      os << buf;
    }
    os << "\n";
  }
  return os.str();
}

}  // namespace tpose::obs
