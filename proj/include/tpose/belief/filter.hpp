#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include <nlohmann/json.hpp>

#include "tpose/belief/state_space.hpp"

namespace tpose::belief {

inline constexpr double kDivergenceFloor = 1e-300;

/// Rows that collapsed to (near) zero mass during an observation update and were reset to uniform.
struct FilterEvents {
  std::size_t resets = 0;
  std::vector<std::size_t> reset_rows;
};

inline FactoredBelief uniform_belief(const StateSpaceSpec& spec) {
  spec.validate();
  return FactoredBelief(spec.n, spec.d, 1.0 / static_cast<double>(spec.d));
}

/// Deterministic shift of every row by its delta; mass pushed past an edge piles up on the edge bin.
inline FactoredBelief predict(const FactoredBelief& bel, const DeltaAction& action) {
  if (action.size() != bel.n) {
    throw ShapeError("action has " + std::to_string(action.size()) + " dims, belief has " + std::to_string(bel.n));
  }
  FactoredBelief out(bel.n, bel.d, 0.0);
  for (std::size_t i = 0; i < bel.n; ++i) {
    const auto src = bel.row(i);
    auto dst = out.row(i);
    for (std::size_t k = 0; k < bel.d; ++k) {
      dst[static_cast<std::size_t>(clamp_bin(static_cast<int>(k) + action[i], bel.d))] += src[k];
    }
  }
  return out;
}

/// Element-wise product with the likelihood, renormalized per row.
inline FactoredBelief update(const FactoredBelief& bel, const Likelihood& likelihood, FilterEvents* events = nullptr) {
  if (likelihood.n != bel.n || likelihood.d != bel.d) {
    throw ShapeError("likelihood is " + std::to_string(likelihood.n) + "x" + std::to_string(likelihood.d) +
                     ", belief is " + std::to_string(bel.n) + "x" + std::to_string(bel.d));
  }
  FactoredBelief out(bel.n, bel.d);
  for (std::size_t i = 0; i < bel.n; ++i) {
    const auto b = bel.row(i);
    const auto l = likelihood.row(i);
    auto o = out.row(i);
    double z = 0.0;
    for (std::size_t j = 0; j < bel.d; ++j) {
      if (!(l[j] >= 0.0) || !std::isfinite(l[j])) throw NumericError("likelihood entries must be finite and non-negative");
      o[j] = b[j] * l[j];
      z += o[j];
    }
    if (z < kDivergenceFloor) {
      std::fill(o.begin(), o.end(), 1.0 / static_cast<double>(bel.d));
      if (events) {
        ++events->resets;
        events->reset_rows.push_back(i);
      }
      continue;
    }
    for (auto& v : o) v /= z;
  }
  return out;
}

/// One filter step: shift by the action, then fold in the new likelihood.
inline FactoredBelief step(const FactoredBelief& bel, const DeltaAction& action, const Likelihood& likelihood,
                           FilterEvents* events = nullptr) {
  return update(predict(bel, action), likelihood, events);
}

/// Per-dimension argmax; ties go to the lowest index.
inline FactoredState map_estimate(const FactorMatrix& bel) {
  FactoredState s;
  s.indices.resize(bel.n);
  for (std::size_t i = 0; i < bel.n; ++i) {
    const auto r = bel.row(i);
    std::size_t best = 0;
    for (std::size_t j = 1; j < bel.d; ++j) {
      if (r[j] > r[best]) best = j;
    }
    s[i] = static_cast<int>(best);
  }
  return s;
}

/// Shannon entropy (nats) of each row.
inline std::vector<double> belief_entropy(const FactorMatrix& bel) {
  std::vector<double> h(bel.n, 0.0);
  for (std::size_t i = 0; i < bel.n; ++i) {
    for (double p : bel.row(i)) {
      if (p > 0.0) h[i] -= p * std::log(p);
    }
  }
  return h;
}

/// Largest |row sum - 1| over all rows.
inline double normalization_error(const FactorMatrix& bel) {
  double worst = 0.0;
  for (std::size_t i = 0; i < bel.n; ++i) {
    double s = 0.0;
    for (double p : bel.row(i)) s += p;
    worst = std::max(worst, std::abs(s - 1.0));
  }
  return worst;
}

inline FactoredBelief one_hot_belief(const StateSpaceSpec& spec, const FactoredState& s) {
  s.validate(spec);
  FactoredBelief b(spec.n, spec.d, 0.0);
  for (std::size_t i = 0; i < spec.n; ++i) b.at(i, static_cast<std::size_t>(s[i])) = 1.0;
  return b;
}

inline nlohmann::json to_json(const FactorMatrix& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (std::size_t i = 0; i < m.n; ++i) {
    const auto r = m.row(i);
    rows.push_back(std::vector<double>(r.begin(), r.end()));
  }
  return {{"n", m.n}, {"d", m.d}, {"rows", rows}};
}

inline FactoredBelief belief_from_json(const nlohmann::json& j) {
  const std::size_t n = j.at("n").get<std::size_t>();
  const std::size_t d = j.at("d").get<std::size_t>();
  FactoredBelief b(n, d);
  const auto& rows = j.at("rows");
  if (rows.size() != n) throw ShapeError("belief JSON row count mismatch");
  for (std::size_t i = 0; i < n; ++i) {
    const auto r = rows[i].get<std::vector<double>>();
    if (r.size() != d) throw ShapeError("belief JSON row length mismatch");
    std::copy(r.begin(), r.end(), b.row(i).begin());
  }
  return b;
}

}  // namespace tpose::belief
