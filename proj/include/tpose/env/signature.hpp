#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "tpose/belief/state_space.hpp"
#include "tpose/rng.hpp"

namespace tpose::env {

/// Generator parameters for procedural object signatures.
///
/// Every object is a jittered copy of one shared template, so a model trained on
/// some objects can transfer to unseen ones drawn from the same family.
struct SignatureParams {
  std::size_t feature_dim = 32;    ///< m
  std::size_t components = 8;      ///< F cosine components per finger
  double f_max = 1.0;              ///< max |frequency vector| in cycles per unit of normalized state
  double f_min = 0.6;              ///< min |frequency vector| (clipped to f_max)
  double coupling = 0.0;           ///< cross-axis mixing of each component's frequency direction
  double amplitude_jitter = 0.10;  ///< per-object multiplicative amplitude noise (std)
  double phase_jitter = 0.15;      ///< per-object phase noise (std, radians)
  double frequency_jitter = 0.03;  ///< per-object frequency noise (std, per axis)

  friend bool operator==(const SignatureParams&, const SignatureParams&) = default;
};

inline void to_json(nlohmann::json& j, const SignatureParams& p) {
  j = {{"feature_dim", p.feature_dim},           {"components", p.components},
       {"f_max", p.f_max},                       {"f_min", p.f_min},                       {"coupling", p.coupling},
       {"amplitude_jitter", p.amplitude_jitter}, {"phase_jitter", p.phase_jitter},
       {"frequency_jitter", p.frequency_jitter}};
}

inline void from_json(const nlohmann::json& j, SignatureParams& p) {
  SignatureParams def;
  p.feature_dim = j.value("feature_dim", def.feature_dim);
  p.components = j.value("components", def.components);
  p.f_max = j.value("f_max", def.f_max);
  p.f_min = j.value("f_min", def.f_min);
  p.coupling = j.value("coupling", def.coupling);
  p.amplitude_jitter = j.value("amplitude_jitter", def.amplitude_jitter);
  p.phase_jitter = j.value("phase_jitter", def.phase_jitter);
  p.frequency_jitter = j.value("frequency_jitter", def.frequency_jitter);
}

enum class Finger : std::size_t { kLeft = 0, kRight = 1 };

/// One cosine component: a[k] * cos(2*pi * <omega, x> + phase[k]) for feature k.
struct CosineComponent {
  std::vector<double> frequency;  ///< n
  std::vector<double> amplitude;  ///< m
  std::vector<double> phase;      ///< m
};

/// Procedural stand-in for a rendered object: maps a normalized pose to two finger feature vectors.
struct ObjectSignature {
  std::uint32_t object_id = 0;
  std::size_t n = 0;
  std::size_t m = 0;
  std::array<std::vector<CosineComponent>, 2> fingers;

  /// Expected features of one finger at normalized pose x in [0,1]^n.
  void features(Finger f, std::span<const double> x, std::span<double> out) const {
    std::fill(out.begin(), out.end(), 0.0);
    for (const auto& c : fingers[static_cast<std::size_t>(f)]) {
      double proj = 0.0;
      for (std::size_t i = 0; i < n; ++i) proj += c.frequency[i] * x[i];
      const double theta = 2.0 * std::numbers::pi * proj;
      for (std::size_t k = 0; k < m; ++k) out[k] += c.amplitude[k] * std::cos(theta + c.phase[k]);
    }
  }

  /// Sum of |a| for the finger: every feature lies within +/- this bound.
  double amplitude_bound(Finger f) const {
    double worst = 0.0;
    for (std::size_t k = 0; k < m; ++k) {
      double s = 0.0;
      for (const auto& c : fingers[static_cast<std::size_t>(f)]) s += std::abs(c.amplitude[k]);
      worst = std::max(worst, s);
    }
    return worst;
  }
};

/// Normalized coordinates index / (d - 1).
inline std::vector<double> normalized_pose(const belief::FactoredState& s, const belief::StateSpaceSpec& spec) {
  std::vector<double> x(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) x[i] = static_cast<double>(s[i]) / static_cast<double>(spec.d - 1);
  return x;
}

namespace detail {

/// Direction = unit axis `axis` plus Gaussian cross-coupling, rescaled to a magnitude in [f_min, f_max].
inline std::vector<double> random_frequency(std::size_t n, std::size_t axis, double coupling, double f_min,
                                            double f_max, Rng& rng) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> mag(std::min(f_min, f_max), f_max);
  std::vector<double> w(n);
  double norm = 0.0;
  do {
    norm = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      w[i] = (i == axis ? 1.0 : 0.0) + coupling * gauss(rng);
      norm += w[i] * w[i];
    }
  } while (norm == 0.0);
  const double scale = mag(rng) / std::sqrt(norm);
  for (auto& v : w) v *= scale;
  return w;
}

inline void clip_norm(std::vector<double>& w, double limit) {
  double norm = 0.0;
  for (double v : w) norm += v * v;
  norm = std::sqrt(norm);
  if (norm > limit) {
    for (auto& v : w) v = norm > 0.0 ? v * limit / norm : 0.0;
  }
}

}  // namespace detail

/// The shared family template for one generator seed.
inline std::array<std::vector<CosineComponent>, 2> signature_template(std::size_t n, const SignatureParams& p,
                                                                      std::uint64_t seed) {
  Rng rng = make_rng(seed, 0);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  std::uniform_real_distribution<double> angle(0.0, 2.0 * std::numbers::pi);
  const double amp_scale = 1.0 / static_cast<double>(std::max<std::size_t>(p.components, 1));
  std::array<std::vector<CosineComponent>, 2> fingers;
  for (auto& comps : fingers) {
    comps.resize(p.components);
    for (std::size_t ci = 0; ci < comps.size(); ++ci) {
      auto& c = comps[ci];
      c.frequency = detail::random_frequency(n, ci % n, p.coupling, p.f_min, p.f_max, rng);
      c.amplitude.resize(p.feature_dim);
      c.phase.resize(p.feature_dim);
      for (auto& a : c.amplitude) a = 2.0 * amp_scale * unit(rng);
      for (auto& ph : c.phase) ph = angle(rng);
    }
  }
  return fingers;
}

/// Objects 0..count-1, each a seeded perturbation of the template. Deterministic in (count, seed, params).
inline std::vector<ObjectSignature> generate_objects(std::size_t count, std::uint64_t seed, std::size_t n,
                                                     const SignatureParams& p) {
  if (count < 1) throw ConfigError("generate_objects needs count >= 1");
  if (p.feature_dim < 1) throw ConfigError("signature feature_dim must be >= 1");
  if (p.f_max < 0.0) throw ConfigError("signature f_max must be >= 0");
  const auto base = signature_template(n, p, seed);
  std::vector<ObjectSignature> objects;
  objects.reserve(count);
  for (std::size_t id = 0; id < count; ++id) {
    Rng rng = make_rng(seed, 1 + id);
    std::normal_distribution<double> gauss(0.0, 1.0);
    ObjectSignature obj{static_cast<std::uint32_t>(id), n, p.feature_dim, base};
    for (auto& comps : obj.fingers) {
      for (auto& c : comps) {
        for (auto& w : c.frequency) w += p.frequency_jitter * gauss(rng);
        detail::clip_norm(c.frequency, p.f_max);
        for (auto& a : c.amplitude) a *= 1.0 + p.amplitude_jitter * gauss(rng);
        for (auto& ph : c.phase) ph += p.phase_jitter * gauss(rng);
      }
    }
    objects.push_back(std::move(obj));
  }
  return objects;
}

/// Object ids split into a training pool and a disjoint holdout pool (the last `holdout` ids).
struct ObjectSplit {
  std::vector<std::uint32_t> train;
  std::vector<std::uint32_t> holdout;
};

inline ObjectSplit split_objects(std::size_t count, std::size_t holdout) {
  if (holdout >= count) throw ConfigError("holdout pool must leave at least one training object");
  ObjectSplit s;
  for (std::size_t i = 0; i < count; ++i) {
    (i + holdout < count ? s.train : s.holdout).push_back(static_cast<std::uint32_t>(i));
  }
  return s;
}

/// Two noisy finger readings taken at the same pose.
struct TactileObservation {
  std::vector<double> left;
  std::vector<double> right;
  double noise_sigma = 0.0;
};

inline TactileObservation observe(const ObjectSignature& obj, const belief::FactoredState& s,
                                  const belief::StateSpaceSpec& spec, double noise_sigma, Rng& rng) {
  s.validate(spec);
  const auto x = normalized_pose(s, spec);
  TactileObservation o{std::vector<double>(obj.m), std::vector<double>(obj.m), noise_sigma};
  obj.features(Finger::kLeft, x, o.left);
  obj.features(Finger::kRight, x, o.right);
  if (noise_sigma > 0.0) {
    std::normal_distribution<double> noise(0.0, noise_sigma);
    for (auto& v : o.left) v += noise(rng);
    for (auto& v : o.right) v += noise(rng);
  }
  return o;
}

/// Pools are stored as (count, seed, n, params); signatures are regenerated on load.
inline nlohmann::json pool_to_json(std::size_t count, std::size_t holdout, std::uint64_t seed, std::size_t n,
                                   const SignatureParams& p) {
  const auto split = split_objects(count, holdout);
  return {{"count", count}, {"holdout", holdout}, {"seed", seed},           {"n", n},
          {"params", p},    {"train_ids", split.train}, {"holdout_ids", split.holdout}};
}

}  // namespace tpose::env
