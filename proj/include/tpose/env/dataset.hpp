#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tpose/belief/state_space.hpp"
#include "tpose/env/signature.hpp"
#include "tpose/rng.hpp"

namespace tpose::env {

/// Labeled (object, pose, left features, right features) records in flat arrays.
struct Dataset {
  belief::StateSpaceSpec spec;
  std::size_t m = 0;
  std::vector<std::uint32_t> object_ids;
  std::vector<std::uint8_t> states;  ///< size() * n
  std::vector<float> left;           ///< size() * m
  std::vector<float> right;          ///< size() * m

  std::size_t size() const { return object_ids.size(); }
  bool empty() const { return object_ids.empty(); }

  belief::FactoredState state(std::size_t r) const {
    belief::FactoredState s;
    s.indices.assign(states.begin() + static_cast<std::ptrdiff_t>(r * spec.n),
                     states.begin() + static_cast<std::ptrdiff_t>((r + 1) * spec.n));
    return s;
  }
  const float* left_row(std::size_t r) const { return left.data() + r * m; }
  const float* right_row(std::size_t r) const { return right.data() + r * m; }

  /// n x d one-hot label rows, appended to `out`.
  void label(std::size_t r, std::vector<double>& out) const {
    const std::size_t base = out.size();
    out.resize(base + spec.n * spec.d, 0.0);
    for (std::size_t i = 0; i < spec.n; ++i) out[base + i * spec.d + states[r * spec.n + i]] = 1.0;
  }

  void push(std::uint32_t object_id, const belief::FactoredState& s, const std::vector<double>& l,
            const std::vector<double>& rr) {
    object_ids.push_back(object_id);
    for (int v : s.indices) states.push_back(static_cast<std::uint8_t>(v));
    for (double v : l) left.push_back(static_cast<float>(v));
    for (double v : rr) right.push_back(static_cast<float>(v));
  }

  void append(const Dataset& other, std::size_t r) {
    object_ids.push_back(other.object_ids[r]);
    states.insert(states.end(), other.states.begin() + static_cast<std::ptrdiff_t>(r * spec.n),
                  other.states.begin() + static_cast<std::ptrdiff_t>((r + 1) * spec.n));
    left.insert(left.end(), other.left_row(r), other.left_row(r) + m);
    right.insert(right.end(), other.right_row(r), other.right_row(r) + m);
  }

  Dataset like() const {
    Dataset d;
    d.spec = spec;
    d.m = m;
    return d;
  }
};

struct DatasetParams {
  std::size_t samples_per_state = 1;  ///< noisy draws per (object, state)
  bool include_noiseless = true;      ///< also emit the exact signature per (object, state)
  double noise_sigma = 0.1;
  std::uint64_t seed = 0;

  friend bool operator==(const DatasetParams&, const DatasetParams&) = default;
};

/// Decodes a flat index into a pose (first dimension varies slowest).
inline belief::FactoredState state_from_index(std::size_t index, const belief::StateSpaceSpec& spec) {
  belief::FactoredState s;
  s.indices.resize(spec.n);
  for (std::size_t i = spec.n; i-- > 0;) {
    s[i] = static_cast<int>(index % spec.d);
    index /= spec.d;
  }
  return s;
}

inline std::size_t state_count(const belief::StateSpaceSpec& spec) {
  std::size_t c = 1;
  for (std::size_t i = 0; i < spec.n; ++i) c *= spec.d;
  return c;
}

/// Places the gripper in every pose of every object and records the finger readings.
inline Dataset build_dataset(const std::vector<ObjectSignature>& objects, const std::vector<std::uint32_t>& ids,
                             const belief::StateSpaceSpec& spec, const DatasetParams& p) {
  if (ids.empty()) throw ConfigError("build_dataset needs at least one object");
  spec.validate();
  Dataset ds;
  ds.spec = spec;
  ds.m = objects.at(ids.front()).m;
  const std::size_t per_state = p.samples_per_state + (p.include_noiseless ? 1 : 0);
  const std::size_t total = ids.size() * state_count(spec) * per_state;
  ds.object_ids.reserve(total);
  ds.states.reserve(total * spec.n);
  ds.left.reserve(total * ds.m);
  ds.right.reserve(total * ds.m);
  for (auto id : ids) {
    const auto& obj = objects.at(id);
    Rng rng = make_rng(p.seed, 0x5EED0000ULL + id);
    for (std::size_t k = 0; k < state_count(spec); ++k) {
      const auto s = state_from_index(k, spec);
      if (p.include_noiseless) {
        const auto o = observe(obj, s, spec, 0.0, rng);
        ds.push(obj.object_id, s, o.left, o.right);
      }
      for (std::size_t r = 0; r < p.samples_per_state; ++r) {
        const auto o = observe(obj, s, spec, p.noise_sigma, rng);
        ds.push(obj.object_id, s, o.left, o.right);
      }
    }
  }
  return ds;
}

struct DatasetSplit {
  Dataset train;
  Dataset validation;
};

/// Stratified split: each object contributes its share of the validation set, and the
/// total validation size is round(fraction * N) (largest-remainder apportionment).
inline DatasetSplit split_dataset(const Dataset& ds, double validation_fraction, std::uint64_t seed) {
  if (validation_fraction < 0.0 || validation_fraction >= 1.0) throw ConfigError("validation fraction must be in [0, 1)");
  std::vector<std::uint32_t> order;  // distinct object ids in first-seen order
  std::vector<std::vector<std::size_t>> rows;
  for (std::size_t r = 0; r < ds.size(); ++r) {
    const auto id = ds.object_ids[r];
    auto it = std::find(order.begin(), order.end(), id);
    std::size_t k = static_cast<std::size_t>(it - order.begin());
    if (it == order.end()) {
      order.push_back(id);
      rows.emplace_back();
    }
    rows[k].push_back(r);
  }
  const auto target = static_cast<std::size_t>(std::llround(validation_fraction * static_cast<double>(ds.size())));
  std::vector<std::size_t> quota(order.size());
  std::vector<std::pair<double, std::size_t>> remainders;
  std::size_t assigned = 0;
  for (std::size_t k = 0; k < order.size(); ++k) {
    const double exact = validation_fraction * static_cast<double>(rows[k].size());
    quota[k] = static_cast<std::size_t>(std::floor(exact));
    assigned += quota[k];
    remainders.emplace_back(-(exact - std::floor(exact)), k);
  }
  std::sort(remainders.begin(), remainders.end());
  for (std::size_t i = 0; assigned < target && i < remainders.size(); ++i, ++assigned) ++quota[remainders[i].second];

  std::vector<char> is_validation(ds.size(), 0);
  for (std::size_t k = 0; k < order.size(); ++k) {
    Rng rng = make_rng(seed, 0x5B117ULL + order[k]);
    auto idx = rows[k];
    std::shuffle(idx.begin(), idx.end(), rng);
    for (std::size_t i = 0; i < quota[k]; ++i) is_validation[idx[i]] = 1;
  }
  DatasetSplit split{ds.like(), ds.like()};
  for (std::size_t r = 0; r < ds.size(); ++r) (is_validation[r] ? split.validation : split.train).append(ds, r);
  return split;
}

// ---------------------------------------------------------------------------
// Binary record file: per record
//   object_id u32 | state u8[n] | left f32[m] | right f32[m]     (little-endian)
// Layout parameters (n, d, m, count) live in the JSON sidecar.
// ---------------------------------------------------------------------------

namespace detail {

template <typename T>
void write_le(std::ostream& out, T v) {
  unsigned char b[sizeof(T)];
  std::memcpy(b, &v, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(T));
  out.write(reinterpret_cast<const char*>(b), sizeof(T));
}

template <typename T>
T from_le(const char* src) {
  unsigned char b[sizeof(T)];
  std::memcpy(b, src, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(T));
  T v;
  std::memcpy(&v, b, sizeof(T));
  return v;
}

}  // namespace detail

inline std::size_t record_bytes(const belief::StateSpaceSpec& spec, std::size_t m) { return 4 + spec.n + 8 * m; }

inline void write_records(const Dataset& ds, const std::filesystem::path& path) {
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp);
    for (std::size_t r = 0; r < ds.size(); ++r) {
      detail::write_le<std::uint32_t>(out, ds.object_ids[r]);
      out.write(reinterpret_cast<const char*>(ds.states.data() + r * ds.spec.n), static_cast<std::streamsize>(ds.spec.n));
      for (std::size_t k = 0; k < ds.m; ++k) detail::write_le<float>(out, ds.left_row(r)[k]);
      for (std::size_t k = 0; k < ds.m; ++k) detail::write_le<float>(out, ds.right_row(r)[k]);
    }
  }
  std::filesystem::rename(tmp, path);
}

inline Dataset read_records(const std::filesystem::path& path, const belief::StateSpaceSpec& spec, std::size_t m) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open dataset " + path.string());
  const auto bytes = static_cast<std::size_t>(std::filesystem::file_size(path));
  const auto rec = record_bytes(spec, m);
  if (bytes % rec != 0) throw std::runtime_error("dataset " + path.string() + " size is not a whole number of records");
  std::vector<char> buf(bytes);
  if (!in.read(buf.data(), static_cast<std::streamsize>(bytes))) throw std::runtime_error("dataset file truncated");
  Dataset ds;
  ds.spec = spec;
  ds.m = m;
  const std::size_t count = bytes / rec;
  ds.object_ids.resize(count);
  ds.states.resize(count * spec.n);
  ds.left.resize(count * m);
  ds.right.resize(count * m);
  std::size_t pos = 0;
  for (std::size_t r = 0; r < count; ++r) {
    ds.object_ids[r] = detail::from_le<std::uint32_t>(buf.data() + pos);
    pos += 4;
    std::memcpy(ds.states.data() + r * spec.n, buf.data() + pos, spec.n);
    pos += spec.n;
    for (std::size_t k = 0; k < m; ++k, pos += 4) ds.left[r * m + k] = detail::from_le<float>(buf.data() + pos);
    for (std::size_t k = 0; k < m; ++k, pos += 4) ds.right[r * m + k] = detail::from_le<float>(buf.data() + pos);
  }
  for (auto v : ds.states) {
    if (v >= spec.d) throw std::runtime_error("dataset state index out of range");
  }
  return ds;
}

}  // namespace tpose::env
