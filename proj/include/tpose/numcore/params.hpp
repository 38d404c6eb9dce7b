#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "tpose/numcore/tensor.hpp"

namespace tpose::nc {

/// Named parameter store. Insertion order is preserved and is the serialization order.
class ModelParameters {
 public:
  struct Entry {
    std::string name;
    Tensor value;
    Tensor grad;
  };

  ModelParameters() = default;
  explicit ModelParameters(std::uint64_t seed) : seed_(seed) {}

  std::uint64_t seed() const { return seed_; }
  void set_seed(std::uint64_t seed) { seed_ = seed; }

  Tensor& add(const std::string& name, Tensor value) {
    if (index_.count(name)) throw ConfigError("duplicate parameter name '" + name + "'");
    index_[name] = entries_.size();
    Tensor grad(value.shape());
    entries_.push_back({name, std::move(value), std::move(grad)});
    return entries_.back().value;
  }

  bool contains(const std::string& name) const { return index_.count(name) > 0; }
  std::size_t index_of(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ConfigError("unknown parameter '" + name + "'");
    return it->second;
  }

  Entry& entry(std::size_t i) { return entries_.at(i); }
  const Entry& entry(std::size_t i) const { return entries_.at(i); }
  Tensor& value(const std::string& name) { return entries_[index_of(name)].value; }
  const Tensor& value(const std::string& name) const { return entries_[index_of(name)].value; }
  Tensor& grad(const std::string& name) { return entries_[index_of(name)].grad; }
  const Tensor& grad(const std::string& name) const { return entries_[index_of(name)].grad; }

  std::vector<Entry>& entries() { return entries_; }
  const std::vector<Entry>& entries() const { return entries_; }
  std::size_t count() const { return entries_.size(); }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.value.size();
    return n;
  }

  void zero_grad() {
    for (auto& e : entries_) e.grad.fill(0.0);
  }

  bool grads_finite() const {
    for (const auto& e : entries_) {
      if (!e.grad.all_finite()) return false;
    }
    return true;
  }

  /// Values only; gradients are not part of equality.
  bool same_values(const ModelParameters& other) const {
    if (entries_.size() != other.entries_.size()) return false;
    for (std::size_t i = 0; i < entries_.size(); ++i) {
      if (entries_[i].name != other.entries_[i].name) return false;
      if (!(entries_[i].value == other.entries_[i].value)) return false;
    }
    return true;
  }

 private:
  std::uint64_t seed_ = 0;
  std::vector<Entry> entries_;
  std::map<std::string, std::size_t> index_;
};

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialization.
inline Tensor fan_in_uniform(Shape shape, std::size_t fan_in, std::mt19937_64& rng) {
  Tensor t(std::move(shape));
  const double bound = 1.0 / std::sqrt(static_cast<double>(std::max<std::size_t>(fan_in, 1)));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (auto& v : t.raw()) v = dist(rng);
  return t;
}

// ---------------------------------------------------------------------------
// Checkpoint file
//
//   magic    8 bytes  "TPOSECK\0"
//   version  u32
//   seed     u64
//   count    u32
//   count x { name_len u32, name bytes, rank u32, dims u64[rank], values f64[prod(dims)] }
//
// All integers and floats little-endian.
// ---------------------------------------------------------------------------

inline constexpr char kCheckpointMagic[8] = {'T', 'P', 'O', 'S', 'E', 'C', 'K', '\0'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

template <typename T>
void put_le(std::string& out, T value) {
  static_assert(std::is_trivially_copyable_v<T>);
  unsigned char bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  out.append(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <typename T>
T get_le(const std::string& in, std::size_t& pos) {
  if (pos + sizeof(T) > in.size()) throw std::runtime_error("checkpoint truncated");
  unsigned char bytes[sizeof(T)];
  std::memcpy(bytes, in.data() + pos, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  pos += sizeof(T);
  T value;
  std::memcpy(&value, bytes, sizeof(T));
  return value;
}

}  // namespace detail

inline std::string serialize(const ModelParameters& params) {
  std::string out(kCheckpointMagic, sizeof(kCheckpointMagic));
  detail::put_le<std::uint32_t>(out, kCheckpointVersion);
  detail::put_le<std::uint64_t>(out, params.seed());
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(params.count()));
  for (const auto& e : params.entries()) {
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(e.name.size()));
    out += e.name;
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(e.value.rank()));
    for (auto d : e.value.shape()) detail::put_le<std::uint64_t>(out, d);
    for (double v : e.value.values()) detail::put_le<double>(out, v);
  }
  return out;
}

inline ModelParameters deserialize(const std::string& bytes) {
  if (bytes.size() < sizeof(kCheckpointMagic) ||
      std::memcmp(bytes.data(), kCheckpointMagic, sizeof(kCheckpointMagic)) != 0) {
    throw std::runtime_error("not a checkpoint file (bad magic)");
  }
  std::size_t pos = sizeof(kCheckpointMagic);
  const auto version = detail::get_le<std::uint32_t>(bytes, pos);
  if (version != kCheckpointVersion) {
    throw std::runtime_error("unsupported checkpoint version " + std::to_string(version));
  }
  ModelParameters params(detail::get_le<std::uint64_t>(bytes, pos));
  const auto count = detail::get_le<std::uint32_t>(bytes, pos);
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = detail::get_le<std::uint32_t>(bytes, pos);
    if (pos + name_len > bytes.size()) throw std::runtime_error("checkpoint truncated");
    std::string name = bytes.substr(pos, name_len);
    pos += name_len;
    const auto rank = detail::get_le<std::uint32_t>(bytes, pos);
    Shape shape(rank);
    for (auto& d : shape) d = detail::get_le<std::uint64_t>(bytes, pos);
    Tensor t(shape);
    for (auto& v : t.raw()) v = detail::get_le<double>(bytes, pos);
    params.add(name, std::move(t));
  }
  if (pos != bytes.size()) throw std::runtime_error("trailing bytes after checkpoint payload");
  return params;
}

inline void save_checkpoint(const ModelParameters& params, const std::filesystem::path& path) {
  const std::string bytes = serialize(params);
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  }
  std::filesystem::rename(tmp, path);
}

inline ModelParameters load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return deserialize(ss.str());
}

}  // namespace tpose::nc
