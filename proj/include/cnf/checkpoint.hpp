#pragma once

// CNF1 checkpoint format. All integers and floats are little-endian.
//
//   "CNF1"            4 bytes magic
//   u32 version       currently 1
//   u32 backbone      0 = hash, 1 = freq
//   u32 spatial_dim
//   grid:  u32 levels, u32 table_size, u32 feature_dim, u32 n_min, u32 n_max,
//          u32 spatial_dim, u64 prime[3]
//   mlp:   u32 hidden_layers, u32 hidden_width, u32 density_activation,
//          u32 view_dependent, u32 dir_freqs, u32 geo_feat_dim, u32 pos_freqs,
//          u32 include_input
//   u64 init_seed
//   u64 parameter count
//   f32 parameters[count] in ParamLayout order

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <vector>

#include "cnf/errors.hpp"
#include "cnf/field.hpp"

namespace cnf {

inline constexpr char kCheckpointMagic[4] = {'C', 'N', 'F', '1'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

class ByteWriter {
 public:
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void raw(const char* p, std::size_t n) { bytes_.insert(bytes_.end(), p, p + n); }
  std::vector<std::uint8_t> take() { return std::move(bytes_); }

 private:
  std::vector<std::uint8_t> bytes_;
};

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> b) : b_(b) {}
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b_[pos_ + i]) << (8 * i);
    pos_ += 8;
    return v;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  std::size_t remaining() const { return b_.size() - pos_; }
  std::span<const std::uint8_t> take(std::size_t n) {
    need(n);
    auto s = b_.subspan(pos_, n);
    pos_ += n;
    return s;
  }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > b_.size()) throw DataError("checkpoint truncated at byte " + std::to_string(pos_));
  }
  std::span<const std::uint8_t> b_;
  std::size_t pos_ = 0;
};

}  // namespace detail

template <class S>
std::vector<std::uint8_t> serialize_checkpoint(const FieldModel<S>& model) {
  const auto& c = model.config();
  detail::ByteWriter w;
  w.raw(kCheckpointMagic, 4);
  w.u32(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(c.backbone));
  w.u32(static_cast<std::uint32_t>(c.spatial_dim));
  w.u32(static_cast<std::uint32_t>(c.grid.levels));
  w.u32(c.grid.table_size);
  w.u32(static_cast<std::uint32_t>(c.grid.feature_dim));
  w.u32(static_cast<std::uint32_t>(c.grid.n_min));
  w.u32(static_cast<std::uint32_t>(c.grid.n_max));
  w.u32(static_cast<std::uint32_t>(c.grid.spatial_dim));
  for (auto p : c.grid.hash_primes) w.u64(p);
  w.u32(static_cast<std::uint32_t>(c.mlp.hidden_layers));
  w.u32(static_cast<std::uint32_t>(c.mlp.hidden_width));
  w.u32(static_cast<std::uint32_t>(c.mlp.density_activation));
  w.u32(c.mlp.view_dependent ? 1u : 0u);
  w.u32(static_cast<std::uint32_t>(c.mlp.dir_freqs));
  w.u32(static_cast<std::uint32_t>(c.mlp.geo_feat_dim));
  w.u32(static_cast<std::uint32_t>(c.mlp.pos_freqs));
  w.u32(c.mlp.include_input ? 1u : 0u);
  w.u64(c.init_seed);
  w.u64(model.size());
  for (S v : model.params()) w.f32(static_cast<float>(v));
  return w.take();
}

template <class S>
FieldModel<S> deserialize_checkpoint(std::span<const std::uint8_t> bytes) {
  detail::ByteReader r(bytes);
  const auto magic = r.take(4);
  if (!std::equal(magic.begin(), magic.end(), kCheckpointMagic)) throw DataError("checkpoint: bad magic (expected CNF1)");
  if (const auto v = r.u32(); v != kCheckpointVersion)
    throw DataError("checkpoint: unsupported version " + std::to_string(v));
  FieldConfig c;
  const auto backbone = r.u32();
  if (backbone > 1) throw DataError("checkpoint: unknown backbone tag " + std::to_string(backbone));
  c.backbone = static_cast<Backbone>(backbone);
  c.spatial_dim = static_cast<int>(r.u32());
  c.grid.levels = static_cast<int>(r.u32());
  c.grid.table_size = r.u32();
  c.grid.feature_dim = static_cast<int>(r.u32());
  c.grid.n_min = static_cast<int>(r.u32());
  c.grid.n_max = static_cast<int>(r.u32());
  c.grid.spatial_dim = static_cast<int>(r.u32());
  for (auto& p : c.grid.hash_primes) p = r.u64();
  c.mlp.hidden_layers = static_cast<int>(r.u32());
  c.mlp.hidden_width = static_cast<int>(r.u32());
  const auto act = r.u32();
  if (act > 1) throw DataError("checkpoint: unknown density activation " + std::to_string(act));
  c.mlp.density_activation = static_cast<DensityActivation>(act);
  c.mlp.view_dependent = r.u32() != 0;
  c.mlp.dir_freqs = static_cast<int>(r.u32());
  c.mlp.geo_feat_dim = static_cast<int>(r.u32());
  c.mlp.pos_freqs = static_cast<int>(r.u32());
  c.mlp.include_input = r.u32() != 0;
  c.init_seed = r.u64();
  const auto count = r.u64();
  if (r.remaining() != count * 4)
    throw DataError("checkpoint: expected " + std::to_string(count) + " parameters, found " +
                    std::to_string(r.remaining() / 4));
  std::vector<S> params(count);
  for (auto& v : params) v = static_cast<S>(r.f32());
  try {
    return FieldModel<S>(c, std::move(params));
  } catch (const UsageError& e) {
    throw DataError(std::string("checkpoint: invalid header: ") + e.what());
  }
}

/// Writes to a temporary sibling and renames, so readers never observe a
/// partially written file.
inline void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot open " + tmp.string() + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DataError("write failed: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

template <class S>
void save_checkpoint(const FieldModel<S>& model, const std::filesystem::path& path) {
  write_file_atomic(path, serialize_checkpoint(model));
}

template <class S>
FieldModel<S> load_checkpoint(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  return deserialize_checkpoint<S>(bytes);
}

/// FNV-1a over raw bytes; used to fingerprint checkpoints and configs.
inline std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (auto b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::uint64_t fnv1a64(const std::string& s) {
  return fnv1a64(std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(s.data()), s.size()));
}

}  // namespace cnf
