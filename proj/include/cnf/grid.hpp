#pragma once

// Multi-resolution feature grids: per-level resolution schedule, dense and
// spatially hashed vertex indexing, and multilinear interpolation.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "cnf/errors.hpp"

namespace cnf {

inline constexpr std::array<std::uint64_t, 3> kDefaultHashPrimes = {73856093ULL, 19349663ULL, 83492791ULL};

struct GridConfig {
  int levels = 16;
  std::uint32_t table_size = 1u << 17;
  int feature_dim = 2;
  int n_min = 16;
  int n_max = 512;
  int spatial_dim = 3;
  std::array<std::uint64_t, 3> hash_primes = kDefaultHashPrimes;

  void validate() const {
    if (levels < 1) throw UsageError("grid: levels must be >= 1");
    if (table_size == 0 || (table_size & (table_size - 1)) != 0)
      throw UsageError("grid: table_size must be a power of two");
    if (feature_dim < 1) throw UsageError("grid: feature_dim must be >= 1");
    if (spatial_dim != 2 && spatial_dim != 3) throw UsageError("grid: spatial_dim must be 2 or 3");
    if (n_min < 1 || n_max < n_min) throw UsageError("grid: require 1 <= n_min <= n_max");
    if (levels > 1 && n_min == n_max) throw UsageError("grid: n_min < n_max required when levels > 1");
    for (int i = 0; i < spatial_dim; ++i)
      for (int j = i + 1; j < spatial_dim; ++j)
        if (hash_primes[i] == hash_primes[j]) throw UsageError("grid: hash primes must be unique");
  }
};

/// Per-level resolutions, geometric from n_min to n_max:
/// N_l = floor(n_min * exp(l * ln(n_max / n_min) / (L - 1))), last level pinned to n_max.
inline std::vector<int> level_resolutions(const GridConfig& cfg) {
  std::vector<int> out(static_cast<std::size_t>(cfg.levels));
  if (cfg.levels == 1) {
    out[0] = cfg.n_min;
    return out;
  }
  const double log_ratio = std::log(static_cast<double>(cfg.n_max) / cfg.n_min);
  for (int l = 0; l < cfg.levels; ++l)
    out[l] = static_cast<int>(std::floor(cfg.n_min * std::exp(l * log_ratio / (cfg.levels - 1))));
  out.front() = cfg.n_min;
  out.back() = cfg.n_max;
  for (int l = 1; l < cfg.levels; ++l) out[l] = std::clamp(out[l], out[l - 1], cfg.n_max);
  return out;
}

/// Spatial hash (XOR of coordinate * prime, wrapping mod 2^64) reduced mod T.
inline std::uint32_t hash_index(std::span<const std::uint64_t> vertex, const GridConfig& cfg) {
  std::uint64_t h = 0;
  for (std::size_t i = 0; i < vertex.size(); ++i) h ^= vertex[i] * cfg.hash_primes[i];
  return static_cast<std::uint32_t>(h & (static_cast<std::uint64_t>(cfg.table_size) - 1));
}

enum class LevelMode : std::uint8_t { Dense, Hashed };

struct LevelInfo {
  int resolution = 0;
  LevelMode mode = LevelMode::Dense;
  std::uint32_t rows = 0;   // feature rows actually stored (<= T)
  std::size_t offset = 0;   // scalar offset of row 0 within the feature block
};

/// A level is dense when its (N+1)^d vertices fit in the table; dense levels
/// store exactly one row per vertex, hashed levels store T rows.
inline std::vector<LevelInfo> level_layout(const GridConfig& cfg) {
  cfg.validate();
  std::vector<LevelInfo> out;
  std::size_t offset = 0;
  for (int res : level_resolutions(cfg)) {
    std::uint64_t verts = 1;
    for (int i = 0; i < cfg.spatial_dim; ++i) verts *= static_cast<std::uint64_t>(res) + 1;
    LevelInfo info;
    info.resolution = res;
    if (verts <= cfg.table_size) {
      info.mode = LevelMode::Dense;
      info.rows = static_cast<std::uint32_t>(verts);
    } else {
      info.mode = LevelMode::Hashed;
      info.rows = cfg.table_size;
    }
    info.offset = offset;
    offset += static_cast<std::size_t>(info.rows) * cfg.feature_dim;
    out.push_back(info);
  }
  return out;
}

inline std::size_t feature_count(const std::vector<LevelInfo>& layout, const GridConfig& cfg) {
  if (layout.empty()) return 0;
  return layout.back().offset + static_cast<std::size_t>(layout.back().rows) * cfg.feature_dim;
}

/// Table row of a vertex on one level.
inline std::uint32_t vertex_row(const LevelInfo& level, std::span<const std::uint64_t> vertex, const GridConfig& cfg) {
  if (level.mode == LevelMode::Hashed) return hash_index(vertex, cfg);
  const std::uint64_t side = static_cast<std::uint64_t>(level.resolution) + 1;
  std::uint64_t row = 0;
  std::uint64_t stride = 1;
  for (std::size_t i = 0; i < vertex.size(); ++i) {
    row += vertex[i] * stride;
    stride *= side;
  }
  return static_cast<std::uint32_t>(row);
}

/// Weight of corner `corner` (bit i set = upper vertex along axis i) for the
/// fractional cell position `frac`. Generic over the scalar so it can be
/// evaluated in exact rational arithmetic.
template <class T>
T corner_weight(std::span<const T> frac, unsigned corner) {
  T w = T(1);
  for (std::size_t i = 0; i < frac.size(); ++i) w *= ((corner >> i) & 1u) ? frac[i] : T(1) - frac[i];
  return w;
}

template <class T>
void multilinear_weights(std::span<const T> frac, std::span<T> out) {
  const unsigned corners = 1u << frac.size();
  for (unsigned c = 0; c < corners; ++c) out[c] = corner_weight(frac, c);
}

/// Cell coordinates and in-cell fraction of `x` at resolution `res`.
/// Points on the upper domain face land in the last cell with fraction 1.
template <class S>
void locate_cell(std::span<const S> x, int res, std::span<std::uint64_t> cell, std::span<S> frac) {
  for (std::size_t i = 0; i < x.size(); ++i) {
    const S scaled = x[i] * static_cast<S>(res);
    S base = std::floor(scaled);
    base = std::clamp(base, S(0), static_cast<S>(res - 1));
    cell[i] = static_cast<std::uint64_t>(base);
    frac[i] = scaled - base;
  }
}

template <class S>
void check_unit_domain(std::span<const S> x) {
  for (std::size_t i = 0; i < x.size(); ++i)
    if (!(x[i] >= S(0) && x[i] <= S(1)))
      throw DomainError("grid_encode: coordinate " + std::to_string(i) + " = " + std::to_string(static_cast<double>(x[i])) +
                        " outside [0,1]");
}

/// Interpolated feature of one level for an explicit cell and fraction.
template <class S>
void interpolate_in_cell(const LevelInfo& level, const GridConfig& cfg, std::span<const S> features,
                         std::span<const std::uint64_t> cell, std::span<const S> frac, std::span<S> out) {
  const int d = cfg.spatial_dim;
  const int F = cfg.feature_dim;
  std::fill(out.begin(), out.end(), S(0));
  std::array<std::uint64_t, 3> vtx{};
  for (unsigned c = 0; c < (1u << d); ++c) {
    for (int i = 0; i < d; ++i) vtx[i] = cell[i] + ((c >> i) & 1u);
    const S w = corner_weight(frac, c);
    const std::uint32_t row = vertex_row(level, std::span<const std::uint64_t>(vtx.data(), d), cfg);
    const S* f = features.data() + level.offset + static_cast<std::size_t>(row) * F;
    for (int k = 0; k < F; ++k) out[k] += w * f[k];
  }
}

/// Concatenated (coarse to fine) interpolated features of `x` in [0,1]^d.
template <class S>
void grid_encode(std::span<const S> x, const GridConfig& cfg, const std::vector<LevelInfo>& layout,
                 std::span<const S> features, std::span<S> out) {
  check_unit_domain(x);
  const int d = cfg.spatial_dim;
  std::array<std::uint64_t, 3> cell{};
  std::array<S, 3> frac{};
  for (std::size_t l = 0; l < layout.size(); ++l) {
    locate_cell<S>(x, layout[l].resolution, std::span(cell.data(), d), std::span(frac.data(), d));
    interpolate_in_cell<S>(layout[l], cfg, features, std::span<const std::uint64_t>(cell.data(), d),
                           std::span<const S>(frac.data(), d), out.subspan(l * cfg.feature_dim, cfg.feature_dim));
  }
}

/// Adds d(loss)/d(features) for one query point given d(loss)/d(encoding).
template <class S>
void grid_encode_backward(std::span<const S> x, const GridConfig& cfg, const std::vector<LevelInfo>& layout,
                          std::span<const S> d_encoding, std::span<S> d_features) {
  const int d = cfg.spatial_dim;
  const int F = cfg.feature_dim;
  std::array<std::uint64_t, 3> cell{};
  std::array<std::uint64_t, 3> vtx{};
  std::array<S, 3> frac{};
  for (std::size_t l = 0; l < layout.size(); ++l) {
    const S* g = d_encoding.data() + l * F;
    bool any = false;
    for (int k = 0; k < F; ++k) any |= (g[k] != S(0));
    if (!any) continue;
    locate_cell<S>(x, layout[l].resolution, std::span(cell.data(), d), std::span(frac.data(), d));
    for (unsigned c = 0; c < (1u << d); ++c) {
      for (int i = 0; i < d; ++i) vtx[i] = cell[i] + ((c >> i) & 1u);
      const S w = corner_weight(std::span<const S>(frac.data(), d), c);
      if (w == S(0)) continue;
      const std::uint32_t row = vertex_row(layout[l], std::span<const std::uint64_t>(vtx.data(), d), cfg);
      S* dst = d_features.data() + layout[l].offset + static_cast<std::size_t>(row) * F;
      for (int k = 0; k < F; ++k) dst[k] += w * g[k];
    }
  }
}

/// Number of vertices of a level that share a table row with another
/// vertex visited earlier (vertex count minus occupied rows). Zero for
/// dense levels.
inline std::uint64_t level_collisions(const LevelInfo& level, const GridConfig& cfg) {
  if (level.mode == LevelMode::Dense) return 0;
  const std::uint64_t side = static_cast<std::uint64_t>(level.resolution) + 1;
  std::vector<bool> used(cfg.table_size, false);
  std::uint64_t total = 0;
  std::uint64_t occupied = 0;
  std::array<std::uint64_t, 3> v{};
  const int d = cfg.spatial_dim;
  std::uint64_t count = 1;
  for (int i = 0; i < d; ++i) count *= side;
  for (std::uint64_t n = 0; n < count; ++n) {
    std::uint64_t rem = n;
    for (int i = 0; i < d; ++i) {
      v[i] = rem % side;
      rem /= side;
    }
    const std::uint32_t row = hash_index(std::span<const std::uint64_t>(v.data(), d), cfg);
    if (!used[row]) {
      used[row] = true;
      ++occupied;
    }
    ++total;
  }
  return total - occupied;
}

}  // namespace cnf
