#pragma once

// Stratified ray sampling, volume compositing and batched rendering of
// queries. A query is either a camera ray (3D fields) or a point in the unit
// square (2D image fields, where the field output is the prediction).

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "cnf/camera.hpp"
#include "cnf/errors.hpp"
#include "cnf/field.hpp"
#include "cnf/parallel.hpp"
#include "cnf/rng.hpp"

namespace cnf {

struct RenderConfig {
  int n_samples = 64;
  bool jitter = true;
  Vec3 background{0, 0, 0};
  Aabb box;  // world-space scene bounds mapped onto the unit cube
};

/// One prediction request. For 3D, (origin, dir, t_near, t_far) is the ray
/// already clipped to the scene box and `hit` is false when the ray misses
/// it. For 2D, origin[0..1] holds the unit-square point. `id` keys the
/// per-query jitter stream.
struct Query {
  Vec3 origin{};
  Vec3 dir{};
  double t_near = 0;
  double t_far = 0;
  bool hit = true;
  std::uint64_t id = 0;
};

inline Query make_ray_query(const Ray& ray, const Aabb& box, std::uint64_t id) {
  Query q;
  q.origin = ray.origin;
  q.dir = ray.dir;
  q.id = id;
  if (auto clipped = clip_to_box(ray, box)) {
    q.t_near = clipped->t_near;
    q.t_far = clipped->t_far;
    q.hit = true;
  } else {
    q.hit = false;
  }
  return q;
}

inline Query make_point_query(double u, double v, std::uint64_t id) {
  Query q;
  q.origin = {u, v, 0};
  q.id = id;
  return q;
}

struct SampleSet {
  std::vector<double> t;
  std::vector<double> delta;
};

/// Stratified samples on [t_near, t_far]: t_i is uniform in the i-th of n
/// equal strata (the stratum midpoint when jitter is off). delta_i is the
/// gap to the next sample; the last interval is one stratum width.
inline SampleSet sample_ray(const Ray& ray, int n, bool jitter, Rng& rng) {
  if (n < 1) throw UsageError("sample_ray: need at least one sample");
  SampleSet s;
  s.t.resize(n);
  s.delta.resize(n);
  const double width = (ray.t_far - ray.t_near) / n;
  for (int i = 0; i < n; ++i) {
    const double u = jitter ? rng.uniform() : 0.5;
    s.t[i] = ray.t_near + (i + u) * width;
  }
  for (int i = 0; i + 1 < n; ++i) s.delta[i] = s.t[i + 1] - s.t[i];
  s.delta[n - 1] = width;
  return s;
}

template <class S>
struct Composite {
  std::array<S, 3> color{};
  S opacity = 0;
  std::vector<S> weights;        // w_i = T_i (1 - exp(-sigma_i delta_i))
  std::vector<S> transmittance;  // T_1..T_{N+1}; T_{N+1} is the residual
};

/// Volume rendering of one ray: C = sum_i T_i (1 - exp(-sigma_i delta_i)) c_i
/// + T_{N+1} background, with T_i = exp(-sum_{j<i} sigma_j delta_j).
/// `rgb` holds 3 interleaved channels per sample.
template <class S>
Composite<S> composite(std::span<const S> sigma, std::span<const S> delta, std::span<const S> rgb,
                       const std::array<S, 3>& background = {S(0), S(0), S(0)}) {
  const std::size_t n = sigma.size();
  if (delta.size() != n || rgb.size() != 3 * n) throw UsageError("composite: mismatched sample arrays");
  Composite<S> out;
  out.weights.resize(n);
  out.transmittance.resize(n + 1);
  S optical_depth = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::isfinite(sigma[i]) || !std::isfinite(delta[i])) throw NumericError("composite: non-finite density or interval");
    if (sigma[i] < S(0) || delta[i] < S(0)) throw UsageError("composite: negative density or interval");
    const S T = std::exp(-optical_depth);
    const S tau = sigma[i] * delta[i];
    const S w = T * (-std::expm1(-tau));
    out.transmittance[i] = T;
    out.weights[i] = w;
    for (int c = 0; c < 3; ++c) out.color[c] += w * rgb[3 * i + c];
    out.opacity += w;
    optical_depth += tau;
  }
  out.transmittance[n] = std::exp(-optical_depth);
  for (int c = 0; c < 3; ++c) {
    out.color[c] += out.transmittance[n] * background[c];
    if (!std::isfinite(out.color[c])) throw NumericError("composite: non-finite color");
  }
  return out;
}

/// Gradients of one composited color w.r.t. per-sample densities and colors
/// given d(loss)/d(color). Uses
///   dC/dc_i = w_i,
///   dC/dsigma_i = delta_i (T_{i+1} c_i - sum_{j>i} w_j c_j - T_{N+1} bg).
template <class S>
void composite_backward(const Composite<S>& fwd, std::span<const S> delta, std::span<const S> rgb,
                        const std::array<S, 3>& background, const std::array<S, 3>& d_color, std::span<S> d_sigma,
                        std::span<S> d_rgb) {
  const std::size_t n = delta.size();
  std::array<S, 3> suffix{};  // sum_{j>i} w_j c_j
  const S t_end = fwd.transmittance[n];
  for (std::size_t k = n; k-- > 0;) {
    S g = 0;
    for (int c = 0; c < 3; ++c) {
      const S dC = fwd.transmittance[k + 1] * rgb[3 * k + c] - suffix[c] - t_end * background[c];
      g += d_color[c] * dC;
      d_rgb[3 * k + c] = d_color[c] * fwd.weights[k];
    }
    d_sigma[k] = g * delta[k];
    for (int c = 0; c < 3; ++c) suffix[c] += fwd.weights[k] * rgb[3 * k + c];
  }
}

/// Forward state of one chunk of queries, kept for the backward pass.
template <class S>
struct ChunkForward {
  FieldCache<S> field;
  std::vector<std::size_t> sample_begin;  // per query, plus end sentinel
  std::vector<S> delta;                   // per sample (3D)
  std::vector<Composite<S>> composites;   // per query (3D)
  std::vector<std::array<S, 3>> color;    // per query prediction
};

template <class S>
std::array<S, 3> background_of(const RenderConfig& cfg) {
  return {static_cast<S>(cfg.background[0]), static_cast<S>(cfg.background[1]), static_cast<S>(cfg.background[2])};
}

/// Evaluates a chunk of queries. Jittered sample positions come from a
/// stream keyed by (jitter_seed, query id), so results do not depend on how
/// queries are grouped into chunks.
template <class S>
void forward_chunk(const FieldModel<S>& model, std::span<const Query> queries, const RenderConfig& cfg,
                   std::uint64_t jitter_seed, ChunkForward<S>& out) {
  const int d = model.config().spatial_dim;
  const std::size_t nq = queries.size();
  out.color.assign(nq, {});
  out.sample_begin.assign(nq + 1, 0);
  if (d == 2) {
    Matrix<S> pos(2, static_cast<Eigen::Index>(nq));
    for (std::size_t q = 0; q < nq; ++q) {
      pos(0, q) = static_cast<S>(queries[q].origin[0]);
      pos(1, q) = static_cast<S>(queries[q].origin[1]);
      out.sample_begin[q + 1] = q + 1;
    }
    field_forward(model, pos, Matrix<S>(), out.field);
    for (std::size_t q = 0; q < nq; ++q)
      out.color[q] = {out.field.rgb(0, q), out.field.rgb(1, q), out.field.rgb(2, q)};
    return;
  }
  const int n = cfg.n_samples;
  std::size_t total = 0;
  for (std::size_t q = 0; q < nq; ++q) {
    out.sample_begin[q] = total;
    if (queries[q].hit) total += static_cast<std::size_t>(n);
  }
  out.sample_begin[nq] = total;
  Matrix<S> pos(3, static_cast<Eigen::Index>(total));
  Matrix<S> dirs(3, model.config().uses_view() ? static_cast<Eigen::Index>(total) : 0);
  out.delta.resize(total);
  for (std::size_t q = 0; q < nq; ++q) {
    const Query& qr = queries[q];
    if (!qr.hit) continue;
    Ray ray{qr.origin, qr.dir, qr.t_near, qr.t_far};
    Rng rng(derive_seed(jitter_seed, {stream::kJitter, qr.id}));
    const SampleSet s = sample_ray(ray, n, cfg.jitter, rng);
    const std::size_t b = out.sample_begin[q];
    for (int i = 0; i < n; ++i) {
      const Vec3 world{ray.origin[0] + s.t[i] * ray.dir[0], ray.origin[1] + s.t[i] * ray.dir[1],
                       ray.origin[2] + s.t[i] * ray.dir[2]};
      const Vec3 u = cfg.box.to_unit(world);
      for (int k = 0; k < 3; ++k) pos(k, b + i) = static_cast<S>(u[k]);
      if (dirs.cols() > 0)
        for (int k = 0; k < 3; ++k) dirs(k, b + i) = static_cast<S>(ray.dir[k]);
      out.delta[b + i] = static_cast<S>(s.delta[i]);
    }
  }
  field_forward(model, pos, dirs, out.field);
  const auto bg = background_of<S>(cfg);
  out.composites.assign(nq, {});
  for (std::size_t q = 0; q < nq; ++q) {
    if (!queries[q].hit) {
      out.color[q] = bg;
      continue;
    }
    const std::size_t b = out.sample_begin[q];
    const std::size_t m = out.sample_begin[q + 1] - b;
    out.composites[q] = composite<S>(std::span<const S>(out.field.sigma.data() + b, m),
                                     std::span<const S>(out.delta.data() + b, m),
                                     std::span<const S>(out.field.rgb.data() + 3 * b, 3 * m), bg);
    out.color[q] = out.composites[q].color;
  }
}

inline std::size_t chunk_queries(int spatial_dim, const RenderConfig& cfg) {
  constexpr std::size_t kChunkSamples = 4096;
  if (spatial_dim == 2) return kChunkSamples;
  return std::max<std::size_t>(1, kChunkSamples / static_cast<std::size_t>(std::max(1, cfg.n_samples)));
}

/// Predicted colors for a list of queries (read-only on the model).
template <class S>
std::vector<std::array<S, 3>> render_queries(const FieldModel<S>& model, std::span<const Query> queries,
                                             const RenderConfig& cfg, std::uint64_t jitter_seed,
                                             std::size_t threads = default_thread_count()) {
  std::vector<std::array<S, 3>> out(queries.size());
  const std::size_t chunk = chunk_queries(model.config().spatial_dim, cfg);
  const std::size_t n_chunks = (queries.size() + chunk - 1) / chunk;
  parallel_for(n_chunks, threads, [&](std::size_t c) {
    const std::size_t b = c * chunk;
    const std::size_t e = std::min(queries.size(), b + chunk);
    ChunkForward<S> fwd;
    forward_chunk(model, queries.subspan(b, e - b), cfg, jitter_seed, fwd);
    std::copy(fwd.color.begin(), fwd.color.end(), out.begin() + static_cast<std::ptrdiff_t>(b));
  });
  return out;
}

/// Renders one ray: sample, evaluate the field at every sample, composite.
template <class S>
std::array<S, 3> render_ray(const Ray& ray, const FieldModel<S>& model, const RenderConfig& cfg,
                            std::uint64_t jitter_seed, std::uint64_t ray_id = 0) {
  const Query q = make_ray_query(ray, cfg.box, ray_id);
  return render_queries<S>(model, std::span<const Query>(&q, 1), cfg, jitter_seed, 1)[0];
}

}  // namespace cnf
