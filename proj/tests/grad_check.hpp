#pragma once

// Central finite-difference check of backward() on small double models.

#include <algorithm>
#include <cmath>

#include "cnf/render.hpp"
#include "cnf/rng.hpp"
#include "cnf/training.hpp"

namespace cnf::tst {

struct GradCheck {
  double max_rel = 0;
  std::size_t checked = 0;
  std::size_t skipped = 0;  // ReLU kink inside the difference stencil
};

// Relative error uses max(|fd|, |analytic|, kGradFloor) as denominator.
inline constexpr double kGradFloor = 1e-6;

inline FieldConfig tiny_field(Backbone b, int d, Rng& rng) {
  FieldConfig f;
  f.backbone = b;
  f.spatial_dim = d;
  f.grid.spatial_dim = d;
  f.grid.levels = 2 + static_cast<int>(rng.below(3));
  f.grid.n_min = 2 + static_cast<int>(rng.below(3));
  f.grid.n_max = f.grid.n_min * (2 + static_cast<int>(rng.below(6)));
  f.grid.table_size = 1u << (6 + rng.below(4));
  f.grid.feature_dim = 1 + static_cast<int>(rng.below(2));
  f.mlp.hidden_layers = 1 + static_cast<int>(rng.below(2));
  f.mlp.hidden_width = 4 + static_cast<int>(rng.below(8));
  f.mlp.pos_freqs = 1 + static_cast<int>(rng.below(3));
  f.mlp.dir_freqs = 1 + static_cast<int>(rng.below(2));
  f.mlp.geo_feat_dim = 2 + static_cast<int>(rng.below(3));
  f.mlp.view_dependent = d == 3 && rng.below(2) == 0;
  f.mlp.density_activation = rng.below(2) ? DensityActivation::Softplus : DensityActivation::TruncExp;
  f.init_seed = rng.next_u64();
  return f;
}

/// Moves every parameter away from zero so ReLU units are not all sitting
/// on their kink (features start at ~1e-4 and biases at 0).
inline void randomize(FieldModel<double>& m, Rng& rng) {
  for (auto& v : m.params()) v = rng.uniform(-0.6, 0.6);
}

inline LossBatch<double> random_batch(int d, std::size_t n, const RenderConfig& rc, Rng& rng) {
  LossBatch<double> b;
  for (std::size_t i = 0; i < n; ++i) {
    Query q;
    if (d == 2) {
      q = make_point_query(rng.uniform(), rng.uniform(), i);
    } else {
      const double az = rng.uniform(0, 6.283185307179586), el = rng.uniform(-0.6, 0.6);
      const Vec3 o{3 * std::cos(el) * std::cos(az), 3 * std::cos(el) * std::sin(az), 3 * std::sin(el)};
      const Vec3 t{rng.uniform(-0.4, 0.4), rng.uniform(-0.4, 0.4), rng.uniform(-0.4, 0.4)};
      Vec3 dir{t[0] - o[0], t[1] - o[1], t[2] - o[2]};
      const double len = std::sqrt(dir[0] * dir[0] + dir[1] * dir[1] + dir[2] * dir[2]);
      for (auto& c : dir) c /= len;
      q = make_ray_query(Ray{o, dir, 0, 1e9}, rc.box, i);
    }
    b.push(q, rng.below(3) ? Source::GroundTruth : Source::Oracle, {rng.uniform(), rng.uniform(), rng.uniform()});
  }
  return b;
}

/// Compares backward() with central differences on `probes` random
/// parameters plus every parameter of the last decoder layer.
inline GradCheck check_gradients(FieldModel<double>& m, const LossBatch<double>& b, const PassContext& ctx,
                                 std::size_t probes, Rng& rng, double h = 1e-4) {
  GradBuffer<double> g;
  backward(b, m, ctx, g);
  auto p = m.params();
  auto loss_at = [&](std::size_t k, double v) {
    const double o = p[k];
    p[k] = v;
    const double l = photometric_loss(b, m, ctx).total;
    p[k] = o;
    return l;
  };
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < probes; ++i) idx.push_back(rng.below(m.size()));
  for (std::size_t k = m.size() - std::min<std::size_t>(m.size(), 16); k < m.size(); ++k) idx.push_back(k);
  GradCheck r;
  for (std::size_t k : idx) {
    const double o = p[k];
    const double fd = (loss_at(k, o + h) - loss_at(k, o - h)) / (2 * h);
    const double fd_half = (loss_at(k, o + h / 2) - loss_at(k, o - h / 2)) / h;
    const double den = std::max({std::abs(fd), std::abs(g.values[k]), kGradFloor});
    // A stencil straddling a kink gives step-size dependent differences.
    if (std::abs(fd - fd_half) / den > 1e-5) {
      ++r.skipped;
      continue;
    }
    r.max_rel = std::max(r.max_rel, std::abs(fd - g.values[k]) / den);
    ++r.checked;
  }
  return r;
}

}  // namespace cnf::tst
