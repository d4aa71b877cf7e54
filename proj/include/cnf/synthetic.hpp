#pragma once

// Procedural benchmarks: a small volumetric scene of colored primitives
// rendered along an orbit, and a detailed 2D test image.

#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <numbers>
#include <string>
#include <vector>

#include "cnf/camera.hpp"
#include "cnf/image_io.hpp"
#include "cnf/manifest.hpp"
#include "cnf/parallel.hpp"
#include "cnf/render.hpp"
#include "cnf/rng.hpp"

namespace cnf {

struct Primitive {
  enum class Kind { Sphere, Box };
  Kind kind = Kind::Sphere;
  Vec3 center{0, 0, 0};
  Vec3 half_extent{0.5, 0.5, 0.5};  // sphere radius is half_extent[0]
  Vec3 color{1, 1, 1};
  double density = 60.0;

  bool contains(const Vec3& p) const {
    if (kind == Kind::Sphere) {
      double r2 = 0;
      for (int i = 0; i < 3; ++i) r2 += (p[i] - center[i]) * (p[i] - center[i]);
      return r2 <= half_extent[0] * half_extent[0];
    }
    for (int i = 0; i < 3; ++i)
      if (std::abs(p[i] - center[i]) > half_extent[i]) return false;
    return true;
  }
};

struct Orbit {
  double radius = 4.0;
  double elevation_deg = 25.0;
  double start_azimuth_deg = 0.0;
  double sweep_deg = 360.0;  // total azimuth covered by the trajectory
  int frames = 40;
  Vec3 target{0, 0, 0};
};

struct SyntheticScene {
  std::vector<Primitive> primitives;
  Aabb box{{-1.5, -1.5, -1.5}, {1.5, 1.5, 1.5}};
  Orbit orbit;
  int width = 128;
  int height = 128;
  double fov_deg = 40.0;
  Vec3 background{0, 0, 0};
  int render_samples = 256;

  /// Three colored primitives, 40-frame orbit at 128x128.
  static SyntheticScene desk_default() {
    SyntheticScene s;
    Primitive sphere;
    sphere.kind = Primitive::Kind::Sphere;
    sphere.center = {0.35, -0.3, 0.1};
    sphere.half_extent = {0.55, 0.55, 0.55};
    sphere.color = {0.9, 0.25, 0.2};
    Primitive box_a;
    box_a.kind = Primitive::Kind::Box;
    box_a.center = {-0.55, 0.45, -0.2};
    box_a.half_extent = {0.35, 0.3, 0.6};
    box_a.color = {0.2, 0.75, 0.3};
    Primitive box_b;
    box_b.kind = Primitive::Kind::Box;
    box_b.center = {0.4, 0.65, -0.55};
    box_b.half_extent = {0.45, 0.25, 0.25};
    box_b.color = {0.25, 0.35, 0.9};
    s.primitives = {sphere, box_a, box_b};
    return s;
  }

  Intrinsics intrinsics() const {
    Intrinsics k;
    k.width = width;
    k.height = height;
    k.fx = k.fy = 0.5 * width / std::tan(0.5 * fov_deg * std::numbers::pi / 180.0);
    k.cx = 0.5 * width;
    k.cy = 0.5 * height;
    return k;
  }

  Pose34 frame_pose(int f) const {
    const double step = orbit.frames > 1 ? orbit.sweep_deg / orbit.frames : 0.0;
    const double az = (orbit.start_azimuth_deg + step * f) * std::numbers::pi / 180.0;
    const double el = orbit.elevation_deg * std::numbers::pi / 180.0;
    const Eigen::Vector3d target(orbit.target[0], orbit.target[1], orbit.target[2]);
    const Eigen::Vector3d eye =
        target + orbit.radius * Eigen::Vector3d(std::cos(el) * std::cos(az), std::cos(el) * std::sin(az), std::sin(el));
    return look_at(eye, target);
  }

  /// Density and color of the procedural field; the first primitive
  /// containing the point determines the color.
  std::pair<double, Vec3> field(const Vec3& p) const {
    for (const auto& prim : primitives)
      if (prim.contains(p)) return {prim.density, prim.color};
    return {0.0, {0, 0, 0}};
  }
};

struct RenderedPixel {
  Vec3 color{};
  double opacity = 0;
};

/// Ground-truth rendering through the same stratified sampler and
/// compositor used for learned fields.
inline RenderedPixel render_scene_ray(const SyntheticScene& scene, const Ray& ray, Rng& rng) {
  RenderedPixel px;
  px.color = scene.background;
  const auto clipped = clip_to_box(ray, scene.box);
  if (!clipped) return px;
  const SampleSet s = sample_ray(*clipped, scene.render_samples, true, rng);
  const std::size_t n = s.t.size();
  std::vector<double> sigma(n), rgb(3 * n);
  for (std::size_t i = 0; i < n; ++i) {
    const Vec3 p{ray.origin[0] + s.t[i] * ray.dir[0], ray.origin[1] + s.t[i] * ray.dir[1],
                 ray.origin[2] + s.t[i] * ray.dir[2]};
    const auto [dens, col] = scene.field(p);
    sigma[i] = dens;
    for (int c = 0; c < 3; ++c) rgb[3 * i + c] = col[c];
  }
  const auto comp = composite<double>(sigma, s.delta, rgb, scene.background);
  px.color = comp.color;
  px.opacity = comp.opacity;
  return px;
}

struct RenderedFrame {
  Image image;
  std::vector<double> opacity;
};

inline RenderedFrame render_scene_frame(const SyntheticScene& scene, const Camera& cam, std::uint64_t seed) {
  RenderedFrame out;
  const int w = cam.intrinsics.width, h = cam.intrinsics.height;
  out.image = Image(w, h);
  out.opacity.assign(static_cast<std::size_t>(w) * h, 0.0);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const std::size_t id = static_cast<std::size_t>(y) * w + x;
      Rng rng(derive_seed(seed, {id}));
      const RenderedPixel p = render_scene_ray(scene, pixel_center_ray(cam, x, y), rng);
      for (int c = 0; c < 3; ++c) out.image.at(x, y)[c] = static_cast<float>(p.color[c]);
      out.opacity[id] = p.opacity;
    }
  return out;
}

/// Renders the orbit and writes `out_dir/manifest.json` plus
/// `out_dir/images/frame_NNN.png`. Deterministic in (scene, seed).
inline SceneManifest make_synthetic(const SyntheticScene& scene, const std::filesystem::path& out_dir, std::uint64_t seed,
                                    std::size_t threads = default_thread_count()) {
  scene.box.validate();
  if (scene.orbit.frames < 1) throw UsageError("make_synthetic: need at least one frame");
  SceneManifest m;
  m.root = out_dir;
  m.intrinsics = scene.intrinsics();
  m.box = scene.box;
  m.background = scene.background;
  m.frames.resize(static_cast<std::size_t>(scene.orbit.frames));
  for (int f = 0; f < scene.orbit.frames; ++f) {
    char name[64];
    std::snprintf(name, sizeof(name), "images/frame_%03d.png", f);
    m.frames[f].index = f;
    m.frames[f].image = name;
    m.frames[f].pose = matrix_to_pose6(scene.frame_pose(f));
  }
  std::filesystem::create_directories(out_dir / "images");
  parallel_for(m.frames.size(), threads, [&](std::size_t f) {
    const Camera cam = m.camera(f);
    const auto frame = render_scene_frame(scene, cam, derive_seed(seed, {stream::kSynthetic, f}));
    write_png(m.image_path(f), frame.image);
  });
  save_manifest(m, out_dir / "manifest.json");
  return m;
}

/// Detailed procedural RGB test image: smooth gradients, discs, stripes and
/// multi-octave value noise. Deterministic in (size, seed).
inline Image make_procedural_image(int width, int height, std::uint64_t seed) {
  Image img(width, height);
  Rng rng(derive_seed(seed, {stream::kSynthetic, 0x2d}));
  struct Disc {
    double x, y, r;
    Vec3 c;
  };
  std::vector<Disc> discs(24);
  for (auto& d : discs) d = {rng.uniform(), rng.uniform(), rng.uniform(0.02, 0.12), {rng.uniform(), rng.uniform(), rng.uniform()}};
  constexpr int kLattice = 64;
  std::vector<double> lattice(kLattice * kLattice * 3);
  for (auto& v : lattice) v = rng.uniform();
  auto noise = [&](double u, double v, int ch, double freq) {
    const double x = u * freq, y = v * freq;
    const int x0 = static_cast<int>(std::floor(x)), y0 = static_cast<int>(std::floor(y));
    const double fx = x - x0, fy = y - y0;
    const double sx = fx * fx * (3 - 2 * fx), sy = fy * fy * (3 - 2 * fy);
    auto L = [&](int i, int j) {
      return lattice[(((j % kLattice + kLattice) % kLattice) * kLattice + ((i % kLattice + kLattice) % kLattice)) * 3 + ch];
    };
    const double a = L(x0, y0) + sx * (L(x0 + 1, y0) - L(x0, y0));
    const double b = L(x0, y0 + 1) + sx * (L(x0 + 1, y0 + 1) - L(x0, y0 + 1));
    return a + sy * (b - a);
  };
  const double pi = std::numbers::pi;
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      const double u = (x + 0.5) / width, v = (y + 0.5) / height;
      Vec3 c{0.5 + 0.4 * std::sin(2 * pi * (u + 0.3 * v)), 0.5 + 0.4 * std::cos(2 * pi * (0.7 * u - v)),
             0.5 + 0.4 * std::sin(2 * pi * (u * v + 0.25))};
      for (int ch = 0; ch < 3; ++ch)
        c[ch] = 0.55 * c[ch] + 0.3 * noise(u, v, ch, 8) + 0.15 * noise(u, v, ch, 32);
      if (std::sin(2 * pi * 24 * (u + 0.5 * v)) > 0.6 && v > 0.5)
        for (auto& ch : c) ch *= 0.6;
      for (const auto& d : discs) {
        const double r = std::hypot(u - d.x, v - d.y);
        if (r < d.r) {
          const double ring = std::abs(r - 0.6 * d.r) < 0.12 * d.r ? 0.5 : 1.0;
          for (int ch = 0; ch < 3; ++ch) c[ch] = ring * d.c[ch];
        }
      }
      for (int ch = 0; ch < 3; ++ch) img.at(x, y)[ch] = static_cast<float>(std::clamp(c[ch], 0.0, 1.0));
    }
  return quantize8(std::move(img));
}

}  // namespace cnf
