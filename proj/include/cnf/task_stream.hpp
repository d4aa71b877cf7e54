#pragma once

// Sequential task streams. A stream owns the ground-truth pixels and the
// ray registry of every task; training code reaches them only through a
// StageView, which exposes rays of tasks 0..stage and ground-truth pixels of
// the current task alone.

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "cnf/camera.hpp"
#include "cnf/errors.hpp"
#include "cnf/image_io.hpp"
#include "cnf/manifest.hpp"
#include "cnf/render.hpp"

namespace cnf {

enum class FieldMode { Image2D, Radiance3D };
enum class ImageSplit { VerticalStrips, SequentialPatches };

using Rgb = std::array<float, 3>;

/// Contiguous [begin, end) ranges: equal splits with the remainder assigned
/// to the last range.
inline std::vector<std::pair<std::size_t, std::size_t>> partition_ranges(std::size_t count, std::size_t parts) {
  if (parts < 1 || parts > count)
    throw UsageError("partition: need 1 <= n_tasks <= " + std::to_string(count) + ", got " + std::to_string(parts));
  std::vector<std::pair<std::size_t, std::size_t>> out;
  const std::size_t base = count / parts;
  for (std::size_t i = 0; i < parts; ++i) {
    const std::size_t b = i * base;
    out.emplace_back(b, i + 1 == parts ? count : b + base);
  }
  return out;
}

/// Balanced cut points floor(i * extent / parts), i = 0..parts.
inline std::vector<int> balanced_cuts(int extent, int parts) {
  std::vector<int> cuts(static_cast<std::size_t>(parts) + 1);
  for (int i = 0; i <= parts; ++i)
    cuts[i] = static_cast<int>(static_cast<long long>(i) * extent / parts);
  return cuts;
}

/// Location of one training ray: task and index within the task.
struct RayRef {
  std::size_t task = 0;
  std::size_t local = 0;
};

struct CameraRecord {
  Pose6 pose{};
  Intrinsics intrinsics;
};

class TaskStream {
 public:
  /// Radiance-field stream: frames split into contiguous tasks. With
  /// holdout_every = k > 0, frames whose global index is a multiple of k are
  /// withheld from training and only used for evaluation.
  static TaskStream from_frames(const SceneManifest& manifest, std::vector<Image> images, std::size_t n_tasks,
                                std::size_t holdout_every = 0) {
    if (images.size() != manifest.frames.size()) throw UsageError("task stream: one image per frame required");
    TaskStream s;
    s.mode_ = FieldMode::Radiance3D;
    s.box_ = manifest.box;
    s.background_ = manifest.background;
    s.width_ = manifest.intrinsics.width;
    s.height_ = manifest.intrinsics.height;
    for (std::size_t f = 0; f < images.size(); ++f) {
      if (images[f].width != s.width_ || images[f].height != s.height_)
        throw DataError("frame " + std::to_string(manifest.frames[f].index) + ": image is " +
                        std::to_string(images[f].width) + "x" + std::to_string(images[f].height) + ", intrinsics say " +
                        std::to_string(s.width_) + "x" + std::to_string(s.height_));
      s.cameras_.push_back({manifest.frames[f].pose, manifest.intrinsics});
    }
    s.images_ = std::move(images);
    for (const auto& [b, e] : partition_ranges(s.images_.size(), n_tasks)) {
      Task t;
      for (std::size_t f = b; f < e; ++f) {
        if (holdout_every > 0 && f % holdout_every == 0 && e - b > 1)
          t.holdout_frames.push_back(f);
        else
          t.frames.push_back(f);
      }
      t.rays = t.frames.size() * s.pixels_per_frame();
      s.tasks_.push_back(std::move(t));
    }
    s.finish();
    return s;
  }

  /// Image-field stream: pixels of one image split spatially into tasks.
  static TaskStream from_image(Image image, std::size_t n_tasks, ImageSplit split) {
    if (n_tasks < 1) throw UsageError("image stream: need at least one task");
    TaskStream s;
    s.mode_ = FieldMode::Image2D;
    s.width_ = image.width;
    s.height_ = image.height;
    std::vector<std::array<int, 4>> rects;  // x0, x1, y0, y1
    if (split == ImageSplit::VerticalStrips) {
      if (static_cast<int>(n_tasks) > image.width) throw UsageError("image stream: more strips than columns");
      const auto cx = balanced_cuts(image.width, static_cast<int>(n_tasks));
      for (std::size_t i = 0; i < n_tasks; ++i) rects.push_back({cx[i], cx[i + 1], 0, image.height});
    } else {
      // Rows of patches in raster order; the last row takes the remainder.
      std::size_t rows = 1;
      while ((rows + 1) * (rows + 1) <= n_tasks) ++rows;
      const auto row_ranges = partition_ranges(n_tasks, rows);
      const auto cy = balanced_cuts(image.height, static_cast<int>(rows));
      for (std::size_t r = 0; r < rows; ++r) {
        const int cols = static_cast<int>(row_ranges[r].second - row_ranges[r].first);
        if (cols > image.width || static_cast<int>(rows) > image.height)
          throw UsageError("image stream: image too small for that many patches");
        const auto cx = balanced_cuts(image.width, cols);
        for (int c = 0; c < cols; ++c) rects.push_back({cx[c], cx[c + 1], cy[r], cy[r + 1]});
      }
    }
    for (const auto& r : rects) {
      Task t;
      for (int y = r[2]; y < r[3]; ++y)
        for (int x = r[0]; x < r[1]; ++x) t.pixels.push_back(static_cast<std::uint32_t>(y * image.width + x));
      t.rays = t.pixels.size();
      s.tasks_.push_back(std::move(t));
    }
    s.images_.push_back(std::move(image));
    s.finish();
    return s;
  }

  FieldMode mode() const { return mode_; }
  int spatial_dim() const { return mode_ == FieldMode::Image2D ? 2 : 3; }
  std::size_t num_tasks() const { return tasks_.size(); }
  std::size_t task_rays(std::size_t t) const { return tasks_.at(t).rays; }
  std::size_t task_offset(std::size_t t) const { return offsets_.at(t); }
  const Aabb& box() const { return box_; }
  const Vec3& background() const { return background_; }
  int width() const { return width_; }
  int height() const { return height_; }
  std::size_t pixels_per_frame() const { return static_cast<std::size_t>(width_) * height_; }

  const std::vector<std::size_t>& train_frames(std::size_t t) const { return tasks_.at(t).frames; }
  const std::vector<std::size_t>& holdout_frames(std::size_t t) const { return tasks_.at(t).holdout_frames; }
  const std::vector<std::uint32_t>& task_pixels(std::size_t t) const { return tasks_.at(t).pixels; }
  const std::vector<CameraRecord>& cameras() const { return cameras_; }
  std::size_t frame_count() const { return mode_ == FieldMode::Radiance3D ? images_.size() : 0; }

  /// Query for any pixel of a frame (3D) or of the image (2D, frame = 0).
  Query pixel_query(std::size_t frame, std::size_t pixel) const {
    const int x = static_cast<int>(pixel % static_cast<std::size_t>(width_));
    const int y = static_cast<int>(pixel / static_cast<std::size_t>(width_));
    if (mode_ == FieldMode::Image2D) return make_point_query((x + 0.5) / width_, (y + 0.5) / height_, pixel);
    const Camera cam = Camera::from_pose6(cameras_[frame].intrinsics, cameras_[frame].pose);
    return make_ray_query(pixel_center_ray(cam, x, y), box_, frame * pixels_per_frame() + pixel);
  }

  Rgb pixel_value(std::size_t frame, std::size_t pixel) const {
    const float* p = images_.at(frame).rgb.data() + 3 * pixel;
    return {p[0], p[1], p[2]};
  }

  /// (frame, pixel) of a training ray.
  std::pair<std::size_t, std::size_t> resolve(const RayRef& r) const {
    const Task& t = tasks_.at(r.task);
    if (r.local >= t.rays) throw UsageError("ray index out of range for task " + std::to_string(r.task));
    if (mode_ == FieldMode::Image2D) return {0, t.pixels[r.local]};
    return {t.frames[r.local / pixels_per_frame()], r.local % pixels_per_frame()};
  }

  const Image& image(std::size_t frame) const { return images_.at(frame); }

 private:
  struct Task {
    std::vector<std::size_t> frames;
    std::vector<std::size_t> holdout_frames;
    std::vector<std::uint32_t> pixels;
    std::size_t rays = 0;
  };

  void finish() {
    offsets_.assign(tasks_.size() + 1, 0);
    for (std::size_t t = 0; t < tasks_.size(); ++t) offsets_[t + 1] = offsets_[t] + tasks_[t].rays;
  }

  FieldMode mode_ = FieldMode::Image2D;
  Aabb box_;
  Vec3 background_{0, 0, 0};
  int width_ = 0;
  int height_ = 0;
  std::vector<Image> images_;
  std::vector<CameraRecord> cameras_;
  std::vector<Task> tasks_;
  std::vector<std::size_t> offsets_;
};

/// Training-time access to a stream at one stage. Rays of tasks 0..stage are
/// visible; ground truth only for task `stage`. An unrestricted view (joint
/// training) sees every task's rays and pixels.
class StageView {
 public:
  StageView(const TaskStream& stream, std::size_t stage, bool unrestricted = false)
      : stream_(&stream), stage_(stage), unrestricted_(unrestricted) {
    if (stage >= stream.num_tasks()) throw UsageError("stage index out of range");
  }

  std::size_t stage() const { return stage_; }
  bool unrestricted() const { return unrestricted_; }
  const TaskStream& stream() const { return *stream_; }

  std::size_t last_visible_task() const { return unrestricted_ ? stream_->num_tasks() - 1 : stage_; }

  /// Number of rays in the cumulative registry.
  std::size_t registry_size() const { return stream_->task_offset(last_visible_task() + 1); }

  RayRef locate(std::size_t global) const {
    if (global >= registry_size()) throw UsageError("ray registry index out of range");
    std::size_t t = 0;
    while (stream_->task_offset(t + 1) <= global) ++t;
    return {t, global - stream_->task_offset(t)};
  }

  Query query(const RayRef& r) const {
    if (r.task > last_visible_task())
      throw AccessError("rays of task " + std::to_string(r.task + 1) + " are not available at stage " +
                        std::to_string(stage_ + 1));
    const auto [frame, pixel] = stream_->resolve(r);
    return stream_->pixel_query(frame, pixel);
  }

  Rgb ground_truth(const RayRef& r) const {
    if (!unrestricted_ && r.task != stage_)
      throw AccessError("ground truth of task " + std::to_string(r.task + 1) + " is not available at stage " +
                        std::to_string(stage_ + 1));
    const auto [frame, pixel] = stream_->resolve(r);
    return stream_->pixel_value(frame, pixel);
  }

 private:
  const TaskStream* stream_;
  std::size_t stage_;
  bool unrestricted_;
};

/// Loads a manifest's images and splits its frames into tasks.
inline TaskStream partition_tasks(const SceneManifest& manifest, std::size_t n_tasks, std::size_t holdout_every = 0) {
  std::vector<Image> images;
  images.reserve(manifest.frames.size());
  for (std::size_t f = 0; f < manifest.frames.size(); ++f) {
    try {
      images.push_back(read_png(manifest.image_path(f)));
    } catch (const DataError& e) {
      throw DataError("frame " + std::to_string(manifest.frames[f].index) + ": " + e.what());
    }
  }
  return TaskStream::from_frames(manifest, std::move(images), n_tasks, holdout_every);
}

inline TaskStream make_image2d(const std::filesystem::path& image_path, std::size_t n_tasks, ImageSplit split) {
  return TaskStream::from_image(read_png(image_path), n_tasks, split);
}

}  // namespace cnf
