#pragma once

// PSNR and per-stage evaluation of a model against a task stream.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "cnf/checkpoint.hpp"
#include "cnf/errors.hpp"
#include "cnf/field.hpp"
#include "cnf/image_io.hpp"
#include "cnf/render.hpp"
#include "cnf/task_stream.hpp"

namespace cnf {

/// Reported in place of +inf when two images are identical.
inline constexpr double kPsnrMax = 99.0;

struct Psnr {
  double db = 0;
  bool max = false;  // MSE was exactly zero
};

inline Psnr psnr_from_mse(double mse) {
  if (!(mse >= 0) || !std::isfinite(mse)) throw NumericError("psnr: invalid MSE");
  if (mse == 0) return {kPsnrMax, true};
  return {std::min(kPsnrMax, 10.0 * std::log10(1.0 / mse)), false};
}

/// 10 log10(1 / MSE) over all pixels and channels.
inline Psnr psnr(std::span<const float> pred, std::span<const float> gt) {
  if (pred.size() != gt.size() || pred.empty()) throw UsageError("psnr: images differ in size");
  double acc = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double e = static_cast<double>(pred[i]) - static_cast<double>(gt[i]);
    acc += e * e;
  }
  return psnr_from_mse(acc / static_cast<double>(pred.size()));
}

inline Psnr psnr(const Image& pred, const Image& gt) {
  if (pred.width != gt.width || pred.height != gt.height)
    throw UsageError("psnr: image sizes differ (" + std::to_string(pred.width) + "x" + std::to_string(pred.height) +
                     " vs " + std::to_string(gt.width) + "x" + std::to_string(gt.height) + ")");
  return psnr(std::span<const float>(pred.rgb), std::span<const float>(gt.rgb));
}

inline constexpr double kNoValue = std::numeric_limits<double>::quiet_NaN();

/// Per-task scores of one evaluated stage. Per-task PSNR is the mean of
/// per-frame PSNRs (2D: the PSNR over the task's pixels).
struct StageEval {
  std::size_t stage = 0;
  std::vector<double> task_psnr;     // tasks 0..stage
  std::vector<bool> task_max;        // any frame hit the MAX sentinel
  std::vector<double> holdout_psnr;  // NaN when a task has no held-out frames
  double frame_mean = 0;             // mean over every evaluated frame
  double seconds = 0;

  double task_mean() const {
    double s = 0;
    for (double v : task_psnr) s += v;
    return task_psnr.empty() ? kNoValue : s / static_cast<double>(task_psnr.size());
  }
};

/// Renders an entire frame (3D) or the whole image (2D) without jitter.
template <class S>
Image render_frame(const FieldModel<S>& model, const TaskStream& stream, std::size_t frame, const RenderConfig& cfg,
                   std::size_t threads = default_thread_count()) {
  const std::size_t n = stream.pixels_per_frame();
  std::vector<Query> queries(n);
  for (std::size_t p = 0; p < n; ++p) queries[p] = stream.pixel_query(frame, p);
  RenderConfig c = cfg;
  c.jitter = false;
  const auto colors = render_queries<S>(model, queries, c, 0, threads);
  Image img(stream.width(), stream.height());
  for (std::size_t p = 0; p < n; ++p)
    for (int k = 0; k < 3; ++k) img.rgb[3 * p + k] = static_cast<float>(colors[p][k]);
  return img;
}

namespace detail {

template <class S>
std::pair<double, bool> frames_psnr(const FieldModel<S>& model, const TaskStream& stream,
                                    const std::vector<std::size_t>& frames, const RenderConfig& cfg,
                                    std::size_t threads, std::vector<double>& all) {
  double sum = 0;
  bool any_max = false;
  for (std::size_t f : frames) {
    const Psnr p = psnr(render_frame(model, stream, f, cfg, threads), stream.image(f));
    sum += p.db;
    any_max |= p.max;
    all.push_back(p.db);
  }
  return {sum / static_cast<double>(frames.size()), any_max};
}

}  // namespace detail

/// Scores tasks 0..stage with jitter-off rendering. Never modifies the model.
template <class S>
StageEval eval_stage(const FieldModel<S>& model, const TaskStream& stream, std::size_t stage, const RenderConfig& cfg,
                     std::size_t threads = default_thread_count()) {
  if (stage >= stream.num_tasks()) throw UsageError("eval_stage: stage out of range");
  const auto start = std::chrono::steady_clock::now();
  StageEval ev;
  ev.stage = stage;
  std::vector<double> frames;
  if (stream.mode() == FieldMode::Image2D) {
    const Image full = render_frame(model, stream, 0, cfg, threads);
    const Image& gt = stream.image(0);
    for (std::size_t t = 0; t <= stage; ++t) {
      const auto& px = stream.task_pixels(t);
      std::vector<float> a, b;
      a.reserve(3 * px.size());
      b.reserve(3 * px.size());
      for (auto p : px)
        for (int k = 0; k < 3; ++k) {
          a.push_back(full.rgb[3 * p + k]);
          b.push_back(gt.rgb[3 * p + k]);
        }
      const Psnr p = psnr(a, b);
      ev.task_psnr.push_back(p.db);
      ev.task_max.push_back(p.max);
      ev.holdout_psnr.push_back(kNoValue);
      frames.push_back(p.db);
    }
  } else {
    for (std::size_t t = 0; t <= stage; ++t) {
      const auto [mean, any_max] = detail::frames_psnr(model, stream, stream.train_frames(t), cfg, threads, frames);
      ev.task_psnr.push_back(mean);
      ev.task_max.push_back(any_max);
      const auto& hold = stream.holdout_frames(t);
      if (hold.empty()) {
        ev.holdout_psnr.push_back(kNoValue);
      } else {
        std::vector<double> ignore;
        ev.holdout_psnr.push_back(detail::frames_psnr(model, stream, hold, cfg, threads, ignore).first);
      }
    }
  }
  double s = 0;
  for (double v : frames) s += v;
  ev.frame_mean = s / static_cast<double>(frames.size());
  ev.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return ev;
}

/// Lower-triangular stage x task PSNR matrix plus per-stage timings.
struct EvalReport {
  std::string method;
  std::size_t num_tasks = 0;
  std::vector<StageEval> stages;
  std::vector<double> train_seconds;  // per stage
  std::uint64_t fingerprint = 0;      // hash of the run configuration

  double psnr(std::size_t stage, std::size_t task) const {
    if (stage >= stages.size() || task > stage) return kNoValue;
    return stages[stage].task_psnr.at(task);
  }

  const StageEval& final_stage() const {
    if (stages.empty()) throw UsageError("report has no stages");
    return stages.back();
  }

  /// Mean over tasks of per-task PSNR after the last stage.
  double final_task_mean() const { return final_stage().task_mean(); }
  double final_frame_mean() const { return final_stage().frame_mean; }
};

inline std::string format_value(double v) {
  if (std::isnan(v)) return "";
  std::ostringstream os;
  os.precision(6);
  os << std::fixed << v;
  return os.str();
}

/// Long-format CSV: one row per evaluated (stage, task) pair.
inline std::string report_csv(const EvalReport& r, bool header = true) {
  std::ostringstream os;
  if (header) os << "method,stage,task,psnr_db,psnr_max_flag,holdout_psnr_db\n";
  for (const auto& s : r.stages)
    for (std::size_t t = 0; t < s.task_psnr.size(); ++t)
      os << r.method << ',' << s.stage + 1 << ',' << t + 1 << ',' << format_value(s.task_psnr[t]) << ','
         << (s.task_max[t] ? 1 : 0) << ',' << format_value(s.holdout_psnr[t]) << '\n';
  return os.str();
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  write_file_atomic(path, std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

}  // namespace cnf
