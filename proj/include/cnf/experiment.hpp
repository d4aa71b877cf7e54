#pragma once

// Desk-scale presets and multi-method comparisons emitting CSV tables.

#include <filesystem>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "cnf/continual.hpp"
#include "cnf/eval.hpp"
#include "cnf/task_stream.hpp"

namespace cnf {

/// Hash-grid field sized for CPU experiments.
inline FieldConfig desk_hash_field(int spatial_dim) {
  FieldConfig f;
  f.backbone = Backbone::Hash;
  f.spatial_dim = spatial_dim;
  f.grid.spatial_dim = spatial_dim;
  f.grid.levels = 16;
  f.grid.feature_dim = 2;
  f.grid.n_min = 16;
  f.grid.n_max = spatial_dim == 2 ? 512 : 256;
  f.grid.table_size = std::uint32_t{1} << (spatial_dim == 2 ? 15 : 17);
  f.mlp.hidden_layers = 2;
  f.mlp.hidden_width = 64;
  f.mlp.view_dependent = spatial_dim == 3;
  return f;
}

/// Frequency-encoded MLP field sized for CPU experiments.
inline FieldConfig desk_freq_field(int spatial_dim) {
  FieldConfig f;
  f.backbone = Backbone::Freq;
  f.spatial_dim = spatial_dim;
  f.grid.spatial_dim = spatial_dim;
  f.mlp.hidden_layers = 4;
  f.mlp.hidden_width = 128;
  f.mlp.pos_freqs = 10;
  f.mlp.view_dependent = spatial_dim == 3;
  return f;
}

inline ContinualConfig desk_config(int spatial_dim) {
  ContinualConfig c;
  c.hash_field = desk_hash_field(spatial_dim);
  c.freq_field = desk_freq_field(spatial_dim);
  c.render.n_samples = 64;
  c.batch_size = spatial_dim == 2 ? 1024 : 256;
  return c;
}

/// Capacity-limited setup (8 levels, 2^10 rows in 2D or 2^12 in 3D, one
/// hidden layer of 32) where the joint upper bound saturates instead of
/// improving with steps.
inline ContinualConfig compact_config(int spatial_dim) {
  ContinualConfig c = desk_config(spatial_dim);
  c.hash_field.grid.levels = 8;
  c.hash_field.grid.table_size = spatial_dim == 2 ? 1u << 10 : 1u << 12;
  c.hash_field.mlp.hidden_layers = 1;
  c.hash_field.mlp.hidden_width = 32;
  return c;
}

struct Comparison {
  std::vector<EvalReport> reports;
  std::vector<std::vector<std::uint64_t>> checkpoint_hashes;
};

inline void write_comparison(const Comparison& c, const std::filesystem::path& dir);

/// Runs every preset on the same stream with shared seeds and budgets.
/// With out_dir set, each method writes into out_dir/<method>/.
template <class S = float>
Comparison compare_methods(const TaskStream& stream, const std::vector<StrategyConfig>& presets, const ContinualConfig& cfg) {
  if (presets.empty()) throw UsageError("compare: no presets given");
  Comparison out;
  for (const auto& p : presets) {
    ContinualConfig c = cfg;
    c.evaluate = true;
    if (cfg.out_dir) c.out_dir = *cfg.out_dir / p.label();
    auto res = run_continual<S>(stream, p, c);
    out.reports.push_back(std::move(res.report));
    out.checkpoint_hashes.push_back(std::move(res.checkpoint_hashes));
  }
  if (cfg.out_dir) {
    std::filesystem::create_directories(*cfg.out_dir);
    write_comparison(out, *cfg.out_dir);
  }
  return out;
}

/// Per-task PSNR after the final stage.
inline std::string final_tasks_csv(const Comparison& c) {
  std::ostringstream os;
  os << "method,task,psnr_db,psnr_max_flag,holdout_psnr_db\n";
  for (const auto& r : c.reports) {
    const auto& s = r.final_stage();
    for (std::size_t t = 0; t < s.task_psnr.size(); ++t)
      os << r.method << ',' << t + 1 << ',' << format_value(s.task_psnr[t]) << ',' << (s.task_max[t] ? 1 : 0) << ','
         << format_value(s.holdout_psnr[t]) << '\n';
  }
  return os.str();
}

/// PSNR of one task across the stages after it was introduced.
inline std::string task_curve_csv(const Comparison& c, std::size_t task = 1) {
  std::ostringstream os;
  os << "method,stage,task,psnr_db\n";
  for (const auto& r : c.reports)
    for (std::size_t s = task; s < r.stages.size(); ++s)
      os << r.method << ',' << s + 1 << ',' << task + 1 << ',' << format_value(r.psnr(s, task)) << '\n';
  return os.str();
}

/// Both aggregations: mean of per-task PSNRs and mean over all frames.
inline std::string aggregate_csv(const Comparison& c) {
  std::ostringstream os;
  os << "method,tasks,mean_task_psnr_db,mean_frame_psnr_db,train_seconds\n";
  for (const auto& r : c.reports) {
    double secs = 0;
    for (double s : r.train_seconds) secs += s;
    os << r.method << ',' << r.num_tasks << ',' << format_value(r.final_task_mean()) << ','
       << format_value(r.final_frame_mean()) << ',' << format_value(secs) << '\n';
  }
  return os.str();
}

inline std::string matrix_csv(const Comparison& c) {
  std::string out;
  for (std::size_t i = 0; i < c.reports.size(); ++i) out += report_csv(c.reports[i], i == 0);
  return out;
}

inline void write_comparison(const Comparison& c, const std::filesystem::path& dir) {
  write_text(dir / "final_tasks.csv", final_tasks_csv(c));
  write_text(dir / "task2_curve.csv", task_curve_csv(c, 1));
  write_text(dir / "aggregate.csv", aggregate_csv(c));
  write_text(dir / "matrix.csv", matrix_csv(c));
}

struct SweepPoint {
  std::string method;
  std::size_t tasks = 0;
  double mean_task_psnr = 0;
  double mean_frame_psnr = 0;
};

/// Repeats a comparison for several task counts; make_stream(n) builds the
/// n-task stream. The per-task budget is held fixed.
template <class S = float>
std::vector<SweepPoint> task_count_sweep(const std::function<TaskStream(std::size_t)>& make_stream,
                                         const std::vector<std::size_t>& counts,
                                         const std::vector<StrategyConfig>& presets, const ContinualConfig& cfg) {
  std::vector<SweepPoint> out;
  for (std::size_t n : counts) {
    const TaskStream stream = make_stream(n);
    ContinualConfig c = cfg;
    if (cfg.out_dir) c.out_dir = *cfg.out_dir / ("tasks_" + std::to_string(n));
    const auto cmp = compare_methods<S>(stream, presets, c);
    for (const auto& r : cmp.reports) out.push_back({r.method, n, r.final_task_mean(), r.final_frame_mean()});
  }
  if (cfg.out_dir) {
    std::ostringstream os;
    os << "method,tasks,mean_task_psnr_db,mean_frame_psnr_db\n";
    for (const auto& p : out)
      os << p.method << ',' << p.tasks << ',' << format_value(p.mean_task_psnr) << ',' << format_value(p.mean_frame_psnr)
         << '\n';
    std::filesystem::create_directories(*cfg.out_dir);
    write_text(*cfg.out_dir / "sweep.csv", os.str());
  }
  return out;
}

}  // namespace cnf
