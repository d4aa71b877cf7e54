#pragma once

// Sequential-task training: strategy presets, frozen snapshots used as
// pseudo-ground-truth oracles, replay batches and the stage loop.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "cnf/checkpoint.hpp"
#include "cnf/errors.hpp"
#include "cnf/eval.hpp"
#include "cnf/field.hpp"
#include "cnf/render.hpp"
#include "cnf/rng.hpp"
#include "cnf/task_stream.hpp"
#include "cnf/training.hpp"

namespace cnf {

enum class Strategy { Naive, Ewc, Replay, Joint };

inline const char* to_string(Strategy s) {
  switch (s) {
    case Strategy::Naive: return "naive";
    case Strategy::Ewc: return "ewc";
    case Strategy::Replay: return "replay";
    case Strategy::Joint: return "joint";
  }
  return "?";
}

inline Strategy parse_strategy(const std::string& s) {
  if (s == "naive") return Strategy::Naive;
  if (s == "ewc") return Strategy::Ewc;
  if (s == "replay") return Strategy::Replay;
  if (s == "joint") return Strategy::Joint;
  throw UsageError("unknown strategy '" + s + "' (naive|ewc|replay|joint)");
}

inline Backbone parse_backbone(const std::string& s) {
  if (s == "hash") return Backbone::Hash;
  if (s == "freq") return Backbone::Freq;
  throw UsageError("unknown backbone '" + s + "' (hash|freq)");
}

struct StrategyConfig {
  std::string name;
  Strategy strategy = Strategy::Naive;
  Backbone backbone = Backbone::Hash;
  double ewc_lambda = 1.0;
  // EWC over every parameter, or over the grid features only.
  bool ewc_features_only = false;
  // When set, each replay batch holds exactly round(f * batch) rays of the
  // current task; otherwise rays are drawn uniformly from the registry.
  std::optional<double> replay_current_fraction;

  std::string label() const { return name.empty() ? std::string(to_string(strategy)) + "+" + to_string(backbone) : name; }

  static StrategyConfig make(Strategy s, Backbone b, std::string name = "") {
    StrategyConfig c;
    c.strategy = s;
    c.backbone = b;
    c.name = std::move(name);
    return c;
  }

  static std::vector<std::string> preset_names() {
    return {"nerf-incre", "ingp-incre", "ingp-ewc", "meil", "ours", "nerf-joint", "ingp-joint"};
  }

  static StrategyConfig preset(const std::string& name) {
    if (name == "nerf-incre") return make(Strategy::Naive, Backbone::Freq, name);
    if (name == "ingp-incre") return make(Strategy::Naive, Backbone::Hash, name);
    if (name == "ingp-ewc") return make(Strategy::Ewc, Backbone::Hash, name);
    if (name == "meil") return make(Strategy::Replay, Backbone::Freq, name);
    if (name == "ours") return make(Strategy::Replay, Backbone::Hash, name);
    if (name == "nerf-joint") return make(Strategy::Joint, Backbone::Freq, name);
    if (name == "ingp-joint") return make(Strategy::Joint, Backbone::Hash, name);
    std::string known;
    for (const auto& n : preset_names()) known += (known.empty() ? "" : ", ") + n;
    throw UsageError("unknown preset '" + name + "' (" + known + ")");
  }

  void validate() const {
    if (ewc_lambda < 0) throw UsageError("ewc lambda must be >= 0");
    if (replay_current_fraction && !(*replay_current_fraction >= 0 && *replay_current_fraction <= 1))
      throw UsageError("replay current fraction must be in [0,1]");
  }
};

/// Immutable copy of a model taken after a task finished.
template <class S>
class FrozenSnapshot {
 public:
  FrozenSnapshot(const FieldModel<S>& model, std::size_t task) : model_(model), task_(task) {}

  const FieldModel<S>& model() const { return model_; }
  std::size_t task() const { return task_; }
  std::size_t bytes() const { return model_.size() * sizeof(S); }
  std::uint64_t hash() const { return fnv1a64(serialize_checkpoint(model_)); }

  /// Pseudo-ground-truth colors, always rendered with midpoint sampling.
  std::vector<std::array<S, 3>> render(std::span<const Query> queries, const RenderConfig& cfg,
                                       std::size_t threads = default_thread_count()) const {
    RenderConfig c = cfg;
    c.jitter = false;
    return render_queries<S>(model_, queries, c, 0, threads);
  }

 private:
  const FieldModel<S> model_;
  const std::size_t task_;
};

template <class S>
std::shared_ptr<const FrozenSnapshot<S>> freeze(const FieldModel<S>& model, std::size_t task) {
  return std::make_shared<const FrozenSnapshot<S>>(model, task);
}

template <class S>
std::array<S, 3> to_target(const Rgb& c) {
  return {static_cast<S>(c[0]), static_cast<S>(c[1]), static_cast<S>(c[2])};
}

/// Ground-truth rays drawn uniformly from tasks [first, last] of the view.
template <class S>
LossBatch<S> gt_sample(const StageView& view, std::size_t first, std::size_t last, std::size_t batch_size, Rng& rng) {
  const auto& s = view.stream();
  const std::size_t begin = s.task_offset(first);
  const std::size_t count = s.task_offset(last + 1) - begin;
  LossBatch<S> b;
  for (std::size_t k = 0; k < batch_size; ++k) {
    const RayRef r = view.locate(begin + rng.below(count));
    b.push(view.query(r), Source::GroundTruth, to_target<S>(view.ground_truth(r)));
  }
  return b;
}

/// Mixed batch: rays drawn uniformly from the cumulative registry; current
/// task rays carry ground truth, earlier rays carry oracle renders.
template <class S>
LossBatch<S> replay_sample(const StageView& view, const FrozenSnapshot<S>* oracle, std::size_t batch_size, Rng& rng,
                           const RenderConfig& cfg, std::size_t threads = default_thread_count(),
                           std::optional<double> current_fraction = std::nullopt) {
  const std::size_t stage = view.stage();
  if (stage > 0 && oracle == nullptr) throw UsageError("replay_sample: stage > 1 needs a frozen oracle");
  if (batch_size == 0) throw UsageError("replay_sample: batch size must be positive");
  const auto& s = view.stream();
  std::vector<RayRef> refs;
  refs.reserve(batch_size);
  if (current_fraction && stage > 0) {
    const auto n_cur = static_cast<std::size_t>(std::llround(*current_fraction * static_cast<double>(batch_size)));
    const std::size_t past = s.task_offset(stage);
    for (std::size_t k = 0; k < batch_size; ++k)
      refs.push_back(k < n_cur ? RayRef{stage, rng.below(s.task_rays(stage))} : view.locate(rng.below(past)));
  } else {
    for (std::size_t k = 0; k < batch_size; ++k) refs.push_back(view.locate(rng.below(view.registry_size())));
  }
  LossBatch<S> b;
  std::vector<Query> oracle_queries;
  std::vector<std::size_t> oracle_slots;
  for (const auto& r : refs) {
    const Query q = view.query(r);
    if (r.task == stage) {
      b.push(q, Source::GroundTruth, to_target<S>(view.ground_truth(r)));
    } else {
      oracle_slots.push_back(b.size());
      oracle_queries.push_back(q);
      b.push(q, Source::Oracle, {});
    }
  }
  if (!oracle_queries.empty()) {
    const auto colors = oracle->render(oracle_queries, cfg, threads);
    for (std::size_t k = 0; k < colors.size(); ++k) b.targets[oracle_slots[k]] = colors[k];
  }
  return b;
}

/// Persistent state kept by replay beyond the live model: one snapshot plus
/// pose and intrinsics scalars for every past camera.
inline constexpr std::size_t kCameraScalars = 6 + 6;

inline std::size_t replay_memory_bytes(std::size_t snapshot_bytes, const TaskStream& stream, std::size_t stage) {
  std::size_t cams = 0;
  if (stream.mode() == FieldMode::Radiance3D)
    for (std::size_t t = 0; t < stage; ++t) cams += stream.train_frames(t).size();
  return snapshot_bytes + cams * kCameraScalars * sizeof(double);
}

struct ContinualConfig {
  FieldConfig hash_field;
  FieldConfig freq_field;
  RenderConfig render;
  AdamConfig adam;
  std::size_t batch_size = 1024;
  Budget budget = Budget::steps(500);
  std::uint64_t seed = 0;
  std::size_t fisher_batches = 128;
  std::size_t threads = default_thread_count();
  std::optional<std::filesystem::path> out_dir;
  bool evaluate = true;

  const FieldConfig& field_for(Backbone b) const { return b == Backbone::Hash ? hash_field : freq_field; }
};

template <class S>
struct ContinualResult {
  FieldModel<S> model;
  EvalReport report;
  std::vector<StepRecord> steps;
  std::vector<std::size_t> replay_bytes;          // per stage (replay only)
  std::vector<std::uint64_t> checkpoint_hashes;  // per stage
};

inline std::string checkpoint_name(std::size_t stage) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "task_%02zu.cnf1", stage + 1);
  return buf;
}

/// Key-value description of a run, written next to its checkpoints.
inline std::string experiment_manifest(const StrategyConfig& strat, const ContinualConfig& cfg, const TaskStream& stream) {
  const FieldConfig& f = cfg.field_for(strat.backbone);
  std::ostringstream os;
  os.precision(17);
  os << "format=cnf-experiment/1\n"
     << "method=" << strat.label() << "\n"
     << "strategy=" << to_string(strat.strategy) << "\n"
     << "backbone=" << to_string(strat.backbone) << "\n"
     << "mode=" << (stream.mode() == FieldMode::Image2D ? "2d" : "3d") << "\n"
     << "tasks=" << stream.num_tasks() << "\n"
     << "budget=" << cfg.budget.str() << "\n"
     << "batch_size=" << cfg.batch_size << "\n"
     << "seed=" << cfg.seed << "\n"
     << "n_samples=" << cfg.render.n_samples << "\n"
     << "lr_features=" << cfg.adam.lr_features << "\n"
     << "lr_mlp=" << cfg.adam.lr_mlp << "\n"
     << "grid_levels=" << f.grid.levels << "\n"
     << "grid_table_size=" << f.grid.table_size << "\n"
     << "grid_feature_dim=" << f.grid.feature_dim << "\n"
     << "grid_n_min=" << f.grid.n_min << "\n"
     << "grid_n_max=" << f.grid.n_max << "\n"
     << "mlp_hidden_layers=" << f.mlp.hidden_layers << "\n"
     << "mlp_hidden_width=" << f.mlp.hidden_width << "\n"
     << "mlp_pos_freqs=" << f.mlp.pos_freqs << "\n";
  if (strat.strategy == Strategy::Ewc)
    os << "ewc_lambda=" << strat.ewc_lambda << "\newc_features_only=" << strat.ewc_features_only
       << "\nfisher_batches=" << cfg.fisher_batches << "\n";
  if (strat.replay_current_fraction) os << "replay_current_fraction=" << *strat.replay_current_fraction << "\n";
  return os.str();
}

/// Render settings with the stream's scene box and background.
inline RenderConfig stream_render_config(const RenderConfig& base, const TaskStream& stream) {
  RenderConfig r = base;
  if (stream.mode() == FieldMode::Radiance3D) {
    r.box = stream.box();
    r.background = stream.background();
  }
  return r;
}

/// Trains the stream's tasks in order under one strategy. After each stage
/// the replay oracle is refrozen (only the latest is kept), EWC re-estimates
/// and accumulates its Fisher diagonal, a checkpoint is written when an
/// output directory is configured, and tasks seen so far are evaluated.
template <class S>
ContinualResult<S> run_continual(const TaskStream& stream, const StrategyConfig& strat, const ContinualConfig& cfg) {
  if (stream.num_tasks() == 0) throw UsageError("run_continual: empty task stream");
  strat.validate();
  cfg.budget.validate();
  if (cfg.batch_size == 0) throw UsageError("batch size must be positive");
  FieldConfig fc = cfg.field_for(strat.backbone);
  fc.backbone = strat.backbone;
  fc.spatial_dim = stream.spatial_dim();
  fc.grid.spatial_dim = stream.spatial_dim();
  if (fc.spatial_dim == 2) fc.mlp.view_dependent = false;
  fc.init_seed = cfg.seed;
  const RenderConfig render = stream_render_config(cfg.render, stream);

  ContinualResult<S> res{FieldModel<S>(fc), {}, {}, {}, {}};
  FieldModel<S>& model = res.model;
  res.report.method = strat.label();
  res.report.num_tasks = stream.num_tasks();
  res.report.fingerprint = fnv1a64(experiment_manifest(strat, cfg, stream));
  OptimState<S> state(cfg.adam, model.size());
  std::shared_ptr<const FrozenSnapshot<S>> oracle;
  FisherDiag<S> fisher;
  const bool joint = strat.strategy == Strategy::Joint;

  if (cfg.out_dir) {
    std::filesystem::create_directories(*cfg.out_dir);
    write_text(*cfg.out_dir / "experiment.txt", experiment_manifest(strat, cfg, stream));
  }

  for (std::size_t stage = 0; stage < stream.num_tasks(); ++stage) {
    const StageView view(stream, stage, joint);
    Rng batch_rng(derive_seed(cfg.seed, {cnf::stream::kTrain, stage}));
    BatchSource<S> source;
    switch (strat.strategy) {
      case Strategy::Naive:
      case Strategy::Ewc:
        source.next_batch = [&](std::uint64_t) { return gt_sample<S>(view, stage, stage, cfg.batch_size, batch_rng); };
        break;
      case Strategy::Joint:
        source.next_batch = [&](std::uint64_t) {
          return gt_sample<S>(view, 0, stream.num_tasks() - 1, cfg.batch_size, batch_rng);
        };
        break;
      case Strategy::Replay:
        source.next_batch = [&](std::uint64_t) {
          return replay_sample<S>(view, oracle.get(), cfg.batch_size, batch_rng, render, cfg.threads,
                                  strat.replay_current_fraction);
        };
        break;
    }
    if (strat.strategy == Strategy::Ewc && stage > 0) {
      source.ewc = &fisher;
      source.ewc_lambda = strat.ewc_lambda;
    }
    if (strat.strategy == Strategy::Replay)
      res.replay_bytes.push_back(replay_memory_bytes(oracle ? oracle->bytes() : 0, stream, stage));

    const auto t0 = std::chrono::steady_clock::now();
    auto log = train_budgeted(model, source, cfg.budget, state, render, cfg.seed, static_cast<int>(stage), cfg.threads);
    res.steps.insert(res.steps.end(), log.begin(), log.end());

    if (strat.strategy == Strategy::Replay) oracle = freeze(model, stage);
    if (strat.strategy == Strategy::Ewc) {
      Rng fisher_rng(derive_seed(cfg.seed, {cnf::stream::kFisher, stage}));
      PassContext ctx{render, derive_seed(cfg.seed, {cnf::stream::kFisher, stage, 1}), cfg.threads};
      auto est = fisher_estimate<S>(
          model, [&](std::size_t) { return gt_sample<S>(view, stage, stage, cfg.batch_size, fisher_rng); },
          cfg.fisher_batches, ctx);
      if (strat.ewc_features_only)
        std::fill(est.diag.begin() + static_cast<std::ptrdiff_t>(model.layout().feature_size), est.diag.end(), S(0));
      fisher = accumulate_fisher(fisher, est);
    }
    res.report.train_seconds.push_back(
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());

    const auto bytes = serialize_checkpoint(model);
    res.checkpoint_hashes.push_back(fnv1a64(bytes));
    if (cfg.out_dir) write_file_atomic(*cfg.out_dir / checkpoint_name(stage), bytes);
    if (cfg.evaluate) res.report.stages.push_back(eval_stage(model, stream, stage, render, cfg.threads));
  }
  if (cfg.out_dir) {
    write_step_log((*cfg.out_dir / "steps.csv").string(), res.steps, false);
    if (cfg.evaluate) write_text(*cfg.out_dir / "eval.csv", report_csv(res.report));
  }
  return res;
}

}  // namespace cnf
