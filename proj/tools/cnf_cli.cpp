// Command-line front end: dataset generation, partitioning, training,
// evaluation, method comparison and rendering.

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "cnf/cnf.hpp"

namespace fs = std::filesystem;
using namespace cnf;

namespace {

struct DataOptions {
  std::string dataset;
  std::string mode = "3d";
  std::size_t tasks = 10;
  std::string split = "strips";
  std::size_t holdout_every = 8;
};

struct TrainOptions {
  std::string backbone = "hash";
  std::string strategy = "replay";
  std::string preset;
  std::string budget = "steps:500";
  std::uint64_t seed = 0;
  std::size_t batch = 0;
  int samples = 64;
  double lambda = 1.0;
  bool ewc_features_only = false;
  std::optional<double> replay_fraction;
  std::size_t fisher_batches = 128;
  std::string model = "desk";
  std::string out;
};

void add_data_options(CLI::App* cmd, DataOptions& d) {
  cmd->add_option("--dataset", d.dataset, "Scene directory (3d) or PNG image (2d)")->required();
  cmd->add_option("--mode", d.mode, "2d or 3d")->check(CLI::IsMember({"2d", "3d"}));
  cmd->add_option("--tasks", d.tasks, "Number of sequential tasks");
  cmd->add_option("--split", d.split, "2d partition: strips or patches")->check(CLI::IsMember({"strips", "patches"}));
  cmd->add_option("--holdout-every", d.holdout_every, "3d: withhold every k-th frame (0 = none)");
}

int dim_of(const DataOptions& d) { return d.mode == "2d" ? 2 : 3; }

TaskStream load_stream(const DataOptions& d) {
  if (d.mode == "2d")
    return make_image2d(d.dataset, d.tasks, d.split == "patches" ? ImageSplit::SequentialPatches : ImageSplit::VerticalStrips);
  fs::path p = d.dataset;
  if (fs::is_directory(p)) p /= "manifest.json";
  return partition_tasks(load_manifest(p), d.tasks, d.holdout_every);
}

void add_train_options(CLI::App* cmd, TrainOptions& t, bool method_flags) {
  if (method_flags) {
    cmd->add_option("--backbone", t.backbone, "hash or freq");
    cmd->add_option("--strategy", t.strategy, "naive, ewc, replay or joint");
    cmd->add_option("--preset", t.preset, "Named method; overrides --strategy/--backbone");
    cmd->add_option("--lambda", t.lambda, "EWC penalty weight");
    cmd->add_flag("--ewc-features-only", t.ewc_features_only, "Restrict the EWC penalty to grid features");
    cmd->add_option("--replay-fraction", t.replay_fraction, "Fixed share of current-task rays per replay batch");
  }
  cmd->add_option("--budget", t.budget, "steps:N or secs:S per task");
  cmd->add_option("--seed", t.seed, "Master seed");
  cmd->add_option("--batch", t.batch, "Rays per step (default 1024 in 2d, 256 in 3d)");
  cmd->add_option("--samples", t.samples, "Samples per ray");
  cmd->add_option("--fisher-batches", t.fisher_batches, "Minibatches per Fisher estimate");
  cmd->add_option("--model", t.model, "Model size: desk or compact")->check(CLI::IsMember({"desk", "compact"}));
  cmd->add_option("--out", t.out, "Output directory")->required();
}

ContinualConfig make_config(const TrainOptions& t, int dim) {
  ContinualConfig c = t.model == "compact" ? compact_config(dim) : desk_config(dim);
  c.budget = Budget::parse(t.budget);
  c.seed = t.seed;
  if (t.batch) c.batch_size = t.batch;
  if (t.samples < 1) throw UsageError("--samples must be >= 1");
  c.render.n_samples = t.samples;
  c.fisher_batches = t.fisher_batches;
  c.out_dir = fs::path(t.out);
  return c;
}

StrategyConfig make_strategy(const TrainOptions& t) {
  StrategyConfig s = t.preset.empty() ? StrategyConfig::make(parse_strategy(t.strategy), parse_backbone(t.backbone))
                                      : StrategyConfig::preset(t.preset);
  s.ewc_lambda = t.lambda;
  s.ewc_features_only = t.ewc_features_only;
  s.replay_current_fraction = t.replay_fraction;
  s.validate();
  return s;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  for (std::string item; std::getline(ss, item, ',');)
    if (!item.empty()) out.push_back(item);
  return out;
}

std::size_t stage_index(std::size_t stage_1based, const TaskStream& stream) {
  const std::size_t s = stage_1based == 0 ? stream.num_tasks() : stage_1based;
  if (s > stream.num_tasks()) throw UsageError("--stage exceeds the number of tasks");
  return s - 1;
}

int cmd_make_synthetic(const std::string& mode, const fs::path& out, std::uint64_t seed, int frames, int width,
                       int height) {
  if (mode == "2d") {
    fs::create_directories(out);
    write_png(out / "image.png", make_procedural_image(width ? width : 512, height ? height : 512, seed));
    std::cout << (out / "image.png").string() << "\n";
    return 0;
  }
  SyntheticScene s = SyntheticScene::desk_default();
  s.orbit.frames = frames;
  if (width) s.width = width;
  if (height) s.height = height;
  const auto m = make_synthetic(s, out, seed);
  std::cout << m.frames.size() << " frames written to " << out.string() << "\n";
  return 0;
}

int cmd_partition(const DataOptions& d) {
  const TaskStream stream = load_stream(d);
  std::cout << "task,rays,items\n";
  for (std::size_t t = 0; t < stream.num_tasks(); ++t) {
    std::cout << t + 1 << ',' << stream.task_rays(t) << ',';
    if (stream.mode() == FieldMode::Radiance3D) {
      std::string items;
      for (auto f : stream.train_frames(t)) items += (items.empty() ? "" : " ") + std::to_string(f);
      for (auto f : stream.holdout_frames(t)) items += " h" + std::to_string(f);
      std::cout << items;
    } else {
      const auto& px = stream.task_pixels(t);
      const int w = stream.width();
      std::cout << "x" << px.front() % w << "-" << px.back() % w << " y" << px.front() / w << "-" << px.back() / w;
    }
    std::cout << '\n';
  }
  return 0;
}

int cmd_train(const DataOptions& d, const TrainOptions& t) {
  const TaskStream stream = load_stream(d);
  const StrategyConfig strat = make_strategy(t);
  const ContinualConfig cfg = make_config(t, dim_of(d));
  const auto res = run_continual<float>(stream, strat, cfg);
  std::cout << report_csv(res.report);
  std::cout << "# mean_task_psnr_db=" << format_value(res.report.final_task_mean())
            << " mean_frame_psnr_db=" << format_value(res.report.final_frame_mean()) << "\n";
  return 0;
}

int cmd_eval(const DataOptions& d, const fs::path& checkpoint, std::size_t stage, int samples, const std::string& out) {
  const TaskStream stream = load_stream(d);
  const auto model = load_checkpoint<float>(checkpoint);
  if (model.config().spatial_dim != stream.spatial_dim())
    throw DataError("checkpoint is " + std::to_string(model.config().spatial_dim) + "d, dataset is " + d.mode);
  RenderConfig rc;
  rc.n_samples = samples;
  EvalReport r;
  r.method = checkpoint.stem().string();
  r.num_tasks = stream.num_tasks();
  r.stages.push_back(eval_stage(model, stream, stage_index(stage, stream), stream_render_config(rc, stream)));
  const std::string csv = report_csv(r);
  if (!out.empty()) write_text(out, csv);
  std::cout << csv;
  return 0;
}

int cmd_compare(const DataOptions& d, const TrainOptions& t, const std::string& presets) {
  const TaskStream stream = load_stream(d);
  std::vector<StrategyConfig> list;
  for (const auto& name : split_list(presets)) list.push_back(StrategyConfig::preset(name));
  const auto cmp = compare_methods<float>(stream, list, make_config(t, dim_of(d)));
  std::cout << aggregate_csv(cmp);
  return 0;
}

int cmd_render(const DataOptions& d, const fs::path& checkpoint, std::size_t frame, int samples, const fs::path& out) {
  const TaskStream stream = load_stream(d);
  const auto model = load_checkpoint<float>(checkpoint);
  if (model.config().spatial_dim != stream.spatial_dim())
    throw DataError("checkpoint is " + std::to_string(model.config().spatial_dim) + "d, dataset is " + d.mode);
  if (stream.mode() == FieldMode::Radiance3D && frame >= stream.frame_count())
    throw UsageError("--frame out of range (dataset has " + std::to_string(stream.frame_count()) + " frames)");
  RenderConfig rc;
  rc.n_samples = samples;
  const Image img = render_frame(model, stream, stream.mode() == FieldMode::Radiance3D ? frame : 0,
                                 stream_render_config(rc, stream));
  if (out.extension() == ".npy")
    write_npy(out, img);
  else
    write_png(out, img);
  const Psnr p = psnr(img, stream.image(stream.mode() == FieldMode::Radiance3D ? frame : 0));
  std::cout << "psnr_db=" << format_value(p.db) << (p.max ? " (max)" : "") << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Continual neural fields on the CPU"};
  app.require_subcommand(1);

  std::string syn_mode = "3d", syn_out;
  std::uint64_t syn_seed = 0;
  int syn_frames = 40, syn_width = 0, syn_height = 0;
  auto* syn = app.add_subcommand("make-synthetic", "Render the procedural benchmark dataset");
  syn->add_option("--mode", syn_mode, "2d (single image) or 3d (orbit)")->check(CLI::IsMember({"2d", "3d"}));
  syn->add_option("--out", syn_out, "Output directory")->required();
  syn->add_option("--seed", syn_seed, "Seed");
  syn->add_option("--frames", syn_frames, "3d: number of orbit frames");
  syn->add_option("--width", syn_width, "Image width");
  syn->add_option("--height", syn_height, "Image height");

  DataOptions part_data;
  auto* part = app.add_subcommand("partition", "Print the task split of a dataset");
  add_data_options(part, part_data);

  DataOptions train_data;
  TrainOptions train_opts;
  auto* train = app.add_subcommand("train", "Train sequentially over tasks");
  add_data_options(train, train_data);
  add_train_options(train, train_opts, true);

  DataOptions eval_data;
  std::string eval_ckpt, eval_out;
  std::size_t eval_stage_arg = 0;
  int eval_samples = 64;
  auto* ev = app.add_subcommand("eval", "Score a checkpoint on tasks 1..stage");
  add_data_options(ev, eval_data);
  ev->add_option("--checkpoint", eval_ckpt, "Checkpoint file")->required();
  ev->add_option("--stage", eval_stage_arg, "Last task to score (default: all)");
  ev->add_option("--samples", eval_samples, "Samples per ray");
  ev->add_option("--out", eval_out, "Write the CSV here as well");

  DataOptions cmp_data;
  TrainOptions cmp_opts;
  std::string cmp_presets = "ingp-incre,ingp-ewc,ours,ingp-joint";
  auto* cmp = app.add_subcommand("compare", "Run several methods under equal budgets");
  add_data_options(cmp, cmp_data);
  add_train_options(cmp, cmp_opts, false);
  cmp->add_option("--presets", cmp_presets, "Comma-separated method names");

  DataOptions ren_data;
  std::string ren_ckpt, ren_out;
  std::size_t ren_frame = 0;
  int ren_samples = 64;
  auto* ren = app.add_subcommand("render", "Render one frame (3d) or the image (2d) from a checkpoint");
  add_data_options(ren, ren_data);
  ren->add_option("--checkpoint", ren_ckpt, "Checkpoint file")->required();
  ren->add_option("--frame", ren_frame, "Frame index (3d)");
  ren->add_option("--samples", ren_samples, "Samples per ray");
  ren->add_option("--out", ren_out, "Output .png or .npy")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : static_cast<int>(ExitCode::Usage);
  }

  try {
    if (*syn) return cmd_make_synthetic(syn_mode, syn_out, syn_seed, syn_frames, syn_width, syn_height);
    if (*part) return cmd_partition(part_data);
    if (*train) return cmd_train(train_data, train_opts);
    if (*ev) return cmd_eval(eval_data, eval_ckpt, eval_stage_arg, eval_samples, eval_out);
    if (*cmp) return cmd_compare(cmp_data, cmp_opts, cmp_presets);
    if (*ren) return cmd_render(ren_data, ren_ckpt, ren_frame, ren_samples, ren_out);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return static_cast<int>(ExitCode::Usage);
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return static_cast<int>(ExitCode::Numeric);
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return static_cast<int>(ExitCode::Data);
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return static_cast<int>(ExitCode::Data);
  }
  return static_cast<int>(ExitCode::Usage);
}
