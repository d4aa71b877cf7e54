#include <gtest/gtest.h>

#include "cnf/checkpoint.hpp"
#include "cnf/training.hpp"
#include "grad_check.hpp"

using namespace cnf;

namespace {

FieldConfig image_field() {
  FieldConfig f;
  f.spatial_dim = 2;
  f.grid.spatial_dim = 2;
  f.grid.levels = 4;
  f.grid.n_min = 4;
  f.grid.n_max = 64;
  f.grid.table_size = 1u << 10;
  f.mlp.hidden_width = 16;
  f.mlp.view_dependent = false;
  f.init_seed = 11;
  return f;
}

LossBatch<float> image_batch(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  LossBatch<float> b;
  for (std::size_t i = 0; i < n; ++i) {
    const double u = rng.uniform(), v = rng.uniform();
    b.push(make_point_query(u, v, i), Source::GroundTruth,
           {static_cast<float>(u), static_cast<float>(v), static_cast<float>(0.5 * (u + v))});
  }
  return b;
}

BatchSource<float> gradient_source() {
  BatchSource<float> s;
  s.next_batch = [](std::uint64_t k) { return image_batch(256, 100 + k); };
  return s;
}

}  // namespace

TEST(Loss, ZeroWhenPredictionMatches) {
  FieldModel<double> m(image_field());
  LossBatch<double> b;
  for (int i = 0; i < 10; ++i) {
    const Query q = make_point_query(0.1 * i, 0.5, i);
    const auto s = field_eval<double>(std::array<double, 2>{0.1 * i, 0.5}, {}, m);
    b.push(q, Source::GroundTruth, s.rgb);
  }
  EXPECT_EQ(photometric_loss(b, m, PassContext{}).total, 0.0);
}

TEST(Loss, SumOverChannelsMeanOverRays) {
  auto cfg = image_field();
  cfg.backbone = Backbone::Freq;
  FieldModel<double> m(cfg);
  const auto& last = m.layout().trunk.back();
  for (int j = 0; j < last.in * last.out; ++j) m.params()[last.weight_offset + j] = 0;
  for (int c = 1; c < 4; ++c) m.params()[last.bias_offset + c] = 40;  // sigmoid -> 1
  LossBatch<double> b;
  b.push(make_point_query(0.5, 0.5, 0), Source::GroundTruth, {0, 0, 0});
  EXPECT_NEAR(photometric_loss(b, m, PassContext{}).total, 3.0, 1e-12);
  b.push(make_point_query(0.2, 0.5, 1), Source::Oracle, {1, 1, 1});
  const auto l = photometric_loss(b, m, PassContext{});
  EXPECT_NEAR(l.total, 1.5, 1e-12);
  EXPECT_NEAR(l.gt, 1.5, 1e-12);
  EXPECT_NEAR(l.oracle, 0.0, 1e-12);
}

TEST(Loss, RejectsBadBatches) {
  FieldModel<double> m(image_field());
  LossBatch<double> empty;
  EXPECT_THROW(photometric_loss(empty, m, PassContext{}), UsageError);
  LossBatch<double> bad;
  bad.push(make_point_query(0.5, 0.5, 0), Source::GroundTruth, {1.5, 0, 0});
  EXPECT_THROW(photometric_loss(bad, m, PassContext{}), UsageError);
}

TEST(Backward, UntouchedDenseRowsGetZeroGradient) {
  FieldModel<double> m(image_field());
  LossBatch<double> b;
  for (int i = 0; i < 20; ++i) b.push(make_point_query(0.05 + 0.01 * i, 0.1, i), Source::GroundTruth, {1, 0, 0});
  GradBuffer<double> g;
  backward(b, m, PassContext{}, g);
  const auto& lay = m.layout();
  const auto& cfg = m.config().grid;
  for (const auto& lvl : lay.levels) {
    if (lvl.mode != LevelMode::Dense) continue;
    std::vector<bool> touched(lvl.rows, false);
    for (int i = 0; i < 20; ++i) {
      const std::array<double, 2> x{0.05 + 0.01 * i, 0.1};
      std::array<std::uint64_t, 2> cell{};
      std::array<double, 2> frac{};
      locate_cell<double>(x, lvl.resolution, cell, frac);
      for (unsigned c = 0; c < 4; ++c) {
        std::array<std::uint64_t, 2> v{cell[0] + (c & 1u), cell[1] + (c >> 1)};
        touched[vertex_row(lvl, v, cfg)] = true;
      }
    }
    for (std::uint32_t r = 0; r < lvl.rows; ++r)
      if (!touched[r])
        for (int k = 0; k < cfg.feature_dim; ++k) EXPECT_EQ(g.values[lvl.offset + r * cfg.feature_dim + k], 0.0);
  }
}

TEST(Backward, ThreadCountDoesNotChangeGradient) {
  FieldConfig cfg;
  cfg.grid.levels = 3;
  cfg.grid.n_min = 4;
  cfg.grid.n_max = 16;
  cfg.grid.table_size = 1u << 10;
  FieldModel<float> m(cfg);
  RenderConfig rc;
  rc.n_samples = 32;
  rc.box = {{-1, -1, -1}, {1, 1, 1}};
  Rng rng(2);
  LossBatch<float> b;
  for (int i = 0; i < 600; ++i) {
    const Ray r{{0, 0, 3}, {rng.uniform(-0.2, 0.2), rng.uniform(-0.2, 0.2), -1}, 0, 0};
    b.push(make_ray_query(r, rc.box, i), Source::GroundTruth, {0.5f, 0.2f, 0.1f});
  }
  GradBuffer<float> g1, g4;
  const auto l1 = backward(b, m, PassContext{rc, 9, 1}, g1);
  const auto l4 = backward(b, m, PassContext{rc, 9, 4}, g4);
  EXPECT_EQ(l1.total, l4.total);
  EXPECT_EQ(g1.values, g4.values);
}

TEST(Ewc, PenaltyExamples) {
  FisherDiag<double> f;
  f.diag = {1, 1};
  f.reference = {0, 0};
  const std::vector<double> p{1, 1};
  EXPECT_DOUBLE_EQ(ewc_penalty<double>(p, f, 2.0), 2.0);
  EXPECT_EQ(ewc_penalty<double>(p, f, 0.0), 0.0);
  EXPECT_EQ(ewc_penalty<double>(f.reference, f, 2.0), 0.0);
  std::vector<double> g{0, 0};
  ewc_gradient<double>(p, f, 2.0, g);
  EXPECT_EQ(g, (std::vector<double>{2, 2}));
  EXPECT_THROW(ewc_penalty<double>(std::vector<double>{1}, f, 1.0), UsageError);
  EXPECT_THROW(ewc_penalty<double>(p, f, -1.0), UsageError);
}

TEST(Fisher, MeanOfSquaredGradients) {
  FisherAccumulator<double> acc(3);
  acc.add(std::vector<double>{1, 2, 0});
  acc.add(std::vector<double>{3, 2, 0});
  const auto f = acc.finish(std::vector<double>{7, 8, 9});
  EXPECT_EQ(f.diag, (std::vector<double>{5, 4, 0}));
  EXPECT_EQ(f.reference, (std::vector<double>{7, 8, 9}));
  EXPECT_EQ(f.minibatches, 2u);
  EXPECT_THROW(FisherAccumulator<double>(2).finish(std::vector<double>{0, 0}), UsageError);
}

TEST(Fisher, EstimateIsNonNegativeAndAccumulates) {
  FieldModel<double> m(image_field());
  const auto f = fisher_estimate<double>(
      m, [](std::size_t k) {
        LossBatch<double> b;
        Rng rng(k);
        for (int i = 0; i < 32; ++i) b.push(make_point_query(rng.uniform(), rng.uniform(), i), Source::GroundTruth, {1, 1, 1});
        return b;
      },
      4, PassContext{});
  for (double v : f.diag) EXPECT_GE(v, 0.0);
  const auto sum = accumulate_fisher(f, f);
  for (std::size_t k = 0; k < f.diag.size(); ++k) EXPECT_EQ(sum.diag[k], 2 * f.diag[k]);
  EXPECT_EQ(sum.minibatches, 8u);
  EXPECT_THROW(fisher_estimate<double>(m, nullptr, 0, PassContext{}), UsageError);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  auto cfg = image_field();
  cfg.backbone = Backbone::Freq;
  FieldModel<double> m(cfg);
  OptimState<double> st(AdamConfig{}, m.size());
  GradBuffer<double> g(m.size());
  const std::vector<double> before(m.params().begin(), m.params().end());
  g.values[0] = 1.0;
  optim_step(m, g, st);
  EXPECT_NEAR(m.params()[0] - before[0], -1e-3 / (1 + 1e-8), 1e-15);
  for (std::size_t k = 1; k < m.size(); ++k) EXPECT_EQ(m.params()[k], before[k]);
  EXPECT_EQ(st.step, 1u);
}

TEST(Adam, FeatureRateAndSparseUpdates) {
  FieldModel<double> m(image_field());
  OptimState<double> st(AdamConfig{}, m.size());
  GradBuffer<double> g(m.size());
  const double before0 = m.params()[0], before1 = m.params()[1];
  g.values[0] = 1.0;
  optim_step(m, g, st);
  EXPECT_NEAR(m.params()[0] - before0, -0.01, 1e-9);
  EXPECT_EQ(m.params()[1], before1);
  EXPECT_EQ(st.m[1], 0.0);
}

TEST(Adam, NonFiniteUpdateIsReported) {
  FieldModel<double> m(image_field());
  OptimState<double> st(AdamConfig{}, m.size());
  GradBuffer<double> g(m.size());
  g.values[3] = std::numeric_limits<double>::infinity();
  try {
    optim_step(m, g, st);
    FAIL();
  } catch (const NumericError& e) {
    EXPECT_EQ(e.param_index(), 3);
  }
}

TEST(Budget, Parsing) {
  EXPECT_EQ(Budget::parse("steps:5").amount, 5);
  EXPECT_EQ(Budget::parse("steps:0").amount, 0);
  EXPECT_EQ(Budget::parse("secs:1.5").kind, Budget::Kind::Seconds);
  for (const char* bad : {"steps:-1", "secs:0", "secs:-2", "steps:", "steps:3x", "minutes:4", "5"})
    EXPECT_THROW(Budget::parse(bad), UsageError) << bad;
}

TEST(TrainBudgeted, StepBudgets) {
  FieldModel<float> m(image_field());
  const auto init = serialize_checkpoint(m);
  OptimState<float> st(AdamConfig{}, m.size());
  EXPECT_TRUE(train_budgeted(m, gradient_source(), Budget::steps(0), st, RenderConfig{}, 1, 0, 1).empty());
  EXPECT_EQ(serialize_checkpoint(m), init);
  const auto log = train_budgeted(m, gradient_source(), Budget::steps(5), st, RenderConfig{}, 1, 0, 1);
  ASSERT_EQ(log.size(), 5u);
  EXPECT_EQ(log.back().step, 5u);
  EXPECT_LT(log.back().loss_gt, log.front().loss_gt);
}

TEST(TrainBudgeted, WallClockBudgetRunsAtLeastOneStep) {
  FieldModel<float> m(image_field());
  OptimState<float> st(AdamConfig{}, m.size());
  const auto log = train_budgeted(m, gradient_source(), Budget::seconds(0.2), st, RenderConfig{}, 1, 0, 1);
  EXPECT_GE(log.size(), 1u);
  EXPECT_GE(log.back().wall_ms, 200.0);
}

TEST(TrainBudgeted, BitIdenticalAcrossRunsAndThreads) {
  auto run = [](std::size_t threads) {
    FieldModel<float> m(image_field());
    OptimState<float> st(AdamConfig{}, m.size());
    train_budgeted(m, gradient_source(), Budget::steps(20), st, RenderConfig{}, 3, 0, threads);
    return serialize_checkpoint(m);
  };
  const auto a = run(1);
  EXPECT_EQ(a, run(1));
  EXPECT_EQ(a, run(3));
}

TEST(TrainBudgeted, ZeroLambdaEwcMatchesPlainTraining) {
  auto run = [](bool with_ewc) {
    FieldModel<float> m(image_field());
    OptimState<float> st(AdamConfig{}, m.size());
    FisherDiag<float> f;
    f.diag.assign(m.size(), 1.0f);
    f.reference.assign(m.size(), 0.5f);
    auto src = gradient_source();
    if (with_ewc) {
      src.ewc = &f;
      src.ewc_lambda = 0.0;
    }
    train_budgeted(m, src, Budget::steps(10), st, RenderConfig{}, 3, 0, 1);
    return serialize_checkpoint(m);
  };
  EXPECT_EQ(run(true), run(false));
}

TEST(StepLog, CsvSchema) {
  const auto path = (std::filesystem::temp_directory_path() / "cnf_steps.csv").string();
  write_step_log(path, {StepRecord{1, 0, 2.5, 0.1, 0.2, 0.0}}, false);
  write_step_log(path, {StepRecord{2, 1, 3.5, 0.1, 0.2, 0.3}}, true);
  std::ifstream in(path);
  std::string header, r1, r2;
  std::getline(in, header);
  std::getline(in, r1);
  std::getline(in, r2);
  EXPECT_EQ(header, "step,task_index,wall_clock_ms,loss_gt,loss_oracle,loss_ewc");
  EXPECT_EQ(r1.substr(0, 4), "1,0,");
  EXPECT_EQ(r2.substr(0, 4), "2,1,");
  std::filesystem::remove(path);
}
