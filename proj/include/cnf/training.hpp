#pragma once

// Losses, exact gradients of render -> loss, EWC, Fisher estimation, Adam
// and the budgeted training loop.

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "cnf/errors.hpp"
#include "cnf/field.hpp"
#include "cnf/parallel.hpp"
#include "cnf/render.hpp"

namespace cnf {

enum class Source : std::uint8_t { GroundTruth, Oracle };

/// Rays (or 2D points) with one supervision target each. Ground-truth rays
/// come from the current task's images, oracle rays carry colors rendered by
/// a frozen snapshot.
template <class S>
struct LossBatch {
  std::vector<Query> queries;
  std::vector<Source> sources;
  std::vector<std::array<S, 3>> targets;

  std::size_t size() const { return queries.size(); }

  void push(const Query& q, Source s, const std::array<S, 3>& t) {
    queries.push_back(q);
    sources.push_back(s);
    targets.push_back(t);
  }

  void validate() const {
    if (queries.empty()) throw UsageError("loss batch is empty");
    if (sources.size() != queries.size() || targets.size() != queries.size())
      throw UsageError("loss batch: mismatched array lengths");
    for (const auto& t : targets)
      for (S v : t)
        if (!(v >= S(-1e-5) && v <= S(1 + 1e-5))) throw UsageError("loss batch: target outside [0,1]");
  }
};

template <class S>
struct GradBuffer {
  std::vector<S> values;

  GradBuffer() = default;
  explicit GradBuffer(std::size_t n) : values(n, S(0)) {}
  std::size_t size() const { return values.size(); }
};

/// Loss decomposed by supervision source; total = gt + oracle.
struct LossParts {
  double total = 0;
  double gt = 0;
  double oracle = 0;
};

/// Where rendering randomness comes from for one loss evaluation.
struct PassContext {
  RenderConfig render;
  std::uint64_t jitter_seed = 0;
  std::size_t threads = 1;
};

namespace detail {

template <class S>
struct ChunkResult {
  LossParts loss;
  std::vector<S> mlp_grad;
  Matrix<S> positions;
  Matrix<S> d_encoding;
};

template <class S>
void chunk_loss(const LossBatch<S>& batch, std::size_t b, const ChunkForward<S>& fwd, LossParts& loss) {
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  for (std::size_t q = 0; q < fwd.color.size(); ++q) {
    double e = 0;
    for (int c = 0; c < 3; ++c) {
      const double r = static_cast<double>(fwd.color[q][c]) - static_cast<double>(batch.targets[b + q][c]);
      e += r * r;
    }
    (batch.sources[b + q] == Source::GroundTruth ? loss.gt : loss.oracle) += e * inv_b;
  }
}

inline void finish_loss(LossParts& l) { l.total = l.gt + l.oracle; }

}  // namespace detail

/// Mean over rays of the per-ray squared RGB error (summed over channels).
template <class S>
LossParts photometric_loss(const LossBatch<S>& batch, const FieldModel<S>& model, const PassContext& ctx) {
  batch.validate();
  const std::size_t chunk = chunk_queries(model.config().spatial_dim, ctx.render);
  const std::size_t n_chunks = (batch.size() + chunk - 1) / chunk;
  std::vector<LossParts> parts(n_chunks);
  parallel_for(n_chunks, ctx.threads, [&](std::size_t c) {
    const std::size_t b = c * chunk;
    const std::size_t e = std::min(batch.size(), b + chunk);
    ChunkForward<S> fwd;
    forward_chunk(model, std::span<const Query>(batch.queries).subspan(b, e - b), ctx.render, ctx.jitter_seed, fwd);
    detail::chunk_loss(batch, b, fwd, parts[c]);
  });
  LossParts out;
  for (const auto& p : parts) {
    out.gt += p.gt;
    out.oracle += p.oracle;
  }
  detail::finish_loss(out);
  return out;
}

template <class S>
void check_gradient_finite(const FieldModel<S>& model, std::span<const S> grad, const char* what) {
  for (std::size_t i = 0; i < grad.size(); ++i)
    if (!std::isfinite(grad[i]))
      throw NumericError(std::string(what) + ": non-finite gradient in " + model.layout().block_of(i).name,
                         static_cast<std::int64_t>(i));
}

/// Exact gradient of photometric_loss w.r.t. every parameter. Chunks are
/// processed in parallel; their contributions are reduced in chunk order so
/// the result is independent of the worker count.
template <class S>
LossParts backward(const LossBatch<S>& batch, const FieldModel<S>& model, const PassContext& ctx, GradBuffer<S>& grad) {
  batch.validate();
  const auto& lay = model.layout();
  const int d = model.config().spatial_dim;
  grad.values.assign(model.size(), S(0));
  const std::size_t chunk = chunk_queries(d, ctx.render);
  const std::size_t n_chunks = (batch.size() + chunk - 1) / chunk;
  const S scale = static_cast<S>(2.0 / static_cast<double>(batch.size()));
  const auto bg = background_of<S>(ctx.render);
  std::vector<detail::ChunkResult<S>> results(n_chunks);
  parallel_for(n_chunks, ctx.threads, [&](std::size_t c) {
    const std::size_t b = c * chunk;
    const std::size_t e = std::min(batch.size(), b + chunk);
    const auto queries = std::span<const Query>(batch.queries).subspan(b, e - b);
    ChunkForward<S> fwd;
    forward_chunk(model, queries, ctx.render, ctx.jitter_seed, fwd);
    auto& res = results[c];
    detail::chunk_loss(batch, b, fwd, res.loss);
    const Eigen::Index n_samples = fwd.field.positions.cols();
    Eigen::Array<S, 1, Eigen::Dynamic> d_sigma = Eigen::Array<S, 1, Eigen::Dynamic>::Zero(n_samples);
    Eigen::Array<S, 3, Eigen::Dynamic> d_rgb = Eigen::Array<S, 3, Eigen::Dynamic>::Zero(3, n_samples);
    for (std::size_t q = 0; q < queries.size(); ++q) {
      std::array<S, 3> d_color;
      for (int k = 0; k < 3; ++k) d_color[k] = scale * (fwd.color[q][k] - batch.targets[b + q][k]);
      if (d == 2) {
        for (int k = 0; k < 3; ++k) d_rgb(k, static_cast<Eigen::Index>(q)) = d_color[k];
        continue;
      }
      if (!queries[q].hit) continue;
      const std::size_t s0 = fwd.sample_begin[q];
      const std::size_t m = fwd.sample_begin[q + 1] - s0;
      composite_backward<S>(fwd.composites[q], std::span<const S>(fwd.delta.data() + s0, m),
                            std::span<const S>(fwd.field.rgb.data() + 3 * s0, 3 * m), bg, d_color,
                            std::span<S>(d_sigma.data() + s0, m), std::span<S>(d_rgb.data() + 3 * s0, 3 * m));
    }
    res.mlp_grad.assign(lay.total - lay.feature_size, S(0));
    res.d_encoding = field_backward(model, fwd.field, d_sigma, d_rgb, std::span<S>(res.mlp_grad));
    res.positions = std::move(fwd.field.positions);
  });
  LossParts out;
  const std::span<S> g(grad.values);
  for (auto& res : results) {
    out.gt += res.loss.gt;
    out.oracle += res.loss.oracle;
    S* mlp = g.data() + lay.feature_size;
    for (std::size_t k = 0; k < res.mlp_grad.size(); ++k) mlp[k] += res.mlp_grad[k];
    encoding_backward(model, res.positions, res.d_encoding, g);
  }
  detail::finish_loss(out);
  check_gradient_finite<S>(model, g, "backward");
  return out;
}

/// Diagonal Fisher information with the parameters it was measured at.
/// Aligned with the model's flat parameter order.
template <class S>
struct FisherDiag {
  std::vector<S> diag;
  std::vector<S> reference;
  std::size_t minibatches = 0;
};

/// (lambda / 2) sum_k F_k (p_k - ref_k)^2.
template <class S>
double ewc_penalty(std::span<const S> params, const FisherDiag<S>& fisher, double lambda) {
  if (fisher.diag.size() != params.size() || fisher.reference.size() != params.size())
    throw UsageError("ewc_penalty: Fisher diagonal not aligned with parameters");
  if (lambda < 0) throw UsageError("ewc_penalty: lambda must be non-negative");
  double acc = 0;
  for (std::size_t k = 0; k < params.size(); ++k) {
    const double diff = static_cast<double>(params[k]) - static_cast<double>(fisher.reference[k]);
    acc += static_cast<double>(fisher.diag[k]) * diff * diff;
  }
  return 0.5 * lambda * acc;
}

/// Adds lambda F_k (p_k - ref_k) to grad.
template <class S>
void ewc_gradient(std::span<const S> params, const FisherDiag<S>& fisher, double lambda, std::span<S> grad) {
  if (fisher.diag.size() != params.size() || grad.size() != params.size())
    throw UsageError("ewc_gradient: Fisher diagonal not aligned with parameters");
  const S l = static_cast<S>(lambda);
  for (std::size_t k = 0; k < params.size(); ++k) grad[k] += l * fisher.diag[k] * (params[k] - fisher.reference[k]);
}

/// Mean of squared per-minibatch gradients.
template <class S>
class FisherAccumulator {
 public:
  explicit FisherAccumulator(std::size_t n) : sum_(n, 0.0) {}

  void add(std::span<const S> grad) {
    if (grad.size() != sum_.size()) throw UsageError("fisher: gradient length mismatch");
    for (std::size_t k = 0; k < grad.size(); ++k) sum_[k] += static_cast<double>(grad[k]) * static_cast<double>(grad[k]);
    ++count_;
  }

  FisherDiag<S> finish(std::span<const S> reference) const {
    if (count_ == 0) throw UsageError("fisher: no minibatches");
    FisherDiag<S> f;
    f.diag.resize(sum_.size());
    for (std::size_t k = 0; k < sum_.size(); ++k) f.diag[k] = static_cast<S>(sum_[k] / static_cast<double>(count_));
    f.reference.assign(reference.begin(), reference.end());
    f.minibatches = count_;
    return f;
  }

 private:
  std::vector<double> sum_;
  std::size_t count_ = 0;
};

/// Estimates the Fisher diagonal at the model's current parameters from
/// `minibatches` photometric-loss gradients; next_batch(k) supplies batch k.
template <class S>
FisherDiag<S> fisher_estimate(const FieldModel<S>& model, const std::function<LossBatch<S>(std::size_t)>& next_batch,
                              std::size_t minibatches, const PassContext& ctx) {
  if (minibatches == 0) throw UsageError("fisher_estimate: need at least one minibatch");
  FisherAccumulator<S> acc(model.size());
  GradBuffer<S> g;
  for (std::size_t k = 0; k < minibatches; ++k) {
    const LossBatch<S> batch = next_batch(k);
    if (batch.size() == 0) throw UsageError("fisher_estimate: empty batch");
    PassContext c = ctx;
    c.jitter_seed = derive_seed(ctx.jitter_seed, {k});
    backward(batch, model, c, g);
    acc.add(g.values);
  }
  return acc.finish(model.params());
}

/// Sum of Fisher diagonals; the reference moves to the newer estimate.
template <class S>
FisherDiag<S> accumulate_fisher(const FisherDiag<S>& older, const FisherDiag<S>& newer) {
  if (older.diag.empty()) return newer;
  if (older.diag.size() != newer.diag.size()) throw UsageError("accumulate_fisher: length mismatch");
  FisherDiag<S> out = newer;
  for (std::size_t k = 0; k < out.diag.size(); ++k) out.diag[k] = older.diag[k] + newer.diag[k];
  out.minibatches = older.minibatches + newer.minibatches;
  return out;
}

struct AdamConfig {
  double lr_features = 1e-2;
  double lr_mlp = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
  // Feature entries with an exactly-zero gradient are left untouched
  // (moments included), so unobserved grid vertices never move.
  bool sparse_features = true;
};

template <class S>
struct OptimState {
  AdamConfig config;
  std::vector<S> m;
  std::vector<S> v;
  std::uint64_t step = 0;

  OptimState() = default;
  OptimState(const AdamConfig& cfg, std::size_t n) : config(cfg), m(n, S(0)), v(n, S(0)) {}
};

/// One Adam update with bias correction. Feature-table parameters use
/// lr_features, decoder parameters lr_mlp.
template <class S>
void optim_step(FieldModel<S>& model, const GradBuffer<S>& grad, OptimState<S>& state) {
  const std::size_t n = model.size();
  if (grad.size() != n || state.m.size() != n || state.v.size() != n)
    throw UsageError("optim_step: gradient / moment length mismatch");
  const auto& c = state.config;
  const std::uint64_t t = ++state.step;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(t));
  const S b1 = static_cast<S>(c.beta1), b2 = static_cast<S>(c.beta2);
  const S one = S(1);
  const S wd = static_cast<S>(c.weight_decay);
  const std::size_t n_feat = model.layout().feature_size;
  auto p = model.params();
  auto update_range = [&](std::size_t begin, std::size_t end, double lr, bool sparse) {
    const S step_size = static_cast<S>(lr / bc1);
    const S inv_bc2 = static_cast<S>(1.0 / bc2);
    const S eps = static_cast<S>(c.eps);
    for (std::size_t k = begin; k < end; ++k) {
      S g = grad.values[k];
      if (sparse && g == S(0)) continue;
      g += wd * p[k];
      state.m[k] = b1 * state.m[k] + (one - b1) * g;
      state.v[k] = b2 * state.v[k] + (one - b2) * g * g;
      const S upd = step_size * state.m[k] / (std::sqrt(state.v[k] * inv_bc2) + eps);
      if (!std::isfinite(upd))
        throw NumericError("optim_step: non-finite update in " + model.layout().block_of(k).name,
                           static_cast<std::int64_t>(k));
      p[k] -= upd;
    }
  };
  update_range(0, n_feat, c.lr_features, c.sparse_features);
  update_range(n_feat, n, c.lr_mlp, false);
}

struct Budget {
  enum class Kind { Steps, Seconds };
  Kind kind = Kind::Steps;
  double amount = 0;

  static Budget steps(std::uint64_t n) { return {Kind::Steps, static_cast<double>(n)}; }
  static Budget seconds(double s) { return {Kind::Seconds, s}; }

  /// Accepts "steps:N" or "secs:S".
  static Budget parse(const std::string& text) {
    const auto colon = text.find(':');
    if (colon == std::string::npos) throw UsageError("budget must look like steps:N or secs:S, got '" + text + "'");
    const std::string kind = text.substr(0, colon);
    const std::string value = text.substr(colon + 1);
    Budget b;
    try {
      std::size_t used = 0;
      if (kind == "steps") {
        const long long n = std::stoll(value, &used);
        if (n < 0) throw UsageError("budget: step count must be >= 0");
        b = steps(static_cast<std::uint64_t>(n));
      } else if (kind == "secs") {
        b = seconds(std::stod(value, &used));
      } else {
        throw UsageError("budget kind must be 'steps' or 'secs', got '" + kind + "'");
      }
      if (used != value.size()) throw UsageError("budget: trailing characters in '" + text + "'");
    } catch (const std::logic_error&) {
      throw UsageError("budget: cannot parse '" + text + "'");
    }
    b.validate();
    return b;
  }

  void validate() const {
    if (kind == Kind::Steps && !(amount >= 0)) throw UsageError("budget: step count must be >= 0");
    if (kind == Kind::Seconds && !(amount > 0)) throw UsageError("budget: seconds must be > 0");
  }

  std::string str() const {
    return kind == Kind::Steps ? "steps:" + std::to_string(static_cast<std::uint64_t>(amount))
                               : "secs:" + std::to_string(amount);
  }
};

struct StepRecord {
  std::uint64_t step = 0;
  int task = 0;
  double wall_ms = 0;
  double loss_gt = 0;
  double loss_oracle = 0;
  double loss_ewc = 0;
};

/// Supplies training batches and an optional EWC anchor.
template <class S>
struct BatchSource {
  std::function<LossBatch<S>(std::uint64_t step)> next_batch;
  const FisherDiag<S>* ewc = nullptr;
  double ewc_lambda = 0;
};

/// sample -> forward -> backward -> Adam until the budget is exhausted. In
/// wall-clock mode the clock is checked between steps and the in-flight step
/// always completes. Jitter for step k is keyed by (seed, task, k).
template <class S>
std::vector<StepRecord> train_budgeted(FieldModel<S>& model, const BatchSource<S>& source, const Budget& budget,
                                       OptimState<S>& state, const RenderConfig& render, std::uint64_t seed, int task,
                                       std::size_t threads = default_thread_count()) {
  budget.validate();
  using Clock = std::chrono::steady_clock;
  const auto start = Clock::now();
  auto elapsed_ms = [&] { return std::chrono::duration<double, std::milli>(Clock::now() - start).count(); };
  std::vector<StepRecord> log;
  GradBuffer<S> grad;
  const bool use_ewc = source.ewc != nullptr && source.ewc_lambda != 0.0;
  for (std::uint64_t k = 0;; ++k) {
    if (budget.kind == Budget::Kind::Steps && static_cast<double>(k) >= budget.amount) break;
    if (budget.kind == Budget::Kind::Seconds && elapsed_ms() >= budget.amount * 1000.0) break;
    const LossBatch<S> batch = source.next_batch(k);
    PassContext ctx{render, derive_seed(seed, {stream::kTrain, static_cast<std::uint64_t>(task), k}), threads};
    const LossParts loss = backward(batch, model, ctx, grad);
    StepRecord rec;
    if (use_ewc) {
      rec.loss_ewc = ewc_penalty<S>(model.params(), *source.ewc, source.ewc_lambda);
      ewc_gradient<S>(model.params(), *source.ewc, source.ewc_lambda, grad.values);
    }
    optim_step(model, grad, state);
    rec.step = state.step;
    rec.task = task;
    rec.wall_ms = elapsed_ms();
    rec.loss_gt = loss.gt;
    rec.loss_oracle = loss.oracle;
    log.push_back(rec);
  }
  return log;
}

inline void write_step_log(const std::string& path, const std::vector<StepRecord>& rows, bool append) {
  const bool header = !append || !std::ifstream(path).good();
  std::ofstream out(path, append ? std::ios::app : std::ios::trunc);
  if (!out) throw DataError("cannot write step log " + path);
  if (header) out << "step,task_index,wall_clock_ms,loss_gt,loss_oracle,loss_ewc\n";
  out.precision(9);
  for (const auto& r : rows)
    out << r.step << ',' << r.task << ',' << r.wall_ms << ',' << r.loss_gt << ',' << r.loss_oracle << ',' << r.loss_ewc
        << '\n';
}

}  // namespace cnf
