#pragma once

// Scene field: encoding (hash grid or frequency) followed by a small MLP
// decoder producing density and color. All trainables live in one flat
// parameter vector whose ordering is fixed by ParamLayout.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "cnf/encoding.hpp"
#include "cnf/errors.hpp"
#include "cnf/grid.hpp"
#include "cnf/rng.hpp"

namespace cnf {

enum class Backbone : std::uint32_t { Hash = 0, Freq = 1 };
enum class DensityActivation : std::uint32_t { Softplus = 0, TruncExp = 1 };

inline const char* to_string(Backbone b) { return b == Backbone::Hash ? "hash" : "freq"; }

struct MlpConfig {
  int hidden_layers = 2;
  int hidden_width = 64;
  DensityActivation density_activation = DensityActivation::Softplus;
  // View dependence (3D only): the trunk emits geo_feat_dim features that,
  // together with the encoded direction, feed a one-hidden-layer color head.
  bool view_dependent = true;
  int dir_freqs = 4;
  int geo_feat_dim = 15;
  // Input scheme of the FREQ backbone.
  int pos_freqs = 10;
  bool include_input = true;

  void validate() const {
    if (hidden_layers < 1) throw UsageError("mlp: hidden_layers must be >= 1");
    if (hidden_width < 1) throw UsageError("mlp: hidden_width must be >= 1");
    if (dir_freqs < 0 || pos_freqs < 0) throw UsageError("mlp: frequency counts must be >= 0");
    if (view_dependent && geo_feat_dim < 1) throw UsageError("mlp: geo_feat_dim must be >= 1");
  }
};

struct FieldConfig {
  Backbone backbone = Backbone::Hash;
  int spatial_dim = 3;
  GridConfig grid;
  MlpConfig mlp;
  std::uint64_t init_seed = 0;

  bool uses_view() const { return spatial_dim == 3 && mlp.view_dependent; }

  void validate() const {
    if (spatial_dim != 2 && spatial_dim != 3) throw UsageError("field: spatial_dim must be 2 or 3");
    if (backbone == Backbone::Hash) {
      grid.validate();
      if (grid.spatial_dim != spatial_dim) throw UsageError("field: grid.spatial_dim != spatial_dim");
    }
    mlp.validate();
    if (backbone == Backbone::Freq && mlp.pos_freqs == 0 && !mlp.include_input)
      throw UsageError("field: frequency backbone has an empty input encoding");
  }
};

enum class BlockKind : std::uint8_t { Features, Weight, Bias };

struct ParamBlock {
  std::string name;
  BlockKind kind;
  std::size_t offset;
  std::size_t size;
};

/// One dense layer y = W x + b, W stored row-major (out x in).
struct LayerSpec {
  int in = 0;
  int out = 0;
  std::size_t weight_offset = 0;
  std::size_t bias_offset = 0;
  bool relu = true;
};

/// Stable flat ordering: feature tables (levels coarse to fine), then trunk
/// layers, then color-head layers; each layer stores W then b.
struct ParamLayout {
  std::vector<LevelInfo> levels;
  std::size_t feature_size = 0;
  int encoding_dim = 0;
  int dir_encoding_dim = 0;
  std::vector<LayerSpec> trunk;
  std::vector<LayerSpec> head;
  std::vector<ParamBlock> blocks;
  std::size_t total = 0;

  const ParamBlock& block_of(std::size_t index) const {
    for (const auto& b : blocks)
      if (index >= b.offset && index < b.offset + b.size) return b;
    throw UsageError("parameter index out of range");
  }
};

inline ParamLayout make_layout(const FieldConfig& cfg) {
  cfg.validate();
  ParamLayout lay;
  if (cfg.backbone == Backbone::Hash) {
    lay.levels = level_layout(cfg.grid);
    lay.feature_size = feature_count(lay.levels, cfg.grid);
    lay.encoding_dim = cfg.grid.levels * cfg.grid.feature_dim;
    for (std::size_t l = 0; l < lay.levels.size(); ++l) {
      const auto& lv = lay.levels[l];
      lay.blocks.push_back({"features.level" + std::to_string(l), BlockKind::Features, lv.offset,
                            static_cast<std::size_t>(lv.rows) * cfg.grid.feature_dim});
    }
  } else {
    lay.encoding_dim = static_cast<int>(freq_encoded_size(cfg.spatial_dim, cfg.mlp.pos_freqs)) +
                       (cfg.mlp.include_input ? cfg.spatial_dim : 0);
  }
  std::size_t off = lay.feature_size;
  auto add_layer = [&](std::vector<LayerSpec>& dst, const std::string& prefix, int in, int out, bool relu) {
    LayerSpec s;
    s.in = in;
    s.out = out;
    s.relu = relu;
    s.weight_offset = off;
    const std::string idx = std::to_string(dst.size());
    lay.blocks.push_back({prefix + idx + ".weight", BlockKind::Weight, off, static_cast<std::size_t>(in) * out});
    off += static_cast<std::size_t>(in) * out;
    s.bias_offset = off;
    lay.blocks.push_back({prefix + idx + ".bias", BlockKind::Bias, off, static_cast<std::size_t>(out)});
    off += static_cast<std::size_t>(out);
    dst.push_back(s);
  };
  const auto& m = cfg.mlp;
  int width = lay.encoding_dim;
  for (int h = 0; h < m.hidden_layers; ++h) {
    add_layer(lay.trunk, "trunk.", width, m.hidden_width, true);
    width = m.hidden_width;
  }
  if (cfg.uses_view()) {
    add_layer(lay.trunk, "trunk.", width, 1 + m.geo_feat_dim, false);
    lay.dir_encoding_dim = static_cast<int>(freq_encoded_size(3, m.dir_freqs));
    add_layer(lay.head, "head.", m.geo_feat_dim + lay.dir_encoding_dim, m.hidden_width, true);
    add_layer(lay.head, "head.", m.hidden_width, 3, false);
  } else {
    add_layer(lay.trunk, "trunk.", width, 4, false);
  }
  lay.total = off;
  return lay;
}

template <class S>
using Matrix = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;
template <class S>
using RowMajorMatrix = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <class S>
class FieldModel {
 public:
  FieldModel() = default;

  /// Builds the model with deterministic initialization from cfg.init_seed:
  /// features uniform in [-1e-4, 1e-4], weights uniform in
  /// [-sqrt(6/fan_in), sqrt(6/fan_in)], biases zero.
  explicit FieldModel(const FieldConfig& cfg) : cfg_(cfg), layout_(make_layout(cfg)), params_(layout_.total, S(0)) {
    Rng rng(derive_seed(cfg.init_seed, {stream::kInit}));
    for (std::size_t i = 0; i < layout_.feature_size; ++i) params_[i] = static_cast<S>(rng.uniform(-1e-4, 1e-4));
    auto init_layers = [&](const std::vector<LayerSpec>& layers) {
      for (const auto& l : layers) {
        const double bound = std::sqrt(6.0 / l.in);
        for (std::size_t k = 0; k < static_cast<std::size_t>(l.in) * l.out; ++k)
          params_[l.weight_offset + k] = static_cast<S>(rng.uniform(-bound, bound));
      }
    };
    init_layers(layout_.trunk);
    init_layers(layout_.head);
  }

  /// Wraps an existing parameter vector (checkpoint load).
  FieldModel(const FieldConfig& cfg, std::vector<S> params) : cfg_(cfg), layout_(make_layout(cfg)), params_(std::move(params)) {
    if (params_.size() != layout_.total)
      throw DataError("parameter count " + std::to_string(params_.size()) + " does not match layout " +
                      std::to_string(layout_.total));
  }

  const FieldConfig& config() const { return cfg_; }
  const ParamLayout& layout() const { return layout_; }
  std::span<S> params() { return params_; }
  std::span<const S> params() const { return params_; }
  std::size_t size() const { return params_.size(); }

  /// Index of the first non-finite parameter, or -1.
  std::int64_t first_nonfinite() const {
    for (std::size_t i = 0; i < params_.size(); ++i)
      if (!std::isfinite(params_[i])) return static_cast<std::int64_t>(i);
    return -1;
  }

 private:
  FieldConfig cfg_;
  ParamLayout layout_;
  std::vector<S> params_;
};

template <class S>
inline S softplus(S x) {
  return x > S(20) ? x : std::log1p(std::exp(x));
}
template <class S>
inline S sigmoid(S x) {
  return S(1) / (S(1) + std::exp(-x));
}
inline constexpr double kTruncExpLimit = 15.0;

template <class S>
inline S density_activation(DensityActivation a, S raw) {
  if (a == DensityActivation::Softplus) return softplus(raw);
  return std::exp(std::min(raw, static_cast<S>(kTruncExpLimit)));
}
template <class S>
inline S density_activation_grad(DensityActivation a, S raw) {
  if (a == DensityActivation::Softplus) return sigmoid(raw);
  return raw < static_cast<S>(kTruncExpLimit) ? std::exp(raw) : S(0);
}

/// Forward activations kept for the backward pass of one evaluation batch.
/// Columns are query points.
template <class S>
struct FieldCache {
  Matrix<S> positions;              // d x n, unit domain
  Matrix<S> dirs;                   // 3 x n (view-dependent models only)
  std::vector<Matrix<S>> trunk_in;  // input of each trunk layer
  std::vector<Matrix<S>> head_in;
  Matrix<S> trunk_out;
  Matrix<S> head_out;
  Eigen::Array<S, 1, Eigen::Dynamic> sigma;
  Eigen::Array<S, 3, Eigen::Dynamic> rgb;
};

namespace detail {

template <class S>
void encode_inputs(const FieldModel<S>& model, const Matrix<S>& positions, Matrix<S>& enc) {
  const auto& cfg = model.config();
  const auto& lay = model.layout();
  const Eigen::Index n = positions.cols();
  const int d = cfg.spatial_dim;
  enc.resize(lay.encoding_dim, n);
  if (cfg.backbone == Backbone::Hash) {
    const std::span<const S> feats = model.params().subspan(0, lay.feature_size);
    for (Eigen::Index j = 0; j < n; ++j)
      grid_encode<S>(std::span<const S>(positions.col(j).data(), d), cfg.grid, lay.levels, feats,
                     std::span<S>(enc.col(j).data(), lay.encoding_dim));
  } else {
    const int raw = cfg.mlp.include_input ? d : 0;
    for (Eigen::Index j = 0; j < n; ++j) {
      const std::span<const S> x(positions.col(j).data(), d);
      check_unit_domain(x);
      S* dst = enc.col(j).data();
      for (int i = 0; i < raw; ++i) dst[i] = x[i];
      freq_encode<S>(x, cfg.mlp.pos_freqs, std::span<S>(dst + raw, lay.encoding_dim - raw));
    }
  }
}

template <class S>
auto weight_map(std::span<const S> p, const LayerSpec& l) {
  return Eigen::Map<const RowMajorMatrix<S>>(p.data() + l.weight_offset, l.out, l.in);
}
template <class S>
auto bias_map(std::span<const S> p, const LayerSpec& l) {
  return Eigen::Map<const Eigen::Matrix<S, Eigen::Dynamic, 1>>(p.data() + l.bias_offset, l.out);
}

template <class S>
Matrix<S> run_layers(std::span<const S> p, const std::vector<LayerSpec>& layers, Matrix<S> x,
                     std::vector<Matrix<S>>* saved) {
  if (saved) saved->clear();
  for (const auto& l : layers) {
    Matrix<S> z = weight_map(p, l) * x;
    z.colwise() += bias_map(p, l);
    if (l.relu) z = z.cwiseMax(S(0));
    if (saved) saved->push_back(std::move(x));
    x = std::move(z);
  }
  return x;
}

// Backprop through layers; `dy` is d(loss)/d(output of last layer). Weight
// and bias gradients are written (not accumulated) into `grad`, where
// grad[k] corresponds to parameter base + k.
template <class S>
Matrix<S> backprop_layers(std::span<const S> p, const std::vector<LayerSpec>& layers,
                          const std::vector<Matrix<S>>& inputs, Matrix<S> dy, std::span<S> grad, std::size_t base) {
  for (std::size_t k = layers.size(); k-- > 0;) {
    const auto& l = layers[k];
    if (l.relu) {
      // Post-activation output of this layer is the next layer's input (or
      // not saved for the last layer, which is never ReLU).
      const Matrix<S>& out = inputs[k + 1];
      dy = (out.array() > S(0)).select(dy, S(0));
    }
    Eigen::Map<RowMajorMatrix<S>> dW(grad.data() + (l.weight_offset - base), l.out, l.in);
    Eigen::Map<Eigen::Matrix<S, Eigen::Dynamic, 1>> db(grad.data() + (l.bias_offset - base), l.out);
    dW.noalias() = dy * inputs[k].transpose();
    db = dy.rowwise().sum();
    Matrix<S> dx = weight_map(p, l).transpose() * dy;
    dy = std::move(dx);
  }
  return dy;
}

template <class S>
[[noreturn]] void throw_nonfinite_output(const FieldModel<S>& model, const char* where) {
  const auto idx = model.first_nonfinite();
  std::string msg = std::string(where) + ": non-finite field output";
  if (idx >= 0) msg += " (parameter " + std::to_string(idx) + " in " + model.layout().block_of(idx).name + ")";
  throw NumericError(msg, idx);
}

}  // namespace detail

/// Batched forward pass. `positions` is d x n in the unit domain, `dirs`
/// is 3 x n unit vectors (ignored unless the model is view dependent).
template <class S>
void field_forward(const FieldModel<S>& model, const Matrix<S>& positions, const Matrix<S>& dirs, FieldCache<S>& cache) {
  const auto& cfg = model.config();
  const auto& lay = model.layout();
  const auto p = model.params();
  const Eigen::Index n = positions.cols();
  cache.positions = positions;
  Matrix<S> enc;
  detail::encode_inputs(model, positions, enc);
  // trunk_in holds every layer input plus, appended below, the final output;
  // backprop reads inputs[k + 1] as the post-activation of layer k.
  cache.trunk_out = detail::run_layers<S>(p, lay.trunk, std::move(enc), &cache.trunk_in);
  cache.trunk_in.push_back(cache.trunk_out);
  cache.sigma.resize(n);
  cache.rgb.resize(3, n);
  const auto act = cfg.mlp.density_activation;
  for (Eigen::Index j = 0; j < n; ++j) cache.sigma(j) = density_activation(act, cache.trunk_out(0, j));
  if (cfg.uses_view()) {
    if (dirs.cols() != n) throw UsageError("field_forward: view-dependent model needs one direction per point");
    cache.dirs = dirs;
    const int geo = cfg.mlp.geo_feat_dim;
    Matrix<S> head_x(geo + lay.dir_encoding_dim, n);
    head_x.topRows(geo) = cache.trunk_out.middleRows(1, geo);
    for (Eigen::Index j = 0; j < n; ++j)
      freq_encode<S>(std::span<const S>(dirs.col(j).data(), 3), cfg.mlp.dir_freqs,
                     std::span<S>(head_x.col(j).data() + geo, lay.dir_encoding_dim));
    cache.head_out = detail::run_layers<S>(p, lay.head, std::move(head_x), &cache.head_in);
    cache.head_in.push_back(cache.head_out);
    cache.rgb = cache.head_out.array().unaryExpr([](S v) { return sigmoid(v); });
  } else {
    cache.rgb = cache.trunk_out.middleRows(1, 3).array().unaryExpr([](S v) { return sigmoid(v); });
  }
  if (!cache.sigma.allFinite() || !cache.rgb.allFinite()) detail::throw_nonfinite_output(model, "field_forward");
}

/// Batched backward pass. Writes decoder gradients into `mlp_grad`, whose
/// entry k is parameter layout.feature_size + k, and returns
/// d(loss)/d(encoding), encoding_dim x n.
template <class S>
Matrix<S> field_backward(const FieldModel<S>& model, const FieldCache<S>& cache,
                         const Eigen::Array<S, 1, Eigen::Dynamic>& d_sigma,
                         const Eigen::Array<S, 3, Eigen::Dynamic>& d_rgb, std::span<S> mlp_grad) {
  const auto& cfg = model.config();
  const auto& lay = model.layout();
  const auto p = model.params();
  const Eigen::Index n = cache.positions.cols();
  const auto act = cfg.mlp.density_activation;
  Matrix<S> d_trunk_out = Matrix<S>::Zero(cache.trunk_out.rows(), n);
  for (Eigen::Index j = 0; j < n; ++j) d_trunk_out(0, j) = d_sigma(j) * density_activation_grad(act, cache.trunk_out(0, j));
  const Eigen::Array<S, 3, Eigen::Dynamic> d_rgb_raw = d_rgb * cache.rgb * (S(1) - cache.rgb);
  if (cfg.uses_view()) {
    Matrix<S> d_head_in = detail::backprop_layers<S>(p, lay.head, cache.head_in, d_rgb_raw.matrix(), mlp_grad,
                                                          lay.feature_size);
    d_trunk_out.middleRows(1, cfg.mlp.geo_feat_dim) = d_head_in.topRows(cfg.mlp.geo_feat_dim);
  } else {
    d_trunk_out.middleRows(1, 3) = d_rgb_raw.matrix();
  }
  return detail::backprop_layers<S>(p, lay.trunk, cache.trunk_in, std::move(d_trunk_out), mlp_grad, lay.feature_size);
}

/// Scatters d(loss)/d(encoding) into the feature-table gradient. No-op for
/// the frequency backbone, whose encoding has no parameters.
template <class S>
void encoding_backward(const FieldModel<S>& model, const Matrix<S>& positions, const Matrix<S>& d_encoding,
                       std::span<S> grad) {
  const auto& cfg = model.config();
  if (cfg.backbone != Backbone::Hash) return;
  const auto& lay = model.layout();
  const int d = cfg.spatial_dim;
  const auto feat_grad = grad.subspan(0, lay.feature_size);
  for (Eigen::Index j = 0; j < positions.cols(); ++j)
    grid_encode_backward<S>(std::span<const S>(positions.col(j).data(), d), cfg.grid, lay.levels,
                            std::span<const S>(d_encoding.col(j).data(), lay.encoding_dim), feat_grad);
}

template <class S>
struct FieldSample {
  S sigma;
  std::array<S, 3> rgb;
};

/// Evaluates (sigma, rgb) at one point. `dir` may be empty for models
/// without view dependence.
template <class S>
FieldSample<S> field_eval(std::span<const S> x, std::span<const S> dir, const FieldModel<S>& model) {
  const int d = model.config().spatial_dim;
  if (static_cast<int>(x.size()) != d) throw UsageError("field_eval: point dimension mismatch");
  Matrix<S> pos(d, 1);
  for (int i = 0; i < d; ++i) pos(i, 0) = x[i];
  Matrix<S> dirs;
  if (model.config().uses_view()) {
    if (dir.size() != 3) throw UsageError("field_eval: view-dependent model needs a direction");
    dirs.resize(3, 1);
    for (int i = 0; i < 3; ++i) dirs(i, 0) = dir[i];
  }
  FieldCache<S> cache;
  field_forward(model, pos, dirs, cache);
  return {cache.sigma(0), {cache.rgb(0, 0), cache.rgb(1, 0), cache.rgb(2, 0)}};
}

}  // namespace cnf
