#pragma once

// Dense ReLU networks over a flat parameter vector, with exact reverse-mode
// gradients.
//
// Parameter layout: for each layer l in order, the (width_l x width_{l+1})
// row-major weight matrix followed by the width_{l+1} bias vector. A batch is
// a (batch x width_0) matrix and each layer computes A * W + b.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "bdk/error.hpp"
#include "bdk/linalg.hpp"
#include "bdk/rng.hpp"

namespace bdk {

enum class HeadKind { SoftmaxClassifier = 0, RegressionMeanOnly = 1, RegressionMeanLogVar = 2 };

struct Head {
  HeadKind kind = HeadKind::SoftmaxClassifier;
  std::size_t classes = 0;  // SoftmaxClassifier only

  static Head softmax(std::size_t k) { return {HeadKind::SoftmaxClassifier, k}; }
  static Head mean_only() { return {HeadKind::RegressionMeanOnly, 0}; }
  static Head mean_log_var() { return {HeadKind::RegressionMeanLogVar, 0}; }

  bool is_classifier() const noexcept { return kind == HeadKind::SoftmaxClassifier; }
  bool operator==(const Head&) const = default;
};

inline std::string to_string(HeadKind k) {
  switch (k) {
    case HeadKind::SoftmaxClassifier: return "softmax";
    case HeadKind::RegressionMeanOnly: return "mean";
    case HeadKind::RegressionMeanLogVar: return "mean_logvar";
  }
  return "?";
}

struct MlpSpec {
  std::vector<std::size_t> widths;
  Head head;

  std::size_t num_layers() const noexcept { return widths.size() - 1; }
  std::size_t input_width() const noexcept { return widths.front(); }
  std::size_t output_width() const noexcept { return widths.back(); }

  void validate() const {
    if (widths.size() < 2) throw PreconditionError("MlpSpec: need at least input and output widths");
    if (std::any_of(widths.begin(), widths.end(), [](std::size_t w) { return w == 0; }))
      throw PreconditionError("MlpSpec: layer widths must be positive");
    switch (head.kind) {
      case HeadKind::SoftmaxClassifier:
        if (head.classes != output_width())
          throw PreconditionError("MlpSpec: softmax head needs final width == number of classes");
        break;
      case HeadKind::RegressionMeanOnly:
        if (output_width() != 1) throw PreconditionError("MlpSpec: mean-only head needs final width 1");
        break;
      case HeadKind::RegressionMeanLogVar:
        if (output_width() != 2) throw PreconditionError("MlpSpec: mean/log-variance head needs final width 2");
        break;
    }
  }

  // "2-10-2" style
  std::string to_string() const {
    std::ostringstream os;
    for (std::size_t i = 0; i < widths.size(); ++i) os << (i ? "-" : "") << widths[i];
    return os.str();
  }

  bool operator==(const MlpSpec&) const = default;
};

inline MlpSpec make_spec(std::vector<std::size_t> widths, Head head) {
  MlpSpec s{std::move(widths), head};
  s.validate();
  return s;
}

// Builds a spec whose head matches its final width: K outputs -> softmax(K)
// for classification, 1 -> mean-only, 2 -> mean/log-variance.
inline MlpSpec make_spec(std::vector<std::size_t> widths, bool classification) {
  if (widths.empty()) throw PreconditionError("MlpSpec: empty width list");
  const std::size_t out = widths.back();
  Head h = classification ? Head::softmax(out) : (out == 2 ? Head::mean_log_var() : Head::mean_only());
  return make_spec(std::move(widths), h);
}

inline std::vector<std::size_t> parse_widths(std::string_view text) {
  std::vector<std::size_t> out;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    auto dash = text.find('-', pos);
    auto tok = text.substr(pos, dash == std::string_view::npos ? std::string_view::npos : dash - pos);
    if (tok.empty() || tok.find_first_not_of("0123456789") != std::string_view::npos)
      throw PreconditionError("bad layer width list '" + std::string(text) + "'");
    out.push_back(std::stoul(std::string(tok)));
    if (dash == std::string_view::npos) break;
    pos = dash + 1;
  }
  return out;
}

inline std::size_t num_params(const MlpSpec& spec) {
  std::size_t n = 0;
  for (std::size_t l = 0; l < spec.num_layers(); ++l) n += spec.widths[l] * spec.widths[l + 1] + spec.widths[l + 1];
  return n;
}

// Bias-free count, the convention used by some published parameter tables.
inline std::size_t num_weights(const MlpSpec& spec) {
  std::size_t n = 0;
  for (std::size_t l = 0; l < spec.num_layers(); ++l) n += spec.widths[l] * spec.widths[l + 1];
  return n;
}

class ParamVector {
 public:
  ParamVector() = default;
  explicit ParamVector(std::size_t n, double fill = 0.0) : values_(n, fill) {}
  explicit ParamVector(std::vector<double> values) : values_(std::move(values)) {}

  std::size_t size() const noexcept { return values_.size(); }
  double& operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }
  std::span<double> values() noexcept { return values_; }
  std::span<const double> values() const noexcept { return values_; }
  const std::vector<double>& storage() const noexcept { return values_; }

  bool all_finite() const {
    return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
  }

  bool operator==(const ParamVector&) const = default;

 private:
  std::vector<double> values_;
};

// y += a * x
inline void axpy(double a, const ParamVector& x, ParamVector& y) {
  if (x.size() != y.size()) throw ShapeError("axpy: size mismatch");
  auto xs = x.values();
  auto ys = y.values();
  for (std::size_t i = 0; i < ys.size(); ++i) ys[i] += a * xs[i];
}

inline double squared_norm(const ParamVector& x) {
  auto v = x.values();
  return std::inner_product(v.begin(), v.end(), v.begin(), 0.0);
}

struct LayerOffsets {
  std::size_t weights = 0;
  std::size_t bias = 0;
  std::size_t fan_in = 0;
  std::size_t fan_out = 0;
};

inline LayerOffsets layer_offsets(const MlpSpec& spec, std::size_t layer) {
  std::size_t off = 0;
  for (std::size_t l = 0; l < layer; ++l) off += spec.widths[l] * spec.widths[l + 1] + spec.widths[l + 1];
  const std::size_t in = spec.widths[layer], out = spec.widths[layer + 1];
  return {off, off + in * out, in, out};
}

template <typename T>
struct BasicLayerView {
  std::span<T> weights;  // fan_in x fan_out, row-major
  std::span<T> bias;
  std::size_t fan_in = 0;
  std::size_t fan_out = 0;

  ConstMatrixRef weight_matrix() const { return {weights, fan_in, fan_out}; }
};
using LayerView = BasicLayerView<double>;
using ConstLayerView = BasicLayerView<const double>;

inline ConstLayerView layer_view(const MlpSpec& spec, const ParamVector& p, std::size_t layer) {
  const auto o = layer_offsets(spec, layer);
  auto v = p.values();
  return {v.subspan(o.weights, o.fan_in * o.fan_out), v.subspan(o.bias, o.fan_out), o.fan_in, o.fan_out};
}

inline LayerView layer_view(const MlpSpec& spec, ParamVector& p, std::size_t layer) {
  const auto o = layer_offsets(spec, layer);
  auto v = p.values();
  return {v.subspan(o.weights, o.fan_in * o.fan_out), v.subspan(o.bias, o.fan_out), o.fan_in, o.fan_out};
}

struct LayerParams {
  Matrix weights;
  std::vector<double> bias;
};

inline std::vector<LayerParams> split_layers(const MlpSpec& spec, const ParamVector& p) {
  if (p.size() != num_params(spec)) throw ShapeError("split_layers: parameter count does not match spec");
  std::vector<LayerParams> out;
  for (std::size_t l = 0; l < spec.num_layers(); ++l) {
    auto v = layer_view(spec, p, l);
    out.push_back({Matrix(v.fan_in, v.fan_out, std::vector<double>(v.weights.begin(), v.weights.end())),
                   std::vector<double>(v.bias.begin(), v.bias.end())});
  }
  return out;
}

inline ParamVector flatten(const MlpSpec& spec, const std::vector<LayerParams>& layers) {
  if (layers.size() != spec.num_layers()) throw ShapeError("flatten: layer count does not match spec");
  std::vector<double> values;
  values.reserve(num_params(spec));
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& lp = layers[l];
    if (lp.weights.rows() != spec.widths[l] || lp.weights.cols() != spec.widths[l + 1] ||
        lp.bias.size() != spec.widths[l + 1])
      throw ShapeError("flatten: layer " + std::to_string(l) + " has the wrong shape");
    values.insert(values.end(), lp.weights.data().begin(), lp.weights.data().end());
    values.insert(values.end(), lp.bias.begin(), lp.bias.end());
  }
  return ParamVector(std::move(values));
}

inline constexpr double kHeScale = 1.4142135623730951;

// Weights ~ N(0, scale^2 / fan_in), biases zero.
inline ParamVector init_params(const MlpSpec& spec, Engine& rng, double scale = kHeScale) {
  spec.validate();
  require(scale > 0.0 && std::isfinite(scale), "init_params: scale must be positive");
  ParamVector p(num_params(spec));
  std::normal_distribution<double> normal(0.0, 1.0);
  for (std::size_t l = 0; l < spec.num_layers(); ++l) {
    auto v = layer_view(spec, p, l);
    const double sd = scale / std::sqrt(static_cast<double>(v.fan_in));
    for (double& w : v.weights) w = sd * normal(rng);
  }
  return p;
}

struct ForwardTrace {
  Matrix input;
  std::vector<Matrix> pre;  // pre-activation of every layer; pre.back() is the raw output
  std::vector<Matrix> act;  // post-ReLU activation of every hidden layer
};

struct ForwardResult {
  Matrix outputs;
  ForwardTrace trace;
};

namespace detail {

inline void add_bias(Matrix& z, std::span<const double> bias) {
  for (std::size_t r = 0; r < z.rows(); ++r) {
    auto row = z.row(r);
    for (std::size_t c = 0; c < row.size(); ++c) row[c] += bias[c];
  }
}

inline void relu_inplace(Matrix& m) {
  for (double& v : m.data()) v = v > 0.0 ? v : 0.0;
}

inline void check_forward_args(const MlpSpec& spec, const ParamVector& params, const Matrix& x) {
  if (params.size() != num_params(spec)) throw ShapeError("forward: parameter count does not match spec");
  if (x.cols() != spec.input_width())
    throw ShapeError("forward: input has " + std::to_string(x.cols()) + " columns, spec expects " +
                     std::to_string(spec.input_width()));
}

}  // namespace detail

// Raw final-layer values (logits, the mean, or (mu, alpha)) without keeping a
// trace.
inline Matrix predict(const MlpSpec& spec, const ParamVector& params, const Matrix& x) {
  detail::check_forward_args(spec, params, x);
  Matrix a = x;
  for (std::size_t l = 0; l < spec.num_layers(); ++l) {
    auto v = layer_view(spec, params, l);
    Matrix z(a.rows(), v.fan_out);
    gemm(Trans::No, Trans::No, 1.0, a, v.weight_matrix(), 0.0, z.ref());
    detail::add_bias(z, v.bias);
    if (l + 1 < spec.num_layers()) detail::relu_inplace(z);
    a = std::move(z);
  }
  return a;
}

inline ForwardResult forward(const MlpSpec& spec, const ParamVector& params, const Matrix& x) {
  detail::check_forward_args(spec, params, x);
  ForwardTrace tr;
  tr.input = x;
  const Matrix* a = &tr.input;
  for (std::size_t l = 0; l < spec.num_layers(); ++l) {
    auto v = layer_view(spec, params, l);
    Matrix z(a->rows(), v.fan_out);
    gemm(Trans::No, Trans::No, 1.0, *a, v.weight_matrix(), 0.0, z.ref());
    detail::add_bias(z, v.bias);
    tr.pre.push_back(std::move(z));
    if (l + 1 < spec.num_layers()) {
      Matrix h = tr.pre.back();
      detail::relu_inplace(h);
      tr.act.push_back(std::move(h));
      a = &tr.act.back();
    }
  }
  Matrix out = tr.pre.back();
  return {std::move(out), std::move(tr)};
}

// Gradient of sum_batch loss w.r.t. params, given dloss/doutputs per row.
// ReLU'(0) is taken as 0.
inline ParamVector backward(const MlpSpec& spec, const ParamVector& params, const ForwardTrace& trace,
                            const Matrix& output_grad) {
  if (trace.pre.size() != spec.num_layers()) throw ShapeError("backward: trace does not match spec");
  const Matrix& out = trace.pre.back();
  if (output_grad.rows() != out.rows() || output_grad.cols() != out.cols())
    throw ShapeError("backward: output gradient shape does not match outputs");

  ParamVector grad(params.size());
  Matrix delta = output_grad;
  for (std::size_t l = spec.num_layers(); l-- > 0;) {
    const Matrix& a_in = l == 0 ? trace.input : trace.act[l - 1];
    auto g = layer_view(spec, grad, l);
    gemm(Trans::Yes, Trans::No, 1.0, a_in, delta, 0.0, MatrixRef{g.weights, g.fan_in, g.fan_out});
    for (std::size_t r = 0; r < delta.rows(); ++r) {
      auto row = delta.row(r);
      for (std::size_t c = 0; c < row.size(); ++c) g.bias[c] += row[c];
    }
    if (l == 0) break;
    auto w = layer_view(spec, params, l);
    Matrix prev(delta.rows(), w.fan_in);
    gemm(Trans::No, Trans::Yes, 1.0, delta, w.weight_matrix(), 0.0, prev.ref());
    const Matrix& z = trace.pre[l - 1];
    auto pd = prev.data();
    auto zd = z.data();
    for (std::size_t i = 0; i < pd.size(); ++i)
      if (!(zd[i] > 0.0)) pd[i] = 0.0;
    delta = std::move(prev);
  }
  return grad;
}

}  // namespace bdk
