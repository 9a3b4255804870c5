#pragma once

// Posterior predictive construction and scoring: ensemble averaging, test
// log-likelihood, misclassification rate, 2D predictive grids and grid KL.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "bdk/dataset.hpp"
#include "bdk/error.hpp"
#include "bdk/nn.hpp"
#include "bdk/objectives.hpp"
#include "bdk/samplers.hpp"

namespace bdk {

enum class PredictorKind { Ensemble, Student };

// Non-owning view of the weights to predict with. An ensemble averages its
// members' predictive distributions (a plugin estimate is an ensemble of one);
// a student is a single network whose outputs parameterize the predictive.
struct Predictor {
  PredictorKind kind = PredictorKind::Ensemble;
  MlpSpec spec;
  std::span<const ParamVector> members;
  std::optional<NoiseModel> noise;  // regression ensembles

  static Predictor ensemble(const PosteriorEnsemble& e, std::optional<NoiseModel> noise = std::nullopt) {
    return {PredictorKind::Ensemble, e.spec, e.samples, noise};
  }
  static Predictor plugin(const MlpSpec& spec, const ParamVector& params,
                          std::optional<NoiseModel> noise = std::nullopt) {
    return {PredictorKind::Ensemble, spec, std::span<const ParamVector>(&params, 1), noise};
  }
  static Predictor student(const MlpSpec& spec, const ParamVector& params) {
    return {PredictorKind::Student, spec, std::span<const ParamVector>(&params, 1), std::nullopt};
  }

  bool classifies() const noexcept { return spec.head.is_classifier(); }

  void validate() const {
    require(!members.empty(), "predictor: empty ensemble");
    if (!classifies()) {
      if (kind == PredictorKind::Ensemble) {
        require(spec.head.kind == HeadKind::RegressionMeanOnly, "predictor: regression ensembles use a mean-only head");
        require(noise.has_value(), "predictor: regression ensembles need a noise model");
      } else {
        require(spec.head.kind == HeadKind::RegressionMeanLogVar, "predictor: regression students use a mean/log-variance head");
      }
    }
  }
};

struct MetricsReport {
  std::string name;
  double value = 0.0;
  double standard_error = 0.0;
  std::size_t n_trials = 1;
};

// Mean and standard error of the mean (sample sd / sqrt(n); 0 for one trial).
inline MetricsReport aggregate(const std::string& name, std::span<const double> values) {
  require(!values.empty(), "aggregate: no values");
  const double n = static_cast<double>(values.size());
  const double mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  const double se = values.size() > 1 ? std::sqrt(ss / (n - 1.0)) / std::sqrt(n) : 0.0;
  return {name, mean, se, values.size()};
}

namespace detail {

inline double logaddexp(double a, double b) {
  if (a == -std::numeric_limits<double>::infinity()) return b;
  if (b == -std::numeric_limits<double>::infinity()) return a;
  const double m = std::max(a, b);
  return m + std::log1p(std::exp(-std::abs(a - b)));
}

}  // namespace detail

// n x K log predictive probabilities. Ensembles average member probabilities
// (accumulated in log space so confident members cannot underflow).
inline Matrix predict_class_logprobs(const Predictor& pred, const Matrix& x) {
  pred.validate();
  require(pred.classifies(), "predict_class_logprobs: predictor is not a classifier");
  const std::size_t k = pred.spec.output_width();
  Matrix acc(x.rows(), k, -std::numeric_limits<double>::infinity());
  for (const auto& member : pred.members) {
    const Matrix logits = predict(pred.spec, member, x);
    for (std::size_t i = 0; i < x.rows(); ++i) {
      auto lp = log_softmax(logits.row(i));
      auto a = acc.row(i);
      for (std::size_t c = 0; c < k; ++c) a[c] = detail::logaddexp(a[c], lp[c]);
    }
  }
  const double log_s = std::log(static_cast<double>(pred.members.size()));
  for (double& v : acc.data()) v -= log_s;
  return acc;
}

inline Matrix predict_class_probs(const Predictor& pred, const Matrix& x) {
  Matrix p = predict_class_logprobs(pred, x);
  for (double& v : p.data()) v = std::exp(v);
  return p;
}

inline Categorical ensemble_predict_class(const PosteriorEnsemble& ensemble, std::span<const double> x) {
  require(!ensemble.empty(), "ensemble_predict_class: empty ensemble");
  Matrix xm(1, x.size(), std::vector<double>(x.begin(), x.end()));
  Matrix lp = predict_class_logprobs(Predictor::ensemble(ensemble), xm);
  return {std::vector<double>(lp.row(0).begin(), lp.row(0).end())};
}

struct RegPrediction {
  double mean = 0.0;
  double stddev = 0.0;
};

// Ensembles: moments of the equal-weight mixture sum_s N(f_s, 1/lambda_n) / S.
// Students: (mu, exp(alpha / 2)).
inline std::vector<RegPrediction> predict_reg(const Predictor& pred, const Matrix& x) {
  pred.validate();
  require(!pred.classifies(), "predict_reg: predictor is a classifier");
  std::vector<RegPrediction> out(x.rows());
  if (pred.kind == PredictorKind::Student) {
    const Matrix o = predict(pred.spec, pred.members.front(), x);
    for (std::size_t i = 0; i < x.rows(); ++i) out[i] = {o(i, 0), std::exp(0.5 * o(i, 1))};
    return out;
  }
  const double s = static_cast<double>(pred.members.size());
  std::vector<Matrix> fs;
  std::vector<double> sum(x.rows(), 0.0);
  fs.reserve(pred.members.size());
  for (const auto& member : pred.members) {
    fs.push_back(predict(pred.spec, member, x));
    for (std::size_t i = 0; i < x.rows(); ++i) sum[i] += fs.back()(i, 0);
  }
  for (std::size_t i = 0; i < x.rows(); ++i) {
    const double mean = sum[i] / s;
    double ss = 0.0;
    for (const auto& f : fs) ss += (f(i, 0) - mean) * (f(i, 0) - mean);
    out[i] = {mean, std::sqrt(ss / s + pred.noise->variance())};
  }
  return out;
}

inline RegPrediction ensemble_predict_reg(const PosteriorEnsemble& ensemble, std::span<const double> x,
                                          NoiseModel noise) {
  require(!ensemble.empty(), "ensemble_predict_reg: empty ensemble");
  Matrix xm(1, x.size(), std::vector<double>(x.begin(), x.end()));
  return predict_reg(Predictor::ensemble(ensemble, noise), xm).front();
}

inline MetricsReport test_loglik_class(const Predictor& pred, const Dataset& test) {
  require(test.size() > 0, "test_loglik_class: empty test set");
  require(test.is_classification(), "test_loglik_class: test set has no labels");
  const Matrix lp = predict_class_logprobs(pred, test.inputs);
  double total = 0.0;
  for (std::size_t i = 0; i < test.size(); ++i) total += lp(i, static_cast<std::size_t>(test.labels[i]));
  return {"test_loglik", total / static_cast<double>(test.size()), 0.0, 1};
}

// Ensembles use the exact mixture density
// logsumexp_s log N(y | f_s, 1/lambda_n) - log S; students log N(y | mu, e^alpha).
inline MetricsReport test_loglik_reg(const Predictor& pred, const Dataset& test) {
  pred.validate();
  require(test.size() > 0, "test_loglik_reg: empty test set");
  require(!test.is_classification(), "test_loglik_reg: test set has class labels");
  require(!pred.classifies(), "test_loglik_reg: predictor is a classifier");
  double total = 0.0;
  if (pred.kind == PredictorKind::Student) {
    const Matrix o = predict(pred.spec, pred.members.front(), test.inputs);
    for (std::size_t i = 0; i < test.size(); ++i) {
      const double mu = o(i, 0), alpha = o(i, 1);
      const double r = test.targets[i] - mu;
      total += -0.5 * alpha - 0.5 * r * r * std::exp(-alpha) - kHalfLog2Pi;
    }
  } else {
    std::vector<double> acc(test.size(), -std::numeric_limits<double>::infinity());
    for (const auto& member : pred.members) {
      const Matrix f = predict(pred.spec, member, test.inputs);
      for (std::size_t i = 0; i < test.size(); ++i)
        acc[i] = detail::logaddexp(acc[i], -nll_data_regression(f(i, 0), test.targets[i], *pred.noise));
    }
    const double log_s = std::log(static_cast<double>(pred.members.size()));
    for (double a : acc) total += a - log_s;
  }
  return {"test_loglik", total / static_cast<double>(test.size()), 0.0, 1};
}

// Fraction of examples whose predictive argmax (lowest index on ties) differs
// from the label.
inline MetricsReport misclass_rate(const Predictor& pred, const Dataset& test) {
  require(test.size() > 0, "misclass_rate: empty test set");
  require(test.is_classification(), "misclass_rate: test set has no labels");
  const Matrix lp = predict_class_logprobs(pred, test.inputs);
  std::size_t wrong = 0;
  for (std::size_t i = 0; i < test.size(); ++i) {
    auto row = lp.row(i);
    const auto best = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
    if (best != static_cast<std::size_t>(test.labels[i])) ++wrong;
  }
  return {"misclass_rate", static_cast<double>(wrong) / static_cast<double>(test.size()), 0.0, 1};
}

inline MetricsReport rmse(const Predictor& pred, const Dataset& test) {
  auto p = predict_reg(pred, test.inputs);
  double ss = 0.0;
  for (std::size_t i = 0; i < test.size(); ++i) ss += (p[i].mean - test.targets[i]) * (p[i].mean - test.targets[i]);
  return {"rmse", std::sqrt(ss / static_cast<double>(test.size())), 0.0, 1};
}

// Cells are indexed row-major with y as the slow axis: idx = iy * nx + ix.
struct GridGeometry {
  double x_min = -10.0, x_max = 10.0;
  double y_min = -10.0, y_max = 10.0;
  std::size_t nx = 100, ny = 100;

  void validate() const {
    require(nx >= 2 && ny >= 2, "grid: resolution must be >= 2 per axis");
    require(x_min < x_max && y_min < y_max, "grid: empty range");
  }
  std::size_t cells() const noexcept { return nx * ny; }
  double x_center(std::size_t ix) const { return x_min + (static_cast<double>(ix) + 0.5) * (x_max - x_min) / static_cast<double>(nx); }
  double y_center(std::size_t iy) const { return y_min + (static_cast<double>(iy) + 0.5) * (y_max - y_min) / static_cast<double>(ny); }

  Matrix centers() const {
    Matrix c(cells(), 2);
    for (std::size_t iy = 0; iy < ny; ++iy)
      for (std::size_t ix = 0; ix < nx; ++ix) {
        c(iy * nx + ix, 0) = x_center(ix);
        c(iy * nx + ix, 1) = y_center(iy);
      }
    return c;
  }

  bool operator==(const GridGeometry&) const = default;
};

struct Grid2D {
  GridGeometry geometry;
  std::vector<Predictive> cells;
};

inline Grid2D predictive_grid(const Predictor& pred, const GridGeometry& geom) {
  geom.validate();
  if (pred.spec.input_width() != 2)
    throw ShapeError("predictive_grid: model takes " + std::to_string(pred.spec.input_width()) + " inputs, need 2");
  const Matrix x = geom.centers();
  Grid2D g{geom, {}};
  g.cells.reserve(geom.cells());
  if (pred.classifies()) {
    const Matrix lp = predict_class_logprobs(pred, x);
    for (std::size_t i = 0; i < lp.rows(); ++i)
      g.cells.emplace_back(Categorical{std::vector<double>(lp.row(i).begin(), lp.row(i).end())});
  } else {
    for (const auto& p : predict_reg(pred, x)) g.cells.emplace_back(Gaussian{p.mean, 2.0 * std::log(p.stddev)});
  }
  return g;
}

inline constexpr double kKlEpsilon = 1e-12;
inline const double kLogKlEpsilon = std::log(kKlEpsilon);

// Mean over cells of KL(reference_cell || approx_cell); approx probabilities
// are clamped below at kKlEpsilon.
inline double kl_grid(const Grid2D& reference, const Grid2D& approx) {
  if (!(reference.geometry == approx.geometry) || reference.cells.size() != approx.cells.size())
    throw ShapeError("kl_grid: grid geometries differ");
  require(!reference.cells.empty(), "kl_grid: empty grid");
  double total = 0.0;
  for (std::size_t i = 0; i < reference.cells.size(); ++i) {
    const auto* p = std::get_if<Categorical>(&reference.cells[i]);
    const auto* q = std::get_if<Categorical>(&approx.cells[i]);
    if (!p || !q) throw PreconditionError("kl_grid: cells must be categorical");
    if (p->log_probs.size() != q->log_probs.size()) throw ShapeError("kl_grid: class counts differ");
    double kl = 0.0;
    for (std::size_t k = 0; k < p->log_probs.size(); ++k) {
      const double pk = std::exp(p->log_probs[k]);
      if (pk <= 0.0) continue;
      const double lq = std::max(q->log_probs[k], kLogKlEpsilon);
      kl += pk * (p->log_probs[k] - lq);
    }
    total += std::max(kl, 0.0);
  }
  return total / static_cast<double>(reference.cells.size());
}

// CSV columns: x,y,p_class0..p_class{K-1} for classifiers, x,y,mu,std for
// regression.
inline void write_grid_csv(std::ostream& os, const Grid2D& g) {
  const auto& geom = g.geometry;
  const bool categorical = !g.cells.empty() && std::holds_alternative<Categorical>(g.cells.front());
  os << "x,y";
  if (categorical) {
    for (std::size_t k = 0; k < std::get<Categorical>(g.cells.front()).log_probs.size(); ++k) os << ",p_class" << k;
  } else {
    os << ",mu,std";
  }
  os << '\n' << std::setprecision(17);
  for (std::size_t iy = 0; iy < geom.ny; ++iy)
    for (std::size_t ix = 0; ix < geom.nx; ++ix) {
      const auto& cell = g.cells[iy * geom.nx + ix];
      os << geom.x_center(ix) << ',' << geom.y_center(iy);
      if (const auto* c = std::get_if<Categorical>(&cell)) {
        for (double lp : c->log_probs) os << ',' << std::exp(lp);
      } else {
        const auto& gs = std::get<Gaussian>(cell);
        os << ',' << gs.mu << ',' << std::exp(0.5 * gs.log_var);
      }
      os << '\n';
    }
}

inline void write_grid_metadata(std::ostream& os, const GridGeometry& geom) {
  os << std::setprecision(17);
  os << "x_min=" << geom.x_min << "\nx_max=" << geom.x_max << "\ny_min=" << geom.y_min << "\ny_max=" << geom.y_max
     << "\nnx=" << geom.nx << "\nny=" << geom.ny << "\nlayout=row-major, y slow, cell centers"
     << "\nkl_direction=KL(reference || approx)\nkl_averaging=mean over cells\nkl_epsilon=" << kKlEpsilon << '\n';
}

inline std::map<std::string, std::string> read_key_values(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw Error("cannot open " + path.string());
  std::map<std::string, std::string> kv;
  std::string line;
  while (std::getline(is, line)) {
    auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return kv;
}

inline std::filesystem::path grid_metadata_path(const std::filesystem::path& csv) {
  auto p = csv;
  p += ".meta";
  return p;
}

// Reads a categorical grid written by write_grid_csv plus its ".meta" sidecar.
inline Grid2D read_grid_csv(const std::filesystem::path& csv) {
  auto kv = read_key_values(grid_metadata_path(csv));
  auto num = [&](const char* key) {
    auto it = kv.find(key);
    if (it == kv.end()) throw ParseError(csv.string() + ".meta: missing " + key);
    return std::stod(it->second);
  };
  GridGeometry geom{num("x_min"), num("x_max"), num("y_min"), num("y_max"), static_cast<std::size_t>(num("nx")),
                    static_cast<std::size_t>(num("ny"))};
  geom.validate();
  std::ifstream is(csv);
  if (!is) throw Error("cannot open " + csv.string());
  std::string line;
  std::getline(is, line);
  if (line.rfind("x,y,p_class", 0) != 0) throw ParseError(csv.string() + ": not a categorical grid");
  Grid2D g{geom, {}};
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string field;
    std::vector<double> v;
    while (std::getline(ss, field, ',')) v.push_back(std::stod(field));
    if (v.size() < 3) throw ParseError(csv.string() + ":" + std::to_string(lineno) + ": too few columns");
    Categorical c;
    for (std::size_t k = 2; k < v.size(); ++k) c.log_probs.push_back(std::log(v[k]));
    g.cells.emplace_back(std::move(c));
  }
  if (g.cells.size() != geom.cells()) throw ParseError(csv.string() + ": cell count does not match metadata");
  return g;
}

}  // namespace bdk
