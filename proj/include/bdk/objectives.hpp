#pragma once

// Likelihoods, the spherical Gaussian prior, and the distillation losses with
// their closed-form output gradients.

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "bdk/dataset.hpp"
#include "bdk/error.hpp"
#include "bdk/nn.hpp"

namespace bdk {

inline constexpr double kHalfLog2Pi = 0.91893853320467274178;

struct NoiseModel {
  double precision = 1.0;  // lambda_n

  explicit NoiseModel(double lambda_n) : precision(lambda_n) {
    require(lambda_n > 0.0 && std::isfinite(lambda_n), "NoiseModel: precision must be positive");
  }
  double variance() const noexcept { return 1.0 / precision; }
};

struct Categorical {
  std::vector<double> log_probs;
};

struct Gaussian {
  double mu = 0.0;
  double log_var = 0.0;  // alpha
};

using Predictive = std::variant<Categorical, Gaussian>;

inline double logsumexp(std::span<const double> v) {
  if (v.empty()) return -std::numeric_limits<double>::infinity();
  const double m = *std::max_element(v.begin(), v.end());
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (double x : v) s += std::exp(x - m);
  return m + std::log(s);
}

inline std::vector<double> log_softmax(std::span<const double> logits) {
  const double lse = logsumexp(logits);
  std::vector<double> out(logits.size());
  for (std::size_t k = 0; k < logits.size(); ++k) out[k] = logits[k] - lse;
  return out;
}

inline std::vector<double> softmax(std::span<const double> logits) {
  auto out = log_softmax(logits);
  for (double& v : out) v = std::exp(v);
  return out;
}

// Pulls a gradient w.r.t. log-probabilities back to the logits:
// dlogit_k = g_k - softmax_k * sum_j g_j.
inline std::vector<double> log_softmax_vjp(std::span<const double> logits, std::span<const double> g) {
  auto p = softmax(logits);
  double total = 0.0;
  for (double x : g) total += x;
  for (std::size_t k = 0; k < p.size(); ++k) p[k] = g[k] - p[k] * total;
  return p;
}

inline double nll_data_classification(std::span<const double> log_probs, int label) {
  if (label < 0 || static_cast<std::size_t>(label) >= log_probs.size())
    throw PreconditionError("nll_data_classification: label " + std::to_string(label) + " out of range");
  return -log_probs[static_cast<std::size_t>(label)];
}

// Full normalized Gaussian NLL, -log N(y | f, 1/lambda_n).
inline double nll_data_regression(double f, double y, NoiseModel noise) {
  const double r = y - f;
  return 0.5 * noise.precision * r * r - 0.5 * std::log(noise.precision) + kHalfLog2Pi;
}

struct PriorTerm {
  double log_density = 0.0;  // unnormalized
  ParamVector grad;
};

inline PriorTerm log_prior_grad(const ParamVector& params, double precision) {
  require(precision >= 0.0, "log_prior_grad: precision must be non-negative");
  PriorTerm t{-0.5 * precision * squared_norm(params), ParamVector(params.size())};
  auto g = t.grad.values();
  auto p = params.values();
  for (std::size_t i = 0; i < p.size(); ++i) g[i] = -precision * p[i];
  return t;
}

struct OutputLoglik {
  double loglik = 0.0;  // summed over the batch
  Matrix grad;          // d loglik / d outputs
};

// Data log-likelihood of a batch given raw network outputs, and its gradient
// w.r.t. those outputs. Teachers use a softmax or mean-only head.
inline OutputLoglik output_loglik(const MlpSpec& spec, const Matrix& outputs, const Dataset& batch,
                                  const std::optional<NoiseModel>& noise) {
  OutputLoglik r{0.0, Matrix(outputs.rows(), outputs.cols())};
  switch (spec.head.kind) {
    case HeadKind::SoftmaxClassifier: {
      if (!batch.is_classification()) throw PreconditionError("classifier head needs class labels");
      for (std::size_t i = 0; i < outputs.rows(); ++i) {
        auto lp = log_softmax(outputs.row(i));
        const int y = batch.labels[i];
        r.loglik -= nll_data_classification(lp, y);
        auto g = r.grad.row(i);
        for (std::size_t k = 0; k < lp.size(); ++k) g[k] = -std::exp(lp[k]);
        g[static_cast<std::size_t>(y)] += 1.0;
      }
      break;
    }
    case HeadKind::RegressionMeanOnly: {
      if (batch.is_classification()) throw PreconditionError("regression head needs real targets");
      if (!noise) throw PreconditionError("regression likelihood needs a noise model");
      for (std::size_t i = 0; i < outputs.rows(); ++i) {
        const double f = outputs(i, 0);
        r.loglik -= nll_data_regression(f, batch.targets[i], *noise);
        r.grad(i, 0) = noise->precision * (batch.targets[i] - f);
      }
      break;
    }
    case HeadKind::RegressionMeanLogVar:
      throw PreconditionError("teacher likelihood is defined for softmax and mean-only heads");
  }
  return r;
}

struct PosteriorGradient {
  ParamVector grad;
  double minibatch_nll = 0.0;  // mean over the minibatch
};

// grad log p(theta | lambda) + (N / M) * sum_{i in minibatch} grad log p(y_i | x_i, theta)
inline PosteriorGradient posterior_grad_with_nll(const MlpSpec& spec, const ParamVector& params,
                                                 const Dataset& minibatch, std::size_t n_total,
                                                 double prior_precision,
                                                 const std::optional<NoiseModel>& noise) {
  const std::size_t m = minibatch.size();
  require(m > 0, "posterior_grad_estimate: empty minibatch");
  require(n_total >= m, "posterior_grad_estimate: N_total smaller than the minibatch");
  auto fr = forward(spec, params, minibatch.inputs);
  auto ll = output_loglik(spec, fr.outputs, minibatch, noise);
  auto data_grad = backward(spec, params, fr.trace, ll.grad);
  auto prior = log_prior_grad(params, prior_precision);
  const double scale = static_cast<double>(n_total) / static_cast<double>(m);
  axpy(scale, data_grad, prior.grad);
  return {std::move(prior.grad), -ll.loglik / static_cast<double>(m)};
}

inline ParamVector posterior_grad_estimate(const MlpSpec& spec, const ParamVector& params,
                                           const Dataset& minibatch, std::size_t n_total,
                                           double prior_precision, const std::optional<NoiseModel>& noise) {
  return posterior_grad_with_nll(spec, params, minibatch, n_total, prior_precision, noise).grad;
}

// Full-batch unnormalized log posterior; HMC's target.
inline double log_posterior(const MlpSpec& spec, const ParamVector& params, const Dataset& data,
                            double prior_precision, const std::optional<NoiseModel>& noise) {
  auto out = predict(spec, params, data.inputs);
  return output_loglik(spec, out, data, noise).loglik - 0.5 * prior_precision * squared_norm(params);
}

struct ClassDistillLoss {
  double loss = 0.0;
  std::vector<double> dloss_dbeta;
};

// Cross-entropy of the student's log-probabilities under the teacher's
// probabilities; the gradient is w.r.t. the log-probabilities beta.
inline ClassDistillLoss distill_loss_classification(std::span<const double> teacher_probs,
                                                    std::span<const double> student_log_probs) {
  if (teacher_probs.size() != student_log_probs.size())
    throw ShapeError("distill_loss_classification: class counts differ");
  double total = 0.0;
  for (double p : teacher_probs) {
    if (!(p >= 0.0)) throw PreconditionError("distill_loss_classification: negative teacher probability");
    total += p;
  }
  if (std::abs(total - 1.0) > 1e-8) throw PreconditionError("distill_loss_classification: teacher is not on the simplex");
  ClassDistillLoss r{0.0, std::vector<double>(teacher_probs.size())};
  for (std::size_t k = 0; k < teacher_probs.size(); ++k) {
    if (teacher_probs[k] > 0.0) r.loss -= teacher_probs[k] * student_log_probs[k];
    r.dloss_dbeta[k] = -teacher_probs[k];
  }
  return r;
}

struct RegDistillLoss {
  double loss = 0.0;
  double dmu = 0.0;
  double dalpha = 0.0;
};

// 0.5 * [alpha + e^{-alpha} ((f - mu)^2 + 1/lambda_n)], additive constants dropped.
inline RegDistillLoss distill_loss_regression(double f_teacher, double mu, double alpha, NoiseModel noise) {
  const double inv_var = std::exp(-alpha);
  const double r = f_teacher - mu;
  const double spread = r * r + noise.variance();
  return {0.5 * (alpha + inv_var * spread), inv_var * (mu - f_teacher), 0.5 * (1.0 - inv_var * spread)};
}

}  // namespace bdk
