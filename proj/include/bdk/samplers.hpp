#pragma once

// Plugin SGD and stochastic gradient Langevin dynamics over network weights.

#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "bdk/dataset.hpp"
#include "bdk/error.hpp"
#include "bdk/nn.hpp"
#include "bdk/objectives.hpp"
#include "bdk/rng.hpp"

namespace bdk {

// Constant when `every` is 0; otherwise initial * factor^floor((t - 1) / every)
// for the 1-based iteration t.
struct StepSchedule {
  double initial = 1e-3;
  double factor = 1.0;
  std::size_t every = 0;

  static StepSchedule constant(double eta) { return {eta, 1.0, 0}; }
  static StepSchedule step_decay(double eta0, double factor, std::size_t every) { return {eta0, factor, every}; }

  double at(std::size_t t) const {
    if (every == 0 || t == 0) return initial;
    return initial * std::pow(factor, static_cast<double>((t - 1) / every));
  }

  void validate(const std::string& name) const {
    require(initial > 0.0 && std::isfinite(initial), name + ": initial step size must be positive");
    require(factor > 0.0 && std::isfinite(factor), name + ": decay factor must be positive");
  }
};

struct ChainConfig {
  StepSchedule eta = StepSchedule::constant(1e-3);
  std::size_t iterations = 1000;  // T
  std::size_t burn_in = 0;        // B
  std::size_t thin = 1;           // tau
  std::size_t batch = 1;          // M
  double prior_precision = 1.0;   // lambda
  std::uint64_t seed = 0;
  double init_scale = kHeScale;
  // Off turns an SGLD chain into noise-free ascent with step eta/2.
  bool langevin_noise = true;
  // Every step uses the whole dataset in order instead of a sampled minibatch.
  bool full_batch = false;

  void validate(bool check_iterations = true) const {
    eta.validate("teacher step size");
    if (check_iterations) require(iterations > burn_in, "ChainConfig: need T > B");
    require(thin >= 1, "ChainConfig: thinning interval must be >= 1");
    require(batch >= 1, "ChainConfig: minibatch size must be >= 1");
    require(prior_precision >= 0.0, "ChainConfig: prior precision must be non-negative");
    require(init_scale > 0.0, "ChainConfig: init scale must be positive");
  }

  // Whether theta_t (after t updates) is kept: t > B and (t - B) divisible by tau.
  bool retains(std::size_t t) const { return t > burn_in && (t - burn_in) % thin == 0; }

  std::size_t expected_samples() const { return iterations > burn_in ? (iterations - burn_in) / thin : 0; }
};

enum class ChainKind { Sgd, Sgld };

struct PosteriorEnsemble {
  MlpSpec spec;
  std::vector<ParamVector> samples;
  std::string provenance;

  std::size_t size() const noexcept { return samples.size(); }
  bool empty() const noexcept { return samples.empty(); }
};

inline std::string describe(ChainKind kind, const ChainConfig& c) {
  std::ostringstream os;
  os << (kind == ChainKind::Sgd ? "sgd" : "sgld") << " T=" << c.iterations << " B=" << c.burn_in
     << " tau=" << c.thin << " M=" << (c.full_batch ? std::string("all") : std::to_string(c.batch))
     << " eta0=" << c.eta.initial << " lambda=" << c.prior_precision << " seed=" << c.seed;
  return os.str();
}

// Ascent on the log posterior: params + eta * grad.
inline ParamVector sgd_step(const ParamVector& params, const ParamVector& grad, double eta) {
  require(eta > 0.0, "sgd_step: eta must be positive");
  if (params.size() != grad.size()) throw ShapeError("sgd_step: gradient size mismatch");
  ParamVector out(params.size());
  auto p = params.values();
  auto g = grad.values();
  auto o = out.values();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = p[i] + eta * g[i];
  return out;
}

// params + (eta/2) * grad + z, z ~ N(0, eta I). `normal` yields standard
// normal draws, one per coordinate in order.
template <typename NormalFn>
ParamVector sgld_step(const ParamVector& params, const ParamVector& grad, double eta, NormalFn&& normal) {
  require(eta > 0.0, "sgld_step: eta must be positive");
  if (params.size() != grad.size()) throw ShapeError("sgld_step: gradient size mismatch");
  const double half = 0.5 * eta;
  const double sd = std::sqrt(eta);
  ParamVector out(params.size());
  auto p = params.values();
  auto g = grad.values();
  auto o = out.values();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = p[i] + half * g[i] + sd * normal();
  return out;
}

// Uniform with replacement.
inline std::vector<std::size_t> sample_minibatch(std::size_t n, std::size_t m, Engine& rng) {
  std::uniform_int_distribution<std::size_t> pick(0, n - 1);
  std::vector<std::size_t> idx(m);
  for (auto& i : idx) i = pick(rng);
  return idx;
}

// One SGD or SGLD chain advanced an iteration at a time. Randomness comes from
// three streams of the chain seed: initialization, minibatch selection and
// Langevin noise.
class LangevinChain {
 public:
  LangevinChain(ChainKind kind, MlpSpec spec, const Dataset& data, ChainConfig config,
                std::optional<NoiseModel> noise)
      : kind_(kind),
        spec_(std::move(spec)),
        data_(&data),
        config_(config),
        noise_model_(noise),
        minibatch_rng_(make_engine(config.seed, Stream::TeacherMinibatch)),
        normal_(make_engine(config.seed, Stream::TeacherNoise)) {
    spec_.validate();
    data.validate();
    if (data.dim() != spec_.input_width()) throw ShapeError("chain: dataset width does not match spec input");
    auto init_rng = make_engine(config.seed, Stream::TeacherInit);
    params_ = init_params(spec_, init_rng, config.init_scale);
  }

  // Advances to theta_{t+1}; returns the mean minibatch NLL at theta_t.
  double step() {
    const std::size_t t = ++t_;
    PosteriorGradient pg;
    if (config_.full_batch) {
      pg = posterior_grad_with_nll(spec_, params_, *data_, data_->size(), config_.prior_precision, noise_model_);
    } else {
      auto idx = sample_minibatch(data_->size(), config_.batch, minibatch_rng_);
      pg = posterior_grad_with_nll(spec_, params_, gather_rows(*data_, idx), data_->size(), config_.prior_precision,
                                   noise_model_);
    }
    const double eta = config_.eta.at(t);
    if (kind_ == ChainKind::Sgd) {
      params_ = sgd_step(params_, pg.grad, eta);
    } else if (config_.langevin_noise) {
      params_ = sgld_step(params_, pg.grad, eta, normal_);
    } else {
      params_ = sgd_step(params_, pg.grad, 0.5 * eta);
    }
    if (!params_.all_finite()) throw DivergenceError(kind_ == ChainKind::Sgd ? "SGD chain" : "SGLD chain", t);
    return pg.minibatch_nll;
  }

  std::size_t iteration() const noexcept { return t_; }
  const ParamVector& params() const noexcept { return params_; }
  const MlpSpec& spec() const noexcept { return spec_; }
  const ChainConfig& config() const noexcept { return config_; }
  bool retain_current() const { return kind_ == ChainKind::Sgld && config_.retains(t_); }

 private:
  ChainKind kind_;
  MlpSpec spec_;
  const Dataset* data_;
  ChainConfig config_;
  std::optional<NoiseModel> noise_model_;
  Engine minibatch_rng_;
  GaussianSource normal_;
  ParamVector params_;
  std::size_t t_ = 0;
};

struct ChainResult {
  PosteriorEnsemble ensemble;  // retained samples; empty for SGD
  ParamVector final_params;
  std::vector<double> nll_trace;  // mean minibatch NLL per iteration
};

inline ChainResult run_chain(ChainKind kind, const MlpSpec& spec, const Dataset& data, const ChainConfig& config,
                             const std::optional<NoiseModel>& noise) {
  config.validate();
  LangevinChain chain(kind, spec, data, config, noise);
  ChainResult r;
  r.ensemble.spec = spec;
  r.ensemble.provenance = describe(kind, config);
  if (kind == ChainKind::Sgld) r.ensemble.samples.reserve(config.expected_samples());
  r.nll_trace.reserve(config.iterations);
  for (std::size_t t = 1; t <= config.iterations; ++t) {
    r.nll_trace.push_back(chain.step());
    if (chain.retain_current()) r.ensemble.samples.push_back(chain.params());
  }
  r.final_params = chain.params();
  return r;
}

}  // namespace bdk
