#pragma once

// Hamiltonian Monte Carlo with identity mass matrix: Gaussian momentum
// resampling, leapfrog integration, Metropolis accept/reject. Used as the
// full-batch reference sampler on small problems.

#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <random>
#include <vector>

#include "bdk/dataset.hpp"
#include "bdk/error.hpp"
#include "bdk/nn.hpp"
#include "bdk/objectives.hpp"
#include "bdk/rng.hpp"
#include "bdk/samplers.hpp"

namespace bdk {

struct HmcConfig {
  double step_size = 1e-2;       // epsilon
  std::size_t leapfrog_steps = 10;  // L
  std::size_t n_samples = 1000;  // kept after burn-in and thinning
  std::size_t burn_in = 0;       // proposals discarded first
  std::size_t thin = 1;
  // Each trajectory draws its step size uniformly from epsilon * [1 - j, 1 + j].
  double step_jitter = 0.0;

  void validate() const {
    require(step_size > 0.0, "HMC: step size must be positive");
    require(leapfrog_steps >= 1, "HMC: need at least one leapfrog step");
    require(thin >= 1, "HMC: thinning interval must be >= 1");
    require(step_jitter >= 0.0 && step_jitter < 1.0, "HMC: step jitter must lie in [0, 1)");
  }
};

struct HmcResult {
  std::vector<std::vector<double>> samples;
  double acceptance_rate = 0.0;
  std::size_t proposals = 0;
};

inline double kinetic_energy(const std::vector<double>& p) {
  double k = 0.0;
  for (double v : p) k += v * v;
  return 0.5 * k;
}

// L leapfrog steps on H(q, p) = -log_target(q) + |p|^2 / 2, in place.
template <typename GradFn>
void leapfrog(std::vector<double>& q, std::vector<double>& p, GradFn&& grad_log_target, double eps, std::size_t L) {
  auto g = grad_log_target(q);
  for (std::size_t i = 0; i < p.size(); ++i) p[i] += 0.5 * eps * g[i];
  for (std::size_t l = 0; l < L; ++l) {
    for (std::size_t i = 0; i < q.size(); ++i) q[i] += eps * p[i];
    g = grad_log_target(q);
    const double w = (l + 1 == L) ? 0.5 * eps : eps;
    for (std::size_t i = 0; i < p.size(); ++i) p[i] += w * g[i];
  }
}

// `log_target(q)` returns the unnormalized log density and
// `grad_log_target(q)` its gradient as std::vector<double>.
template <typename LogFn, typename GradFn>
HmcResult hmc_sample(LogFn&& log_target, GradFn&& grad_log_target, std::vector<double> init, const HmcConfig& cfg,
                     Engine& rng) {
  cfg.validate();
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);

  std::vector<double> q = std::move(init);
  double logp = log_target(q);
  HmcResult res;
  res.samples.reserve(cfg.n_samples);
  std::size_t accepted = 0;
  std::size_t post_burn = 0;

  while (res.samples.size() < cfg.n_samples) {
    std::vector<double> p(q.size());
    for (double& v : p) v = normal(rng);
    const double h0 = -logp + kinetic_energy(p);

    double eps = cfg.step_size;
    if (cfg.step_jitter > 0.0) eps *= 1.0 + cfg.step_jitter * (2.0 * unif(rng) - 1.0);

    std::vector<double> q_new = q;
    leapfrog(q_new, p, grad_log_target, eps, cfg.leapfrog_steps);
    const double logp_new = log_target(q_new);
    const double h1 = -logp_new + kinetic_energy(p);
    const double u = unif(rng);

    ++res.proposals;
    // A non-finite energy is a rejected proposal, never an abort.
    if (std::isfinite(h1) && std::log(u) < h0 - h1) {
      q = std::move(q_new);
      logp = logp_new;
      ++accepted;
    }
    if (res.proposals > cfg.burn_in) {
      if (post_burn % cfg.thin == 0) res.samples.push_back(q);
      ++post_burn;
    }
  }
  res.acceptance_rate = static_cast<double>(accepted) / static_cast<double>(res.proposals);
  return res;
}

struct HmcEnsemble {
  PosteriorEnsemble ensemble;
  double acceptance_rate = 0.0;
};

// Full-batch HMC over the weights of `spec` given `data`.
inline HmcEnsemble hmc_posterior(const MlpSpec& spec, const Dataset& data, double prior_precision,
                                 const std::optional<NoiseModel>& noise, const HmcConfig& cfg, std::uint64_t seed,
                                 double init_scale = kHeScale) {
  spec.validate();
  data.validate();
  auto init_rng = make_engine(seed, Stream::TeacherInit);
  auto init = init_params(spec, init_rng, init_scale);
  auto log_fn = [&](const std::vector<double>& q) {
    try {
      return log_posterior(spec, ParamVector(q), data, prior_precision, noise);
    } catch (const PreconditionError&) {
      return -std::numeric_limits<double>::infinity();
    }
  };
  auto grad_fn = [&](const std::vector<double>& q) {
    return posterior_grad_estimate(spec, ParamVector(q), data, data.size(), prior_precision, noise).storage();
  };
  auto rng = make_engine(seed, Stream::Hmc);
  auto res = hmc_sample(log_fn, grad_fn, init.storage(), cfg, rng);

  HmcEnsemble out;
  out.ensemble.spec = spec;
  out.ensemble.provenance = "hmc eps=" + std::to_string(cfg.step_size) + " L=" + std::to_string(cfg.leapfrog_steps) +
                            " n=" + std::to_string(cfg.n_samples);
  out.ensemble.samples.reserve(res.samples.size());
  for (auto& s : res.samples) out.ensemble.samples.emplace_back(std::move(s));
  out.acceptance_rate = res.acceptance_rate;
  return out;
}

}  // namespace bdk
