#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "bdk/hmc.hpp"
#include "bdk/samplers.hpp"
#include "test_util.hpp"

namespace bdk {
namespace {

TEST(SgdStep, Examples) {
  ParamVector p(std::vector<double>{1.0, -3.0});
  EXPECT_EQ(sgd_step(p, ParamVector(2), 0.5), p);
  EXPECT_DOUBLE_EQ(sgd_step(ParamVector(std::vector<double>{1.0}), ParamVector(std::vector<double>{-2.0}), 0.1)[0], 0.8);
  const ParamVector g(std::vector<double>{0.25, -0.5});
  const auto two = sgd_step(sgd_step(p, g, 0.05), g, 0.05);
  const auto one = sgd_step(p, g, 0.1);
  for (std::size_t i = 0; i < 2; ++i) EXPECT_NEAR(two[i], one[i], 1e-15);
  EXPECT_THROW(sgd_step(p, g, 0.0), PreconditionError);
  EXPECT_THROW(sgd_step(p, ParamVector(3), 0.1), ShapeError);
}

TEST(SgldStep, ZeroNoiseZeroGradientIsIdentity) {
  ParamVector p(std::vector<double>{1.0, -3.0, 0.5});
  EXPECT_EQ(sgld_step(p, ParamVector(3), 0.01, [] { return 0.0; }), p);
  const auto half = sgld_step(p, ParamVector(std::vector<double>{2.0, 2.0, 2.0}), 0.1, [] { return 0.0; });
  EXPECT_DOUBLE_EQ(half[0], 1.1);
}

TEST(SgldStep, IncrementVarianceEqualsStepSize) {
  const double eta = 0.04;
  GaussianSource normal(make_engine(1, Stream::TeacherNoise));
  ParamVector p(1);
  double sum = 0.0, sumsq = 0.0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    const auto next = sgld_step(p, ParamVector(1), eta, normal);
    const double inc = next[0] - p[0];
    sum += inc;
    sumsq += inc * inc;
    p = next;
  }
  const double mean = sum / n;
  const double var = sumsq / n - mean * mean;
  EXPECT_NEAR(var, eta, 0.03 * eta);
}

TEST(StepSchedule, StepDecay) {
  const auto s = StepSchedule::step_decay(1e-5, 0.5, 80000);
  EXPECT_EQ(s.at(1), 1e-5);
  EXPECT_EQ(s.at(80000), 1e-5);
  EXPECT_EQ(s.at(80001), 5e-6);
  EXPECT_EQ(s.at(160001), 2.5e-6);
  EXPECT_EQ(StepSchedule::constant(3e-4).at(123456), 3e-4);
}

TEST(ChainConfig, RetainedCount) {
  ChainConfig c;
  c.burn_in = 2000;
  c.thin = 100;
  c.iterations = 100000;
  EXPECT_EQ(c.expected_samples(), 980u);
  std::size_t kept = 0;
  for (std::size_t t = 1; t <= c.iterations; ++t) kept += c.retains(t);
  EXPECT_EQ(kept, 980u);
  c.iterations = c.burn_in + c.thin;
  EXPECT_EQ(c.expected_samples(), 1u);
  c.iterations = c.burn_in;
  EXPECT_THROW(c.validate(), PreconditionError);
}

Dataset linear_data(std::size_t n, std::uint64_t seed) {
  auto rng = make_engine(seed, Stream::DataGen);
  std::normal_distribution<double> nd(0.0, 1.0);
  Dataset d;
  d.inputs = Matrix(n, 1);
  for (std::size_t i = 0; i < n; ++i) {
    d.inputs(i, 0) = nd(rng);
    d.targets.push_back(1.5 * d.inputs(i, 0) - 0.5 + 0.7 * nd(rng));
  }
  return d;
}

TEST(RunChain, CountsAndDeterminism) {
  const auto spec = make_spec({1, 4, 1}, Head::mean_only());
  const auto data = linear_data(30, 2);
  ChainConfig c;
  c.eta = StepSchedule::constant(1e-3);
  c.iterations = 250;
  c.burn_in = 20;
  c.thin = 7;
  c.batch = 5;
  c.seed = 42;
  const auto a = run_chain(ChainKind::Sgld, spec, data, c, NoiseModel(2.0));
  EXPECT_EQ(a.ensemble.size(), 32u);
  const auto b = run_chain(ChainKind::Sgld, spec, data, c, NoiseModel(2.0));
  EXPECT_EQ(a.ensemble.samples, b.ensemble.samples);
  EXPECT_EQ(a.final_params, b.final_params);
  c.seed = 43;
  EXPECT_NE(run_chain(ChainKind::Sgld, spec, data, c, NoiseModel(2.0)).final_params, a.final_params);

  c.iterations = c.burn_in + c.thin;
  EXPECT_EQ(run_chain(ChainKind::Sgld, spec, data, c, NoiseModel(2.0)).ensemble.size(), 1u);
  EXPECT_TRUE(run_chain(ChainKind::Sgd, spec, data, c, NoiseModel(2.0)).ensemble.empty());
}

TEST(RunChain, NoiselessSgldIsBitIdenticalToHalfStepSgd) {
  const auto spec = make_spec({2, 6, 2}, true);
  auto rng = make_engine(3, Stream::DataGen);
  Dataset d;
  d.kind = TargetKind::ClassLabels;
  d.num_classes = 2;
  d.inputs = testing::random_matrix(40, 2, rng);
  for (std::size_t i = 0; i < 40; ++i) d.labels.push_back(d.inputs(i, 0) + d.inputs(i, 1) > 0 ? 1 : 0);
  ChainConfig c;
  c.eta = StepSchedule::step_decay(0.02, 0.5, 100);
  c.iterations = 300;
  c.batch = 8;
  c.seed = 9;
  c.langevin_noise = false;
  const auto sgld = run_chain(ChainKind::Sgld, spec, d, c, std::nullopt);
  c.langevin_noise = true;
  c.eta.initial = 0.01;
  const auto sgd = run_chain(ChainKind::Sgd, spec, d, c, std::nullopt);
  EXPECT_EQ(sgld.final_params, sgd.final_params);
  EXPECT_EQ(sgld.nll_trace, sgd.nll_trace);
}

TEST(RunChain, DivergenceNamesIteration) {
  const auto spec = make_spec({1, 4, 1}, Head::mean_only());
  const auto data = linear_data(30, 4);
  ChainConfig c;
  c.eta = StepSchedule::constant(10.0);
  c.iterations = 1000;
  c.batch = 30;
  try {
    run_chain(ChainKind::Sgd, spec, data, c, NoiseModel(100.0));
    FAIL() << "expected divergence";
  } catch (const DivergenceError& e) {
    EXPECT_GE(e.iteration(), 1u);
    EXPECT_LT(e.iteration(), 1000u);
  }
}

// Batch-means standard error of the sample mean.
double batch_means_se(const std::vector<double>& v, std::size_t batches = 50) {
  const std::size_t len = v.size() / batches;
  std::vector<double> means(batches);
  for (std::size_t b = 0; b < batches; ++b)
    means[b] = std::accumulate(v.begin() + b * len, v.begin() + (b + 1) * len, 0.0) / static_cast<double>(len);
  const double m = std::accumulate(means.begin(), means.end(), 0.0) / batches;
  double ss = 0.0;
  for (double x : means) ss += (x - m) * (x - m);
  return std::sqrt(ss / (batches - 1.0) / batches);
}

// y_i ~ N(b, 1/lambda_n), b ~ N(0, 1/lambda): a 1-1 net with all inputs 0 sees
// only its bias, whose posterior is N(lambda_n sum y / P, 1/P), P = lambda + N lambda_n.
TEST(Sgld, ConjugateGaussianPosterior) {
  const auto spec = make_spec({1, 1}, Head::mean_only());
  Dataset d;
  d.inputs = Matrix(10, 1);
  auto rng = make_engine(5, Stream::DataGen);
  std::normal_distribution<double> nd(1.3, 1.0);
  for (int i = 0; i < 10; ++i) d.targets.push_back(nd(rng));
  const double lambda = 1.0, lambda_n = 1.0;
  const double prec = lambda + 10.0 * lambda_n;
  const double m_star = lambda_n * std::accumulate(d.targets.begin(), d.targets.end(), 0.0) / prec;
  const double v_star = 1.0 / prec;

  GaussianSource normal(make_engine(12, Stream::TeacherNoise));
  ParamVector theta(std::vector<double>{0.0, 0.0});
  std::vector<double> bias;
  for (int t = 1; t <= 300000; ++t) {
    const auto g = posterior_grad_estimate(spec, theta, d, d.size(), lambda, NoiseModel(lambda_n));
    theta = sgld_step(theta, g, 2e-3, normal);
    if (t > 5000 && t % 5 == 0) bias.push_back(theta[1]);
  }
  const double mean = std::accumulate(bias.begin(), bias.end(), 0.0) / static_cast<double>(bias.size());
  double ss = 0.0;
  for (double b : bias) ss += (b - mean) * (b - mean);
  const double var = ss / static_cast<double>(bias.size() - 1);
  EXPECT_LE(std::abs(mean - m_star), 3.0 * batch_means_se(bias));
  EXPECT_GE(var, 0.8 * v_star);
  EXPECT_LE(var, 1.3 * v_star);
}

TEST(Hmc, TinyStepsAreAlwaysAccepted) {
  auto log_fn = [](const std::vector<double>& q) { return -0.5 * q[0] * q[0] - 0.5 * q[1] * q[1]; };
  auto grad_fn = [](const std::vector<double>& q) { return std::vector<double>{-q[0], -q[1]}; };
  HmcConfig cfg{1e-6, 1, 1000, 0, 1, 0.0};
  auto rng = make_engine(1, Stream::Hmc);
  const auto r = hmc_sample(log_fn, grad_fn, {0.3, -0.2}, cfg, rng);
  EXPECT_EQ(r.proposals, 1000u);
  EXPECT_GE(r.acceptance_rate, 0.999);
}

TEST(Hmc, CorrelatedGaussianMoments) {
  // Covariance [[1, .5], [.5, 1]]; precision = [[1, -.5], [-.5, 1]] / 0.75.
  const double rho = 0.5, det = 1.0 - rho * rho;
  auto grad_fn = [&](const std::vector<double>& q) {
    return std::vector<double>{-(q[0] - rho * q[1]) / det, -(q[1] - rho * q[0]) / det};
  };
  auto log_fn = [&](const std::vector<double>& q) {
    return -0.5 * (q[0] * q[0] - 2 * rho * q[0] * q[1] + q[1] * q[1]) / det;
  };
  HmcConfig cfg{0.25, 8, 20000, 500, 1, 0.2};
  auto rng = make_engine(2, Stream::Hmc);
  const auto r = hmc_sample(log_fn, grad_fn, {2.0, 2.0}, cfg, rng);
  ASSERT_EQ(r.samples.size(), 20000u);
  std::vector<double> x, y;
  for (const auto& s : r.samples) x.push_back(s[0]), y.push_back(s[1]);
  const double n = 20000.0;
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n, my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  EXPECT_LE(std::abs(mx), 3.0 * batch_means_se(x));
  EXPECT_LE(std::abs(my), 3.0 * batch_means_se(y));
  double sxx = 0, syy = 0, sxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i)
    sxx += (x[i] - mx) * (x[i] - mx), syy += (y[i] - my) * (y[i] - my), sxy += (x[i] - mx) * (y[i] - my);
  EXPECT_NEAR(sxx / n, 1.0, 0.05);
  EXPECT_NEAR(syy / n, 1.0, 0.05);
  EXPECT_NEAR(sxy / n, rho, 0.05 * rho);
}

TEST(Hmc, LeapfrogEnergyErrorIsSecondOrder) {
  auto grad_fn = [](const std::vector<double>& q) { return std::vector<double>{-q[0], -4.0 * q[1]}; };
  auto energy = [](const std::vector<double>& q, const std::vector<double>& p) {
    return 0.5 * (q[0] * q[0] + 4.0 * q[1] * q[1]) + kinetic_energy(p);
  };
  auto drift = [&](double eps) {
    std::vector<double> q{1.0, 0.5}, p{0.3, -0.8};
    const double h0 = energy(q, p);
    leapfrog(q, p, grad_fn, eps, static_cast<std::size_t>(std::lround(1.3 / eps)));
    return std::abs(energy(q, p) - h0);
  };
  const double ratio = drift(0.02) / drift(0.01);
  EXPECT_GT(ratio, 3.5);
  EXPECT_LT(ratio, 4.5);
}

TEST(Hmc, KolmogorovSmirnovOnStandardNormal) {
  auto log_fn = [](const std::vector<double>& q) { return -0.5 * q[0] * q[0]; };
  auto grad_fn = [](const std::vector<double>& q) { return std::vector<double>{-q[0]}; };
  HmcConfig cfg{0.3, 5, 2000, 200, 10, 0.2};
  auto rng = make_engine(3, Stream::Hmc);
  const auto r = hmc_sample(log_fn, grad_fn, {0.0}, cfg, rng);
  std::vector<double> v;
  for (const auto& s : r.samples) v.push_back(s[0]);
  std::sort(v.begin(), v.end());
  const double n = static_cast<double>(v.size());
  double d = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double cdf = 0.5 * std::erfc(-v[i] / std::sqrt(2.0));
    d = std::max({d, std::abs(cdf - i / n), std::abs(cdf - (i + 1) / n)});
  }
  EXPECT_LT(d, 1.628 / std::sqrt(n));
}

TEST(Hmc, NonFiniteEnergyIsRejected) {
  auto log_fn = [](const std::vector<double>& q) { return q[0] > 1.0 ? -INFINITY : -0.5 * q[0] * q[0]; };
  auto grad_fn = [](const std::vector<double>& q) { return std::vector<double>{-q[0]}; };
  HmcConfig cfg{0.5, 4, 2000, 0, 1, 0.0};
  auto rng = make_engine(4, Stream::Hmc);
  const auto r = hmc_sample(log_fn, grad_fn, {0.0}, cfg, rng);
  for (const auto& s : r.samples) EXPECT_LE(s[0], 1.0);
  EXPECT_LT(r.acceptance_rate, 1.0);
}

TEST(Hmc, NetworkPosteriorIsDeterministic) {
  const auto spec = make_spec({1, 3, 1}, Head::mean_only());
  const auto data = linear_data(15, 6);
  HmcConfig cfg{0.01, 10, 50, 10, 2, 0.1};
  const auto a = hmc_posterior(spec, data, 1.0, NoiseModel(1.0), cfg, 17);
  const auto b = hmc_posterior(spec, data, 1.0, NoiseModel(1.0), cfg, 17);
  ASSERT_EQ(a.ensemble.size(), 50u);
  EXPECT_EQ(a.ensemble.samples, b.ensemble.samples);
  EXPECT_GT(a.acceptance_rate, 0.5);
}

}  // namespace
}  // namespace bdk
