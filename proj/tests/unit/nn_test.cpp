#include <gtest/gtest.h>

#include <sstream>

#include "bdk/checkpoint.hpp"
#include "bdk/nn.hpp"
#include "test_util.hpp"

namespace bdk {
namespace {

using testing::central_difference;
using testing::random_matrix;
using testing::random_params;
using testing::rel_err;

TEST(MlpSpec, RejectsInvalidShapes) {
  EXPECT_THROW(make_spec({2}, Head::softmax(2)), PreconditionError);
  EXPECT_THROW(make_spec({2, 0, 2}, Head::softmax(2)), PreconditionError);
  EXPECT_THROW(make_spec({2, 10, 3}, Head::softmax(2)), PreconditionError);
  EXPECT_THROW(make_spec({1, 10, 2}, Head::mean_only()), PreconditionError);
  EXPECT_THROW(make_spec({1, 10, 1}, Head::mean_log_var()), PreconditionError);
  EXPECT_NO_THROW(make_spec({1, 10, 2}, Head::mean_log_var()));
}

TEST(MlpSpec, ParsesWidthLists) {
  EXPECT_EQ(parse_widths("784-100-100-10"), (std::vector<std::size_t>{784, 100, 100, 10}));
  EXPECT_THROW(parse_widths("2--2"), PreconditionError);
  EXPECT_THROW(parse_widths("2-x"), PreconditionError);
  EXPECT_EQ(make_spec({2, 10, 10, 2}, true).to_string(), "2-10-10-2");
}

TEST(NumParams, MatchesLayoutFormula) {
  EXPECT_EQ(num_params(make_spec({2, 10, 2}, true)), 52u);
  EXPECT_EQ(num_params(make_spec({2, 10, 10, 2}, true)), 162u);  // 20+10 + 100+10 + 20+2
  EXPECT_EQ(num_params(make_spec({1, 1}, Head::mean_only())), 2u);
  // Bias-free counts as printed in the toy-2D table.
  EXPECT_EQ(num_weights(make_spec({2, 10, 2}, true)), 40u);
  EXPECT_EQ(num_weights(make_spec({2, 10, 10, 2}, true)), 140u);
  EXPECT_EQ(num_weights(make_spec({2, 100, 2}, true)), 400u);
}

TEST(InitParams, ShapeBiasesAndDeterminism) {
  const auto spec = make_spec({2, 10, 2}, true);
  auto rng = make_engine(7, Stream::TeacherInit);
  const auto p = init_params(spec, rng);
  ASSERT_EQ(p.size(), 52u);
  for (std::size_t l = 0; l < spec.num_layers(); ++l)
    for (double b : layer_view(spec, p, l).bias) EXPECT_EQ(b, 0.0);

  auto rng2 = make_engine(7, Stream::TeacherInit);
  EXPECT_EQ(init_params(spec, rng2), p);

  auto rng3 = make_engine(7, Stream::TeacherInit);
  EXPECT_THROW(init_params(spec, rng3, 0.0), PreconditionError);
}

TEST(InitParams, WeightVarianceScalesWithFanIn) {
  const auto spec = make_spec({400, 300, 1}, Head::mean_only());
  auto rng = make_engine(3, Stream::TeacherInit);
  const auto p = init_params(spec, rng, 1.5);
  const auto w = layer_view(spec, p, 0).weights;
  double ss = 0.0;
  for (double v : w) ss += v * v;
  const double var = ss / static_cast<double>(w.size());
  EXPECT_NEAR(var, 1.5 * 1.5 / 400.0, 0.03 * 1.5 * 1.5 / 400.0);
}

TEST(Forward, ZeroParamsGiveZeroOutputs) {
  const auto spec = make_spec({3, 5, 4, 2}, true);
  auto rng = make_engine(1, Stream::DataGen);
  const auto out = forward(spec, ParamVector(num_params(spec)), random_matrix(6, 3, rng)).outputs;
  for (double v : out.data()) EXPECT_EQ(v, 0.0);
}

TEST(Forward, IdentityLinearLayer) {
  const auto spec = make_spec({2, 2}, true);
  ParamVector p(std::vector<double>{1, 0, 0, 1, 0, 0});
  const auto x = Matrix::from_rows({{0.25, -3.0}, {7.0, 1.5}});
  EXPECT_EQ(forward(spec, p, x).outputs, x);
}

TEST(Forward, HandComputedReluNet) {
  // 1-2-1: hidden = relu([2x - 1, -x + 0.5]); out = 3 h0 - 2 h1 + 0.25
  const auto spec = make_spec({1, 2, 1}, Head::mean_only());
  ParamVector p(std::vector<double>{2.0, -1.0, -1.0, 0.5, 3.0, -2.0, 0.25});
  const auto x = Matrix::from_rows({{1.0}, {-1.0}, {0.5}});
  const auto out = forward(spec, p, x).outputs;
  EXPECT_DOUBLE_EQ(out(0, 0), 3.0 * 1.0 + 0.25);   // h = (1, 0)
  EXPECT_DOUBLE_EQ(out(1, 0), -2.0 * 1.5 + 0.25);  // h = (0, 1.5)
  EXPECT_DOUBLE_EQ(out(2, 0), 0.25);               // h = (0, 0); relu(0) = 0
}

TEST(Forward, MatchesNaiveLoops) {
  auto rng = make_engine(11, Stream::DataGen);
  const auto spec = make_spec({5, 7, 3, 4}, true);
  const auto p = random_params(spec, rng);
  const auto x = random_matrix(9, 5, rng);
  const auto fast = forward(spec, p, x).outputs;
  const auto slow = testing::naive_forward(spec, p, x);
  for (std::size_t i = 0; i < fast.size(); ++i) EXPECT_NEAR(fast.data()[i], slow.data()[i], 1e-12);
  EXPECT_EQ(predict(spec, p, x), fast);
}

TEST(Forward, RejectsShapeMismatch) {
  const auto spec = make_spec({2, 3, 2}, true);
  auto rng = make_engine(1, Stream::DataGen);
  EXPECT_THROW(forward(spec, ParamVector(num_params(spec)), random_matrix(4, 3, rng)), ShapeError);
  EXPECT_THROW(forward(spec, ParamVector(5), random_matrix(4, 2, rng)), ShapeError);
}

TEST(Forward, ReluLayerIsPositivelyHomogeneous) {
  auto rng = make_engine(5, Stream::DataGen);
  auto spec = make_spec({3, 6, 6, 2}, true);
  auto p = random_params(spec, rng);
  for (std::size_t l = 0; l < spec.num_layers(); ++l)
    for (double& b : layer_view(spec, p, l).bias) b = 0.0;
  const auto x = random_matrix(4, 3, rng);
  const auto base = forward(spec, p, x).trace;
  auto scaled = p;
  for (double& w : layer_view(spec, scaled, 1).weights) w *= 2.5;
  const auto tr = forward(spec, scaled, x).trace;
  for (std::size_t i = 0; i < base.act[1].size(); ++i)
    EXPECT_NEAR(tr.act[1].data()[i], 2.5 * base.act[1].data()[i], 1e-12);
  for (std::size_t i = 0; i < base.act[0].size(); ++i) EXPECT_EQ(tr.act[0].data()[i], base.act[0].data()[i]);
}

TEST(Backward, ZeroSeedGivesZeroGradient) {
  auto rng = make_engine(2, Stream::DataGen);
  const auto spec = make_spec({3, 4, 2}, true);
  const auto p = random_params(spec, rng);
  const auto fr = forward(spec, p, random_matrix(5, 3, rng));
  const auto g = backward(spec, p, fr.trace, Matrix(5, 2));
  for (double v : g.values()) EXPECT_EQ(v, 0.0);
}

TEST(Backward, RejectsShapeMismatch) {
  auto rng = make_engine(2, Stream::DataGen);
  const auto spec = make_spec({3, 4, 2}, true);
  const auto p = random_params(spec, rng);
  const auto fr = forward(spec, p, random_matrix(5, 3, rng));
  EXPECT_THROW(backward(spec, p, fr.trace, Matrix(4, 2)), ShapeError);
}

TEST(Backward, MatchesFiniteDifferences) {
  auto rng = make_engine(3, Stream::DataGen);
  for (const auto& widths : std::vector<std::vector<std::size_t>>{{2, 5, 2}, {3, 4, 4, 1}, {1, 6, 2}, {4, 3}}) {
    const auto spec = make_spec(widths, widths.back() != 1);
    const auto p = random_params(spec, rng);
    const auto x = random_matrix(3, widths.front(), rng);
    const auto seed = random_matrix(3, widths.back(), rng);
    const auto g = backward(spec, p, forward(spec, p, x).trace, seed);
    auto loss = [&](const std::vector<double>& v) {
      const auto out = testing::naive_forward(spec, ParamVector(v), x);
      double s = 0.0;
      for (std::size_t i = 0; i < out.size(); ++i) s += out.data()[i] * seed.data()[i];
      return s;
    };
    const auto fd = central_difference(loss, p.storage());
    for (std::size_t i = 0; i < fd.size(); ++i) EXPECT_LE(rel_err(g[i], fd[i]), 1e-6) << spec.to_string() << " i=" << i;
  }
}

TEST(Backward, BatchGradientIsSumOfPerExampleGradients) {
  auto rng = make_engine(4, Stream::DataGen);
  const auto spec = make_spec({2, 5, 3}, true);
  const auto p = random_params(spec, rng);
  const auto x = random_matrix(2, 2, rng);
  const auto seed = random_matrix(2, 3, rng);
  const auto g = backward(spec, p, forward(spec, p, x).trace, seed);
  ParamVector sum(p.size());
  for (std::size_t r = 0; r < 2; ++r) {
    Matrix xr(1, 2, std::vector<double>(x.row(r).begin(), x.row(r).end()));
    Matrix sr(1, 3, std::vector<double>(seed.row(r).begin(), seed.row(r).end()));
    axpy(1.0, backward(spec, p, forward(spec, p, xr).trace, sr), sum);
  }
  for (std::size_t i = 0; i < g.size(); ++i) EXPECT_NEAR(g[i], sum[i], 1e-12);
}

TEST(ParamVector, FlattenViewsRoundTripBitExactly) {
  auto rng = make_engine(6, Stream::DataGen);
  const auto spec = make_spec({4, 3, 5, 2}, true);
  const auto p = random_params(spec, rng);
  EXPECT_EQ(flatten(spec, split_layers(spec, p)), p);
}

TEST(Checkpoint, RoundTripsAndRejectsCorruption) {
  auto rng = make_engine(8, Stream::DataGen);
  const auto spec = make_spec({1, 10, 2}, Head::mean_log_var());
  const auto p = random_params(spec, rng);
  std::stringstream ss;
  write_params(ss, spec, p);
  const std::string bytes = ss.str();
  ASSERT_EQ(bytes.substr(0, 4), "BDK1");
  // tag 2 little-endian right after the magic
  EXPECT_EQ(bytes[4], 2);
  std::stringstream in(bytes);
  const auto c = read_params(in);
  EXPECT_EQ(c.spec, spec);
  EXPECT_EQ(c.params, p);

  std::stringstream truncated(bytes.substr(0, bytes.size() - 3));
  EXPECT_THROW(read_params(truncated), ParseError);
  std::string bad = bytes;
  bad[0] = 'X';
  std::stringstream badmagic(bad);
  EXPECT_THROW(read_params(badmagic), ParseError);
}

TEST(Checkpoint, EnsembleRoundTrip) {
  auto rng = make_engine(9, Stream::DataGen);
  const auto spec = make_spec({2, 3, 2}, true);
  std::vector<ParamVector> samples{random_params(spec, rng), random_params(spec, rng), random_params(spec, rng)};
  std::stringstream ss;
  write_ensemble(ss, spec, samples);
  const auto e = read_ensemble(ss);
  EXPECT_EQ(e.spec, spec);
  EXPECT_EQ(e.samples, samples);
}

}  // namespace
}  // namespace bdk
