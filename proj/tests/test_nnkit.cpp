#include "iblab/nnkit.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

using namespace iblab;

namespace iblab {
void PrintTo(const MlpSpec& spec, std::ostream* os) {
  *os << to_string(spec.activation);
  for (int d : spec.layer_dims) *os << ' ' << d;
}
}  // namespace iblab

namespace {

double rel_err(double a, double b) {
  return std::fabs(a - b) / std::max(1.0, std::max(std::fabs(a), std::fabs(b)));
}

// Random biases too, so every parameter has a non-trivial gradient.
ParamSet random_params(const MlpSpec& spec, Rng& rng) {
  ParamSet p = ParamSet::glorot(spec, rng);
  std::normal_distribution<double> n(0.0, 0.3);
  for (Index i = 0; i < p.flat.size(); ++i) p.flat(i) += n(rng);
  return p;
}

}  // namespace

TEST(Mlp, ZeroWeightsGiveZeroOutput) {
  const ParamSet p = ParamSet::zeros({{4, 7, 3}, Activation::Tanh});
  EXPECT_EQ(mlp_forward(p, Vec::Ones(4)), Vec::Zero(3));
}

TEST(Mlp, SingleLinearLayer) {
  ParamSet p = ParamSet::zeros({{2, 1}, Activation::Tanh});
  p.flat << 1, 1, 0;
  Vec x(2);
  x << 3, 4;
  EXPECT_DOUBLE_EQ(mlp_forward(p, x)(0), 7.0);

  const MlpGradient g = mlp_backward(p, x, Vec::Ones(1));
  EXPECT_DOUBLE_EQ(g.params.flat(0), 3.0);
  EXPECT_DOUBLE_EQ(g.params.flat(1), 4.0);
  EXPECT_DOUBLE_EQ(g.params.flat(2), 1.0);
  EXPECT_DOUBLE_EQ(g.input(0), 1.0);
  EXPECT_DOUBLE_EQ(g.input(1), 1.0);
}

TEST(Mlp, ParamCountAndLayout) {
  const MlpSpec spec{{8, 32, 32, 1}, Activation::Tanh};
  EXPECT_EQ(spec.param_count(), 32 * 9 + 32 * 33 + 33);
  Rng rng(1);
  const ParamSet p = ParamSet::glorot(spec, rng);
  const double bound = std::sqrt(6.0 / 40.0);
  EXPECT_LE(p.flat.head(32 * 8).cwiseAbs().maxCoeff(), bound);
  EXPECT_EQ(p.flat.segment(32 * 8, 32).cwiseAbs().maxCoeff(), 0.0);
}

TEST(Mlp, DeterministicForward) {
  Rng a(42), b(42);
  const MlpSpec spec{{5, 9, 2}, Activation::Tanh};
  const ParamSet pa = ParamSet::glorot(spec, a);
  const ParamSet pb = ParamSet::glorot(spec, b);
  const Vec x = Vec::LinSpaced(5, -1, 1);
  EXPECT_EQ(mlp_forward(pa, x), mlp_forward(pb, x));
}

TEST(Mlp, ZeroUpstreamGivesZeroGradient) {
  Rng rng(2);
  const ParamSet p = random_params({{3, 4, 2}, Activation::Tanh}, rng);
  const MlpGradient g = mlp_backward(p, Vec::Ones(3), Vec::Zero(2));
  EXPECT_EQ(g.params.flat.cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(g.input.cwiseAbs().maxCoeff(), 0.0);
}

TEST(Mlp, Errors) {
  const ParamSet p = ParamSet::zeros({{3, 2}, Activation::Tanh});
  EXPECT_THROW(mlp_forward(p, Vec::Zero(4)), DimensionError);
  EXPECT_THROW(mlp_backward(p, Vec::Zero(3), Vec::Zero(3)), DimensionError);
  ParamSet big = ParamSet::zeros({{1, 1}, Activation::Tanh});
  big.flat << 1e308, 0;
  EXPECT_THROW(mlp_forward(big, Vec::Constant(1, 1e10)), NumericError);
  EXPECT_THROW((MlpSpec{{3}, Activation::Tanh}.validate()), std::invalid_argument);
  EXPECT_THROW((MlpSpec{{3, 0}, Activation::Tanh}.validate()), std::invalid_argument);
}

class MlpGradCheck : public ::testing::TestWithParam<MlpSpec> {};

TEST_P(MlpGradCheck, MatchesCentralDifferences) {
  const MlpSpec spec = GetParam();
  Rng rng(1234);
  std::normal_distribution<double> n(0.0, 1.0);
  const double h = 1e-5;
  for (int trial = 0; trial < 20; ++trial) {
    ParamSet p = random_params(spec, rng);
    Vec x(spec.input_dim()), up(spec.output_dim());
    for (Index i = 0; i < x.size(); ++i) x(i) = n(rng);
    for (Index i = 0; i < up.size(); ++i) up(i) = n(rng);
    const MlpGradient g = mlp_backward(p, x, up);
    for (Index i = 0; i < p.flat.size(); ++i) {
      const double keep = p.flat(i);
      p.flat(i) = keep + h;
      const double fp = up.dot(mlp_forward(p, x));
      p.flat(i) = keep - h;
      const double fm = up.dot(mlp_forward(p, x));
      p.flat(i) = keep;
      ASSERT_LT(rel_err(g.params.flat(i), (fp - fm) / (2 * h)), 1e-4)
          << "param " << i << " trial " << trial;
    }
    for (Index i = 0; i < x.size(); ++i) {
      Vec xp = x, xm = x;
      xp(i) += h;
      xm(i) -= h;
      const double fd = (up.dot(mlp_forward(p, xp)) - up.dot(mlp_forward(p, xm))) / (2 * h);
      ASSERT_LT(rel_err(g.input(i), fd), 1e-4) << "input " << i;
    }
  }
}

INSTANTIATE_TEST_SUITE_P(
    RepoArchitectures, MlpGradCheck,
    ::testing::Values(MlpSpec{{8, 32, 16}, Activation::Tanh},     // encoder
                      MlpSpec{{8, 32, 1}, Activation::Tanh},      // decoder
                      MlpSpec{{8, 32, 32, 1}, Activation::Tanh},  // standard head
                      MlpSpec{{3, 5, 2}, Activation::Relu}),
    [](const ::testing::TestParamInfo<MlpSpec>& info) {
      std::string name = to_string(info.param.activation);
      for (int d : info.param.layer_dims) name += "_" + std::to_string(d);
      return name;
    });

TEST(Adam, ZeroGradientLeavesParams) {
  ParamSet p = ParamSet::zeros({{1, 1}, Activation::Tanh});
  p.flat << 0.5, -0.25;
  AdamState st = AdamState::for_params(p);
  adam_step(p, GradSet::zeros_like(p), st, {});
  EXPECT_EQ(p.flat(0), 0.5);
  EXPECT_EQ(p.flat(1), -0.25);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  ParamSet p = ParamSet::zeros({{1, 1}, Activation::Tanh});
  AdamState st = AdamState::for_params(p);
  GradSet g{Vec::Ones(2)};
  AdamConfig cfg;
  cfg.lr = 0.1;
  adam_step(p, g, st, cfg);
  EXPECT_NEAR(p.flat(0), -0.1, 1e-7);
}

TEST(Adam, ConvergesOnQuadratic) {
  ParamSet p = ParamSet::zeros({{1, 1}, Activation::Tanh});
  AdamState st = AdamState::for_params(p);
  AdamConfig cfg;
  cfg.lr = 0.1;
  for (int i = 0; i < 200; ++i) {
    GradSet g{Vec::Zero(2)};
    g.flat(0) = 2.0 * (p.flat(0) - 3.0);
    adam_step(p, g, st, cfg);
  }
  EXPECT_LT(std::fabs(p.flat(0) - 3.0), 0.05);
}

TEST(Adam, Errors) {
  ParamSet p = ParamSet::zeros({{1, 1}, Activation::Tanh});
  AdamState st = AdamState::for_params(p);
  GradSet bad{Vec::Constant(2, NAN)};
  EXPECT_THROW(adam_step(p, bad, st, {}), NumericError);
  AdamConfig cfg;
  cfg.lr = 0;
  EXPECT_THROW(adam_step(p, GradSet::zeros_like(p), st, cfg), std::invalid_argument);
  EXPECT_THROW(adam_step(p, GradSet{Vec::Zero(3)}, st, {}), DimensionError);
}

TEST(ParamIo, RoundTripIsExact) {
  Rng rng(8);
  const ParamSet p = random_params({{6, 11, 4}, Activation::Relu}, rng);
  std::stringstream buf;
  write_params(buf, p);
  const std::string bytes = buf.str();
  EXPECT_EQ(bytes.substr(0, 8), std::string("IBNNPAR\0", 8));
  const ParamSet q = read_params(buf);
  EXPECT_EQ(q.spec, p.spec);
  EXPECT_EQ(q.flat, p.flat);
}

TEST(ParamIo, RejectsCorruptInput) {
  std::stringstream junk("not a parameter file");
  EXPECT_THROW(read_params(junk), std::runtime_error);

  Rng rng(8);
  std::stringstream buf;
  write_params(buf, ParamSet::glorot({{2, 3, 1}, Activation::Tanh}, rng));
  std::string bytes = buf.str();
  std::stringstream truncated(bytes.substr(0, bytes.size() - 3));
  EXPECT_THROW(read_params(truncated), std::runtime_error);
}
