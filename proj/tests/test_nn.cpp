#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <vector>

#include "dbsde/nn/adam.hpp"
#include "dbsde/nn/mlp.hpp"
#include "dbsde/nn/prescaler.hpp"
#include "dbsde/nn/tape.hpp"
#include "dbsde/rng.hpp"

using namespace dbsde;
using namespace dbsde::nn;

namespace {

// Plain loops, no Eigen: the forward-pass oracle.
std::vector<double> reference_forward(const ParamStore& store, const std::vector<int>& dims, std::vector<double> h) {
  auto p = store.values();
  std::size_t off = 0;
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    const int in = dims[l], out = dims[l + 1];
    const std::size_t w_off = off;
    const std::size_t b_off = off + static_cast<std::size_t>(in * out);
    std::vector<double> z(out);
    for (int r = 0; r < out; ++r) {
      double s = p[b_off + r];
      for (int c = 0; c < in; ++c) s += p[w_off + static_cast<std::size_t>(c * out + r)] * h[c];
      z[r] = s;
    }
    if (l + 2 < dims.size())
      for (double& v : z) v = v > 0 ? v : std::exp(v) - 1.0;
    h = z;
    off = b_off + out;
  }
  return h;
}

double loss_value(const std::function<Var(Tape&, const ParamStore&)>& program, const ParamStore& store) {
  Tape t;
  return t.scalar(program(t, store));
}

// Largest componentwise relative error between reverse mode and central differences.
double gradient_check(const std::function<Var(Tape&, const ParamStore&)>& program, ParamStore store) {
  Tape t;
  const auto grad = t.gradient(program(t, store), store);
  double worst = 0.0;
  for (std::size_t i = 0; i < store.size(); ++i) {
    const double p0 = store.values()[i];
    const double h = 1e-6 * std::max(1.0, std::abs(p0));
    store.values()[i] = p0 + h;
    const double up = loss_value(program, store);
    store.values()[i] = p0 - h;
    const double dn = loss_value(program, store);
    store.values()[i] = p0;
    const double fd = (up - dn) / (2 * h);
    worst = std::max(worst, std::abs(fd - grad[i]) / std::max(1e-6, std::abs(fd) + std::abs(grad[i])));
  }
  return worst;
}

ParamStore random_store(std::vector<std::pair<int, int>> shapes, std::uint64_t seed) {
  ParamStore s;
  const CounterRng rng(seed);
  int k = 0;
  for (auto [r, c] : shapes) s.add("p" + std::to_string(k++), r, c);
  for (std::size_t i = 0; i < s.size(); ++i) s.values()[i] = 2.0 * rng.uniform(7, i) - 1.0;
  return s;
}

}  // namespace

TEST(Rng, DrawsArePureFunctionsOfCounters) {
  const CounterRng a(42), b(42), c(43);
  EXPECT_EQ(a.bits(3, 7), b.bits(3, 7));
  EXPECT_NE(a.bits(3, 7), c.bits(3, 7));
  EXPECT_EQ(a.normal(5, 11), b.normal(5, 11));
  const auto [n0, n1] = a.normal_pair(5, 5);
  EXPECT_EQ(a.normal(5, 10), n0);
  EXPECT_EQ(a.normal(5, 11), n1);
}

TEST(Rng, NormalMomentsAreStandard) {
  const CounterRng rng(9);
  const int n = 200000;
  double s = 0, q = 0;
  for (int i = 0; i < n; ++i) {
    const double z = rng.normal(1, i);
    s += z;
    q += z * z;
  }
  EXPECT_NEAR(s / n, 0.0, 5.0 / std::sqrt(n));
  EXPECT_NEAR(q / n, 1.0, 0.02);
  for (int i = 0; i < 1000; ++i) {
    const double u = rng.uniform(2, i);
    EXPECT_GT(u, 0.0);
    EXPECT_LT(u, 1.0);
  }
}

TEST(ParamStore, LayoutIsContiguous) {
  ParamStore s;
  s.add("a", 2, 3);
  s.add("b", 4, 1);
  EXPECT_EQ(s.size(), 10u);
  EXPECT_EQ(s.entry(1).offset, 6u);
  EXPECT_THROW(s.add("a", 1, 1), InvalidSpec);
  EXPECT_THROW(s.add("c", 0, 1), InvalidSpec);
  s.view(1)(2, 0) = 5.0;
  EXPECT_EQ(s.values()[8], 5.0);
}

TEST(Mlp, ParameterCountOfStandardNetwork) {
  const MlpSpec spec{1, {11, 11}, Activation::Elu, 1, OutputActivation::Identity};
  EXPECT_EQ(spec.parameter_count(), 166u);
  EXPECT_EQ(init_mlp(spec, 3).size(), 166u);
  EXPECT_EQ(MlpSpec::standard(1, 1, 1).parameter_count(), 166u);
}

TEST(Mlp, InitIsDeterministicWithZeroBiases) {
  const auto spec = MlpSpec::standard(2, 2, 2);
  const auto a = init_mlp(spec, 17);
  const auto b = init_mlp(spec, 17);
  const auto c = init_mlp(spec, 18);
  EXPECT_TRUE(a == b);
  EXPECT_FALSE(a == c);
  const auto h = handle_of(a, spec);
  for (auto bias : h.biases)
    for (Eigen::Index i = 0; i < a.view(bias).size(); ++i) EXPECT_EQ(a.view(bias).data()[i], 0.0);
  double mean = 0;
  for (double v : a.values()) mean += v;
  EXPECT_LT(std::abs(mean / a.size()), 0.2);
}

TEST(Mlp, ZeroWidthLayerIsRejected) {
  EXPECT_THROW(init_mlp(MlpSpec{1, {11, 0}, Activation::Elu, 1, OutputActivation::Identity}, 1), InvalidSpec);
}

TEST(Mlp, ZeroNetworkGivesZero) {
  const auto spec = MlpSpec::standard(3, 3, 2);
  ParamStore s = init_mlp(spec, 1);
  for (double& v : s.values()) v = 0.0;
  const auto y = forward_mlp(s, spec, Eigen::Vector3d(1.0, -2.0, 3.0));
  EXPECT_EQ(y.size(), 2);
  EXPECT_EQ(y.norm(), 0.0);
}

TEST(Mlp, IdentityLayerPassesNonNegativeInputs) {
  const MlpSpec spec{3, {3}, Activation::Elu, 3, OutputActivation::Identity};
  ParamStore s = init_mlp(spec, 1);
  const auto h = handle_of(s, spec);
  s.view(h.weights[0]) = Eigen::Matrix3d::Identity();
  s.view(h.weights[1]) = Eigen::Matrix3d::Identity();
  s.view(h.biases[0]).setZero();
  const Eigen::Vector3d x(0.0, 0.5, 7.0);
  EXPECT_EQ((forward_mlp(s, spec, x) - x).norm(), 0.0);
}

TEST(Mlp, ForwardMatchesIndependentLoops) {
  const auto spec = MlpSpec::standard(1, 1, 1);
  ParamStore s = init_mlp(spec, 5);
  const CounterRng rng(99);
  for (std::size_t i = 0; i < s.size(); ++i) s.values()[i] = 2.0 * rng.uniform(0, i) - 1.0;
  const double y = forward_mlp(s, spec, Eigen::VectorXd::Constant(1, 1.0))(0);
  const double ref = reference_forward(s, spec.layer_dims(), {1.0})[0];
  EXPECT_NEAR(y, ref, 1e-12 * std::abs(ref));

  const auto spec3 = MlpSpec::standard(3, 3, 2);
  ParamStore s3 = init_mlp(spec3, 6);
  const Eigen::Vector3d x(0.3, -1.2, 2.0);
  const auto y3 = forward_mlp(s3, spec3, x);
  const auto ref3 = reference_forward(s3, spec3.layer_dims(), {0.3, -1.2, 2.0});
  for (int i = 0; i < 2; ++i) EXPECT_NEAR(y3(i), ref3[i], 1e-12 * std::max(1.0, std::abs(ref3[i])));
}

TEST(Mlp, DimensionMismatchThrows) {
  const auto spec = MlpSpec::standard(2, 2, 1);
  const auto s = init_mlp(spec, 1);
  EXPECT_THROW(forward_mlp(s, spec, Eigen::VectorXd::Ones(3)), InvalidSpec);
}

TEST(Mlp, TapeForwardMatchesPlainForward) {
  const auto spec = MlpSpec::standard(2, 2, 2);
  const auto s = init_mlp(spec, 8);
  const auto h = handle_of(s, spec);
  Matrix x(2, 5);
  x << 0.1, -0.4, 2.0, 0.0, -3.0, 1.0, 0.5, -0.5, 0.25, 0.0;
  Tape t;
  const Var y = forward_mlp(t, s, h, t.constant(x));
  EXPECT_LT((t.value(y) - forward_mlp(s, h, x)).norm(), 1e-14);
}

TEST(Elu, ContinuousAtZero) {
  const double d = 1e-6;
  for (double x : {0.0, d / 2, -d / 2}) EXPECT_LE(std::abs(elu(x) - elu(x - d)), d * (1.0 + 1e-9));
  Matrix m(1, 3);
  m << -1e-3, 0.0, 2.0;
  const Matrix e = elu_values(m);
  EXPECT_NEAR(e(0, 0), std::expm1(-1e-3), 1e-15);
  EXPECT_EQ(e(0, 1), 0.0);
  EXPECT_EQ(e(0, 2), 2.0);
}

TEST(Tape, SquareOfParameter) {
  ParamStore s;
  s.add("p", 1, 1);
  s.values()[0] = 3.0;
  Tape t;
  const Var p = t.param(s, 0);
  const auto g = t.gradient(t.mul(p, p), s);
  EXPECT_DOUBLE_EQ(g[0], 6.0);
}

TEST(Tape, ConstantLossHasZeroGradient) {
  ParamStore s;
  s.add("p", 2, 1);
  Tape t;
  t.param(s, 0);
  const auto g = t.gradient(t.constant(Matrix::Constant(1, 1, 4.0)), s);
  EXPECT_EQ(g, std::vector<double>(2, 0.0));
}

TEST(Tape, NonScalarLossThrows) {
  ParamStore s;
  s.add("p", 2, 1);
  Tape t;
  const Var p = t.param(s, 0);
  EXPECT_THROW(t.gradient(p, s), InvalidSpec);
}

TEST(Tape, EveryPrimitiveMatchesFiniteDifferences) {
  const auto store = random_store({{3, 2}, {3, 1}, {2, 4}, {3, 4}, {1, 4}}, 4);
  auto program = [](Tape& t, const ParamStore& s) {
    const Var w = t.param(s, 0), b = t.param(s, 1), x = t.param(s, 2), c = t.param(s, 3), r = t.param(s, 4);
    const Var a = t.elu(t.affine(w, b, x));                  // 3x4
    const Var m = t.mul(a, c);                               // 3x4
    const Var q = t.sub(t.add(m, t.scale(a, 0.7)), c);       // 3x4
    const Var relu = t.relu(t.add(q, t.constant(Matrix::Constant(3, 4, 2.0))));
    const Var rows = t.row_sum(t.square(relu));              // 1x4
    const Var bc = t.broadcast(t.mean(r), 4);                // 1x4
    // y = sin(u) * v as a custom elementwise node
    const Matrix& u = t.value(rows);
    const Matrix& v = t.value(bc);
    const Var e = t.elementwise({rows, bc}, (u.array().sin() * v.array()).matrix(),
                                {(u.array().cos() * v.array()).matrix(), u.array().sin().matrix()});
    const Var mixed = t.elementwise({q}, t.value(q).colwise().sum(), {Matrix::Ones(3, 4)});
    return t.mean(t.add(t.square(e), mixed));
  };
  EXPECT_LT(gradient_check(program, store), 1e-6);
}

TEST(Tape, ShapeMismatchesThrow) {
  ParamStore s;
  s.add("a", 2, 2);
  s.add("b", 3, 1);
  Tape t;
  const Var a = t.param(s, 0), b = t.param(s, 1);
  EXPECT_THROW(t.add(a, b), InvalidSpec);
  EXPECT_THROW(t.affine(a, b, a), InvalidSpec);
  EXPECT_THROW(t.broadcast(a, 3), InvalidSpec);
  EXPECT_THROW(t.elementwise({a}, Matrix::Zero(2, 2), {Matrix::Zero(3, 1)}), InvalidSpec);
  ParamStore other;
  other.add("z", 1, 1);
  EXPECT_THROW(t.param(other, 0), InvalidSpec);
}

TEST(Adam, ZeroGradientLeavesParametersAndCountsStep) {
  ParamStore s;
  s.add("p", 3, 1);
  s.values()[1] = 2.5;
  const ParamStore before = s;
  auto st = AdamState::for_store(s);
  adam_update(s, std::vector<double>(3, 0.0), st);
  EXPECT_TRUE(s == before);
  EXPECT_EQ(st.step_count, 1u);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  ParamStore s;
  s.add("p", 1, 1);
  auto st = AdamState::for_store(s, AdamSettings{0.1, 0.9, 0.999, 1e-8});
  adam_update(s, std::vector<double>{1.0}, st);
  // m_hat = v_hat = 1, so the step is lr / (1 + eps)
  EXPECT_NEAR(s.values()[0], -0.1 / (1.0 + 1e-8), 1e-15);
}

TEST(Adam, HandComputedSecondStep) {
  ParamStore s;
  s.add("p", 1, 1);
  auto st = AdamState::for_store(s, AdamSettings{0.1, 0.9, 0.999, 1e-8});
  adam_update(s, std::vector<double>{1.0}, st);
  adam_update(s, std::vector<double>{-2.0}, st);
  const double m = 0.9 * 0.1 + 0.1 * -2.0;
  const double v = 0.999 * 0.001 + 0.001 * 4.0;
  const double expected = -0.1 / (1.0 + 1e-8) - 0.1 * (m / (1 - 0.81)) / (std::sqrt(v / (1 - 0.999 * 0.999)) + 1e-8);
  EXPECT_NEAR(s.values()[0], expected, 1e-14);
}

TEST(Adam, DeterministicAndRejectsNonFinite) {
  ParamStore s;
  s.add("p", 2, 1);
  auto st = AdamState::for_store(s);
  ParamStore s2 = s;
  auto st2 = st;
  adam_update(s, std::vector<double>{0.3, -0.1}, st);
  adam_update(s2, std::vector<double>{0.3, -0.1}, st2);
  EXPECT_TRUE(s == s2);
  EXPECT_TRUE(st == st2);
  const ParamStore before = s;
  EXPECT_THROW(adam_update(s, std::vector<double>{NAN, 0.0}, st), NumericalError);
  EXPECT_TRUE(s == before);
  EXPECT_EQ(st.step_count, 1u);
  EXPECT_THROW(adam_update(s, std::vector<double>{1.0}, st), InvalidSpec);
}

TEST(Prescaler, Examples) {
  const auto p = Prescaler::uniform(1, 100.0, 20.0);
  EXPECT_DOUBLE_EQ(prescale(Matrix::Constant(1, 1, 120.0), p)(0, 0), 1.0);
  const auto id = Prescaler::uniform(2, 0.0, 1.0);
  Matrix x(2, 2);
  x << 1.5, -2.0, 3.0, 0.25;
  EXPECT_EQ(id.apply(x), x);
  EXPECT_THROW(Prescaler::uniform(1, 0.0, 0.0), InvalidSpec);
  EXPECT_THROW(p.apply(x), InvalidSpec);
}

TEST(Prescaler, RoundTrip) {
  Prescaler p(Eigen::Vector2d(100.0, -3.0), Eigen::Vector2d(30.0, 0.5));
  const CounterRng rng(3);
  Matrix x(2, 50);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = 400.0 * rng.uniform(0, i) - 200.0;
  const Matrix back = p.invert(p.apply(x));
  for (Eigen::Index i = 0; i < x.size(); ++i)
    EXPECT_NEAR(back.data()[i], x.data()[i], 1e-12 * std::max(1.0, std::abs(x.data()[i])));
}
