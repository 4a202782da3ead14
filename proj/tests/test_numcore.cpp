#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "pkfr/num/grad_check.hpp"
#include "pkfr/num/graph.hpp"
#include "test_util.hpp"

namespace num = pkfr::num;
using num::Array;
using num::Var;
using pkfr::testing::random_array;
using pkfr::testing::random_param;

namespace {

Var<double> c(num::Shape s, std::vector<double> v) {
  return num::constant(Array<double>(std::move(s), std::move(v)));
}

}  // namespace

TEST(Primitives, MatmulIdentity) {
  auto a = c({2, 2}, {1, 2, 3, 4});
  auto id = c({2, 2}, {1, 0, 0, 1});
  auto y = num::matmul(a, id);
  EXPECT_EQ(y.value().storage(), (std::vector<double>{1, 2, 3, 4}));
}

TEST(Primitives, MatmulMatchesTripleLoop) {
  std::mt19937_64 rng(3);
  auto a = random_array({2, 3, 4}, rng);
  auto b = random_array({2, 4, 5}, rng);
  auto y = num::matmul(num::constant(a), num::constant(b));
  ASSERT_EQ(y.shape(), (num::Shape{2, 3, 5}));
  for (std::size_t s = 0; s < 2; ++s)
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t j = 0; j < 5; ++j) {
        double ref = 0;
        for (std::size_t k = 0; k < 4; ++k) ref += a[s * 12 + i * 4 + k] * b[s * 20 + k * 5 + j];
        EXPECT_NEAR(y.value()[s * 15 + i * 5 + j], ref, 1e-14);
      }
}

TEST(Primitives, SoftmaxSymmetric) {
  auto y = num::softmax(c({2}, {0, 0}));
  EXPECT_DOUBLE_EQ(y.value()[0], 0.5);
  EXPECT_DOUBLE_EQ(y.value()[1], 0.5);
}

TEST(Primitives, SiluAtZero) {
  auto y = num::silu(c({1}, {0.0}));
  EXPECT_EQ(y.value()[0], 0.0);
}

TEST(Primitives, ShapeMismatchNamesAxes) {
  auto a = c({2, 3}, std::vector<double>(6, 1.0));
  auto b = c({2, 3}, std::vector<double>(6, 1.0));
  try {
    num::matmul(a, b);
    FAIL() << "expected ShapeError";
  } catch (const pkfr::ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("axis -1"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("axis -2"), std::string::npos);
  }
  auto d = c({2, 4}, std::vector<double>(8, 1.0));
  EXPECT_THROW(num::add(a, d), pkfr::ShapeError);
  EXPECT_THROW(num::concat<double>({a, c({3, 3}, std::vector<double>(9, 0.0))}), pkfr::ShapeError);
}

TEST(Primitives, UnknownKindRejected) {
  auto a = c({1}, {1.0});
  EXPECT_THROW(num::apply_primitive<double>(static_cast<num::OpKind>(999), {a}), pkfr::UnsupportedOpError);
  EXPECT_THROW(num::apply_primitive<double>(num::OpKind::kLeaf, {a}), pkfr::UnsupportedOpError);
}

TEST(Primitives, GeneralBroadcast) {
  auto a = c({2, 1, 3}, {1, 2, 3, 4, 5, 6});
  auto b = c({1, 2, 1}, {10, 20});
  auto y = num::add(a, b);
  ASSERT_EQ(y.shape(), (num::Shape{2, 2, 3}));
  EXPECT_EQ(y.value().storage(),
            (std::vector<double>{11, 12, 13, 21, 22, 23, 14, 15, 16, 24, 25, 26}));
}

TEST(Primitives, FiniteScanFlagsOverflow) {
  const bool saved = num::finite_checks();
  num::finite_checks() = true;
  EXPECT_THROW(num::exp(c({1}, {1000.0})), pkfr::NumericError);
  num::finite_checks() = saved;
}

TEST(Backward, SquareAtThree) {
  auto x = num::parameter(Array<double>::scalar(3.0));
  auto g = num::backward(num::square(x));
  EXPECT_DOUBLE_EQ(g.of(x).item(), 6.0);
}

TEST(Backward, UnreachableLeafIsZero) {
  auto x = num::parameter(Array<double>::scalar(3.0));
  auto y = num::parameter(Array<double>({2}, {1.0, 2.0}));
  auto g = num::backward(num::square(x));
  EXPECT_FALSE(g.reached(y));
  EXPECT_EQ(g.of(y).storage(), (std::vector<double>{0.0, 0.0}));
}

TEST(Backward, NonScalarLossRejected) {
  auto x = num::parameter(Array<double>({2}, {1.0, 2.0}));
  EXPECT_THROW(num::backward(num::square(x)), pkfr::ContractError);
}

TEST(Backward, TwoLayerNetworkMatchesFiniteDifferences) {
  std::mt19937_64 rng(11);
  auto w1 = random_param({6, 5}, rng);
  auto b1 = random_param({6}, rng);
  auto w2 = random_param({3, 6}, rng);
  auto b2 = random_param({3}, rng);
  auto x = num::constant(random_array({4, 5}, rng));
  auto f = [&] {
    auto h = num::silu(num::add(num::matmul(x, w1, true), b1));
    auto y = num::add(num::matmul(h, w2, true), b2);
    return num::sum(num::square(y));
  };
  auto rep = num::grad_check(f, {w1, b1, w2, b2}, {.step = 1e-5, .tol = 1e-6});
  EXPECT_TRUE(rep.pass) << rep.max_rel_err;
}

// Per-primitive finite-difference checks on small random shapes.
TEST(Backward, EveryPrimitiveMatchesFiniteDifferences) {
  std::mt19937_64 rng(5);
  auto a = random_param({3, 4}, rng);
  auto b = random_param({3, 4}, rng);
  auto w = random_param({4, 2}, rng);
  auto pos = random_param({3, 4}, rng, 0.5, 2.0);
  auto bat_a = random_param({2, 3, 4}, rng);
  auto bat_b = random_param({2, 4, 3}, rng);
  auto row = random_param({4}, rng);
  auto wt = random_param({2, 4}, rng);
  // Fixed random projection turns any output into a scalar with generic weights.
  auto project = [&](const Var<double>& y) {
    std::mt19937_64 prng(99);
    auto r = num::constant(random_array(y.shape().empty() ? num::Shape{1} : y.shape(), prng));
    if (y.shape().empty()) return num::mul(y, r);
    return num::sum(num::mul(y, r));
  };
  struct Case {
    const char* name;
    std::function<Var<double>()> f;
    std::vector<Var<double>> params;
  };
  std::vector<Case> cases = {
      {"matmul", [&] { return project(num::matmul(a, w)); }, {a, w}},
      {"matmul_trans", [&] { return project(num::matmul(a, wt, true)); }, {a, wt}},
      {"matmul_batched", [&] { return project(num::matmul(bat_a, bat_b)); }, {bat_a, bat_b}},
      {"add", [&] { return project(num::add(a, row)); }, {a, row}},
      {"subtract", [&] { return project(num::sub(a, b)); }, {a, b}},
      {"multiply", [&] { return project(num::mul(a, b)); }, {a, b}},
      {"concat", [&] { return project(num::concat<double>({a, b})); }, {a, b}},
      {"split", [&] { return project(num::slice_last(a, 1, 3)); }, {a}},
      {"reshape", [&] { return project(num::reshape(a, {2, 6})); }, {a}},
      {"transpose", [&] { return project(num::transpose(bat_a, 0, 2)); }, {bat_a}},
      {"softmax", [&] { return project(num::softmax(a)); }, {a}},
      {"layer_norm", [&] { return project(num::layer_norm(a)); }, {a}},
      {"silu", [&] { return project(num::silu(a)); }, {a}},
      {"tanh", [&] { return project(num::tanh(a)); }, {a}},
      {"exp", [&] { return project(num::exp(a)); }, {a}},
      {"log", [&] { return project(num::log(pos)); }, {pos}},
      {"square", [&] { return project(num::square(a)); }, {a}},
      {"mean", [&] { return project(num::mean(num::square(a))); }, {a}},
      {"mean_last", [&] { return project(num::mean_last(a)); }, {a}},
      {"sum", [&] { return project(num::sum(num::square(a))); }, {a}},
      {"sum_last", [&] { return project(num::sum_last(a)); }, {a}},
      {"clip", [&] { return project(num::clip(a, -0.5, 0.5)); }, {a}},
      {"max_scalar", [&] { return project(num::max_scalar(a, 0.1)); }, {a}},
  };
  for (auto& cs : cases) {
    auto rep = num::grad_check(cs.f, cs.params, {.step = 1e-5, .tol = 1e-6});
    EXPECT_TRUE(rep.pass) << cs.name << " max_rel_err=" << rep.max_rel_err;
  }
}

TEST(Invariants, LayerNormRowStatistics) {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    auto x = random_array({5, 16}, rng, -3.0, 3.0);
    auto y = num::layer_norm(num::constant(x)).value();
    for (std::size_t r = 0; r < 5; ++r) {
      double mu = 0, var_in = 0, mu_in = 0, var = 0;
      for (std::size_t j = 0; j < 16; ++j) {
        mu += y.at(r, j);
        mu_in += x.at(r, j);
      }
      mu /= 16;
      mu_in /= 16;
      for (std::size_t j = 0; j < 16; ++j) {
        var += (y.at(r, j) - mu) * (y.at(r, j) - mu);
        var_in += (x.at(r, j) - mu_in) * (x.at(r, j) - mu_in);
      }
      var /= 16;
      var_in /= 16;
      EXPECT_NEAR(mu, 0.0, 1e-9);
      // Unit variance up to the fixed epsilon inside the square root.
      EXPECT_NEAR(var, var_in / (var_in + num::kLayerNormEps), 1e-9);
      EXPECT_LE(std::abs(var - 1.0), num::kLayerNormEps / var_in + 1e-9);
    }
  }
}

TEST(Invariants, SoftmaxRowsArePositiveAndSumToOne) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    auto y = num::softmax(num::constant(random_array({4, 7}, rng, -30.0, 30.0))).value();
    for (std::size_t r = 0; r < 4; ++r) {
      double s = 0;
      for (std::size_t j = 0; j < 7; ++j) {
        EXPECT_GT(y.at(r, j), 0.0);
        s += y.at(r, j);
      }
      EXPECT_NEAR(s, 1.0, 1e-12);
    }
  }
}

TEST(Invariants, BackwardIsLinear) {
  std::mt19937_64 rng(4);
  auto w = random_param({3, 3}, rng);
  auto x = num::constant(random_array({2, 3}, rng));
  auto l1 = [&] { return num::sum(num::tanh(num::matmul(x, w))); };
  auto l2 = [&] { return num::mean(num::square(num::matmul(x, w))); };
  const double a = 0.7, b = -1.3;
  auto g1 = num::backward(l1()).of(w);
  auto g2 = num::backward(l2()).of(w);
  auto gc = num::backward(num::add(num::scale(l1(), a), num::scale(l2(), b))).of(w);
  for (std::size_t i = 0; i < w.value().size(); ++i) {
    EXPECT_NEAR(gc[i], a * g1[i] + b * g2[i], 1e-10);
  }
}

TEST(GradCheck, SumOfSquares) {
  std::mt19937_64 rng(8);
  auto p = random_param({4, 4}, rng);
  auto rep = num::grad_check([&] { return num::sum(num::square(p)); }, {p}, {.tol = 1e-8});
  EXPECT_TRUE(rep.pass);
  EXPECT_LT(rep.max_rel_err, 1e-8);
  EXPECT_EQ(rep.checked, 16u);
}

TEST(GradCheck, DetectsCorruptedSiluDerivative) {
  std::mt19937_64 rng(9);
  auto p = random_param({3, 3}, rng);
  auto bad_silu = [](const Var<double>& x) {
    return num::custom_unary<double>(
        x, [](double v) { return v / (1.0 + std::exp(-v)); },
        [](double v) { return 1.0 / (1.0 + std::exp(-v)); });  // drops the x*s*(1-s) term
  };
  auto rep = num::grad_check([&] { return num::sum(bad_silu(p)); }, {p}, {.tol = 1e-6});
  EXPECT_GT(rep.max_rel_err, 1e-2);
  EXPECT_FALSE(rep.pass);
}

TEST(GradCheck, NonFiniteIsReportedWithCoordinate) {
  auto p = num::parameter(Array<double>({2}, {1.0, 1e-7}));
  const bool saved = num::finite_checks();
  num::finite_checks() = false;
  auto rep = num::grad_check([&] { return num::sum(num::log(p)); }, {p}, {.step = 1e-5});
  num::finite_checks() = saved;
  EXPECT_FALSE(rep.pass);
  EXPECT_EQ(rep.worst_index, 1u);
  EXPECT_FALSE(rep.failure.empty());
}

TEST(GradCheck, SubsamplesLargeParameterSets) {
  std::mt19937_64 rng(10);
  auto p = random_param({120, 100}, rng);
  auto rep = num::grad_check([&] { return num::sum(num::square(p)); }, {p},
                             {.tol = 1e-3, .max_coords = 500, .seed = 1});
  EXPECT_EQ(rep.checked, 500u);
  EXPECT_TRUE(rep.pass);
}
