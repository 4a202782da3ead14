#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "amp_toy.hpp"
#include "pkfr/amp/discriminator.hpp"
#include "pkfr/num/grad_check.hpp"
#include "pkfr/policy/model.hpp"
#include "test_util.hpp"

namespace num = pkfr::num;
namespace nn = pkfr::nn;
namespace amp = pkfr::amp;
namespace env = pkfr::env;
using num::Array;
using num::Var;
using pkfr::testing::random_array;

namespace {

Var<double> cst(const Array<double>& a) { return num::constant(a); }

amp::DiscriminatorParams<double> make_disc(std::size_t rows, std::size_t amp_dim, std::vector<std::size_t> hidden,
                                           std::uint64_t seed) {
  amp::DiscriminatorConfig cfg;
  cfg.rows = rows;
  cfg.amp_dim = amp_dim;
  cfg.hidden = std::move(hidden);
  std::mt19937_64 rng(seed);
  return amp::DiscriminatorParams<double>::init(cfg, rng);
}

void set_linear(const nn::Linear<double>& l, double w, double b) {
  auto wv = l.weight;
  wv.mutable_value().fill(w);
  if (l.bias) {
    auto bv = *l.bias;
    bv.mutable_value().fill(b);
  }
}

// Plain-loop tanh network returning the score and dD/dx.
double naive_score(const amp::DiscriminatorParams<double>& d, const std::vector<double>& x,
                   std::vector<double>* grad) {
  std::vector<std::vector<double>> acts{x};
  for (std::size_t l = 0; l < d.net.layers.size(); ++l) {
    const auto& w = d.net.layers[l].weight.value();
    const auto& b = d.net.layers[l].bias->value();
    const auto& in = acts.back();
    std::vector<double> y(w.dim(0));
    for (std::size_t o = 0; o < y.size(); ++o) {
      double s = b[o];
      for (std::size_t i = 0; i < in.size(); ++i) s += w.at(o, i) * in[i];
      y[o] = l + 1 < d.net.layers.size() ? std::tanh(s) : s;
    }
    acts.push_back(y);
  }
  if (grad) {
    std::vector<double> g{1.0};
    for (std::size_t l = d.net.layers.size(); l-- > 0;) {
      const auto& w = d.net.layers[l].weight.value();
      if (l + 1 < d.net.layers.size()) {
        for (std::size_t o = 0; o < g.size(); ++o) g[o] *= 1.0 - acts[l + 1][o] * acts[l + 1][o];
      }
      std::vector<double> gi(w.dim(1), 0.0);
      for (std::size_t o = 0; o < w.dim(0); ++o)
        for (std::size_t i = 0; i < w.dim(1); ++i) gi[i] += g[o] * w.at(o, i);
      g = gi;
    }
    *grad = g;
  }
  return acts.back()[0];
}

std::vector<double> row_of(const Array<double>& a, std::size_t r) {
  const std::size_t w = a.size() / a.dim(0);
  return std::vector<double>(a.storage().begin() + r * w, a.storage().begin() + (r + 1) * w);
}

pkfr::policy::PolicyConfig tiny_policy() {
  pkfr::policy::PolicyConfig c;
  c.obs_dim = 5;
  c.amp_dim = 3;
  c.action_dim = 2;
  c.rays = 6;
  c.width = 4;
  c.heads = 1;
  c.layers = 1;
  c.context_dim = 3;
  c.ffn_hidden = 6;
  c.depth_hidden = 5;
  c.critic_hidden = {4};
  return c;
}

}  // namespace

TEST(PolicySequence, EightRealPlusTwoPredicted) {
  std::mt19937_64 rng(1);
  const auto h = random_array({8, 12}, rng), p = random_array({2, 12}, rng);
  const auto s = amp::assemble_policy_sequence(cst(h), cst(p)).value();
  ASSERT_EQ(s.shape(), (num::Shape{10, 12}));
  for (std::size_t i = 0; i < 8 * 12; ++i) EXPECT_EQ(s[i], h[i]);
  for (std::size_t i = 0; i < 2 * 12; ++i) EXPECT_EQ(s[8 * 12 + i], p[i]);
}

TEST(PolicySequence, FullWidthAndBatches) {
  std::mt19937_64 rng(2);
  const auto s = amp::assemble_policy_sequence(cst(random_array({8, 67}, rng)), cst(random_array({2, 67}, rng)));
  EXPECT_EQ(s.shape(), (num::Shape{10, 67}));
  const auto b = amp::assemble_policy_sequence(cst(random_array({3, 8, 12}, rng)), cst(random_array({3, 2, 12}, rng)));
  EXPECT_EQ(b.shape(), (num::Shape{3, 10, 12}));
}

TEST(PolicySequence, WrongCountsAreContractErrors) {
  std::mt19937_64 rng(3);
  EXPECT_THROW(amp::assemble_policy_sequence(cst(random_array({7, 12}, rng)), cst(random_array({2, 12}, rng))),
               pkfr::ContractError);
  EXPECT_THROW(amp::assemble_policy_sequence(cst(random_array({8, 12}, rng)), cst(random_array({3, 12}, rng))),
               pkfr::ContractError);
}

TEST(PolicySequence, ScoreGradientReachesPredictionHead) {
  const auto cfg = tiny_policy();
  auto m = pkfr::policy::ActorCritic<double>::init(cfg, 4);
  std::mt19937_64 rng(4);
  const auto ps = m.parameters();
  for (const auto& p : ps.items()) {
    auto v = p.var;
    for (auto& x : v.mutable_value().storage()) x = std::uniform_real_distribution<double>(-0.6, 0.6)(rng);
  }
  const auto d = make_disc(10, 3, {6, 6}, 5);
  const auto hist = cst(random_array({2, 8, 5}, rng)), scan = cst(random_array({2, 6}, rng, 0, 5));
  const auto amp_hist = cst(random_array({2, 8, 3}, rng));
  auto f = [&] {
    const auto out = m.actor(hist, scan);
    return num::sum(amp::discriminator_score(d, amp::assemble_policy_sequence(amp_hist, out.future)));
  };
  const auto g = num::backward(f());
  const auto& head = m.parkourformer->predict->weight;
  const auto gh = g.of(head);
  double norm = 0.0;
  for (double v : gh.storage()) norm += v * v;
  EXPECT_GT(norm, 1e-12);
  const auto r = num::grad_check(f, {head, *m.parkourformer->predict->bias});
  EXPECT_LT(r.max_rel_err, 1e-6) << r.failure;
}

TEST(ReferenceSequence, RowsFollowTheGait) {
  env::ReferenceGait gait;
  const double phase = 0.37, dt = 0.02;
  const auto s = amp::assemble_reference_sequence<double>(gait, phase, dt);
  ASSERT_EQ(s.shape(), (num::Shape{10, env::kAmpDim}));
  for (std::size_t k = 0; k < 10; ++k) {
    const auto ref = env::reference_motion(phase + static_cast<double>(k) * dt / gait.period, gait);
    for (std::size_t j = 0; j < env::kAmpDim; ++j) EXPECT_EQ(s.at(k, j), ref[j]);
  }
  EXPECT_EQ(s.storage(), (amp::assemble_reference_sequence<double>(gait, phase, dt).storage()));
}

TEST(Loss, PerfectDiscriminationIsZero) {
  auto d = make_disc(1, 2, {}, 6);
  auto w = d.net.layers[0].weight;
  w.mutable_value() = Array<double>({1, 2}, std::vector<double>{1.0, 0.0});
  auto b = *d.net.layers[0].bias;
  b.mutable_value().fill(0.0);
  const auto ref = cst(Array<double>({3, 2}, std::vector<double>{1, 0.5, 1, -2, 1, 7}));
  const auto pol = cst(Array<double>({2, 2}, std::vector<double>{-1, 3, -1, 0}));
  EXPECT_EQ(amp::discriminator_loss(d, ref, pol, 0.0).value().item(), 0.0);
}

TEST(Loss, ConstantZeroScoreGivesTwo) {
  auto d = make_disc(2, 3, {4}, 7);
  for (const auto& l : d.net.layers) set_linear(l, 0.0, 0.0);
  std::mt19937_64 rng(8);
  const auto ref = cst(random_array({5, 2, 3}, rng)), pol = cst(random_array({4, 2, 3}, rng));
  EXPECT_EQ(amp::discriminator_loss(d, ref, pol, 0.0).value().item(), 2.0);
  // A constant discriminator also has no input gradient to penalize.
  EXPECT_EQ(amp::discriminator_loss(d, ref, pol, 5.0).value().item(), 2.0);
}

TEST(Loss, MatchesHandComputedOracle) {
  const auto d = make_disc(3, 4, {7, 5}, 9);
  std::mt19937_64 rng(10);
  const auto ref = random_array({6, 12}, rng), pol = random_array({5, 3, 4}, rng);
  amp::DiscriminatorLossTerms terms;
  const double got = amp::discriminator_loss(d, cst(ref), cst(pol), 5.0, &terms).value().item();
  double real = 0.0, fake = 0.0, gp = 0.0;
  for (std::size_t i = 0; i < 6; ++i) {
    std::vector<double> g;
    const double s = naive_score(d, row_of(ref, i), &g);
    real += (s - 1.0) * (s - 1.0);
    for (double v : g) gp += v * v;
  }
  for (std::size_t i = 0; i < 5; ++i) {
    const double s = naive_score(d, row_of(pol, i), nullptr);
    fake += (s + 1.0) * (s + 1.0);
  }
  real /= 6.0;
  fake /= 5.0;
  gp /= 6.0;
  EXPECT_NEAR(got, real + fake + 5.0 * gp, 1e-10);
  EXPECT_NEAR(terms.real, real, 1e-10);
  EXPECT_NEAR(terms.fake, fake, 1e-10);
  EXPECT_NEAR(terms.penalty, gp, 1e-10);
}

TEST(Loss, InputGradientMatchesOracle) {
  const auto d = make_disc(2, 3, {5, 4}, 11);
  std::mt19937_64 rng(12);
  const auto x = random_array({4, 6}, rng);
  const auto g = amp::score_input_gradient(d, cst(x)).value();
  for (std::size_t i = 0; i < 4; ++i) {
    std::vector<double> want;
    naive_score(d, row_of(x, i), &want);
    for (std::size_t j = 0; j < 6; ++j) EXPECT_NEAR(g.at(i, j), want[j], 1e-12);
  }
}

TEST(Loss, PenaltyGradientPassesGradCheck) {
  const auto d = make_disc(2, 3, {5, 4}, 13);
  std::mt19937_64 rng(14);
  const auto ref = cst(random_array({4, 6}, rng)), pol = cst(random_array({3, 6}, rng));
  nn::ParamList<double> ps;
  d.collect("disc", ps);
  const auto r = num::grad_check([&] { return amp::discriminator_loss(d, ref, pol, 5.0); }, ps.vars());
  EXPECT_LT(r.max_rel_err, 1e-6) << r.failure;
}

TEST(Loss, EmptyBatchIsContractError) {
  EXPECT_THROW(amp::stack_sequences(std::vector<Array<double>>{}), pkfr::ContractError);
  const auto d = make_disc(1, 2, {3}, 15);
  EXPECT_THROW(amp::discriminator_loss(d, num::scalar_const(1.0), num::scalar_const(1.0), 5.0), pkfr::ContractError);
}

TEST(Loss, ReferenceSideCarriesNoGradient) {
  const auto d = make_disc(2, 2, {4}, 16);
  std::mt19937_64 rng(17);
  const auto ref = pkfr::testing::random_param({3, 4}, rng);
  const auto pol = pkfr::testing::random_param({3, 4}, rng);
  const auto g = num::backward(amp::discriminator_loss(d, num::detach(ref), pol, 5.0));
  EXPECT_FALSE(g.reached(ref));
  EXPECT_TRUE(g.reached(pol));
}

TEST(Reward, FixedPoints) {
  EXPECT_EQ(amp::amp_reward(1.0), 1.0);
  EXPECT_EQ(amp::amp_reward(-1.0), 0.0);
  EXPECT_EQ(amp::amp_reward(0.0), 0.75);
  EXPECT_EQ(amp::amp_reward(-50.0), 0.0);
  EXPECT_EQ(amp::amp_reward(std::nan("")), 0.0);
}

TEST(Reward, BoundedAndMonotone) {
  std::mt19937_64 rng(18);
  std::normal_distribution<double> n(0.0, 10.0);
  for (int i = 0; i < 1000000; ++i) {
    const double r = amp::amp_reward(n(rng));
    ASSERT_GE(r, 0.0);
    ASSERT_LE(r, 1.0);
  }
  double prev = amp::amp_reward(-5.0);
  for (double dv = -5.0; dv <= 1.0; dv += 1e-3) {
    const double r = amp::amp_reward(dv);
    ASSERT_GE(r, prev);
    prev = r;
  }
}

TEST(Reward, BatchMatchesScalarMapping) {
  const auto d = make_disc(2, 3, {4}, 19);
  std::mt19937_64 rng(20);
  const auto x = cst(random_array({5, 2, 3}, rng));
  const auto r = amp::amp_reward(d, x);
  const auto s = amp::discriminator_score(d, x).value();
  ASSERT_EQ(r.size(), 5u);
  for (std::size_t i = 0; i < 5; ++i) EXPECT_EQ(r[i], amp::amp_reward(s[i]));
}

TEST(Separability, SineGaitVersusNoise) {
  EXPECT_GT(pkfr::testing::sine_toy_separation(0), 1.0);
}
