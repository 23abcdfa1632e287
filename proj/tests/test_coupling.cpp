#include <gtest/gtest.h>

#include <algorithm>

#include "couplenet/context.hpp"
#include "couplenet/coupling.hpp"
#include "oracles.hpp"

using namespace couplenet;

namespace {

std::vector<double> random_vector(Rng& rng, std::size_t n, double lo = -2.0, double hi = 2.0) {
  std::vector<double> v(n);
  for (double& x : v) x = rng.uniform(lo, hi);
  return v;
}

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace

TEST(CouplingConfig, Validation) {
  CouplingConfig c;
  EXPECT_NO_THROW(c.validate());
  c.enable_local = c.enable_global = false;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c.enable_global = true;
  c.strategy = Strategy::prod;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c.strategy = Strategy::max;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c.strategy = Strategy::sum;
  EXPECT_NO_THROW(c.validate());
}

TEST(CouplingConfig, Spellings) {
  EXPECT_EQ(parse_normalization("conv"), Normalization::learned_scale);
  EXPECT_EQ(to_string(Normalization::learned_scale), "conv");
  EXPECT_EQ(parse_strategy("max"), Strategy::max);
  EXPECT_THROW(parse_strategy("mean"), std::invalid_argument);
}

TEST(Normalize, Examples) {
  const std::vector<double> v = {3.0, 4.0};
  const std::vector<double> l2 = normalize_branch(v, Normalization::l2);
  EXPECT_DOUBLE_EQ(l2[0], 0.6);
  EXPECT_DOUBLE_EQ(l2[1], 0.8);
  EXPECT_EQ(normalize_branch(std::vector<double>{0.0, 0.0}, Normalization::l2),
            (std::vector<double>{0.0, 0.0}));
  EXPECT_EQ(normalize_branch(v, Normalization::none), v);
  const BranchScale id = BranchScale::identity(2);
  EXPECT_EQ(normalize_branch(v, Normalization::learned_scale, &id), v);
  const BranchScale s{{2.0, -1.0}, {0.5, 0.25}};
  EXPECT_EQ(normalize_branch(v, Normalization::learned_scale, &s), (std::vector<double>{6.5, -3.75}));
  EXPECT_THROW(normalize_branch(v, Normalization::learned_scale, nullptr), std::invalid_argument);
}

TEST(Normalize, BackwardMatchesFiniteDifferences) {
  Rng rng(31);
  for (Normalization mode : {Normalization::none, Normalization::l2, Normalization::learned_scale}) {
    for (int rep = 0; rep < 10; ++rep) {
      std::vector<double> v = random_vector(rng, 5);
      const std::vector<double> u = random_vector(rng, 5);
      BranchScale s{random_vector(rng, 5, 0.5, 1.5), random_vector(rng, 5, -0.5, 0.5)};
      const NormalizeGrads g = normalize_branch_backward(v, mode, &s, u);
      auto loss = [&] { return dot(normalize_branch(v, mode, &s), u); };
      EXPECT_TRUE(oracle::gradients_match(g.grad_input, oracle::numeric_gradient(v, loss), 1e-6));
      if (mode == Normalization::learned_scale) {
        EXPECT_TRUE(oracle::gradients_match(g.grad_scale, oracle::numeric_gradient(s.scale, loss), 1e-6));
        EXPECT_TRUE(oracle::gradients_match(g.grad_bias, oracle::numeric_gradient(s.bias, loss), 1e-6));
      } else {
        EXPECT_TRUE(g.grad_scale.empty());
      }
    }
  }
}

TEST(Couple, Examples) {
  const std::vector<double> sum = couple(std::vector<double>{0.2, 0.5}, std::vector<double>{0.3, 0.1}, Strategy::sum);
  EXPECT_DOUBLE_EQ(sum[0], 0.5);
  EXPECT_DOUBLE_EQ(sum[1], 0.6);
  EXPECT_EQ(couple(std::vector<double>{1.5, -2.0}, std::vector<double>{0.0, 0.0}, Strategy::prod),
            (std::vector<double>{0.0, -0.0}));
  EXPECT_EQ(couple(std::vector<double>{1.0, -2.0}, std::vector<double>{0.0, 5.0}, Strategy::max),
            (std::vector<double>{1.0, 5.0}));
  EXPECT_THROW(couple(std::vector<double>{1.0}, std::vector<double>{1.0, 2.0}, Strategy::sum),
               std::invalid_argument);
}

TEST(Couple, Commutative) {
  Rng rng(32);
  for (int rep = 0; rep < 100; ++rep) {
    const auto a = random_vector(rng, 5);
    const auto b = random_vector(rng, 5);
    for (Strategy s : {Strategy::sum, Strategy::prod, Strategy::max}) EXPECT_EQ(couple(a, b, s), couple(b, a, s));
  }
}

TEST(CoupleBackward, Examples) {
  const std::vector<double> ones = {1.0, 1.0};
  const auto [gl, gg] = couple_backward(std::vector<double>{0.3, -1.0}, std::vector<double>{2.0, 4.0}, Strategy::sum, ones);
  EXPECT_EQ(gl, ones);
  EXPECT_EQ(gg, ones);
  const auto [pl, pg] = couple_backward(std::vector<double>{2.0}, std::vector<double>{3.0}, Strategy::prod,
                                        std::vector<double>{1.0});
  EXPECT_EQ(pl, std::vector<double>{3.0});
  EXPECT_EQ(pg, std::vector<double>{2.0});
  // Max ties route to the local branch.
  const auto [ml, mg] = couple_backward(std::vector<double>{1.0, 0.0}, std::vector<double>{1.0, 2.0}, Strategy::max,
                                        std::vector<double>{5.0, 7.0});
  EXPECT_EQ(ml, (std::vector<double>{5.0, 0.0}));
  EXPECT_EQ(mg, (std::vector<double>{0.0, 7.0}));
}

TEST(CoupleBackward, MatchesFiniteDifferencesAwayFromTies) {
  Rng rng(33);
  for (Strategy s : {Strategy::sum, Strategy::prod, Strategy::max}) {
    for (int rep = 0; rep < 10; ++rep) {
      std::vector<double> l = random_vector(rng, 5);
      std::vector<double> g(5);
      for (std::size_t i = 0; i < 5; ++i) {
        double d;
        do d = rng.uniform(-1.0, 1.0);
        while (std::abs(d) <= 1e-3);
        g[i] = l[i] + d;
      }
      const auto u = random_vector(rng, 5);
      const auto [gl, gg] = couple_backward(l, g, s, u);
      auto loss = [&] { return dot(couple(l, g, s), u); };
      EXPECT_TRUE(oracle::gradients_match(gl, oracle::numeric_gradient(l, loss), 1e-6));
      EXPECT_TRUE(oracle::gradients_match(gg, oracle::numeric_gradient(g, loss), 1e-6));
    }
  }
}

TEST(Coupling, IdentityLearnedScaleSumIsPlainAddition) {
  Rng rng(34);
  const BranchScale id = BranchScale::identity(5);
  for (int rep = 0; rep < 50; ++rep) {
    const auto a = random_vector(rng, 5);
    const auto b = random_vector(rng, 5);
    const auto coupled = couple(normalize_branch(a, Normalization::learned_scale, &id),
                                normalize_branch(b, Normalization::learned_scale, &id), Strategy::sum);
    EXPECT_EQ(coupled, couple(a, b, Strategy::sum));
  }
}

TEST(Coupling, L2SumArgmaxInvariantUnderPositiveRescaling) {
  Rng rng(35);
  for (int rep = 0; rep < 2000; ++rep) {
    const auto a = random_vector(rng, 5);
    const auto b = random_vector(rng, 5);
    const double sa = std::exp(rng.uniform(-5.0, 5.0));
    const double sb = std::exp(rng.uniform(-5.0, 5.0));
    auto scaled = [](std::vector<double> v, double s) {
      for (double& x : v) x *= s;
      return v;
    };
    const auto base = couple(normalize_branch(a, Normalization::l2), normalize_branch(b, Normalization::l2), Strategy::sum);
    const auto resc = couple(normalize_branch(scaled(a, sa), Normalization::l2),
                             normalize_branch(scaled(b, sb), Normalization::l2), Strategy::sum);
    EXPECT_EQ(std::max_element(base.begin(), base.end()) - base.begin(),
              std::max_element(resc.begin(), resc.end()) - resc.begin());
  }
}

TEST(ExpandRoI, Examples) {
  EXPECT_EQ(expand_roi(RoI{0, 10, 10, 30, 30}, 2.0, 100, 100), (RoI{0, 0, 0, 40, 40}));
  EXPECT_EQ(expand_roi(RoI{0, 0, 0, 60, 60}, 2.0, 100, 100), (RoI{0, 0, 0, 90, 90}));
  const RoI r{1, 12.5, 3.0, 40.0, 17.25};
  EXPECT_EQ(expand_roi(r, 1.0, 100, 100), r);
  EXPECT_THROW(expand_roi(r, 0.5, 100, 100), std::invalid_argument);
}

TEST(ExpandRoI, ContainsOriginalMonotoneAndClipped) {
  Rng rng(36);
  for (int rep = 0; rep < 1000; ++rep) {
    const double w = rng.uniform(20, 100), h = rng.uniform(20, 100);
    RoI r{0, rng.uniform(0, w), rng.uniform(0, h), 0, 0};
    r.x2 = rng.uniform(r.x1, w);
    r.y2 = rng.uniform(r.y1, h);
    const double fa = rng.uniform(1.0, 3.0);
    const double fb = fa + rng.uniform(0.0, 2.0);
    const RoI a = expand_roi(r, fa, w, h);
    const RoI b = expand_roi(r, fb, w, h);
    EXPECT_EQ(a.batch_index, r.batch_index);
    EXPECT_TRUE(a.x1 <= r.x1 && a.y1 <= r.y1 && a.x2 >= r.x2 && a.y2 >= r.y2);
    EXPECT_TRUE(b.x1 <= a.x1 && b.y1 <= a.y1 && b.x2 >= a.x2 && b.y2 >= a.y2);
    EXPECT_TRUE(b.x1 >= 0.0 && b.y1 >= 0.0 && b.x2 <= w && b.y2 <= h);
  }
}

TEST(PoolWithContext, IdenticalRegionsDuplicateChannels) {
  Rng rng(37);
  const Tensor f = oracle::random_tensor(Shape{1, 3, 8, 8}, rng);
  const RoI r{0, 4, 4, 20, 24};
  const ContextPooled p = pool_with_context(f, ContextPair{r, r}, 3, 0.25);
  ASSERT_EQ(p.pooled.shape(), (Shape{1, 6, 3, 3}));
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t i = 0; i < 9; ++i) EXPECT_EQ(p.pooled.plane(0, c)[i], p.pooled.plane(0, c + 3)[i]);
  const ContextPooled z = pool_with_context(Tensor(f.shape()), make_context_pair(r, 2.0, 32, 32), 3, 0.25);
  EXPECT_DOUBLE_EQ(z.pooled.sum(), 0.0);
}

TEST(PoolWithContext, HalvesMatchMaxPoolOracle) {
  Rng rng(38);
  for (int rep = 0; rep < 100; ++rep) {
    const Tensor f = oracle::random_tensor(Shape{1, 2, 9, 7}, rng);
    const RoI r = oracle::random_roi(rng, 7, 9, 0.25);
    const ContextPair pair = make_context_pair(r, 2.0, 28.0, 36.0);
    const ContextPooled p = pool_with_context(f, pair, 3, 0.25);
    const auto [orig, orig_arg] = oracle::roi_pool_max(f, pair.original, 3, 3, 0.25);
    const auto [ctx, ctx_arg] = oracle::roi_pool_max(f, pair.expanded, 3, 3, 0.25);
    for (std::size_t i = 0; i < 18; ++i) {
      ASSERT_EQ(p.pooled.data()[i], orig.data()[i]);
      ASSERT_EQ(p.pooled.data()[18 + i], ctx.data()[i]);
    }
    EXPECT_EQ(p.argmax_original, orig_arg);
    EXPECT_EQ(p.argmax_context, ctx_arg);
  }
}
