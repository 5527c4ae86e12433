#include "secdiff/baselines.hpp"
#include "test_support.hpp"

#include <gtest/gtest.h>

using namespace secdiff;
using namespace testing_support;

TEST(Mrt, EqualPowerSplitMatchedFilter) {
  const SystemConfig c = desk_config();
  const ChannelSet cs = draw_realization(c, 40, 0);
  const Strategy s = mrt(cs, c);
  EXPECT_NEAR(total_power(s), 1.0, 1e-12);
  EXPECT_TRUE(s.V.isZero(0));
  for (int k = 0; k < c.K; ++k) {
    EXPECT_NEAR(s.W.col(k).squaredNorm(), 1.0 / c.K, 1e-12);
    // w_k is parallel to conj(h_k): |h_k^H w_k| = ||h_k|| ||w_k||
    const cplx g = (cs.H_users.row(k).conjugate() * s.W.col(k))(0, 0);
    EXPECT_NEAR(std::abs(g), cs.H_users.row(k).norm() * s.W.col(k).norm(), 1e-12 * cs.H_users.row(k).norm());
  }
}

TEST(RzfNs, NoiseInUserNullSpace) {
  const SystemConfig c = desk_config();
  for (int i = 0; i < 200; ++i) {
    const ChannelSet cs = draw_realization(c, 41, i);
    const Strategy s = rzf_ns(cs, c, 0.7);
    ASSERT_LE(total_power(s), 1.0 + 1e-9);
    for (int k = 0; k < c.K; ++k)
      for (int j = 0; j < c.J; ++j) {
        const cplx leak = (cs.H_users.row(k).conjugate() * s.V.col(j))(0, 0);
        ASSERT_LE(std::abs(leak), 1e-9 * cs.H_users.row(k).norm() * s.V.col(j).norm());
      }
  }
}

TEST(RzfNs, RhoSplitsPower) {
  const SystemConfig c = desk_config();
  const ChannelSet cs = draw_realization(c, 42, 0);
  const Strategy s = rzf_ns(cs, c, 0.6);
  EXPECT_NEAR(s.W.squaredNorm(), 0.6, 1e-12);
  EXPECT_NEAR(s.V.squaredNorm(), 0.4, 1e-12);
  const Strategy all = rzf_ns(cs, c, 1.0);
  EXPECT_NEAR(all.W.squaredNorm(), 1.0, 1e-12);
  EXPECT_TRUE(all.V.isZero(0));
  EXPECT_THROW(rzf_ns(cs, c, 1.5), std::invalid_argument);
  EXPECT_THROW(rzf_ns(cs, c, -0.1), std::invalid_argument);
}

TEST(RzfNs, NoNullSpaceFallsBackToNoAn) {
  SystemConfig c = desk_config();
  c.K = 4;
  c.J = 1;
  const ChannelSet cs = draw_realization(c, 43, 0);
  const Strategy s = rzf_ns(cs, c, 0.5);
  EXPECT_TRUE(s.V.isZero(0));
  EXPECT_NEAR(total_power(s), 1.0, 1e-12);
}

TEST(RzfNs, GridBestDominatesEachRho) {
  const SystemConfig c = desk_config();
  for (int i = 0; i < 20; ++i) {
    const ChannelSet cs = draw_realization(c, 44, i);
    const double best = sum_secrecy(cs, rzf_ns_best(cs, c), c, RateMode::exact).R_sum;
    for (double rho : kRzfRhoGrid) EXPECT_GE(best, sum_secrecy(cs, rzf_ns(cs, c, rho), c, RateMode::exact).R_sum);
  }
}

TEST(Oracle, SingleUserReachesCapacity) {
  SystemConfig c;
  c.M = 4;
  c.K = 1;
  c.L = 0;
  c.J = 0;
  OracleOptions o;
  o.restarts = 2;
  for (int i = 0; i < 20; ++i) {
    const ChannelSet cs = draw_realization(c, 45, i);
    Rng rng = make_stream(45, i, salt::oracle);
    const OracleResult r = oracle_optimize(cs, c, o, rng);
    const double cap = std::log2(1.0 + cs.H_users.row(0).squaredNorm() / c.noise_ratio());
    EXPECT_GE(r.rsum, 0.999 * cap);
    EXPECT_LE(r.rsum, cap * (1 + 1e-12));
  }
}

TEST(Oracle, FeasibleAndDominatesBaselines) {
  const SystemConfig c = desk_config();
  OracleOptions o;
  o.restarts = 2;
  o.max_iters = 200;
  for (int i = 0; i < 10; ++i) {
    const ChannelSet cs = draw_realization(c, 46, i);
    Rng rng = make_stream(46, i, salt::oracle);
    const OracleResult r = oracle_optimize(cs, c, o, rng);
    EXPECT_LE(total_power(r.strategy), 1.0 + 1e-9);
    EXPECT_NEAR(r.rsum, sum_secrecy(cs, r.strategy, c, RateMode::exact).R_sum, 1e-12);
    EXPECT_GE(r.rsum, sum_secrecy(cs, mrt(cs, c), c, RateMode::exact).R_sum);
    EXPECT_GE(r.rsum, sum_secrecy(cs, rzf_ns_best(cs, c), c, RateMode::exact).R_sum - 1e-9);
  }
}

TEST(Oracle, DeterministicGivenStream) {
  const SystemConfig c = desk_config();
  const ChannelSet cs = draw_realization(c, 47, 0);
  OracleOptions o;
  o.restarts = 3;
  o.max_iters = 100;
  Rng a = make_stream(47, 0, salt::oracle), b = make_stream(47, 0, salt::oracle);
  const OracleResult ra = oracle_optimize(cs, c, o, a), rb = oracle_optimize(cs, c, o, b);
  EXPECT_EQ(ra.rsum, rb.rsum);
  EXPECT_TRUE(ra.strategy.W == rb.strategy.W && ra.strategy.V == rb.strategy.V);
}

TEST(Oracle, OptionValidationAndJson) {
  OracleOptions o;
  o.restarts = 0;
  EXPECT_THROW(o.validate(), config_error);
  o = OracleOptions{};
  o.step_rule = "sgd";
  EXPECT_THROW(o.validate(), config_error);
  o = OracleOptions{};
  o.max_iters = 123;
  o.init = OracleInit::random;
  o.warm_start = false;
  const OracleOptions back = nlohmann::json(o).get<OracleOptions>();
  EXPECT_EQ(back.max_iters, 123);
  EXPECT_EQ(back.init, OracleInit::random);
  EXPECT_FALSE(back.warm_start);
  EXPECT_THROW(oracle_init_from_string("bogus"), config_error);
}
