#include "secdiff/wireless_env.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace secdiff;

TEST(DbmToWatt, KnownValues) {
  EXPECT_DOUBLE_EQ(dbm_to_watt(30.0), 1.0);
  EXPECT_NEAR(dbm_to_watt(20.0), 0.1, 1e-15);
  EXPECT_NEAR(dbm_to_watt(-100.0) / 1e-13, 1.0, 1e-12);
}

TEST(DbmToWatt, RejectsNonFinite) {
  EXPECT_THROW(dbm_to_watt(std::nan("")), std::invalid_argument);
  EXPECT_THROW(dbm_to_watt(INFINITY), std::invalid_argument);
}

TEST(SystemConfig, DefaultsMatchReferenceScenario) {
  const SystemConfig c;
  EXPECT_EQ(c.M, 8);
  EXPECT_EQ(c.K, 4);
  EXPECT_EQ(c.J, 4);
  EXPECT_DOUBLE_EQ(c.P_dbm, 20.0);
  EXPECT_DOUBLE_EQ(c.noise_dbm, -100.0);
  EXPECT_DOUBLE_EQ(c.alpha, 0.01);
  EXPECT_DOUBLE_EQ(c.pathloss_ref_db, -30.0);
  EXPECT_DOUBLE_EQ(c.pathloss_exp, 2.2);
  EXPECT_DOUBLE_EQ(c.user_dist_min_m, 50.0);
  EXPECT_DOUBLE_EQ(c.user_dist_max_m, 80.0);
  EXPECT_DOUBLE_EQ(c.eve_radius_m, 5.0);
  EXPECT_NO_THROW(c.validate());
}

TEST(SystemConfig, ValidationRejectsBadFields) {
  SystemConfig c;
  c.alpha = 0.0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = SystemConfig{};
  c.user_dist_min_m = 90.0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = SystemConfig{};
  c.J = -1;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = SystemConfig{};
  c.eve_radius_m = -1.0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
}

TEST(SystemConfig, JsonRoundTripAndDefaultJ) {
  SystemConfig c;
  c.M = 6;
  c.K = 2;
  c.J = 3;
  c.P_dbm = 11.5;
  const nlohmann::json j = c;
  const auto back = j.get<SystemConfig>();
  EXPECT_EQ(back.M, 6);
  EXPECT_EQ(back.J, 3);
  EXPECT_DOUBLE_EQ(back.P_dbm, 11.5);
  const auto partial = nlohmann::json{{"M", 4}, {"K", 4}}.get<SystemConfig>();
  EXPECT_EQ(partial.J, 1);  // M - K clamped to 1
}

TEST(Placement, NoEves) {
  SystemConfig c;
  c.K = 2;
  c.L = 0;
  Rng rng(1);
  const Placement p = sample_placement(c, rng);
  EXPECT_EQ(p.user_pos.size(), 2u);
  EXPECT_TRUE(p.eve_pos.empty());
  EXPECT_TRUE(p.eve_dist.empty());
}

TEST(Placement, ZeroRadiusEveSitsOnUser) {
  SystemConfig c;
  c.K = 1;
  c.L = 1;
  c.eve_radius_m = 0.0;
  Rng rng(2);
  const Placement p = sample_placement(c, rng);
  EXPECT_DOUBLE_EQ(p.eve_pos[0].x, p.user_pos[0].x);
  EXPECT_DOUBLE_EQ(p.eve_pos[0].y, p.user_pos[0].y);
}

TEST(Placement, BoundsHoldOnEveryDraw) {
  SystemConfig c;
  c.K = 4;
  c.L = 4;
  Rng rng(3);
  for (int i = 0; i < 10000; ++i) {
    const Placement p = sample_placement(c, rng);
    for (double d : p.user_dist) {
      ASSERT_GE(d, c.user_dist_min_m);
      ASSERT_LE(d, c.user_dist_max_m);
    }
    for (int l = 0; l < c.L; ++l) {
      ASSERT_LE(distance(p.eve_pos[l], p.user_pos[p.eve_anchor[l]]), c.eve_radius_m + 1e-12);
      ASSERT_NEAR(p.eve_dist[l], std::hypot(p.eve_pos[l].x, p.eve_pos[l].y), 1e-12);
    }
  }
}

TEST(Placement, UsersAreUniformInArea) {
  // P(r <= median) = 1/2 with median^2 = (rmin^2 + rmax^2) / 2.
  SystemConfig c;
  c.K = 1;
  c.L = 0;
  Rng rng(4);
  const double med = std::sqrt(0.5 * (50.0 * 50.0 + 80.0 * 80.0));
  int below = 0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) below += sample_placement(c, rng).user_dist[0] <= med;
  EXPECT_NEAR(double(below) / n, 0.5, 4.0 * 0.5 / std::sqrt(double(n)));
}

TEST(PathLoss, KnownValues) {
  const SystemConfig c;
  EXPECT_DOUBLE_EQ(path_loss_db(1.0, c), -30.0);
  EXPECT_NEAR(path_loss_db(50.0, c), -30.0 - 22.0 * std::log10(50.0), 1e-12);
  EXPECT_NEAR(path_loss_db(50.0, c), -67.38, 0.005);
  EXPECT_NEAR(path_loss_db(80.0, c), -71.87, 0.005);
  EXPECT_THROW(path_loss_db(0.0, c), std::invalid_argument);
  EXPECT_THROW(path_loss_db(-2.0, c), std::invalid_argument);
}

TEST(Channels, SecondMomentMatchesPathLoss) {
  SystemConfig c;
  c.M = 1;
  c.K = 1;
  c.L = 0;
  Rng prng(5);
  const Placement p = sample_placement(c, prng);
  const double scale = std::pow(10.0, path_loss_db(p.user_dist[0], c) / 10.0);
  Rng rng(6);
  double acc = 0.0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) acc += std::norm(sample_channels(c, p, rng).H_users(0, 0));
  EXPECT_LT(std::abs(acc / n / scale - 1.0), 0.02);
}

TEST(Channels, ZeroRadiusEveSharesUserScale) {
  SystemConfig c;
  c.M = 1;
  c.K = 1;
  c.L = 1;
  c.eve_radius_m = 0.0;
  Rng prng(7);
  const Placement p = sample_placement(c, prng);
  EXPECT_DOUBLE_EQ(path_loss_db(p.eve_dist[0], c), path_loss_db(p.user_dist[0], c));
  Rng rng(8);
  double u = 0.0, e = 0.0;
  bool differ = false;
  for (int i = 0; i < 50000; ++i) {
    const ChannelSet cs = sample_channels(c, p, rng);
    u += std::norm(cs.H_users(0, 0));
    e += std::norm(cs.H_eves(0, 0));
    differ |= cs.H_users(0, 0) != cs.H_eves(0, 0);
  }
  EXPECT_NEAR(u / e, 1.0, 0.04);
  EXPECT_TRUE(differ);
}

TEST(Channels, DeterministicUnderKey) {
  const SystemConfig c;
  const ChannelSet a = draw_realization(c, 11, 5);
  const ChannelSet b = draw_realization(c, 11, 5);
  const ChannelSet other = draw_realization(c, 11, 6);
  EXPECT_TRUE(a.H_users == b.H_users);
  EXPECT_TRUE(a.H_eves == b.H_eves);
  EXPECT_FALSE(a.H_users == other.H_users);
  for (Eigen::Index i = 0; i < a.h_composite.size(); ++i) ASSERT_TRUE(std::isfinite(std::abs(a.h_composite(i))));
}

TEST(Composite, SingleRowIdentity) {
  CMatrix u(1, 2);
  u << cplx(1, 0), cplx(2, 0);
  const ChannelSet cs = make_channel_set(u, CMatrix(0, 2));
  ASSERT_EQ(composite_channel(cs).size(), 2);
  EXPECT_EQ(composite_channel(cs)(0), cplx(1, 0));
  EXPECT_EQ(composite_channel(cs)(1), cplx(2, 0));
}

TEST(Composite, UsersBeforeEves) {
  CMatrix u(1, 1), e(1, 1);
  u << cplx(1, 0);
  e << cplx(0, 3);
  const CVector h = composite_channel(make_channel_set(u, e));
  EXPECT_EQ(h(0), cplx(1, 0));
  EXPECT_EQ(h(1), cplx(0, 3));
}

TEST(Composite, ReshapeRoundTrip) {
  const SystemConfig c;
  const ChannelSet cs = draw_realization(c, 3, 9);
  const CVector h = composite_channel(cs);
  ASSERT_EQ(h.size(), c.M * (c.K + c.L));
  // Independent reshape: entry (r, m) sits at r*M + m.
  for (int r = 0; r < c.K + c.L; ++r)
    for (int m = 0; m < c.M; ++m) {
      const cplx want = r < c.K ? cs.H_users(r, m) : cs.H_eves(r - c.K, m);
      ASSERT_EQ(h(r * c.M + m), want);
    }
  const ChannelSet back = channel_set_from_composite(h, c.M, c.K, c.L);
  EXPECT_TRUE(back.H_users == cs.H_users);
  EXPECT_TRUE(back.H_eves == cs.H_eves);
}

TEST(RealEmbedding, Layout) {
  CVector h(2);
  h << cplx(1, 2), cplx(3, -4);
  const RVector x = real_embedding(h);
  ASSERT_EQ(x.size(), 4);
  EXPECT_EQ(x(0), 1);
  EXPECT_EQ(x(1), 3);
  EXPECT_EQ(x(2), 2);
  EXPECT_EQ(x(3), -4);
}
