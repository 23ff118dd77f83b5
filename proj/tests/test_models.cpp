#include <cmath>

#include <gtest/gtest.h>

#include "followbench/common.hpp"
#include "followbench/models.hpp"
#include "test_util.hpp"

namespace fb = followbench;
using fb::testing::Gen;

namespace {

fb::CFState state_of(double spacing, double v_fv, double dv, std::size_t depth = 1) {
  fb::CFState s{fb::HistoryRing(depth)};
  s.history.fill({spacing, v_fv, dv, v_fv - dv});
  return s;
}

fb::IDMParams reference_idm() { return {1.0, 1.5, 30.0, 1.5, 2.0, 4.0}; }

}  // namespace

TEST(HistoryRing, LagsAndSeeding) {
  fb::HistoryRing ring(3);
  ring.fill({1, 0, 0, 0});
  EXPECT_EQ(ring.lag(2).spacing_m, 1);
  ring.push({2, 0, 0, 0});
  ring.push({3, 0, 0, 0});
  EXPECT_EQ(ring.lag(0).spacing_m, 3);
  EXPECT_EQ(ring.lag(1).spacing_m, 2);
  EXPECT_EQ(ring.lag(2).spacing_m, 1);
  ring.push({4, 0, 0, 0});
  EXPECT_EQ(ring.lag(2).spacing_m, 2);
  EXPECT_THROW(ring.lag(3), fb::Error);
}

TEST(Ghr, ZeroStimulusGivesZero) {
  Gen gen(1);
  for (int i = 0; i < 20; ++i) {
    fb::GHRParams p{gen.uniform(-5, 5), gen.uniform(-1, 2), gen.uniform(0, 3), 0.0};
    EXPECT_EQ(fb::ghr_accel(p, state_of(gen.uniform(1, 80), gen.uniform(1, 30), 0.0)), 0.0);
  }
}

TEST(Ghr, DirectSubstitution) {
  const fb::GHRParams p{1.0, 0.0, 1.0, 0.0};
  // Leader faster by 2 m/s at 20 m.
  EXPECT_NEAR(fb::ghr_accel(p, state_of(20.0, 10.0, -2.0)), 0.1, 1e-12);
  fb::GHROptions flipped;
  flipped.stimulus_leader_minus_follower = false;
  EXPECT_NEAR(fb::ghr_accel(p, state_of(20.0, 10.0, -2.0), flipped), -0.1, 1e-12);
}

TEST(Ghr, ReactionDelayReadsOnlyLaggedState) {
  const fb::GHRParams p{1.0, 0.0, 1.0, 0.5};
  EXPECT_EQ(fb::ghr_delay_steps(p, 0.1), 5u);
  fb::CFState s{fb::HistoryRing(6)};
  s.history.fill({20.0, 10.0, -2.0, 12.0});
  for (int k = 0; k < 5; ++k) s.history.push({30.0 + k, 10.0, -2.0, 12.0});
  // Lag 5 is still the seeded frame: 2 m/s stimulus at 20 m.
  EXPECT_NEAR(fb::ghr_accel(p, s), 0.1, 1e-12);
  s.history.push({31.0, 10.0, 0.0, 10.0});  // now lag 5 is the 30 m frame
  EXPECT_NEAR(fb::ghr_accel(p, s), 2.0 / 30.0, 1e-12);
}

TEST(Ghr, PerturbingCurrentSpacingLeavesDelayedOutput) {
  const fb::GHRParams p{1.0, 0.0, 1.0, 0.5};
  fb::CFState s{fb::HistoryRing(6)};
  s.history.fill({20.0, 10.0, -2.0, 12.0});
  const double before = fb::ghr_accel(p, s);
  fb::CFState t = s;
  t.history.push({3.0, 10.0, 5.0, 5.0});  // lag 5 is still the seeded frame
  EXPECT_EQ(fb::ghr_accel(p, t), before);
}

TEST(Ghr, Errors) {
  EXPECT_THROW(fb::ghr_delay_steps({1, 0, 1, 0.55}, 0.1), fb::Error);
  EXPECT_THROW(fb::ghr_accel({1, 0, 1, 0.5}, state_of(20, 10, -2, 1)), fb::Error);
  EXPECT_THROW(fb::ghr_accel({1, 0, 1, 0.0}, state_of(0.0, 10, -2)), fb::Error);
}

TEST(GhrProperty, LinearInStimulus) {
  Gen gen(2);
  for (int i = 0; i < 200; ++i) {
    const fb::GHRParams p{gen.uniform(-5, 5), gen.uniform(-1, 2), gen.uniform(0, 3), 0.0};
    const double s = gen.uniform(2, 80), v = gen.uniform(0.5, 30), dv = gen.uniform(-3, 3);
    // Keep outputs inside the clip so the law stays linear.
    const double a1 = fb::ghr_accel(p, state_of(s, v, dv));
    if (std::abs(2 * a1) >= 8.0) continue;
    const double a2 = fb::ghr_accel(p, state_of(s, v, 2 * dv));
    ASSERT_NEAR(a2, 2 * a1, 1e-12);
  }
}

TEST(Idm, StandstillEquilibrium) {
  EXPECT_NEAR(fb::idm_accel(reference_idm(), state_of(2.0, 0.0, 0.0)), 0.0, 1e-12);
}

TEST(Idm, DirectSubstitution) {
  EXPECT_NEAR(fb::idm_desired_gap(reference_idm(), 20.0, 0.0), 32.0, 1e-12);
  EXPECT_NEAR(fb::idm_accel(reference_idm(), state_of(32.0, 20.0, 0.0)), -0.19753086419753085,
              1e-12);
}

TEST(Idm, FreeFlowLimit) {
  EXPECT_NEAR(fb::idm_accel(reference_idm(), state_of(1e9, 0.0, 0.0)), 1.0, 1e-9);
}

TEST(Idm, DesiredGapFloorAndLiteralMode) {
  const auto p = reference_idm();
  // Strongly opening gap: dynamic part negative.
  EXPECT_EQ(fb::idm_desired_gap(p, 1.0, -20.0), p.s0);
  EXPECT_LT(fb::idm_desired_gap(p, 1.0, -20.0, true), p.s0);
}

TEST(Idm, ClampsAndErrors) {
  const auto p = reference_idm();
  EXPECT_EQ(fb::idm_accel(p, state_of(0.5, 30.0, 10.0)), -8.0);
  EXPECT_THROW(fb::idm_accel(p, state_of(0.0, 10.0, 0.0)), fb::Error);
  fb::IDMParams bad = p;
  bad.lambda_exp = 0.5;
  EXPECT_THROW(bad.validate(), fb::Error);
  bad = p;
  bad.s0 = 0.0;
  EXPECT_THROW(bad.validate(), fb::Error);
}

TEST(IdmProperty, NonIncreasingInSpeedAndBoundedByA0) {
  Gen gen(3);
  for (int trial = 0; trial < 50; ++trial) {
    const auto p = gen.idm_params();
    const double s = gen.uniform(0.5, 150.0);
    double prev = INFINITY;
    for (double v = 0.0; v <= 45.0; v += 0.5) {
      const double a = fb::idm_accel(p, state_of(s, v, 0.0));
      ASSERT_LE(a, prev + 1e-12) << "v=" << v;
      ASSERT_LE(a, p.a0);
      prev = a;
    }
  }
}

TEST(ModelParams, JsonRoundTrip) {
  const fb::IDMParams p{1.2, 1.7, 28.0, 1.1, 2.5, 4.0};
  const auto q = fb::idm_params_from_json(fb::to_json(p));
  EXPECT_EQ(q.a0, p.a0);
  EXPECT_EQ(q.t_des, p.t_des);
  EXPECT_TRUE(fb::to_json(p).contains("t_des_s"));
  const fb::GHRParams g{0.5, 0.2, 1.3, 0.7};
  const auto h = fb::ghr_params_from_json(fb::to_json(g));
  EXPECT_EQ(h.reaction_time_s, g.reaction_time_s);
  EXPECT_EQ(h.l_exp, g.l_exp);
}
