#include <cmath>
#include <numbers>

#include <gtest/gtest.h>

#include "followbench/common.hpp"
#include "followbench/ddpg.hpp"
#include "grad_check.hpp"
#include "test_util.hpp"

namespace fb = followbench;
using fb::testing::Gen;

namespace {

class ScriptPolicy final : public fb::Policy {
 public:
  explicit ScriptPolicy(std::vector<double> a) : a_(std::move(a)) {}
  double accel(const fb::CFState& s) const override { return a_.at(s.step); }
  std::string kind() const override { return "script"; }
  nlohmann::json to_json() const override { return {{"kind", kind()}}; }

 private:
  std::vector<double> a_;
};

fb::DDPGConfig literal_cfg() {
  fb::DDPGConfig c;
  c.reward_variant = fb::RewardVariant::kLiteral;
  return c;
}

fb::Transition random_transition(Gen& gen) {
  fb::Transition t;
  for (auto& x : t.state) x = gen.uniform(-1.0, 1.0);
  for (auto& x : t.next_state) x = gen.uniform(-1.0, 1.0);
  t.action = gen.uniform(-3.0, 3.0);
  t.reward = gen.uniform(-2.0, 5.0);
  t.done = gen.index(4) == 0;
  return t;
}

fb::DDPGConfig tiny_cfg() {
  fb::DDPGConfig c;
  c.hidden_size = 8;
  c.batch_size = 16;
  c.warmup_transitions = 64;
  c.episodes = 4;
  c.probe_every = 2;
  c.seed = 13;
  return c;
}

}  // namespace

TEST(Reward, HandComputedValues) {
  const auto lit = literal_cfg();
  const fb::DDPGConfig surv;
  const double e2 = std::exp(2.0);
  // Perfect match sits on the floor; H caps the literal variant.
  EXPECT_DOUBLE_EQ(fb::reward(10.0, 10.0, false, lit), -1.0);
  EXPECT_NEAR(fb::reward(10.0, 10.0, false, surv), -std::log(1e-6), 1e-12);
  EXPECT_NEAR(fb::reward(10.1, 10.0, false, surv), 4.605170185988091, 1e-9);
  EXPECT_NEAR(fb::reward(10.0 + 10.0 * e2, 10.0, false, lit), -2.0, 1e-9);
  EXPECT_NEAR(fb::reward(10.0 + 10.0 * e2, 10.0, true, lit), -52.0, 1e-9);
  EXPECT_NEAR(fb::reward(10.0 + 10.0 * e2, 10.0, false, surv), 1.0, 1e-12);
  EXPECT_THROW(fb::reward(1.0, 0.0, false, surv), fb::Error);
  EXPECT_THROW(fb::reward(1.0, -2.0, false, lit), fb::Error);
}

TEST(RewardProperty, FloorAndPenaltyBounds) {
  Gen gen(3);
  auto lit = literal_cfg();
  fb::DDPGConfig surv;
  for (int trial = 0; trial < 2000; ++trial) {
    lit.H = surv.H = gen.uniform(0.0, 3.0);
    const double obs = gen.uniform(0.5, 80.0);
    const double sim = obs + gen.normal(0.0, obs);
    const bool hit = gen.coin();
    const double pen = hit ? surv.penalty : 0.0;
    const double eps = std::max(std::abs(sim - obs) / obs, surv.epsilon_floor);
    const double r_lit = fb::reward(sim, obs, hit, lit);
    const double r_surv = fb::reward(sim, obs, hit, surv);
    ASSERT_GE(r_surv, surv.H + pen - 1e-12);
    ASSERT_LE(r_lit, -lit.H + pen + 1e-12);
    if (eps <= std::exp(lit.H)) {
      ASSERT_NEAR(r_lit, -lit.H + pen, 1e-12);
    }
    if (eps >= std::exp(-surv.H)) {
      ASSERT_NEAR(r_surv, surv.H + pen, 1e-12);
    }
  }
}

TEST(RewardVariant, NamesRoundTrip) {
  for (auto v : {fb::RewardVariant::kLiteral, fb::RewardVariant::kSurvivalFloor})
    EXPECT_EQ(fb::reward_variant_from_name(fb::reward_variant_name(v)), v);
  EXPECT_THROW(fb::reward_variant_from_name("shaped"), fb::Error);
}

TEST(DdpgEnv, LastStepIsTerminalWithoutPenalty) {
  const auto e = fb::testing::constant_event(151, 25.0, 12.0, 12.0);
  const fb::DDPGConfig cfg;
  fb::DdpgEnv env(e, cfg);
  std::size_t steps = 0;
  fb::StepResult last;
  while (!env.done()) {
    last = env.step(0.0);
    ++steps;
    if (!env.done()) {
      ASSERT_FALSE(last.done);
    }
  }
  EXPECT_EQ(steps, e.length() - 1);
  EXPECT_TRUE(last.done);
  EXPECT_FALSE(env.collided());
  // Exact tracking lands on the floor: -ln(1e-6).
  EXPECT_NEAR(last.reward, -std::log(cfg.epsilon_floor), 1e-6);
  EXPECT_THROW(env.step(0.0), fb::Error);
}

TEST(DdpgEnv, CollisionEndsEpisodeWithPenalty) {
  const auto e = fb::testing::constant_event(201, 1.0, 10.0, 10.0);
  const fb::DDPGConfig cfg;
  fb::DdpgEnv env(e, cfg);
  fb::StepResult last;
  std::size_t steps = 0;
  while (!env.done()) {
    last = env.step(10.0);
    ++steps;
  }
  // 1.5 k^2 dt^2 >= 1 first at k = 9.
  EXPECT_EQ(steps, 9u);
  EXPECT_TRUE(env.collided());
  EXPECT_TRUE(last.done);
  EXPECT_EQ(last.reward, fb::reward(env.state().spacing_m(), e.spacing_m[9], true, cfg));
  EXPECT_LT(last.reward, 0.0);
}

TEST(DdpgEnv, ActionsClippedToBound) {
  const auto e = fb::testing::constant_event(151, 40.0, 10.0, 10.0);
  const fb::DDPGConfig cfg;
  fb::DdpgEnv env(e, cfg);
  EXPECT_EQ(env.step(100.0).applied_accel_mps2, 3.0);
  EXPECT_EQ(env.step(-100.0).applied_accel_mps2, -3.0);
  EXPECT_EQ(env.step(1.25).applied_accel_mps2, 1.25);
}

TEST(DdpgEnv, StepsMatchRollout) {
  Gen gen(5);
  const auto e = fb::testing::synthetic_events(1, fb::IDMParams{}, 17)[0];
  std::vector<double> script(e.length());
  for (auto& a : script) a = gen.uniform(-2.0, 2.0);
  const auto r = fb::rollout(ScriptPolicy(script), e);
  const fb::DDPGConfig cfg;
  fb::DdpgEnv env(e, cfg);
  std::size_t k = 0;
  while (!env.done()) {
    const auto s = env.step(script[k++]);
    ASSERT_EQ(env.state().spacing_m(), r.spacing_sim_m[k]);
    ASSERT_EQ(s.next_state, fb::observe(env.state().now()));
    ASSERT_EQ(s.reward, fb::reward(r.spacing_sim_m[k], e.spacing_m[k], false, cfg));
  }
  EXPECT_EQ(k + 1, r.steps_completed);
}

TEST(Observe, FixedScales) {
  fb::Frame f;
  f.spacing_m = 50.0;
  f.v_fv_mps = 20.0;
  f.dv_mps = -5.0;
  const auto o = fb::observe(f);
  EXPECT_DOUBLE_EQ(o[0], 0.5);
  EXPECT_DOUBLE_EQ(o[1], 0.5);
  EXPECT_DOUBLE_EQ(o[2], -0.5);
}

TEST(ReplayBuffer, FifoEviction) {
  fb::ReplayBuffer buf(3);
  for (int i = 0; i < 4; ++i) {
    fb::Transition t;
    t.reward = i;
    buf.push(t);
  }
  ASSERT_EQ(buf.size(), 3u);
  EXPECT_EQ(buf.at(0).reward, 1.0);
  EXPECT_EQ(buf.at(2).reward, 3.0);
  EXPECT_THROW(fb::ReplayBuffer(0), fb::Error);
  std::mt19937_64 rng(1);
  EXPECT_THROW(buf.sample(4, rng), fb::Error);
  EXPECT_EQ(buf.sample(3, rng).size(), 3u);
}

TEST(ReplayBuffer, SeededSamplingReproduces) {
  fb::ReplayBuffer buf(50);
  for (int i = 0; i < 50; ++i) buf.push({});
  std::mt19937_64 a(9), b(9);
  EXPECT_EQ(buf.sample_indices(32, a), buf.sample_indices(32, b));
}

TEST(ReplayBufferProperty, SamplingIsUniform) {
  fb::ReplayBuffer buf(10);
  for (int i = 0; i < 10; ++i) buf.push({});
  std::mt19937_64 rng(21);
  std::vector<double> counts(10, 0.0);
  const std::size_t draws = 100000;
  for (std::size_t d = 0; d < draws / 10; ++d)
    for (auto i : buf.sample_indices(10, rng)) counts[i] += 1.0;
  const double expect = static_cast<double>(draws) / 10.0;
  double chi2 = 0.0;
  for (double c : counts) chi2 += (c - expect) * (c - expect) / expect;
  // 99th percentile of chi-square with 9 degrees of freedom.
  EXPECT_LT(chi2, 21.67);
}

TEST(SoftUpdate, BlendsTowardsOnline) {
  fb::ParamSet online{{"w", {2}, {2.0, 0.0}}};
  fb::ParamSet target{{"w", {2}, {0.0, 1.0}}};
  auto t = target;
  fb::soft_update(t, online, 0.1);
  EXPECT_NEAR(t[0].data[0], 0.2, 1e-15);
  EXPECT_NEAR(t[0].data[1], 0.9, 1e-15);
  t = target;
  fb::soft_update(t, online, 1.0);
  EXPECT_EQ(t[0].data, online[0].data);
  t = target;
  fb::soft_update(t, online, 0.0);
  EXPECT_EQ(t[0].data, target[0].data);
  fb::ParamSet wrong{{"w", {3}, {0, 0, 0}}};
  EXPECT_THROW(fb::soft_update(wrong, online, 0.5), fb::Error);
}

TEST(TdTarget, DoneMasksBootstrap) {
  EXPECT_NEAR(fb::td_target(1.0, 0.99, 2.0, false), 2.98, 1e-12);
  EXPECT_EQ(fb::td_target(1.0, 0.99, 2.0, true), 1.0);
}

TEST(DDPGConfig, SigmaScheduleAndValidation) {
  fb::DDPGConfig c;
  c.episodes = 11;
  EXPECT_DOUBLE_EQ(c.sigma_at(0), 0.5);
  EXPECT_DOUBLE_EQ(c.sigma_at(5), 0.25);
  EXPECT_DOUBLE_EQ(c.sigma_at(10), 0.0);
  EXPECT_DOUBLE_EQ(c.sigma_at(50), 0.0);
  EXPECT_NO_THROW(c.validate());
  c.tau = 0.0;
  EXPECT_THROW(c.validate(), fb::Error);
  c = {};
  c.buffer_capacity = 10;
  EXPECT_THROW(c.validate(), fb::Error);
  c = {};
  c.gamma = 1.5;
  EXPECT_THROW(c.validate(), fb::Error);
}

TEST(ActorCritic, InitialisationShapes) {
  fb::DDPGConfig cfg;
  std::mt19937_64 rng(4);
  const fb::ActorCritic nets(cfg, rng);
  EXPECT_EQ(nets.actor.input_size(), 3u);
  EXPECT_EQ(nets.critic.input_size(), 4u);
  EXPECT_EQ(nets.actor_target.params()[0].data, nets.actor.params()[0].data);
  for (double w : nets.actor.params().back().data) EXPECT_LE(std::abs(w), 3e-3);
  // A near-zero head keeps the untrained actor close to zero acceleration.
  const std::array<double, 3> s{0.3, 0.4, -0.1};
  EXPECT_LT(std::abs(nets.actor.forward(s)[0]), 0.1);
}

TEST(CriticGradient, MatchesFiniteDifferences) {
  fb::DDPGConfig cfg;
  cfg.hidden_size = 5;
  std::mt19937_64 rng(8);
  fb::ActorCritic nets(cfg, rng);
  Gen gen(8);
  // Move the critic off its initialisation so every layer carries gradient.
  for (auto& t : nets.critic.params())
    for (auto& w : t.data) w = gen.normal(0.0, 0.5);
  std::vector<fb::Transition> batch;
  for (int i = 0; i < 12; ++i) batch.push_back(random_transition(gen));
  const auto lg = fb::critic_loss_gradients(nets.critic, nets.actor_target, nets.critic_target,
                                            batch, cfg);
  const auto check = fb::testing::finite_difference_check(
      nets.critic.params(), lg.grads, [&] {
        return fb::critic_loss_gradients(nets.critic, nets.actor_target, nets.critic_target,
                                         batch, cfg)
            .loss;
      });
  EXPECT_LT(check.max_rel_error, 1e-5) << check.worst;
  EXPECT_EQ(check.checked, 4u * 5 + 5 + 5 * 5 + 5 + 5 + 1);
  EXPECT_THROW(fb::critic_loss_gradients(nets.critic, nets.actor_target, nets.critic_target, {},
                                         cfg),
               fb::Error);
}

TEST(UpdateStep, FiniteLossesAndSoftTargets) {
  fb::DDPGConfig cfg;
  cfg.hidden_size = 6;
  cfg.tau = 0.2;
  std::mt19937_64 rng(2);
  fb::ActorCritic nets(cfg, rng);
  Gen gen(2);
  std::vector<fb::Transition> batch;
  for (int i = 0; i < 16; ++i) batch.push_back(random_transition(gen));
  const auto old_target = nets.critic_target.params();
  const auto old_actor = nets.actor.params();
  const auto losses = fb::update_step(nets, batch, cfg);
  EXPECT_TRUE(std::isfinite(losses.critic_loss));
  EXPECT_TRUE(std::isfinite(losses.actor_loss));
  EXPECT_NE(nets.actor.params()[0].data, old_actor[0].data);
  const auto& online = nets.critic.params();
  const auto& target = nets.critic_target.params();
  for (std::size_t t = 0; t < online.size(); ++t)
    for (std::size_t i = 0; i < online[t].data.size(); ++i)
      ASSERT_NEAR(target[t].data[i], 0.2 * online[t].data[i] + 0.8 * old_target[t].data[i],
                  1e-14);
}

TEST(TrainDdpg, SeededRunsReproduceAndStayBounded) {
  const auto events = fb::testing::synthetic_events(2, fb::IDMParams{}, 40, 15.0);
  const auto probe = fb::testing::synthetic_events(1, fb::IDMParams{}, 41, 15.0);
  const auto cfg = tiny_cfg();
  const auto a = fb::train_ddpg(events, cfg, probe);
  const auto b = fb::train_ddpg(events, cfg, probe);
  ASSERT_EQ(a.report.episode_return.size(), 4u);
  EXPECT_EQ(a.report.episode_return, b.report.episode_return);
  EXPECT_EQ(a.report.event_id, b.report.event_id);
  EXPECT_EQ(a.critic_params[0].data, b.critic_params[0].data);
  EXPECT_TRUE(std::isnan(a.report.probe_mse[0]));
  EXPECT_TRUE(std::isfinite(a.report.probe_mse[1]));
  EXPECT_TRUE(std::isnan(a.report.probe_mse[2]));
  EXPECT_TRUE(std::isfinite(a.report.probe_mse[3]));

  const auto& actor = dynamic_cast<const fb::DdpgActorPolicy&>(*a.actor);
  Gen gen(6);
  for (int i = 0; i < 500; ++i) {
    const std::array<double, 3> s{gen.uniform(-5, 5), gen.uniform(-5, 5), gen.uniform(-5, 5)};
    ASSERT_LE(std::abs(actor.net().forward(s)[0]), cfg.action_bound_mps2);
  }
  const std::string csv = a.report.to_csv();
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "episode,return,collided,probe_mse");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 5);
  EXPECT_EQ(actor.to_json().at("kind"), "ddpg_actor");

  EXPECT_THROW(fb::train_ddpg(std::span<const fb::CarFollowingEvent>{}, cfg), fb::Error);
  EXPECT_THROW(fb::DdpgActorPolicy(fb::Mlp(fb::MLPSpec{{2, 4, 1}})), fb::Error);
}
