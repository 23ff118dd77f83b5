#include <algorithm>
#include <cmath>
#include <limits>

#include <gtest/gtest.h>

#include "followbench/bench.hpp"
#include "followbench/calib_ga.hpp"
#include "followbench/common.hpp"
#include "test_util.hpp"

namespace fb = followbench;
using fb::testing::Gen;

namespace {

fb::ParamBounds unit_box(std::size_t n) {
  fb::ParamBounds b;
  for (std::size_t i = 0; i < n; ++i) {
    b.names.push_back("x" + std::to_string(i));
    b.low.push_back(-5.0);
    b.high.push_back(5.0);
  }
  return b;
}

double sphere(const fb::Genome& g) {
  double s = 0.0;
  for (double x : g) s += x * x;
  return s;
}

std::vector<fb::Genome> random_population(Gen& gen, const fb::ParamBounds& b, std::size_t n) {
  std::vector<fb::Genome> pop(n, fb::Genome(b.size()));
  for (auto& g : pop)
    for (std::size_t i = 0; i < b.size(); ++i) g[i] = gen.uniform(b.low[i], b.high[i]);
  return pop;
}

// GHR-generated events; the follower starts near the leader's speed at 15-35 m.
std::vector<fb::CarFollowingEvent> ghr_events(const fb::GHRParams& p, std::size_t n,
                                              std::uint64_t seed) {
  Gen gen(seed);
  fb::SynthesisOptions opt;
  opt.start_at_equilibrium = false;
  std::vector<fb::CarFollowingEvent> out;
  while (out.size() < n) {
    const auto profile = gen.profile(fb::ProfileKind::kSinusoidal);
    opt.initial_speed_mps = profile.speed_at(0.0) + gen.uniform(-1.0, 1.0);
    opt.initial_spacing_m = gen.uniform(15.0, 35.0);
    out.push_back(fb::synthesize_pair(profile, fb::GHRPolicy(p), 0.0, seed + out.size(), opt).event);
  }
  return out;
}

}  // namespace

TEST(GAConfig, Validation) {
  fb::GAConfig c;
  EXPECT_NO_THROW(c.validate());
  c.crossover_rate = 1.5;
  EXPECT_THROW(c.validate(), fb::Error);
  c = {};
  c.population_size = 1;
  EXPECT_THROW(c.validate(), fb::Error);
  c = {};
  c.elitism = c.population_size;
  EXPECT_THROW(c.validate(), fb::Error);
  fb::ParamBounds b = unit_box(2);
  b.low[1] = b.high[1];
  EXPECT_THROW(b.validate(), fb::Error);
  EXPECT_NO_THROW(fb::ParamBounds::idm_default().validate());
  EXPECT_EQ(fb::ParamBounds::idm_default().size(), 6u);
  EXPECT_EQ(fb::ParamBounds::ghr_default().size(), 4u);
}

TEST(Fitness, SelfConsistentGeneratorIsNearZero) {
  const fb::IDMParams gen_params;
  const auto events = fb::testing::synthetic_events(8, gen_params, 21);
  const double own = fb::fitness(fb::IDMPolicy(gen_params), events);
  EXPECT_LT(own, 1e-3);
  fb::IDMParams doubled = gen_params;
  doubled.a0 *= 2.0;
  EXPECT_GT(fb::fitness(fb::IDMPolicy(doubled), events), own);
}

TEST(Fitness, CollisionPenaltyAndBounds) {
  const std::vector<fb::CarFollowingEvent> tight{fb::testing::constant_event(201, 1.0, 10, 10)};
  EXPECT_GE(fb::fitness(fb::ConstantPolicy(5.0), tight), 1e6);
  const auto b = fb::ParamBounds::idm_default();
  const std::vector<double> outside{0.05, 1, 30, 1.5, 2, 4};
  EXPECT_EQ(fb::fitness(fb::ModelFamily::kIDM, outside, b, tight),
            std::numeric_limits<double>::infinity());
  EXPECT_THROW(fb::fitness(fb::ConstantPolicy(0.0), std::span<const fb::CarFollowingEvent>{}),
               fb::Error);
}

TEST(Fitness, PerEventMeanVersusPooled) {
  std::vector<fb::CarFollowingEvent> events{fb::testing::constant_event(151, 30, 10, 10),
                                            fb::testing::constant_event(301, 30, 10, 10)};
  const fb::ConstantPolicy brake(-0.5);
  std::vector<double> mses;
  double sq = 0.0;
  std::size_t steps = 0;
  for (const auto& e : events) {
    const auto r = fb::rollout(brake, e);
    mses.push_back(fb::event_mse(r, e));
    sq += mses.back() * static_cast<double>(r.steps_completed);
    steps += r.steps_completed;
  }
  EXPECT_NEAR(fb::fitness(brake, events), 0.5 * (mses[0] + mses[1]), 1e-9);
  fb::FitnessOptions pooled;
  pooled.pooled = true;
  EXPECT_NEAR(fb::fitness(brake, events, pooled), sq / static_cast<double>(steps), 1e-9);
}

TEST(EvolveGeneration, DisabledOperatorsResampleParents) {
  Gen gen(1);
  const auto b = unit_box(3);
  const auto pop = random_population(gen, b, 20);
  std::vector<double> fit;
  for (const auto& g : pop) fit.push_back(sphere(g));
  fb::GAConfig cfg;
  cfg.crossover_rate = 0.0;
  cfg.mutation_rate = 0.0;
  cfg.elitism = 0;
  std::mt19937_64 rng(3);
  const auto next = fb::evolve_generation(pop, fit, b, cfg, rng);
  ASSERT_EQ(next.size(), pop.size());
  for (const auto& child : next) EXPECT_NE(std::find(pop.begin(), pop.end(), child), pop.end());
}

TEST(EvolveGeneration, ElitesCarriedVerbatim) {
  Gen gen(2);
  const auto b = unit_box(4);
  const auto pop = random_population(gen, b, 30);
  std::vector<double> fit;
  for (const auto& g : pop) fit.push_back(sphere(g));
  fb::GAConfig cfg;
  cfg.elitism = 3;
  std::mt19937_64 rng(4);
  const auto next = fb::evolve_generation(pop, fit, b, cfg, rng);
  std::vector<std::size_t> order(pop.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](auto x, auto y) { return fit[x] < fit[y]; });
  for (std::size_t e = 0; e < 3; ++e) EXPECT_EQ(next[e], pop[order[e]]);
  EXPECT_THROW(fb::evolve_generation(pop, std::vector<double>(3), b, cfg, rng), fb::Error);
}

TEST(EvolveGenerationProperty, GenesStayInBounds) {
  Gen gen(5);
  auto b = unit_box(4);
  b.low = {0.1, -2.0, 1.0, 0.0};
  b.high = {5.0, 2.0, 45.0, 0.3};
  fb::GAConfig cfg;
  cfg.population_size = 16;
  cfg.mutation_rate = 0.5;
  cfg.mutation_sigma_frac = 1.0;
  auto pop = random_population(gen, b, cfg.population_size);
  std::mt19937_64 rng(6);
  for (int generation = 0; generation < 1000; ++generation) {
    std::vector<double> fit;
    for (std::size_t i = 0; i < pop.size(); ++i) fit.push_back(gen.uniform(0.0, 1.0));
    pop = fb::evolve_generation(pop, fit, b, cfg, rng);
    ASSERT_EQ(pop.size(), cfg.population_size);
    for (const auto& g : pop) ASSERT_TRUE(b.contains(g));
  }
}

TEST(Minimize, SphereConvergesAndTraceIsMonotone) {
  fb::GAConfig cfg;
  cfg.generations = 100;
  cfg.seed = 11;
  const auto r = fb::minimize(sphere, unit_box(4), cfg);
  EXPECT_LT(r.best_fitness, 1e-2);
  ASSERT_EQ(r.trace.size(), 100u);
  for (std::size_t i = 1; i < r.trace.size(); ++i) EXPECT_LE(r.trace[i], r.trace[i - 1]);
  EXPECT_EQ(r.trace.back(), r.best_fitness);
  EXPECT_EQ(sphere(r.best), r.best_fitness);
}

TEST(Minimize, SeededRunsAreIdentical) {
  fb::GAConfig cfg;
  cfg.population_size = 30;
  cfg.generations = 40;
  cfg.seed = 99;
  const auto a = fb::minimize(sphere, unit_box(3), cfg);
  const auto b = fb::minimize(sphere, unit_box(3), cfg);
  EXPECT_EQ(a.best, b.best);
  EXPECT_EQ(a.trace, b.trace);
}

TEST(EvaluatePopulation, ParallelEqualsSerial) {
  Gen gen(8);
  const auto events = fb::testing::synthetic_events(6, fb::IDMParams{}, 8);
  const auto b = fb::ParamBounds::idm_default();
  const auto pop = random_population(gen, b, 40);
  const fb::Objective obj = [&](const fb::Genome& g) {
    return fb::fitness(fb::ModelFamily::kIDM, g, b, events);
  };
  EXPECT_EQ(fb::evaluate_population(obj, pop), fb::evaluate_population_serial(obj, pop));
}

TEST(Calibrate, RejectsEmptySetAndWrongBounds) {
  const std::vector<fb::CarFollowingEvent> none;
  EXPECT_THROW(fb::calibrate(fb::ModelFamily::kIDM, none, fb::ParamBounds::idm_default(), {}),
               fb::Error);
  const auto events = fb::testing::synthetic_events(1, fb::IDMParams{}, 1);
  EXPECT_THROW(fb::calibrate(fb::ModelFamily::kIDM, events, fb::ParamBounds::ghr_default(), {}),
               fb::Error);
}

TEST(Calibrate, IdmRecoversSyntheticGenerator) {
  const fb::IDMParams truth{1.2, 1.8, 28.0, 1.3, 2.5, 4.0};
  const auto train = fb::testing::synthetic_events(12, truth, 31);
  fb::GAConfig cfg;
  cfg.population_size = 60;
  cfg.generations = 60;
  cfg.seed = 5;
  const auto r = fb::calibrate(fb::ModelFamily::kIDM, train, fb::ParamBounds::idm_default(), cfg);
  EXPECT_LT(r.best_fitness, 0.05);
  // The gains that shape every event are recovered closely; v_des and the
  // exponent only matter near free flow and are checked at full scale.
  EXPECT_NEAR(r.genes[0], truth.a0, 0.1 * truth.a0);
  EXPECT_NEAR(r.genes[1], truth.b, 0.1 * truth.b);
  EXPECT_NEAR(r.genes[3], truth.t_des, 0.1 * truth.t_des);
  EXPECT_NEAR(r.genes[4], truth.s0, 0.2 * truth.s0);
  for (std::size_t i = 1; i < r.trace.size(); ++i) EXPECT_LE(r.trace[i], r.trace[i - 1]);
}

TEST(Calibrate, GhrRecoversSyntheticGenerator) {
  const fb::GHRParams truth{1.5, 0.5, 1.0, 0.3};
  const auto train = ghr_events(truth, 10, 41);
  const auto held = ghr_events(truth, 5, 42);
  fb::GAConfig cfg;
  cfg.population_size = 100;
  cfg.generations = 100;
  cfg.seed = 6;
  const auto r = fb::calibrate(fb::ModelFamily::kGHR, train, fb::ParamBounds::ghr_default(), cfg);
  EXPECT_LT(fb::fitness(*r.policy, held), 0.1);
}

TEST(Calibrate, ReportJsonAndTraceCsv) {
  const auto events = fb::testing::synthetic_events(2, fb::IDMParams{}, 3);
  fb::GAConfig cfg;
  cfg.population_size = 6;
  cfg.generations = 3;
  const auto b = fb::ParamBounds::idm_default();
  const auto r = fb::calibrate(fb::ModelFamily::kIDM, events, b, cfg);
  const auto j = r.to_json(b, cfg);
  EXPECT_TRUE(j.contains("best_fitness_m2"));
  const std::string csv = r.trace_csv();
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 4);
}
