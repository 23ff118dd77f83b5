#include "followbench/calib_ga.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <fmt/format.h>

#include "followbench/bench.hpp"
#include "followbench/common.hpp"
#include "followbench/sim.hpp"

namespace followbench {

void GAConfig::validate() const {
  const auto rate = [](double r) { return r >= 0.0 && r <= 1.0; };
  if (!rate(crossover_rate) || !rate(mutation_rate))
    throw Error("GA rates must lie in [0, 1]");
  if (population_size < 2) throw Error("GA population must hold at least 2 individuals");
  if (elitism >= population_size) throw Error("GA elitism must be below the population size");
  if (tournament_k < 1) throw Error("GA tournament size must be at least 1");
  if (generations < 1) throw Error("GA needs at least one generation");
  if (mutation_sigma_frac < 0.0) throw Error("GA mutation sigma must be non-negative");
}

bool ParamBounds::contains(std::span<const double> genes) const {
  if (genes.size() != size()) return false;
  for (std::size_t i = 0; i < genes.size(); ++i)
    if (!(genes[i] >= low[i] && genes[i] <= high[i])) return false;
  return true;
}

void ParamBounds::validate() const {
  if (low.size() != size() || high.size() != size())
    throw Error("parameter bounds: names/low/high lengths differ");
  for (std::size_t i = 0; i < size(); ++i)
    if (!(low[i] < high[i]))
      throw Error(fmt::format("parameter bounds: low >= high for '{}'", names[i]));
}

ParamBounds ParamBounds::idm_default() {
  return {{"a0_mps2", "b_mps2", "v_des_mps", "t_des_s", "s0_m", "lambda"},
          {0.1, 0.1, 1.0, 0.1, 0.1, 1.0},
          {5.0, 5.0, 45.0, 5.0, 10.0, 10.0}};
}

ParamBounds ParamBounds::ghr_default() {
  return {{"c", "m_exp", "l_exp", "reaction_time_s"}, {-10.0, -2.0, -1.0, 0.0}, {10.0, 2.0, 4.0, 3.0}};
}

std::vector<double> evaluate_population(const Objective& objective,
                                        std::span<const Genome> population) {
  std::vector<double> out(population.size());
  const auto n = static_cast<std::ptrdiff_t>(population.size());
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t i = 0; i < n; ++i) out[i] = objective(population[i]);
  return out;
}

std::vector<double> evaluate_population_serial(const Objective& objective,
                                               std::span<const Genome> population) {
  std::vector<double> out;
  out.reserve(population.size());
  for (const auto& g : population) out.push_back(objective(g));
  return out;
}

namespace {

// Indices ordered by fitness; NaN sorts last, ties keep population order.
std::vector<std::size_t> rank(std::span<const double> fitnesses) {
  std::vector<std::size_t> idx(fitnesses.size());
  std::iota(idx.begin(), idx.end(), 0);
  const auto key = [&](std::size_t i) {
    return std::isnan(fitnesses[i]) ? std::numeric_limits<double>::infinity() : fitnesses[i];
  };
  std::stable_sort(idx.begin(), idx.end(), [&](auto a, auto b) { return key(a) < key(b); });
  return idx;
}

std::size_t tournament(std::span<const double> fitnesses, std::size_t k, std::mt19937_64& rng) {
  std::uniform_int_distribution<std::size_t> pick(0, fitnesses.size() - 1);
  std::size_t best = pick(rng);
  for (std::size_t i = 1; i < k; ++i) {
    const std::size_t c = pick(rng);
    if (fitnesses[c] < fitnesses[best]) best = c;
  }
  return best;
}

}  // namespace

std::vector<Genome> evolve_generation(std::span<const Genome> population,
                                      std::span<const double> fitnesses,
                                      const ParamBounds& bounds, const GAConfig& cfg,
                                      std::mt19937_64& rng) {
  if (population.size() != fitnesses.size())
    throw Error("evolve_generation: population and fitness lengths differ");
  const std::size_t n = population.size();
  const std::size_t genes = bounds.size();
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);

  std::vector<Genome> next;
  next.reserve(n);
  const auto order = rank(fitnesses);
  for (std::size_t e = 0; e < std::min(cfg.elitism, n); ++e) next.push_back(population[order[e]]);

  while (next.size() < n) {
    Genome a = population[tournament(fitnesses, cfg.tournament_k, rng)];
    Genome b = population[tournament(fitnesses, cfg.tournament_k, rng)];
    if (unit(rng) < cfg.crossover_rate) {
      for (std::size_t g = 0; g < genes; ++g) {
        const double lo = std::min(a[g], b[g]);
        const double hi = std::max(a[g], b[g]);
        const double ext = 0.5 * (hi - lo);
        std::uniform_real_distribution<double> blend(lo - ext, hi + ext);
        const double ca = lo == hi ? lo : blend(rng);
        const double cb = lo == hi ? lo : blend(rng);
        a[g] = ca;
        b[g] = cb;
      }
    }
    for (Genome* child : {&a, &b}) {
      for (std::size_t g = 0; g < genes; ++g) {
        if (unit(rng) < cfg.mutation_rate)
          (*child)[g] += cfg.mutation_sigma_frac * (bounds.high[g] - bounds.low[g]) * gauss(rng);
        (*child)[g] = std::clamp((*child)[g], bounds.low[g], bounds.high[g]);
      }
      if (next.size() < n) next.push_back(*child);
    }
  }
  return next;
}

GAResult minimize(const Objective& objective, const ParamBounds& bounds, const GAConfig& cfg) {
  cfg.validate();
  bounds.validate();
  std::mt19937_64 rng(cfg.seed);
  std::vector<Genome> population(cfg.population_size, Genome(bounds.size()));
  for (auto& g : population)
    for (std::size_t i = 0; i < bounds.size(); ++i)
      g[i] = std::uniform_real_distribution<double>(bounds.low[i], bounds.high[i])(rng);

  GAResult result;
  result.best_fitness = std::numeric_limits<double>::infinity();
  result.best = population.front();
  for (std::size_t gen = 0; gen < cfg.generations; ++gen) {
    const auto fit = evaluate_population(objective, population);
    for (std::size_t i = 0; i < fit.size(); ++i) {
      if (fit[i] < result.best_fitness) {
        result.best_fitness = fit[i];
        result.best = population[i];
      }
    }
    result.trace.push_back(result.best_fitness);
    if (gen + 1 < cfg.generations)
      population = evolve_generation(population, fit, bounds, cfg, rng);
  }
  return result;
}

ModelFamily family_from_name(const std::string& name) {
  if (name == "idm" || name == "IDM") return ModelFamily::kIDM;
  if (name == "ghr" || name == "GHR") return ModelFamily::kGHR;
  throw Error(fmt::format("unknown model family '{}' (idm, ghr)", name));
}

std::string family_name(ModelFamily family) {
  return family == ModelFamily::kIDM ? "idm" : "ghr";
}

ModelHandle policy_from_genes(ModelFamily family, std::span<const double> g, double dt_s) {
  if (family == ModelFamily::kIDM) {
    if (g.size() != 6) throw Error("IDM calibration expects 6 genes");
    return std::make_shared<IDMPolicy>(IDMParams{g[0], g[1], g[2], g[3], g[4], g[5]});
  }
  if (g.size() != 4) throw Error("GHR calibration expects 4 genes");
  const double steps = std::round(std::max(0.0, g[3]) / dt_s);
  return std::make_shared<GHRPolicy>(GHRParams{g[0], g[1], g[2], steps * dt_s});
}

double fitness(const Policy& policy, std::span<const CarFollowingEvent> events,
               const FitnessOptions& options) {
  if (events.empty()) throw Error("fitness: no events");
  double sum = 0.0;
  std::size_t pooled_steps = 0;
  for (const auto& e : events) {
    RolloutResult r;
    try {
      r = rollout(policy, e);
    } catch (const Error&) {
      return std::numeric_limits<double>::infinity();
    }
    const double mse = event_mse(r, e);
    const double penalty = r.collided ? options.collision_penalty : 0.0;
    if (options.pooled) {
      sum += mse * static_cast<double>(r.steps_completed) + penalty;
      pooled_steps += r.steps_completed;
    } else {
      sum += mse + penalty;
    }
  }
  return options.pooled ? sum / static_cast<double>(pooled_steps)
                        : sum / static_cast<double>(events.size());
}

double fitness(ModelFamily family, std::span<const double> genes, const ParamBounds& bounds,
               std::span<const CarFollowingEvent> events, const FitnessOptions& options) {
  if (!bounds.contains(genes)) return std::numeric_limits<double>::infinity();
  ModelHandle policy;
  try {
    policy = policy_from_genes(family, genes, events.empty() ? 0.1 : events.front().dt_s);
  } catch (const Error&) {
    return std::numeric_limits<double>::infinity();
  }
  return fitness(*policy, events, options);
}

CalibrationResult calibrate(ModelFamily family, std::span<const CarFollowingEvent> train_events,
                            const ParamBounds& bounds, const GAConfig& cfg,
                            const FitnessOptions& options) {
  if (train_events.empty()) throw Error("calibrate: empty training set");
  const std::size_t expected = family == ModelFamily::kIDM ? 6 : 4;
  if (bounds.size() != expected)
    throw Error(fmt::format("calibrate: {} needs {} bounds, got {}", family_name(family), expected,
                            bounds.size()));
  const auto objective = [&](const Genome& g) {
    return fitness(family, g, bounds, train_events, options);
  };
  auto ga = minimize(objective, bounds, cfg);

  CalibrationResult out;
  out.family = family;
  out.genes = ga.best;
  out.policy = policy_from_genes(family, ga.best, train_events.front().dt_s);
  out.best_fitness = ga.best_fitness;
  out.trace = std::move(ga.trace);
  return out;
}

nlohmann::json to_json(const GAConfig& c) {
  return {{"population_size", c.population_size},
          {"generations", c.generations},
          {"tournament_k", c.tournament_k},
          {"crossover_rate", c.crossover_rate},
          {"mutation_rate", c.mutation_rate},
          {"mutation_sigma_frac", c.mutation_sigma_frac},
          {"elitism", c.elitism},
          {"seed", c.seed}};
}

nlohmann::json CalibrationResult::to_json(const ParamBounds& bounds, const GAConfig& cfg) const {
  nlohmann::json b = nlohmann::json::object();
  for (std::size_t i = 0; i < bounds.size(); ++i) b[bounds.names[i]] = {bounds.low[i], bounds.high[i]};
  return {{"family", family_name(family)},
          {"model", policy->to_json()},
          {"best_fitness_m2", best_fitness},
          {"bounds", b},
          {"ga", followbench::to_json(cfg)},
          {"fitness_trace", trace}};
}

std::string CalibrationResult::trace_csv() const {
  std::string out = "generation,best_fitness_m2\n";
  for (std::size_t g = 0; g < trace.size(); ++g)
    out += fmt::format("{},{}\n", g, format_real(trace[g]));
  return out;
}

}  // namespace followbench
