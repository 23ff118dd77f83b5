#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "followbench/events.hpp"
#include "followbench/models.hpp"

namespace followbench {

struct GAConfig {
  std::size_t population_size = 100;
  std::size_t generations = 200;
  std::size_t tournament_k = 3;
  double crossover_rate = 0.9;
  double mutation_rate = 0.1;
  double mutation_sigma_frac = 0.1;
  std::size_t elitism = 2;
  std::uint64_t seed = 0;

  void validate() const;
};

using Genome = std::vector<double>;

struct ParamBounds {
  std::vector<std::string> names;
  std::vector<double> low;
  std::vector<double> high;

  std::size_t size() const { return names.size(); }
  bool contains(std::span<const double> genes) const;
  void validate() const;

  /// a0, b, v_des, t_des, s0, lambda
  static ParamBounds idm_default();
  /// c, m_exp, l_exp, reaction_time_s
  static ParamBounds ghr_default();
};

using Objective = std::function<double(const Genome&)>;

/// Fitness of every individual, OpenMP-parallel. `objective` must be pure.
std::vector<double> evaluate_population(const Objective& objective,
                                        std::span<const Genome> population);
/// Single-threaded reference for evaluate_population.
std::vector<double> evaluate_population_serial(const Objective& objective,
                                               std::span<const Genome> population);

/// Elites first, then children from tournament selection, BLX-0.5 crossover
/// and Gaussian mutation, all clipped to bounds.
std::vector<Genome> evolve_generation(std::span<const Genome> population,
                                      std::span<const double> fitnesses,
                                      const ParamBounds& bounds, const GAConfig& cfg,
                                      std::mt19937_64& rng);

struct GAResult {
  Genome best;
  double best_fitness = 0.0;
  /// Best-so-far fitness after each generation.
  std::vector<double> trace;
};

GAResult minimize(const Objective& objective, const ParamBounds& bounds, const GAConfig& cfg);

// Car-following calibration -------------------------------------------------

enum class ModelFamily { kGHR, kIDM };

ModelFamily family_from_name(const std::string& name);
std::string family_name(ModelFamily family);

struct FitnessOptions {
  double collision_penalty = 1e6;
  /// false: mean of per-event MSEs; true: MSE pooled over all steps.
  bool pooled = false;
};

/// Decodes genes; GHR reaction time is rounded to whole steps of dt_s.
ModelHandle policy_from_genes(ModelFamily family, std::span<const double> genes, double dt_s);

double fitness(const Policy& policy, std::span<const CarFollowingEvent> events,
               const FitnessOptions& options = {});
/// +infinity when `genes` fall outside `bounds` or decode to invalid params.
double fitness(ModelFamily family, std::span<const double> genes, const ParamBounds& bounds,
               std::span<const CarFollowingEvent> events, const FitnessOptions& options = {});

struct CalibrationResult {
  ModelFamily family = ModelFamily::kIDM;
  Genome genes;
  ModelHandle policy;
  double best_fitness = 0.0;
  std::vector<double> trace;

  nlohmann::json to_json(const ParamBounds& bounds, const GAConfig& cfg) const;
  std::string trace_csv() const;
};

CalibrationResult calibrate(ModelFamily family, std::span<const CarFollowingEvent> train_events,
                            const ParamBounds& bounds, const GAConfig& cfg,
                            const FitnessOptions& options = {});

nlohmann::json to_json(const GAConfig& cfg);

}  // namespace followbench
