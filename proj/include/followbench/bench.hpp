#pragma once

#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "followbench/events.hpp"
#include "followbench/models.hpp"
#include "followbench/sim.hpp"

namespace followbench {

/// Mean of squared spacing differences over equal-length sequences.
double mse_spacing(std::span<const double> sim, std::span<const double> obs);

/// Collisions per thousand events.
double collision_rate(std::size_t collision_count, std::size_t events);

/// Two decimals, e.g. "17.30".
std::string format_fixed2(double value);

enum class CollisionHandling {
  kTruncate,  // collided events contribute the MSE of their completed steps
  kSkip,      // collided events are left out of the MSE but still counted
};

CollisionHandling collision_handling_from_name(const std::string& name);
std::string collision_handling_name(CollisionHandling handling);

struct ReportRow {
  std::string model_name;
  std::string dataset_id;
  /// NaN when no event contributed (e.g. every event collided under kSkip).
  double mse_spacing_m2 = 0.0;
  double collision_rate_permille = 0.0;
  std::size_t collision_count = 0;
  std::size_t events_evaluated = 0;
  std::size_t truncated_events = 0;
  /// Events whose policy produced a non-finite acceleration.
  std::size_t failed_events = 0;
  std::string config_hash;
};

/// Per-event spacing MSE over completed steps of a rollout.
double event_mse(const RolloutResult& result, const CarFollowingEvent& event);

/// Rollouts run OpenMP-parallel over events; aggregation follows event order.
ReportRow evaluate_model(const Policy& model, std::span<const CarFollowingEvent> test_events,
                         CollisionHandling handling = CollisionHandling::kTruncate);
/// Single-threaded reference for evaluate_model.
ReportRow evaluate_model_serial(const Policy& model,
                                std::span<const CarFollowingEvent> test_events,
                                CollisionHandling handling = CollisionHandling::kTruncate);

/// Aggregates per-event rollouts into a row; shared by both evaluators.
ReportRow aggregate_rollouts(std::span<const RolloutOutcome> outcomes,
                             std::span<const CarFollowingEvent> events,
                             CollisionHandling handling);

struct NamedModel {
  std::string name;
  ModelHandle model;
};

struct DatasetEvents {
  std::string dataset_id;
  std::vector<CarFollowingEvent> events;
};

struct BenchConfig {
  CollisionHandling handling = CollisionHandling::kTruncate;
  /// Fingerprint of the effective configuration, copied into every row.
  std::string config_hash;
};

struct BenchmarkReport {
  std::vector<std::string> models;    // row order
  std::vector<std::string> datasets;  // column order
  std::vector<ReportRow> rows;
  CollisionHandling handling = CollisionHandling::kTruncate;

  const ReportRow& row(const std::string& model, const std::string& dataset) const;
  bool any_failures() const;
  nlohmann::json to_json() const;
  std::string to_markdown() const;
};

BenchmarkReport run_benchmark(std::span<const NamedModel> models,
                              std::span<const DatasetEvents> test_sets, const BenchConfig& cfg);

}  // namespace followbench
