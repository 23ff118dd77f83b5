#include "followbench/bench.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "followbench/common.hpp"

namespace followbench {

double mse_spacing(std::span<const double> sim, std::span<const double> obs) {
  if (sim.size() != obs.size())
    throw Error(fmt::format("mse_spacing: length mismatch ({} vs {})", sim.size(), obs.size()));
  if (sim.empty()) throw Error("mse_spacing: empty input");
  double acc = 0.0;
  for (std::size_t i = 0; i < sim.size(); ++i) {
    const double d = sim[i] - obs[i];
    acc += d * d;
  }
  return acc / static_cast<double>(sim.size());
}

double collision_rate(std::size_t collision_count, std::size_t events) {
  if (events == 0) throw Error("collision_rate: no events evaluated");
  if (collision_count > events) throw Error("collision_rate: more collisions than events");
  return 1000.0 * static_cast<double>(collision_count) / static_cast<double>(events);
}

std::string format_fixed2(double value) {
  if (std::isnan(value)) return "n/a";
  return fmt::format("{:.2f}", value);
}

CollisionHandling collision_handling_from_name(const std::string& name) {
  if (name == "truncate") return CollisionHandling::kTruncate;
  if (name == "skip") return CollisionHandling::kSkip;
  throw Error(fmt::format("unknown collision handling '{}' (truncate, skip)", name));
}

std::string collision_handling_name(CollisionHandling handling) {
  return handling == CollisionHandling::kTruncate ? "truncate" : "skip";
}

double event_mse(const RolloutResult& result, const CarFollowingEvent& event) {
  const std::span<const double> obs(event.spacing_m);
  return mse_spacing(result.spacing_sim_m, obs.first(result.steps_completed));
}

ReportRow aggregate_rollouts(std::span<const RolloutOutcome> outcomes,
                             std::span<const CarFollowingEvent> events,
                             CollisionHandling handling) {
  if (events.empty()) throw Error("evaluate_model: empty test set");
  ReportRow row;
  row.events_evaluated = events.size();
  double mse_sum = 0.0;
  std::size_t mse_terms = 0;
  for (std::size_t i = 0; i < outcomes.size(); ++i) {
    const auto& o = outcomes[i];
    if (o.error) {
      ++row.failed_events;
      spdlog::error("{}", *o.error);
      continue;
    }
    if (o.result.collided) {
      ++row.collision_count;
      ++row.truncated_events;
      if (handling == CollisionHandling::kSkip) continue;
    }
    mse_sum += event_mse(o.result, events[i]);
    ++mse_terms;
  }
  row.mse_spacing_m2 = mse_terms ? mse_sum / static_cast<double>(mse_terms)
                                 : std::numeric_limits<double>::quiet_NaN();
  row.collision_rate_permille = collision_rate(row.collision_count, row.events_evaluated);
  return row;
}

ReportRow evaluate_model(const Policy& model, std::span<const CarFollowingEvent> test_events,
                         CollisionHandling handling) {
  if (test_events.empty()) throw Error("evaluate_model: empty test set");
  const auto outcomes = rollout_batch(model, test_events);
  return aggregate_rollouts(outcomes, test_events, handling);
}

ReportRow evaluate_model_serial(const Policy& model,
                                std::span<const CarFollowingEvent> test_events,
                                CollisionHandling handling) {
  if (test_events.empty()) throw Error("evaluate_model: empty test set");
  const auto outcomes = rollout_batch_serial(model, test_events);
  return aggregate_rollouts(outcomes, test_events, handling);
}

const ReportRow& BenchmarkReport::row(const std::string& model, const std::string& dataset) const {
  for (const auto& r : rows)
    if (r.model_name == model && r.dataset_id == dataset) return r;
  throw Error(fmt::format("no report row for ({}, {})", model, dataset));
}

bool BenchmarkReport::any_failures() const {
  return std::any_of(rows.begin(), rows.end(), [](const auto& r) { return r.failed_events > 0; });
}

nlohmann::json BenchmarkReport::to_json() const {
  nlohmann::json j;
  j["collision_handling"] = collision_handling_name(handling);
  j["models"] = models;
  j["datasets"] = datasets;
  auto& rs = j["rows"] = nlohmann::json::array();
  for (const auto& r : rows) {
    rs.push_back({{"model_name", r.model_name},
                  {"dataset_id", r.dataset_id},
                  {"mse_spacing_m2", std::isnan(r.mse_spacing_m2) ? nlohmann::json(nullptr)
                                                                  : nlohmann::json(r.mse_spacing_m2)},
                  {"collision_rate_permille", r.collision_rate_permille},
                  {"collision_count", r.collision_count},
                  {"events_evaluated", r.events_evaluated},
                  {"truncated_events", r.truncated_events},
                  {"failed_events", r.failed_events},
                  {"config_hash", r.config_hash}});
  }
  return j;
}

std::string BenchmarkReport::to_markdown() const {
  std::vector<std::vector<std::string>> table;
  std::vector<std::string> header{"Model"};
  for (const auto& d : datasets) header.push_back("MSE of spacing: " + d);
  for (const auto& d : datasets) header.push_back("Collision rate ‰ (n): " + d);
  table.push_back(header);
  for (const auto& m : models) {
    std::vector<std::string> line{m};
    for (const auto& d : datasets) line.push_back(format_fixed2(row(m, d).mse_spacing_m2));
    for (const auto& d : datasets) {
      const auto& r = row(m, d);
      line.push_back(fmt::format("{} ({})", format_fixed2(r.collision_rate_permille),
                                 r.collision_count));
    }
    table.push_back(line);
  }

  // Column widths in code points so the UTF-8 per-mille sign aligns.
  const auto width = [](const std::string& s) {
    return static_cast<std::size_t>(
        std::count_if(s.begin(), s.end(), [](char c) { return (c & 0xC0) != 0x80; }));
  };
  std::vector<std::size_t> widths(header.size(), 3);
  for (const auto& line : table)
    for (std::size_t c = 0; c < line.size(); ++c) widths[c] = std::max(widths[c], width(line[c]));

  const auto emit = [&](const std::vector<std::string>& line) {
    std::string out = "|";
    for (std::size_t c = 0; c < line.size(); ++c) {
      const std::string pad(widths[c] - width(line[c]), ' ');
      out += " " + (c == 0 ? line[c] + pad : pad + line[c]) + " |";
    }
    return out + "\n";
  };

  std::string out =
      "# Model benchmark performance: MSE of spacing (m^2) and collision rate\n\n";
  out += emit(table[0]);
  out += "|";
  for (std::size_t c = 0; c < widths.size(); ++c)
    out += c == 0 ? " :" + std::string(widths[c] - 1, '-') + " |"
                  : " " + std::string(widths[c] - 1, '-') + ": |";
  out += "\n";
  for (std::size_t i = 1; i < table.size(); ++i) out += emit(table[i]);
  out += fmt::format("\nCollided rollouts: {}.\n", collision_handling_name(handling));
  return out;
}

BenchmarkReport run_benchmark(std::span<const NamedModel> models,
                              std::span<const DatasetEvents> test_sets, const BenchConfig& cfg) {
  if (models.empty()) throw Error("run_benchmark: no models registered");
  if (test_sets.empty()) throw Error("run_benchmark: no test sets");
  BenchmarkReport report;
  report.handling = cfg.handling;
  for (const auto& d : test_sets) report.datasets.push_back(d.dataset_id);
  for (const auto& m : models) {
    report.models.push_back(m.name);
    for (const auto& d : test_sets) {
      auto r = evaluate_model(*m.model, d.events, cfg.handling);
      r.model_name = m.name;
      r.dataset_id = d.dataset_id;
      r.config_hash = cfg.config_hash;
      report.rows.push_back(std::move(r));
    }
  }
  return report;
}

}  // namespace followbench
