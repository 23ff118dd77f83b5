#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "followbench/traj_core.hpp"

namespace followbench {

/// A fixed-rate car-following episode: one follower (FV) behind one unchanged
/// leader (LV). Spacing is the net bumper-to-bumper gap and dv follows the
/// follower-minus-leader convention, so positive dv means closing in.
struct CarFollowingEvent {
  std::string event_id;
  double dt_s = 0.1;
  std::vector<double> spacing_m;
  std::vector<double> v_fv_mps;
  std::vector<double> dv_mps;
  std::vector<double> v_lv_mps;
  std::string source;
  bool fv_is_av = false;
  bool lv_is_av = false;
  VehicleId fv_id = 0;
  VehicleId lv_id = 0;

  std::size_t length() const { return spacing_m.size(); }
  double duration_s() const { return static_cast<double>(length() - 1) * dt_s; }
};

struct EventLimits {
  double min_duration_s = 15.0;
  /// Bound on |d(spacing)/dt + dv|, m/s.
  double kinematic_tolerance_mps = 0.5;
};

/// Throws Error naming the first violated invariant.
void validate_event(const CarFollowingEvent& event, const EventLimits& limits = {});

struct ExtractionCriteria {
  double min_duration_s = 15.0;
  double max_lateral_gap_m = 2.0;
  // The low-speed filter runs only when all three are set.
  std::optional<double> min_avg_speed_mps;
  std::optional<double> low_speed_threshold_mps;
  std::optional<double> low_speed_max_duration_s;

  bool low_speed_filter_enabled() const {
    return min_avg_speed_mps && low_speed_threshold_mps && low_speed_max_duration_s;
  }
  /// Sets the optional fields to 2 m/s, 0.2 m/s and 5 s.
  ExtractionCriteria& with_low_speed_filter();
  void validate() const;
};

nlohmann::json to_json(const ExtractionCriteria& criteria);
ExtractionCriteria criteria_from_json(const nlohmann::json& j);

struct ExtractionStats {
  std::size_t spans_considered = 0;
  std::size_t missing_leader = 0;
  std::size_t rejected_kinematics = 0;
  std::size_t rejected_low_speed = 0;
};

/// Lookup of tracks by (dataset_id, vehicle_id). Holds pointers into the
/// span it was built from.
class TrackIndex {
 public:
  explicit TrackIndex(std::span<const VehicleTrack> tracks);
  const VehicleTrack* find(const std::string& dataset_id, VehicleId id) const;
  /// Tracks in (dataset_id, vehicle_id) order.
  const std::vector<const VehicleTrack*>& ordered() const { return ordered_; }

 private:
  std::map<std::pair<std::string, VehicleId>, const VehicleTrack*> by_key_;
  std::vector<const VehicleTrack*> ordered_;
};

/// Events ordered by (dataset, fv_id, start time); the result does not depend
/// on the order of `tracks`. Followers are processed in parallel (OpenMP).
std::vector<CarFollowingEvent> extract_events(std::span<const VehicleTrack> tracks,
                                              const ExtractionCriteria& criteria,
                                              ExtractionStats* stats = nullptr);
/// Single-threaded reference for extract_events.
std::vector<CarFollowingEvent> extract_events_serial(std::span<const VehicleTrack> tracks,
                                                     const ExtractionCriteria& criteria,
                                                     ExtractionStats* stats = nullptr);

/// Events for one follower track, in time order.
std::vector<CarFollowingEvent> extract_follower_events(const VehicleTrack& follower,
                                                       const TrackIndex& index,
                                                       const ExtractionCriteria& criteria,
                                                       ExtractionStats* stats = nullptr);

/// True to keep. Always keeps when the criteria do not enable the filter.
bool low_speed_filter(const CarFollowingEvent& event, const ExtractionCriteria& criteria);

struct SplitRatios {
  double train = 0.70;
  double val = 0.15;
  double test = 0.15;
};

struct DatasetSplit {
  std::vector<CarFollowingEvent> train;
  std::vector<CarFollowingEvent> val;
  std::vector<CarFollowingEvent> test;
};

/// Sizes: floor(train*n), floor(val*n), remainder.
DatasetSplit split_dataset(std::vector<CarFollowingEvent> events, const SplitRatios& ratios,
                           std::uint64_t seed);

struct Histogram {
  std::vector<double> edges;
  std::vector<std::size_t> counts;
  std::size_t underflow = 0;
  std::size_t overflow = 0;

  std::size_t total() const;
};

/// Bins are [e_i, e_{i+1}) except the last, which is closed.
Histogram histogram(std::span<const double> values, std::span<const double> edges);

struct MeasureSummary {
  std::size_t count = 0;
  double mean = 0.0;
  double stddev = 0.0;  // population
  double min = 0.0;
  double max = 0.0;
};

struct Measure {
  std::string name;
  std::string unit;
  MeasureSummary summary;
  Histogram histogram;
};

struct StatsReport {
  /// space_gap, following_speed, time_gap, abs_relative_speed,
  /// abs_acceleration, duration, in that order.
  std::vector<Measure> measures;

  const Measure& at(const std::string& name) const;
  nlohmann::json summary_json() const;
  std::string histogram_csv() const;
};

/// Steps with v_fv below this are left out of the time-gap measure.
inline constexpr double kTimeGapMinSpeed = 0.1;

/// Raw per-step (per-event for duration) values behind each measure.
std::vector<std::vector<double>> behavioral_measures(std::span<const CarFollowingEvent> events);

StatsReport descriptive_stats(std::span<const CarFollowingEvent> events);

// Event store ---------------------------------------------------------------

inline constexpr const char* kEventHeader = "event_id,t_index,spacing_m,v_fv_mps,dv_mps,v_lv_mps";

std::string events_to_csv(std::span<const CarFollowingEvent> events);
/// Only the four channels are restored; metadata lives in the manifest.
std::vector<CarFollowingEvent> events_from_csv(const std::string& text, double dt_s);

struct EventManifest {
  std::string dataset_id;
  double dt_s = 0.1;
  std::size_t n_events = 0;
  std::string split;
  ExtractionCriteria criteria;
  std::string source_hash;
};

nlohmann::json manifest_json(const EventManifest& manifest,
                             std::span<const CarFollowingEvent> events);

/// Writes `<dir>/<split>.csv` and `<dir>/<split>.manifest.json`.
void write_event_split(const std::string& dir, const EventManifest& manifest,
                       std::span<const CarFollowingEvent> events);
/// Reads a split written by write_event_split, restoring event metadata.
std::vector<CarFollowingEvent> read_event_split(const std::string& dir, const std::string& split,
                                                EventManifest* manifest = nullptr);

}  // namespace followbench
