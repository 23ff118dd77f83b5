#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace followbench {

using VehicleId = std::int64_t;

/// One row of a canonical trajectory file. Positions refer to the vehicle's
/// front bumper; SI units throughout.
struct TrajectorySample {
  double time_s = 0.0;
  double longitudinal_pos_m = 0.0;
  double lateral_pos_m = 0.0;
  double speed_mps = 0.0;
  std::optional<double> accel_mps2;
  std::int64_t lane_id = 0;
  std::optional<VehicleId> preceding_vehicle_id;
  double vehicle_length_m = 4.5;
  bool is_av = false;
};

struct VehicleTrack {
  VehicleId vehicle_id = 0;
  std::string dataset_id;
  double dt_s = 0.1;
  std::vector<TrajectorySample> samples;

  double start_time() const { return samples.front().time_s; }
  double end_time() const { return samples.back().time_s; }
};

/// Column mapping from canonical field names onto the columns of a foreign
/// file, plus optional per-column multiplicative scale (e.g. feet to meters).
struct Schema {
  std::map<std::string, std::string> columns;
  std::map<std::string, double> scale;
  /// Used when the file has no dataset column.
  std::string default_dataset_id = "unknown";
  /// Leader id meaning "no leader" (NGSIM-style files write 0).
  std::optional<VehicleId> no_leader_value;

  static Schema canonical();
  /// Reads `{"columns": {...}, "scale": {...}, "dataset_id": "..."}`.
  /// Canonical names missing from "columns" map to themselves.
  static Schema from_json_file(const std::string& path);
};

inline constexpr const char* kCanonicalHeader =
    "dataset_id,vehicle_id,time_s,lane_id,longitudinal_pos_m,lateral_pos_m,"
    "speed_mps,accel_mps2,preceding_vehicle_id,vehicle_length_m,is_av";

/// Tracks are returned ordered by (dataset_id, vehicle_id).
std::vector<VehicleTrack> load_tracks(const std::string& path,
                                      const Schema& schema = Schema::canonical());
std::vector<VehicleTrack> parse_tracks(const std::string& csv_text,
                                       const Schema& schema = Schema::canonical());

std::string serialize_tracks(std::span<const VehicleTrack> tracks);

/// Throws Error if the constant-step / monotone-time / sample invariants fail.
void validate_track(const VehicleTrack& track);

VehicleTrack resample(const VehicleTrack& track, double target_dt_s);

enum class EdgeMode {
  kInterpolate,  // polynomial fitted to the first/last full window
  kMirror,       // reflect about the edge sample (x[-k] = x[k])
};

std::vector<double> savitzky_golay(std::span<const double> series, int window,
                                   int polyorder,
                                   EdgeMode edges = EdgeMode::kInterpolate);

struct SmoothingOptions {
  int window = 11;
  int polyorder = 3;
  EdgeMode edges = EdgeMode::kInterpolate;
};

/// Smooths positions and speed independently. Tracks shorter than the window
/// are returned unchanged. Missing accelerations are filled from central
/// differences of the smoothed speed.
VehicleTrack smooth_track(const VehicleTrack& track,
                          const SmoothingOptions& options = {});

}  // namespace followbench
