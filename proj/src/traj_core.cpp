#include "followbench/traj_core.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <sstream>
#include <string_view>

#include <Eigen/Dense>
#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "followbench/common.hpp"

namespace followbench {
namespace {

constexpr double kStepTolerance = 1e-6;

constexpr std::array<const char*, 11> kFields = {
    "dataset_id",           "vehicle_id",       "time_s",
    "lane_id",              "longitudinal_pos_m", "lateral_pos_m",
    "speed_mps",            "accel_mps2",       "preceding_vehicle_id",
    "vehicle_length_m",     "is_av"};

constexpr std::array<const char*, 6> kMandatory = {
    "vehicle_id",    "time_s",    "longitudinal_pos_m",
    "lateral_pos_m", "speed_mps", "vehicle_length_m"};

std::vector<std::string_view> split_csv(std::string_view line) {
  std::vector<std::string_view> cells;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      cells.push_back(line.substr(start));
      break;
    }
    cells.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
  for (auto& c : cells) {
    while (!c.empty() && (c.back() == '\r' || c.back() == ' ')) c.remove_suffix(1);
    while (!c.empty() && c.front() == ' ') c.remove_prefix(1);
  }
  return cells;
}

bool parse_bool(std::string_view text) {
  if (text == "1" || text == "true" || text == "True" || text == "TRUE") return true;
  if (text == "0" || text == "false" || text == "False" || text == "FALSE" || text.empty())
    return false;
  throw Error(fmt::format("not a boolean: '{}'", text));
}

// Least-squares filter weights that evaluate, at offset `at` from the window
// center, the polynomial of degree `polyorder` fitted to a window of `window`
// samples.
std::vector<double> sg_weights(int window, int polyorder, int at) {
  const int half = window / 2;
  Eigen::MatrixXd design(window, polyorder + 1);
  for (int r = 0; r < window; ++r) {
    const double x = r - half;
    double p = 1.0;
    for (int c = 0; c <= polyorder; ++c) {
      design(r, c) = p;
      p *= x;
    }
  }
  Eigen::VectorXd basis(polyorder + 1);
  double p = 1.0;
  for (int c = 0; c <= polyorder; ++c) {
    basis(c) = p;
    p *= at;
  }
  // w = A (A^T A)^{-1} e  so that y(at) = w . x
  const Eigen::MatrixXd gram = design.transpose() * design;
  const Eigen::VectorXd solved = gram.ldlt().solve(basis);
  const Eigen::VectorXd w = design * solved;
  return {w.data(), w.data() + w.size()};
}

}  // namespace

Schema Schema::canonical() {
  Schema s;
  for (const char* f : kFields) s.columns[f] = f;
  return s;
}

Schema Schema::from_json_file(const std::string& path) {
  const auto doc = nlohmann::json::parse(read_file(path));
  Schema s = canonical();
  if (doc.contains("columns")) {
    for (const auto& [key, value] : doc.at("columns").items()) {
      if (std::find_if(kFields.begin(), kFields.end(),
                       [&](const char* f) { return key == f; }) == kFields.end())
        throw Error(fmt::format("schema '{}': unknown canonical column '{}'", path, key));
      s.columns[key] = value.get<std::string>();
    }
  }
  if (doc.contains("scale")) {
    for (const auto& [key, value] : doc.at("scale").items()) s.scale[key] = value.get<double>();
  }
  if (doc.contains("no_leader_value")) s.no_leader_value = doc.at("no_leader_value").get<std::int64_t>();
  if (doc.contains("dataset_id")) s.default_dataset_id = doc.at("dataset_id").get<std::string>();
  return s;
}

void validate_track(const VehicleTrack& track) {
  if (track.samples.empty())
    throw Error(fmt::format("vehicle {}: empty track", track.vehicle_id));
  if (!(track.dt_s > 0.0))
    throw Error(fmt::format("vehicle {}: non-positive dt", track.vehicle_id));
  for (std::size_t i = 0; i < track.samples.size(); ++i) {
    const auto& s = track.samples[i];
    if (!std::isfinite(s.time_s)) throw Error("non-finite time");
    if (s.speed_mps < 0.0)
      throw Error(fmt::format("vehicle {}: negative speed at t={}", track.vehicle_id, s.time_s));
    if (!(s.vehicle_length_m > 0.0))
      throw Error(fmt::format("vehicle {}: non-positive length", track.vehicle_id));
    if (i > 0) {
      const double step = s.time_s - track.samples[i - 1].time_s;
      if (std::abs(step - track.dt_s) > kStepTolerance)
        throw Error(fmt::format("vehicle {}: time step {} differs from dt {} at t={}",
                                track.vehicle_id, step, track.dt_s, s.time_s));
    }
  }
}

std::vector<VehicleTrack> parse_tracks(const std::string& csv_text, const Schema& schema) {
  std::istringstream in(csv_text);
  std::string line;
  if (!std::getline(in, line)) throw Error("trajectory file is empty");
  const auto header = split_csv(line);

  std::map<std::string, int> col;  // canonical name -> column index
  for (const char* f : kFields) {
    const auto it = schema.columns.find(f);
    const std::string foreign = it == schema.columns.end() ? std::string(f) : it->second;
    const auto pos = std::find(header.begin(), header.end(), foreign);
    if (pos != header.end()) col[f] = static_cast<int>(pos - header.begin());
  }
  for (const char* f : kMandatory) {
    if (!col.count(f)) throw Error(fmt::format("missing mandatory column '{}'", f));
  }
  const auto scale_of = [&](const char* f) {
    const auto it = schema.scale.find(f);
    return it == schema.scale.end() ? 1.0 : it->second;
  };

  struct Key {
    std::string dataset;
    VehicleId id;
    auto operator<=>(const Key&) const = default;
  };
  std::map<Key, VehicleTrack> tracks;
  std::map<Key, std::size_t> last_line;

  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const auto cells = split_csv(line);
    if (cells.size() != header.size())
      throw Error(fmt::format("line {}: expected {} cells, got {}", line_no, header.size(),
                              cells.size()));
    const auto cell = [&](const char* f) -> std::string_view {
      const auto it = col.find(f);
      return it == col.end() ? std::string_view{} : cells[it->second];
    };
    TrajectorySample s;
    Key key;
    try {
      key.dataset = col.count("dataset_id") ? std::string(cell("dataset_id"))
                                            : schema.default_dataset_id;
      key.id = parse_int(cell("vehicle_id"));
      s.time_s = parse_real(cell("time_s")) * scale_of("time_s");
      s.longitudinal_pos_m =
          parse_real(cell("longitudinal_pos_m")) * scale_of("longitudinal_pos_m");
      s.lateral_pos_m = parse_real(cell("lateral_pos_m")) * scale_of("lateral_pos_m");
      s.speed_mps = parse_real(cell("speed_mps")) * scale_of("speed_mps");
      s.vehicle_length_m = parse_real(cell("vehicle_length_m")) * scale_of("vehicle_length_m");
      if (!cell("lane_id").empty()) s.lane_id = parse_int(cell("lane_id"));
      if (!cell("accel_mps2").empty())
        s.accel_mps2 = parse_real(cell("accel_mps2")) * scale_of("accel_mps2");
      if (!cell("preceding_vehicle_id").empty()) {
        const auto lead = parse_int(cell("preceding_vehicle_id"));
        if (lead != schema.no_leader_value) s.preceding_vehicle_id = lead;
      }
      s.is_av = parse_bool(cell("is_av"));
    } catch (const Error& e) {
      throw Error(fmt::format("line {}: {}", line_no, e.what()));
    }
    if (!std::isfinite(s.time_s)) throw Error(fmt::format("line {}: non-finite time", line_no));
    if (s.speed_mps < 0.0) throw Error(fmt::format("line {}: negative speed", line_no));
    if (!(s.vehicle_length_m > 0.0))
      throw Error(fmt::format("line {}: vehicle length must be positive", line_no));

    auto& track = tracks[key];
    if (track.samples.empty()) {
      track.vehicle_id = key.id;
      track.dataset_id = key.dataset;
    } else {
      const double prev = track.samples.back().time_s;
      if (std::abs(s.time_s - prev) <= 1e-9)
        throw Error(fmt::format("line {}: duplicate sample for vehicle {} at t={} (first seen on line {})",
                                line_no, key.id, s.time_s, last_line[key]));
      if (s.time_s < prev)
        throw Error(fmt::format("line {}: non-monotone time for vehicle {} ({} after {})", line_no,
                                key.id, s.time_s, prev));
    }
    last_line[key] = line_no;
    track.samples.push_back(s);
  }

  // A file carries one sampling step; single-sample tracks inherit it.
  std::optional<double> file_dt;
  for (const auto& [key, t] : tracks) {
    if (t.samples.size() >= 2) {
      file_dt = t.samples[1].time_s - t.samples[0].time_s;
      break;
    }
  }
  std::vector<VehicleTrack> out;
  out.reserve(tracks.size());
  for (auto& [key, t] : tracks) {
    t.dt_s = t.samples.size() >= 2 ? t.samples[1].time_s - t.samples[0].time_s
                                   : file_dt.value_or(0.1);
    validate_track(t);
    out.push_back(std::move(t));
  }
  return out;
}

std::vector<VehicleTrack> load_tracks(const std::string& path, const Schema& schema) {
  try {
    return parse_tracks(read_file(path), schema);
  } catch (const Error& e) {
    throw Error(fmt::format("{}: {}", path, e.what()));
  }
}

std::string serialize_tracks(std::span<const VehicleTrack> tracks) {
  std::string out = kCanonicalHeader;
  out += '\n';
  for (const auto& t : tracks) {
    for (const auto& s : t.samples) {
      out += fmt::format("{},{},{},{},{},{},{},{},{},{},{}\n", t.dataset_id, t.vehicle_id,
                         format_real(s.time_s), s.lane_id, format_real(s.longitudinal_pos_m),
                         format_real(s.lateral_pos_m), format_real(s.speed_mps),
                         s.accel_mps2 ? format_real(*s.accel_mps2) : std::string(),
                         s.preceding_vehicle_id ? std::to_string(*s.preceding_vehicle_id)
                                                : std::string(),
                         format_real(s.vehicle_length_m), s.is_av ? 1 : 0);
    }
  }
  return out;
}

VehicleTrack resample(const VehicleTrack& track, double target_dt_s) {
  if (!(target_dt_s > 0.0)) throw Error("resample: target dt must be positive");
  if (track.samples.size() < 2)
    throw Error(fmt::format("resample: vehicle {} has fewer than 2 samples", track.vehicle_id));
  if (std::abs(target_dt_s - track.dt_s) <= 1e-12) return track;

  const double t0 = track.start_time();
  const double span = track.end_time() - t0;
  if (span + 1e-9 < target_dt_s)
    throw Error(fmt::format("resample: vehicle {} spans {} s, shorter than one {} s step",
                            track.vehicle_id, span, target_dt_s));

  VehicleTrack out;
  out.vehicle_id = track.vehicle_id;
  out.dataset_id = track.dataset_id;
  out.dt_s = target_dt_s;

  const auto& src = track.samples;
  const std::size_t n = static_cast<std::size_t>(std::floor(span / target_dt_s + 1e-9)) + 1;
  out.samples.reserve(n);
  std::size_t j = 0;  // src[j].time <= t < src[j+1].time
  for (std::size_t k = 0; k < n; ++k) {
    const double t = t0 + static_cast<double>(k) * target_dt_s;
    while (j + 2 < src.size() && src[j + 1].time_s <= t) ++j;
    const auto& a = src[j];
    const auto& b = src[j + 1];
    const double w = std::clamp((t - a.time_s) / (b.time_s - a.time_s), 0.0, 1.0);
    const auto lerp = [w](double x, double y) { return x + w * (y - x); };

    TrajectorySample s = (w <= 0.5) ? a : b;  // labels from the nearest sample
    s.time_s = t;
    s.longitudinal_pos_m = lerp(a.longitudinal_pos_m, b.longitudinal_pos_m);
    s.lateral_pos_m = lerp(a.lateral_pos_m, b.lateral_pos_m);
    s.speed_mps = lerp(a.speed_mps, b.speed_mps);
    if (a.accel_mps2 && b.accel_mps2)
      s.accel_mps2 = lerp(*a.accel_mps2, *b.accel_mps2);
    else
      s.accel_mps2.reset();
    out.samples.push_back(s);
  }
  return out;
}

std::vector<double> savitzky_golay(std::span<const double> series, int window, int polyorder,
                                   EdgeMode edges) {
  if (window <= 0 || window % 2 == 0)
    throw Error(fmt::format("savitzky_golay: window must be odd and positive, got {}", window));
  if (polyorder < 0 || polyorder >= window)
    throw Error(fmt::format("savitzky_golay: polyorder {} must be below window {}", polyorder,
                            window));
  const auto n = static_cast<int>(series.size());
  if (n < window)
    throw Error(fmt::format("savitzky_golay: series of {} samples shorter than window {}", n,
                            window));

  const int half = window / 2;
  const auto center = sg_weights(window, polyorder, 0);
  std::vector<double> out(series.size());
  const auto apply = [&](const std::vector<double>& w, int first) {
    double acc = 0.0;
    for (int k = 0; k < window; ++k) acc += w[k] * series[first + k];
    return acc;
  };
  for (int i = half; i < n - half; ++i) out[i] = apply(center, i - half);

  if (edges == EdgeMode::kInterpolate) {
    for (int i = 0; i < half; ++i) {
      out[i] = apply(sg_weights(window, polyorder, i - half), 0);
      out[n - 1 - i] = apply(sg_weights(window, polyorder, half - i), n - window);
    }
  } else {
    const auto mirrored = [&](int idx) {
      if (idx < 0) idx = -idx;
      if (idx >= n) idx = 2 * (n - 1) - idx;
      return series[std::clamp(idx, 0, n - 1)];
    };
    const auto padded = [&](int i) {
      double acc = 0.0;
      for (int k = 0; k < window; ++k) acc += center[k] * mirrored(i - half + k);
      return acc;
    };
    for (int i = 0; i < half; ++i) {
      out[i] = padded(i);
      out[n - 1 - i] = padded(n - 1 - i);
    }
  }
  return out;
}

VehicleTrack smooth_track(const VehicleTrack& track, const SmoothingOptions& options) {
  VehicleTrack out = track;
  const auto n = track.samples.size();
  if (n < static_cast<std::size_t>(options.window)) return out;

  const auto channel = [&](auto member) {
    std::vector<double> v(n);
    for (std::size_t i = 0; i < n; ++i) v[i] = track.samples[i].*member;
    return savitzky_golay(v, options.window, options.polyorder, options.edges);
  };
  const auto lon = channel(&TrajectorySample::longitudinal_pos_m);
  const auto lat = channel(&TrajectorySample::lateral_pos_m);
  const auto spd = channel(&TrajectorySample::speed_mps);
  for (std::size_t i = 0; i < n; ++i) {
    out.samples[i].longitudinal_pos_m = lon[i];
    out.samples[i].lateral_pos_m = lat[i];
    out.samples[i].speed_mps = std::max(0.0, spd[i]);
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (out.samples[i].accel_mps2) continue;
    const std::size_t lo = i == 0 ? 0 : i - 1;
    const std::size_t hi = i + 1 == n ? i : i + 1;
    out.samples[i].accel_mps2 = (out.samples[hi].speed_mps - out.samples[lo].speed_mps) /
                                (static_cast<double>(hi - lo) * track.dt_s);
  }
  return out;
}

}  // namespace followbench
