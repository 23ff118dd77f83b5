#include "followbench/events.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <random>
#include <sstream>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "followbench/common.hpp"

namespace followbench {

void validate_event(const CarFollowingEvent& e, const EventLimits& limits) {
  const auto n = e.spacing_m.size();
  if (e.v_fv_mps.size() != n || e.dv_mps.size() != n || e.v_lv_mps.size() != n)
    throw Error(fmt::format("event {}: channel lengths differ", e.event_id));
  if (n < 2) throw Error(fmt::format("event {}: fewer than 2 samples", e.event_id));
  if (!(e.dt_s > 0.0)) throw Error(fmt::format("event {}: non-positive dt", e.event_id));
  if (e.duration_s() + 1e-9 < limits.min_duration_s)
    throw Error(fmt::format("event {}: duration {} s below {} s", e.event_id, e.duration_s(),
                            limits.min_duration_s));
  for (std::size_t k = 0; k < n; ++k) {
    if (!(e.spacing_m[k] > 0.0))
      throw Error(fmt::format("event {}: non-positive spacing at step {}", e.event_id, k));
    if (!std::isfinite(e.v_fv_mps[k]) || !std::isfinite(e.v_lv_mps[k]))
      throw Error(fmt::format("event {}: non-finite speed at step {}", e.event_id, k));
    if (std::abs(e.dv_mps[k] - (e.v_fv_mps[k] - e.v_lv_mps[k])) > 1e-9)
      throw Error(fmt::format("event {}: dv != v_fv - v_lv at step {}", e.event_id, k));
  }
  for (std::size_t k = 0; k + 1 < n; ++k) {
    const double ds = (e.spacing_m[k + 1] - e.spacing_m[k]) / e.dt_s;
    const double mean_dv = 0.5 * (e.dv_mps[k] + e.dv_mps[k + 1]);
    if (std::abs(ds + mean_dv) > limits.kinematic_tolerance_mps)
      throw Error(fmt::format("event {}: spacing rate {} inconsistent with dv {} at step {}",
                              e.event_id, ds, mean_dv, k));
  }
}

ExtractionCriteria& ExtractionCriteria::with_low_speed_filter() {
  min_avg_speed_mps = 2.0;
  low_speed_threshold_mps = 0.2;
  low_speed_max_duration_s = 5.0;
  return *this;
}

void ExtractionCriteria::validate() const {
  const auto positive = [](std::optional<double> v) { return !v || *v > 0.0; };
  if (!(min_duration_s > 0.0) || !(max_lateral_gap_m > 0.0) || !positive(min_avg_speed_mps) ||
      !positive(low_speed_threshold_mps) || !positive(low_speed_max_duration_s))
    throw Error("extraction criteria thresholds must be positive");
}

nlohmann::json to_json(const ExtractionCriteria& c) {
  nlohmann::json j;
  j["min_duration_s"] = c.min_duration_s;
  j["max_lateral_gap_m"] = c.max_lateral_gap_m;
  const auto opt = [](std::optional<double> v) {
    return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
  };
  j["min_avg_speed_mps"] = opt(c.min_avg_speed_mps);
  j["low_speed_threshold_mps"] = opt(c.low_speed_threshold_mps);
  j["low_speed_max_duration_s"] = opt(c.low_speed_max_duration_s);
  return j;
}

ExtractionCriteria criteria_from_json(const nlohmann::json& j) {
  ExtractionCriteria c;
  c.min_duration_s = j.value("min_duration_s", c.min_duration_s);
  c.max_lateral_gap_m = j.value("max_lateral_gap_m", c.max_lateral_gap_m);
  const auto opt = [&](const char* key) -> std::optional<double> {
    if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
    return j.at(key).get<double>();
  };
  c.min_avg_speed_mps = opt("min_avg_speed_mps");
  c.low_speed_threshold_mps = opt("low_speed_threshold_mps");
  c.low_speed_max_duration_s = opt("low_speed_max_duration_s");
  c.validate();
  return c;
}

bool low_speed_filter(const CarFollowingEvent& event, const ExtractionCriteria& criteria) {
  if (!criteria.low_speed_filter_enabled() || event.v_fv_mps.empty()) return true;
  const auto& v = event.v_fv_mps;
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  if (mean < *criteria.min_avg_speed_mps) return false;
  // Run duration counts sample intervals: k consecutive slow samples span (k-1)*dt.
  std::size_t run = 0;
  for (double speed : v) {
    run = speed < *criteria.low_speed_threshold_mps ? run + 1 : 0;
    if (run >= 2 && static_cast<double>(run - 1) * event.dt_s > *criteria.low_speed_max_duration_s + 1e-9)
      return false;
  }
  return true;
}

namespace {

const TrajectorySample* sample_at(const VehicleTrack& track, double t) {
  const double idx = std::round((t - track.start_time()) / track.dt_s);
  if (idx < 0 || idx >= static_cast<double>(track.samples.size())) return nullptr;
  const auto& s = track.samples[static_cast<std::size_t>(idx)];
  return std::abs(s.time_s - t) <= 1e-6 ? &s : nullptr;
}

}  // namespace

TrackIndex::TrackIndex(std::span<const VehicleTrack> tracks) {
  for (const auto& t : tracks) by_key_[{t.dataset_id, t.vehicle_id}] = &t;
  ordered_.reserve(by_key_.size());
  for (const auto& [key, t] : by_key_) ordered_.push_back(t);
}

const VehicleTrack* TrackIndex::find(const std::string& dataset_id, VehicleId id) const {
  const auto it = by_key_.find({dataset_id, id});
  return it == by_key_.end() ? nullptr : it->second;
}

std::vector<CarFollowingEvent> extract_follower_events(const VehicleTrack& fv,
                                                       const TrackIndex& index,
                                                       const ExtractionCriteria& criteria,
                                                       ExtractionStats* stats) {
  std::vector<CarFollowingEvent> out;
  ExtractionStats local;

  CarFollowingEvent current;
  std::size_t start_step = 0;
  std::optional<VehicleId> current_leader;

  const auto close_span = [&]() {
    if (current.spacing_m.size() >= 2 &&
        current.duration_s() + 1e-9 >= criteria.min_duration_s) {
      ++local.spans_considered;
      current.event_id = fmt::format("{}_{}_{}_{}", fv.dataset_id, fv.vehicle_id,
                                     current.lv_id, start_step);
      try {
        validate_event(current, {criteria.min_duration_s, 0.5});
        if (low_speed_filter(current, criteria))
          out.push_back(current);
        else
          ++local.rejected_low_speed;
      } catch (const Error& e) {
        ++local.rejected_kinematics;
        spdlog::debug("dropping span: {}", e.what());
      }
    }
    current = CarFollowingEvent{};
    current_leader.reset();
  };

  std::optional<VehicleId> missing_reported;
  for (std::size_t k = 0; k < fv.samples.size(); ++k) {
    const auto& s = fv.samples[k];
    const TrajectorySample* lead = nullptr;
    const VehicleTrack* lv = nullptr;
    if (s.preceding_vehicle_id) {
      lv = index.find(fv.dataset_id, *s.preceding_vehicle_id);
      if (lv == nullptr) {
        if (missing_reported != s.preceding_vehicle_id) {
          ++local.missing_leader;
          spdlog::warn("vehicle {}: leader {} referenced but absent; span skipped",
                       fv.vehicle_id, *s.preceding_vehicle_id);
          missing_reported = s.preceding_vehicle_id;
        }
      } else {
        lead = sample_at(*lv, s.time_s);
      }
    }
    double spacing = 0.0;
    bool ok = lead != nullptr;
    if (ok) {
      spacing = lead->longitudinal_pos_m - lead->vehicle_length_m - s.longitudinal_pos_m;
      ok = std::abs(lead->lateral_pos_m - s.lateral_pos_m) <= criteria.max_lateral_gap_m &&
           spacing > 0.0;
    }
    if (!ok || current_leader != s.preceding_vehicle_id) close_span();
    if (!ok) continue;
    if (!current_leader) {
      current_leader = s.preceding_vehicle_id;
      start_step = k;
      current.dt_s = fv.dt_s;
      current.source = fv.dataset_id;
      current.fv_id = fv.vehicle_id;
      current.lv_id = lv->vehicle_id;
      current.fv_is_av = s.is_av;
      current.lv_is_av = lead->is_av;
    }
    current.spacing_m.push_back(spacing);
    current.v_fv_mps.push_back(s.speed_mps);
    current.v_lv_mps.push_back(lead->speed_mps);
    current.dv_mps.push_back(s.speed_mps - lead->speed_mps);
  }
  close_span();

  if (stats) {
    stats->spans_considered += local.spans_considered;
    stats->missing_leader += local.missing_leader;
    stats->rejected_kinematics += local.rejected_kinematics;
    stats->rejected_low_speed += local.rejected_low_speed;
  }
  return out;
}

std::vector<CarFollowingEvent> extract_events_serial(std::span<const VehicleTrack> tracks,
                                                     const ExtractionCriteria& criteria,
                                                     ExtractionStats* stats) {
  criteria.validate();
  const TrackIndex index(tracks);
  std::vector<CarFollowingEvent> out;
  for (const auto* fv : index.ordered()) {
    auto events = extract_follower_events(*fv, index, criteria, stats);
    std::move(events.begin(), events.end(), std::back_inserter(out));
  }
  return out;
}

std::vector<CarFollowingEvent> extract_events(std::span<const VehicleTrack> tracks,
                                              const ExtractionCriteria& criteria,
                                              ExtractionStats* stats) {
  criteria.validate();
  const TrackIndex index(tracks);
  const auto& followers = index.ordered();
  const auto n = static_cast<std::ptrdiff_t>(followers.size());
  std::vector<std::vector<CarFollowingEvent>> per_track(followers.size());
  std::vector<ExtractionStats> per_stats(followers.size());
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t i = 0; i < n; ++i)
    per_track[i] = extract_follower_events(*followers[i], index, criteria, &per_stats[i]);

  std::vector<CarFollowingEvent> out;
  for (std::size_t i = 0; i < per_track.size(); ++i) {
    std::move(per_track[i].begin(), per_track[i].end(), std::back_inserter(out));
    if (stats) {
      stats->spans_considered += per_stats[i].spans_considered;
      stats->missing_leader += per_stats[i].missing_leader;
      stats->rejected_kinematics += per_stats[i].rejected_kinematics;
      stats->rejected_low_speed += per_stats[i].rejected_low_speed;
    }
  }
  return out;
}

DatasetSplit split_dataset(std::vector<CarFollowingEvent> events, const SplitRatios& ratios,
                           std::uint64_t seed) {
  if (events.empty()) throw Error("split_dataset: no events to split");
  if (std::abs(ratios.train + ratios.val + ratios.test - 1.0) > 1e-9 || ratios.train < 0 ||
      ratios.val < 0 || ratios.test < 0)
    throw Error("split_dataset: ratios must be non-negative and sum to 1");
  const auto n = events.size();
  std::mt19937_64 rng(seed);
  std::shuffle(events.begin(), events.end(), rng);
  const auto n_train = static_cast<std::size_t>(std::floor(ratios.train * n + 1e-9));
  const auto n_val = static_cast<std::size_t>(std::floor(ratios.val * n + 1e-9));

  DatasetSplit split;
  auto it = std::make_move_iterator(events.begin());
  split.train.assign(it, it + n_train);
  split.val.assign(it + n_train, it + n_train + n_val);
  split.test.assign(it + n_train + n_val, std::make_move_iterator(events.end()));
  return split;
}

std::size_t Histogram::total() const {
  return std::accumulate(counts.begin(), counts.end(), underflow + overflow);
}

Histogram histogram(std::span<const double> values, std::span<const double> edges) {
  if (edges.size() < 2) throw Error("histogram: need at least two edges");
  for (std::size_t i = 1; i < edges.size(); ++i)
    if (!(edges[i] > edges[i - 1])) throw Error("histogram: edges must be strictly increasing");
  Histogram h;
  h.edges.assign(edges.begin(), edges.end());
  h.counts.assign(edges.size() - 1, 0);
  for (double v : values) {
    if (v < edges.front()) {
      ++h.underflow;
    } else if (v > edges.back()) {
      ++h.overflow;
    } else if (v == edges.back()) {
      ++h.counts.back();
    } else {
      const auto it = std::upper_bound(edges.begin(), edges.end(), v);
      ++h.counts[static_cast<std::size_t>(it - edges.begin()) - 1];
    }
  }
  return h;
}

namespace {

struct MeasureDef {
  const char* name;
  const char* unit;
  double lo, hi, width;
};

constexpr MeasureDef kMeasures[] = {
    {"space_gap", "m", 0.0, 150.0, 5.0},
    {"following_speed", "m/s", 0.0, 45.0, 1.0},
    {"time_gap", "s", 0.0, 10.0, 0.25},
    {"abs_relative_speed", "m/s", 0.0, 10.0, 0.25},
    {"abs_acceleration", "m/s^2", 0.0, 5.0, 0.1},
    {"duration", "s", 0.0, 120.0, 5.0},
};

std::vector<double> edges_of(const MeasureDef& d) {
  const auto n = static_cast<int>(std::lround((d.hi - d.lo) / d.width));
  std::vector<double> edges(n + 1);
  for (int i = 0; i <= n; ++i) edges[i] = d.lo + i * d.width;
  return edges;
}

MeasureSummary summarize(const std::vector<double>& v) {
  MeasureSummary s;
  s.count = v.size();
  if (v.empty()) return s;
  double sum = 0.0, sum_sq = 0.0;
  s.min = v.front();
  s.max = v.front();
  for (double x : v) {
    sum += x;
    sum_sq += x * x;
    s.min = std::min(s.min, x);
    s.max = std::max(s.max, x);
  }
  s.mean = sum / static_cast<double>(v.size());
  s.stddev = std::sqrt(std::max(0.0, sum_sq / static_cast<double>(v.size()) - s.mean * s.mean));
  return s;
}

}  // namespace

std::vector<std::vector<double>> behavioral_measures(std::span<const CarFollowingEvent> events) {
  std::vector<std::vector<double>> m(6);
  for (const auto& e : events) {
    for (std::size_t k = 0; k < e.length(); ++k) {
      m[0].push_back(e.spacing_m[k]);
      m[1].push_back(e.v_fv_mps[k]);
      if (e.v_fv_mps[k] >= kTimeGapMinSpeed) m[2].push_back(e.spacing_m[k] / e.v_fv_mps[k]);
      m[3].push_back(std::abs(e.dv_mps[k]));
      if (k + 1 < e.length())
        m[4].push_back(std::abs(e.v_fv_mps[k + 1] - e.v_fv_mps[k]) / e.dt_s);
    }
    m[5].push_back(e.duration_s());
  }
  return m;
}

StatsReport descriptive_stats(std::span<const CarFollowingEvent> events) {
  if (events.empty()) throw Error("descriptive_stats: no events");
  const auto values = behavioral_measures(events);
  StatsReport report;
  for (std::size_t i = 0; i < values.size(); ++i) {
    const auto& def = kMeasures[i];
    const auto edges = edges_of(def);
    report.measures.push_back(
        {def.name, def.unit, summarize(values[i]), histogram(values[i], edges)});
  }
  return report;
}

const Measure& StatsReport::at(const std::string& name) const {
  for (const auto& m : measures)
    if (m.name == name) return m;
  throw Error(fmt::format("no measure named '{}'", name));
}

nlohmann::json StatsReport::summary_json() const {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& m : measures) {
    j[m.name] = {{"unit", m.unit},
                 {"count", m.summary.count},
                 {"mean", m.summary.mean},
                 {"std", m.summary.stddev},
                 {"min", m.summary.min},
                 {"max", m.summary.max},
                 {"underflow", m.histogram.underflow},
                 {"overflow", m.histogram.overflow}};
  }
  return j;
}

std::string StatsReport::histogram_csv() const {
  std::string out = "measure,bin_low,bin_high,count\n";
  for (const auto& m : measures) {
    for (std::size_t b = 0; b < m.histogram.counts.size(); ++b)
      out += fmt::format("{},{},{},{}\n", m.name, format_real(m.histogram.edges[b]),
                         format_real(m.histogram.edges[b + 1]), m.histogram.counts[b]);
  }
  return out;
}

std::string events_to_csv(std::span<const CarFollowingEvent> events) {
  std::string out = kEventHeader;
  out += '\n';
  for (const auto& e : events)
    for (std::size_t k = 0; k < e.length(); ++k)
      out += fmt::format("{},{},{},{},{},{}\n", e.event_id, k, format_real(e.spacing_m[k]),
                         format_real(e.v_fv_mps[k]), format_real(e.dv_mps[k]),
                         format_real(e.v_lv_mps[k]));
  return out;
}

std::vector<CarFollowingEvent> events_from_csv(const std::string& text, double dt_s) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line.rfind(kEventHeader, 0) != 0)
    throw Error("event file: unexpected header");
  std::vector<CarFollowingEvent> events;
  std::map<std::string, std::size_t> index;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ls(line);
    for (std::string c; std::getline(ls, c, ',');) cells.push_back(c);
    if (cells.size() != 6) throw Error(fmt::format("event file line {}: expected 6 cells", line_no));
    auto [it, inserted] = index.try_emplace(cells[0], events.size());
    if (inserted) {
      events.emplace_back();
      events.back().event_id = cells[0];
      events.back().dt_s = dt_s;
    }
    auto& e = events[it->second];
    try {
      if (static_cast<std::size_t>(parse_int(cells[1])) != e.length())
        throw Error("t_index out of sequence");
      e.spacing_m.push_back(parse_real(cells[2]));
      e.v_fv_mps.push_back(parse_real(cells[3]));
      e.dv_mps.push_back(parse_real(cells[4]));
      e.v_lv_mps.push_back(parse_real(cells[5]));
    } catch (const Error& err) {
      throw Error(fmt::format("event file line {}: {}", line_no, err.what()));
    }
  }
  return events;
}

nlohmann::json manifest_json(const EventManifest& m, std::span<const CarFollowingEvent> events) {
  nlohmann::json j;
  j["dataset_id"] = m.dataset_id;
  j["dt_s"] = m.dt_s;
  j["n_events"] = events.size();
  j["split"] = m.split;
  j["criteria"] = to_json(m.criteria);
  j["source_hash"] = m.source_hash;
  auto& meta = j["events"] = nlohmann::json::array();
  for (const auto& e : events)
    meta.push_back({{"event_id", e.event_id},
                    {"source", e.source},
                    {"fv_id", e.fv_id},
                    {"lv_id", e.lv_id},
                    {"fv_is_av", e.fv_is_av},
                    {"lv_is_av", e.lv_is_av}});
  return j;
}

void write_event_split(const std::string& dir, const EventManifest& manifest,
                       std::span<const CarFollowingEvent> events) {
  write_file(dir + "/" + manifest.split + ".csv", events_to_csv(events));
  write_file(dir + "/" + manifest.split + ".manifest.json",
             manifest_json(manifest, events).dump(2) + "\n");
}

std::vector<CarFollowingEvent> read_event_split(const std::string& dir, const std::string& split,
                                                EventManifest* manifest) {
  const auto j = nlohmann::json::parse(read_file(dir + "/" + split + ".manifest.json"));
  const double dt = j.at("dt_s").get<double>();
  auto events = events_from_csv(read_file(dir + "/" + split + ".csv"), dt);
  if (j.at("n_events").get<std::size_t>() != events.size())
    throw Error(fmt::format("{}/{}: manifest lists {} events, file holds {}", dir, split,
                            j.at("n_events").get<std::size_t>(), events.size()));
  if (j.contains("events")) {
    std::map<std::string, const nlohmann::json*> meta;
    for (const auto& m : j.at("events")) meta[m.at("event_id").get<std::string>()] = &m;
    for (auto& e : events) {
      const auto it = meta.find(e.event_id);
      if (it == meta.end()) continue;
      const auto& m = *it->second;
      e.source = m.value("source", std::string());
      e.fv_id = m.value("fv_id", VehicleId{0});
      e.lv_id = m.value("lv_id", VehicleId{0});
      e.fv_is_av = m.value("fv_is_av", false);
      e.lv_is_av = m.value("lv_is_av", false);
    }
  }
  if (manifest) {
    manifest->dataset_id = j.at("dataset_id").get<std::string>();
    manifest->dt_s = dt;
    manifest->n_events = events.size();
    manifest->split = j.at("split").get<std::string>();
    manifest->criteria = criteria_from_json(j.at("criteria"));
    manifest->source_hash = j.at("source_hash").get<std::string>();
  }
  return events;
}

}  // namespace followbench
