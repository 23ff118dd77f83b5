// followbench: command-line driver for the car-following pipeline.
//
//   synth -> extract -> stats -> calibrate / train-* -> evaluate / benchmark
//
// Configuration is layered: built-in defaults < --config TOML < flags. The
// effective configuration of every run is echoed into <out>/manifest.json
// together with the seed, the toolkit version and hashes of all outputs.

#include <omp.h>

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "followbench/bench.hpp"
#include "followbench/calib_ga.hpp"
#include "followbench/common.hpp"
#include "followbench/ddpg.hpp"
#include "followbench/events.hpp"
#include "followbench/model_io.hpp"
#include "followbench/neural.hpp"
#include "followbench/sim.hpp"
#include "followbench/traj_core.hpp"
#include "toml_lite.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace followbench;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 1;
constexpr int kExitUsage = 2;
constexpr int kExitModelFailure = 3;

json default_config() {
  return {
      {"run", {{"seed", 0}, {"jobs", 0}, {"out", ""}, {"log_level", "info"}}},
      {"split", {{"train", 0.70}, {"val", 0.15}, {"test", 0.15}}},
      {"synth",
       {{"profile", "mixed"},
        {"n", 100},
        {"duration_s", 20.0},
        {"dt_s", 0.1},
        {"noise_std_mps2", 0.0},
        {"speed_min_mps", 8.0},
        {"speed_max_mps", 20.0},
        {"spacing_offset_m", 5.0},
        {"speed_offset_mps", 1.0},
        {"leader_length_m", 4.5},
        {"a0_mps2", 1.2},
        {"b_mps2", 1.8},
        {"v_des_mps", 28.0},
        {"t_des_s", 1.3},
        {"s0_m", 2.5},
        {"lambda", 4.0}}},
      {"extract",
       {{"input", ""},
        {"schema", ""},
        {"dataset", "ngsim"},
        {"target_dt_s", 0.1},
        {"smooth", false},
        {"smooth_window", 11},
        {"smooth_polyorder", 3},
        {"min_duration_s", 15.0},
        {"max_lateral_gap_m", 2.0},
        {"low_speed_filter", "auto"}}},
      {"datasets", json::object()},
      {"stats", {{"events", ""}, {"splits", {"train", "val", "test"}}}},
      {"calibrate",
       {{"events", ""},
        {"family", "idm"},
        {"population_size", 100},
        {"generations", 200},
        {"tournament_k", 3},
        {"crossover_rate", 0.9},
        {"mutation_rate", 0.1},
        {"mutation_sigma_frac", 0.1},
        {"elitism", 2},
        {"collision_penalty", 1e6},
        {"pooled", false}}},
      {"train_nn",
       {{"events", ""},
        {"hidden", {64, 64}},
        {"learning_rate", 0.001},
        {"batch_size", 256},
        {"epochs", 50}}},
      {"train_rnn",
       {{"events", ""},
        {"window_steps", 10},
        {"hidden_size", 64},
        {"num_layers", 1},
        {"dropout", 0.1},
        {"learning_rate", 0.001},
        {"batch_size", 256},
        {"epochs", 20}}},
      {"train_ddpg",
       {{"events", ""},
        {"gamma", 0.99},
        {"tau", 0.005},
        {"buffer_capacity", 100000},
        {"batch_size", 64},
        {"actor_lr", 1e-4},
        {"critic_lr", 1e-3},
        {"action_bound_mps2", 3.0},
        {"exploration_sigma", 0.5},
        {"exploration_sigma_final", 0.0},
        {"H", 1.0},
        {"penalty", -50.0},
        {"epsilon_floor", 1e-6},
        {"reward_variant", "survival_floor"},
        {"episodes", 300},
        {"hidden_size", 64},
        {"action_l2", 1.0},
        {"warmup_transitions", 1000},
        {"probe_every", 10}}},
      {"evaluate",
       {{"model", ""},
        {"events", ""},
        {"split", "test"},
        {"name", ""},
        {"collision_handling", "truncate"}}},
      {"benchmark",
       {{"models", json::array()},
        {"datasets", json::array()},
        {"split", "test"},
        {"collision_handling", "truncate"}}},
  };
}

/// Per-dataset extraction rules: HighD and Lyft drop low-speed events.
bool preset_low_speed_filter(const std::string& preset) {
  static const std::map<std::string, bool> presets{
      {"ngsim", false}, {"highd", true}, {"lyft", true},
      {"waymo", false}, {"spmd", false}, {"synth", false}};
  const auto it = presets.find(preset);
  if (it == presets.end())
    throw Error(fmt::format("unknown dataset preset '{}' (ngsim, highd, lyft, waymo, spmd, synth)",
                            preset));
  return it->second;
}

std::string type_name(const json& v) {
  if (v.is_boolean()) return "a boolean";
  if (v.is_number_integer()) return "an integer";
  if (v.is_number()) return "a number";
  if (v.is_string()) return "a string";
  if (v.is_array()) return "an array";
  return "a table";
}

/// Overlays `src` on `dst`; keys and value types must match the defaults,
/// except the free-form dataset registry.
void merge_config(json& dst, const json& src, const std::string& where) {
  if (!src.is_object()) throw Error(fmt::format("config: {} must be a table", where));
  for (const auto& [key, value] : src.items()) {
    const std::string path = where.empty() ? key : where + "." + key;
    if (where == "datasets") {
      dst[key] = value;
      continue;
    }
    if (!dst.contains(key)) throw Error(fmt::format("config: unknown key '{}'", path));
    json& slot = dst[key];
    if (slot.is_object()) {
      merge_config(slot, value, path);
    } else if (slot.is_number_float() && value.is_number()) {
      slot = value.get<double>();
    } else if (slot.is_number_integer() && value.is_number_integer()) {
      if (value.get<std::int64_t>() < 0 && key != "seed")
        throw Error(fmt::format("config: '{}' must be non-negative", path));
      slot = value;
    } else if (slot.type() == value.type() ||
               (slot.is_array() && value.is_array())) {
      slot = value;
    } else {
      throw Error(fmt::format("config: '{}' expects {}, got {}", path, type_name(slot),
                              type_name(value)));
    }
  }
}

struct Run {
  std::string command;
  json config;
  std::uint64_t seed = 0;
  fs::path out;
  json outputs = json::object();
  json results = json::object();

  const json& table(const std::string& name) const { return config.at(name); }

  fs::path path(const std::string& name) const { return out / name; }

  void write(const std::string& name, const std::string& contents) {
    write_file(path(name).string(), contents);
    outputs[name] = fnv1a_hex(contents);
  }
  void record(const std::string& name) { outputs[name] = fnv1a_hex(read_file(path(name).string())); }

  /// Hash of the settings that can change results; output location, thread
  /// count and verbosity are left out.
  std::string config_hash() const {
    json eff = effective_config();
    eff["run"].erase("jobs");
    eff["run"].erase("log_level");
    return fnv1a_hex(eff.dump());
  }

  json effective_config() const {
    json eff = json::object();
    eff["run"] = config.at("run");
    eff["run"]["seed"] = seed;
    eff["run"].erase("out");  // the manifest sits in it
    const std::string key = command == "train-nn"     ? "train_nn"
                            : command == "train-rnn"  ? "train_rnn"
                            : command == "train-ddpg" ? "train_ddpg"
                                                      : command;
    eff[key] = config.at(key);
    if (command == "synth" || command == "extract") eff["split"] = config.at("split");
    if (command == "extract") eff["datasets"] = config.at("datasets");
    return eff;
  }

  void write_manifest() {
    json m;
    m["command"] = command;
    m["toolkit_version"] = std::string(kToolkitVersion);
    m["seed"] = seed;
    m["config"] = effective_config();
    m["outputs"] = outputs;
    m["results"] = results;
    write_file(path("manifest.json").string(), m.dump(2) + "\n");
  }
};

std::string require_path(const json& t, const std::string& key, const std::string& table) {
  const auto p = t.at(key).get<std::string>();
  if (p.empty())
    throw Error(fmt::format("{}: '{}' is required (flag or [{}] {})", table, key, table, key));
  if (!fs::exists(p)) throw Error(fmt::format("{}: {} '{}' does not exist", table, key, p));
  return p;
}

SplitRatios split_ratios(const json& t) {
  SplitRatios r{t.at("train").get<double>(), t.at("val").get<double>(), t.at("test").get<double>()};
  if (r.train < 0 || r.val < 0 || r.test < 0 || std::abs(r.train + r.val + r.test - 1.0) > 1e-9)
    throw Error("split: ratios must be non-negative and sum to 1");
  return r;
}

void write_splits(Run& run, std::vector<CarFollowingEvent> events, const std::string& dataset_id,
                  const ExtractionCriteria& criteria, const std::string& source_hash) {
  const double dt = events.empty() ? 0.1 : events.front().dt_s;
  auto split = split_dataset(std::move(events), split_ratios(run.table("split")), run.seed);
  const std::pair<const char*, std::vector<CarFollowingEvent>*> parts[] = {
      {"train", &split.train}, {"val", &split.val}, {"test", &split.test}};
  for (const auto& [name, evs] : parts) {
    EventManifest m{dataset_id, dt, evs->size(), name, criteria, source_hash};
    write_event_split(run.out.string(), m, *evs);
    run.record(std::string(name) + ".csv");
    run.record(std::string(name) + ".manifest.json");
    run.results["split_sizes"][name] = evs->size();
  }
}

std::vector<CarFollowingEvent> read_split(const std::string& dir, const std::string& split,
                                          EventManifest* manifest = nullptr) {
  auto events = read_event_split(dir, split, manifest);
  spdlog::info("read {} {} events from {}", events.size(), split, dir);
  return events;
}

// Commands --------------------------------------------------------------------------

int cmd_synth(Run& run) {
  const auto& t = run.table("synth");
  const auto profile = t.at("profile").get<std::string>();
  const auto n = t.at("n").get<std::size_t>();
  if (n == 0) throw Error("synth: n must be positive");
  const IDMParams generator{t.at("a0_mps2"), t.at("b_mps2"), t.at("v_des_mps"),
                            t.at("t_des_s"), t.at("s0_m"),   t.at("lambda")};
  generator.validate();
  const IDMPolicy policy(generator);
  const double v_min = t.at("speed_min_mps"), v_max = t.at("speed_max_mps");
  if (!(v_min > 0.0 && v_min <= v_max)) throw Error("synth: need 0 < speed_min_mps <= speed_max_mps");
  const double ds = t.at("spacing_offset_m"), dv = t.at("speed_offset_mps");
  const std::vector<ProfileKind> mixed{ProfileKind::kConstant, ProfileKind::kSinusoidal,
                                       ProfileKind::kStopAndGo};
  const bool cycle = profile == "mixed";
  const ProfileKind fixed = cycle ? ProfileKind::kConstant : profile_from_name(profile);

  SynthesisOptions opt;
  opt.duration_s = t.at("duration_s");
  opt.dt_s = t.at("dt_s");
  opt.leader_length_m = t.at("leader_length_m");
  const double noise = t.at("noise_std_mps2");

  std::mt19937_64 rng(run.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const auto draw = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };

  std::vector<VehicleTrack> tracks;
  std::vector<CarFollowingEvent> events;
  for (std::size_t i = 0; i < n; ++i) {
    LeaderProfile p;
    p.kind = cycle ? mixed[i % mixed.size()] : fixed;
    std::optional<SyntheticPair> pair;
    for (int attempt = 0; attempt < 20 && !pair; ++attempt) {
      p.base_speed_mps = draw(v_min, v_max);
      p.amplitude_mps = draw(0.5, 0.3 * p.base_speed_mps);
      p.period_s = draw(15.0, 30.0);
      p.phase_s = draw(0.0, p.period_s);
      opt.spacing_offset_m = draw(-ds, ds);
      opt.speed_offset_mps = draw(-dv, dv);
      const std::uint64_t noise_seed = rng();
      try {
        pair = synthesize_pair(p, policy, noise, noise_seed, opt);
      } catch (const Error& e) {
        spdlog::debug("synth pair {} attempt {}: {}", i, attempt, e.what());
      }
    }
    if (!pair) throw Error(fmt::format("synth: could not generate a collision-free pair {}", i));

    const VehicleId lv = static_cast<VehicleId>(2 * i + 1), fv = lv + 1;
    auto& e = pair->event;
    e.event_id = fmt::format("synth_{}_{}_0", fv, lv);
    e.source = "synth";
    e.fv_id = fv;
    e.lv_id = lv;

    VehicleTrack leader{lv, "synth", opt.dt_s, {}}, follower{fv, "synth", opt.dt_s, {}};
    for (std::size_t k = 0; k < e.length(); ++k) {
      const double time = static_cast<double>(k) * opt.dt_s;
      const auto lane = static_cast<std::int64_t>(i + 1);
      leader.samples.push_back({time, pair->lv_front_m[k], 0.0, e.v_lv_mps[k], std::nullopt, lane,
                                std::nullopt, opt.leader_length_m, false});
      follower.samples.push_back({time, pair->fv_front_m[k], 0.0, e.v_fv_mps[k], std::nullopt,
                                  lane, lv, 4.5, false});
    }
    tracks.push_back(std::move(leader));
    tracks.push_back(std::move(follower));
    events.push_back(std::move(e));
  }

  const std::string csv = serialize_tracks(tracks);
  run.write("trajectories.csv", csv);
  run.results["n_tracks"] = tracks.size();
  run.results["n_events"] = events.size();
  write_splits(run, std::move(events), "synth", ExtractionCriteria{}, fnv1a_hex(csv));
  return kExitOk;
}

int cmd_extract(Run& run) {
  json t = run.table("extract");
  const auto name = t.at("dataset").get<std::string>();
  std::string preset = name;
  if (run.table("datasets").contains(name)) {
    const auto& entry = run.table("datasets").at(name);
    for (const char* key : {"input", "schema"})
      if (entry.contains(key) && t.at(key).get<std::string>().empty()) t[key] = entry.at(key);
    preset = entry.value("preset", name);
  }
  const auto input = require_path(t, "input", "extract");
  const auto schema_path = t.at("schema").get<std::string>();
  Schema schema = schema_path.empty() ? Schema::canonical() : Schema::from_json_file(schema_path);

  ExtractionCriteria criteria;
  criteria.min_duration_s = t.at("min_duration_s");
  criteria.max_lateral_gap_m = t.at("max_lateral_gap_m");
  const auto low_speed = t.at("low_speed_filter").get<std::string>();
  if (low_speed != "auto" && low_speed != "on" && low_speed != "off")
    throw Error("extract: low_speed_filter must be auto, on or off");
  const bool filter = low_speed == "auto" ? preset_low_speed_filter(preset) : low_speed == "on";
  if (filter) criteria.with_low_speed_filter();
  criteria.validate();

  const std::string raw = read_file(input);
  auto tracks = parse_tracks(raw, schema);
  const double target_dt = t.at("target_dt_s");
  std::size_t resampled = 0, dropped = 0;
  std::vector<VehicleTrack> ready;
  ready.reserve(tracks.size());
  for (auto& track : tracks) {
    if (std::abs(track.dt_s - target_dt) > 1e-9) {
      if (track.samples.size() < 2 || track.end_time() - track.start_time() < target_dt) {
        ++dropped;
        continue;
      }
      track = resample(track, target_dt);
      ++resampled;
    }
    if (t.at("smooth").get<bool>())
      track = smooth_track(track, {t.at("smooth_window").get<int>(),
                                   t.at("smooth_polyorder").get<int>(), EdgeMode::kInterpolate});
    ready.push_back(std::move(track));
  }

  ExtractionStats stats;
  auto events = extract_events(ready, criteria, &stats);
  spdlog::info("extract: {} tracks, {} events", ready.size(), events.size());
  run.results["n_tracks"] = tracks.size();
  run.results["tracks_resampled"] = resampled;
  run.results["tracks_dropped_too_short"] = dropped;
  run.results["n_events"] = events.size();
  run.results["spans_considered"] = stats.spans_considered;
  run.results["missing_leader"] = stats.missing_leader;
  run.results["rejected_kinematics"] = stats.rejected_kinematics;
  run.results["rejected_low_speed"] = stats.rejected_low_speed;
  run.results["dataset"] = name;
  run.results["preset"] = preset;
  write_splits(run, std::move(events), name, criteria, fnv1a_hex(raw));
  return kExitOk;
}

int cmd_stats(Run& run) {
  const auto& t = run.table("stats");
  const auto dir = require_path(t, "events", "stats");
  std::vector<CarFollowingEvent> events;
  for (const auto& split : t.at("splits")) {
    auto part = read_split(dir, split.get<std::string>());
    events.insert(events.end(), std::make_move_iterator(part.begin()),
                  std::make_move_iterator(part.end()));
  }
  if (events.empty()) throw Error("stats: no events in the selected splits");
  const auto report = descriptive_stats(events);
  run.write("stats.json", report.summary_json().dump(2) + "\n");
  run.write("histograms.csv", report.histogram_csv());
  run.results["n_events"] = events.size();
  return kExitOk;
}

int cmd_calibrate(Run& run) {
  const auto& t = run.table("calibrate");
  const auto dir = require_path(t, "events", "calibrate");
  const auto family = family_from_name(t.at("family"));
  GAConfig ga;
  ga.population_size = t.at("population_size");
  ga.generations = t.at("generations");
  ga.tournament_k = t.at("tournament_k");
  ga.crossover_rate = t.at("crossover_rate");
  ga.mutation_rate = t.at("mutation_rate");
  ga.mutation_sigma_frac = t.at("mutation_sigma_frac");
  ga.elitism = t.at("elitism");
  ga.seed = run.seed;
  ga.validate();
  FitnessOptions fo{t.at("collision_penalty"), t.at("pooled")};
  const auto bounds =
      family == ModelFamily::kIDM ? ParamBounds::idm_default() : ParamBounds::ghr_default();

  const auto train = read_split(dir, "train");
  const auto result = calibrate(family, train, bounds, ga, fo);
  run.write("model.json", result.policy->to_json().dump(2) + "\n");
  run.write("calibration.json", result.to_json(bounds, ga).dump(2) + "\n");
  run.write("fitness_trace.csv", result.trace_csv());
  run.results["best_fitness_m2"] = result.best_fitness;
  if (const auto val = read_split(dir, "val"); !val.empty()) {
    const auto row = evaluate_model(*result.policy, val, CollisionHandling::kTruncate);
    run.results["val_mse_spacing_m2"] = row.mse_spacing_m2;
    run.results["val_collisions"] = row.collision_count;
  }
  return kExitOk;
}

AdamConfig adam_from(const json& t, std::uint64_t seed) {
  AdamConfig a;
  a.learning_rate = t.at("learning_rate");
  a.batch_size = t.at("batch_size");
  a.epochs = t.at("epochs");
  a.seed = seed;
  a.validate();
  return a;
}

int finish_supervised(Run& run, const TrainedModel& model) {
  run.write("model.json", model.policy->to_json().dump(2) + "\n");
  run.write("training.csv", model.report.to_csv());
  run.results["best_epoch"] = model.report.best_epoch;
  if (!model.report.val_loss.empty())
    run.results["best_val_loss"] = model.report.val_loss[model.report.best_epoch];
  return kExitOk;
}

int cmd_train_nn(Run& run) {
  const auto& t = run.table("train_nn");
  const auto dir = require_path(t, "events", "train-nn");
  MLPSpec spec;
  spec.layer_sizes = {kFrameFeatures};
  for (const auto& h : t.at("hidden")) spec.layer_sizes.push_back(h.get<std::size_t>());
  spec.layer_sizes.push_back(1);
  spec.validate();
  const auto train = read_split(dir, "train");
  const auto val = read_split(dir, "val");
  return finish_supervised(run, train_supervised(spec, train, val, adam_from(t, run.seed)));
}

int cmd_train_rnn(Run& run) {
  const auto& t = run.table("train_rnn");
  const auto dir = require_path(t, "events", "train-rnn");
  RecurrentSpec spec;
  spec.window_steps = t.at("window_steps");
  spec.hidden_size = t.at("hidden_size");
  spec.num_layers = t.at("num_layers");
  spec.dropout_prob = t.at("dropout");
  spec.validate();
  const auto train = read_split(dir, "train");
  const auto val = read_split(dir, "val");
  return finish_supervised(run, train_supervised(spec, train, val, adam_from(t, run.seed)));
}

int cmd_train_ddpg(Run& run) {
  const auto& t = run.table("train_ddpg");
  const auto dir = require_path(t, "events", "train-ddpg");
  DDPGConfig cfg;
  cfg.gamma = t.at("gamma");
  cfg.tau = t.at("tau");
  cfg.buffer_capacity = t.at("buffer_capacity");
  cfg.batch_size = t.at("batch_size");
  cfg.actor_lr = t.at("actor_lr");
  cfg.critic_lr = t.at("critic_lr");
  cfg.action_bound_mps2 = t.at("action_bound_mps2");
  cfg.exploration_sigma = t.at("exploration_sigma");
  cfg.exploration_sigma_final = t.at("exploration_sigma_final");
  cfg.H = t.at("H");
  cfg.penalty = t.at("penalty");
  cfg.epsilon_floor = t.at("epsilon_floor");
  cfg.reward_variant = reward_variant_from_name(t.at("reward_variant"));
  cfg.episodes = t.at("episodes");
  cfg.hidden_size = t.at("hidden_size");
  cfg.action_l2 = t.at("action_l2");
  cfg.warmup_transitions = t.at("warmup_transitions");
  cfg.probe_every = t.at("probe_every");
  cfg.seed = run.seed;
  cfg.validate();

  const auto train = read_split(dir, "train");
  const auto probe = read_split(dir, "val");
  const auto result = train_ddpg(train, cfg, probe);
  run.write("model.json", result.actor->to_json().dump(2) + "\n");
  run.write("critic.json", json{{"kind", "ddpg_critic"},
                                {"version", 1},
                                {"spec", to_json(critic_spec(cfg))},
                                {"tensors", params_to_json(result.critic_params)}}
                               .dump(2) + "\n");
  run.write("ddpg_report.csv", result.report.to_csv());
  const auto& r = result.report;
  std::size_t collisions = 0;
  for (bool c : r.collided) collisions += c ? 1 : 0;
  run.results["episodes"] = r.episode_return.size();
  run.results["collided_episodes"] = collisions;
  if (!r.probe_mse.empty() && !std::isnan(r.probe_mse.back()))
    run.results["final_probe_mse_m2"] = r.probe_mse.back();
  return kExitOk;
}

int write_report(Run& run, const BenchmarkReport& report) {
  run.write("report.json", report.to_json().dump(2) + "\n");
  run.write("report.md", report.to_markdown());
  run.results["any_failures"] = report.any_failures();
  if (report.any_failures()) {
    spdlog::error("at least one model produced non-finite output; see report.json");
    return kExitModelFailure;
  }
  return kExitOk;
}

std::pair<std::string, std::string> split_assignment(const std::string& s, const char* what) {
  const auto eq = s.find('=');
  if (eq == std::string::npos || eq == 0 || eq + 1 == s.size())
    throw Error(fmt::format("benchmark: {} '{}' must look like NAME=PATH", what, s));
  return {s.substr(0, eq), s.substr(eq + 1)};
}

int cmd_evaluate(Run& run) {
  const auto& t = run.table("evaluate");
  const auto model_path = require_path(t, "model", "evaluate");
  const auto dir = require_path(t, "events", "evaluate");
  EventManifest manifest;
  const auto events = read_split(dir, t.at("split"), &manifest);
  if (events.empty()) throw Error(fmt::format("evaluate: split '{}' is empty", t.at("split")));
  auto name = t.at("name").get<std::string>();
  if (name.empty()) name = fs::path(model_path).parent_path().filename().string();
  if (name.empty()) name = "model";
  const NamedModel models[] = {{name, load_model(fs::path(model_path))}};
  const DatasetEvents sets[] = {{manifest.dataset_id, events}};
  BenchConfig bc{collision_handling_from_name(t.at("collision_handling")), run.config_hash()};
  return write_report(run, run_benchmark(models, sets, bc));
}

int cmd_benchmark(Run& run) {
  const auto& t = run.table("benchmark");
  if (t.at("models").empty())
    throw Error(
        "benchmark: no trained models registered; pass --model NAME=PATH or list them under "
        "[benchmark] models");
  if (t.at("datasets").empty())
    throw Error("benchmark: no test sets; pass --dataset NAME=DIR or [benchmark] datasets");
  std::vector<NamedModel> models;
  for (const auto& m : t.at("models")) {
    const auto [name, path] = split_assignment(m.get<std::string>(), "model");
    if (!fs::exists(path)) throw Error(fmt::format("benchmark: model file '{}' does not exist", path));
    models.push_back({name, load_model(fs::path(path))});
  }
  std::vector<DatasetEvents> sets;
  for (const auto& d : t.at("datasets")) {
    const auto [name, dir] = split_assignment(d.get<std::string>(), "dataset");
    if (!fs::exists(dir)) throw Error(fmt::format("benchmark: events dir '{}' does not exist", dir));
    auto events = read_split(dir, t.at("split"));
    if (events.empty()) throw Error(fmt::format("benchmark: dataset '{}' has no test events", name));
    sets.push_back({name, std::move(events)});
  }
  BenchConfig bc{collision_handling_from_name(t.at("collision_handling")), run.config_hash()};
  return write_report(run, run_benchmark(models, sets, bc));
}

// Flag plumbing ---------------------------------------------------------------------------

struct Overrides {
  json values = json::object();
  std::vector<std::string> sets;

  /// Binds a string flag whose value lands in config[table][key], typed like
  /// the default.
  void flag(CLI::App* app, const std::string& name, const std::string& table,
            const std::string& key, const std::string& help) {
    app->add_option_function<std::string>(
           name,
           [this, table, key](const std::string& v) {
             const json& def = default_config().at(table).at(key);
             values[table][key] = def.is_string() ? json(v) : toml::parse_value_lenient(v);
           },
           help)
        ->type_name("VALUE");
  }

  void list_flag(CLI::App* app, const std::string& name, const std::string& table,
                 const std::string& key, const std::string& help) {
    app->add_option_function<std::vector<std::string>>(
           name, [this, table, key](const std::vector<std::string>& v) { values[table][key] = v; },
           help)
        ->type_name("NAME=PATH");
  }

  json set_values() const {
    json out = json::object();
    for (const auto& s : sets) {
      const auto eq = s.find('=');
      const auto dot = s.find('.');
      if (eq == std::string::npos || dot == std::string::npos || dot > eq)
        throw Error(fmt::format("--set '{}' must look like table.key=value", s));
      out[s.substr(0, dot)][s.substr(dot + 1, eq - dot - 1)] =
          toml::parse_value_lenient(s.substr(eq + 1));
    }
    return out;
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"followbench: car-following event extraction, model calibration and benchmarking"};
  app.set_version_flag("--version", std::string(kToolkitVersion));
  app.require_subcommand(1);

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<int> jobs;
  std::string out;
  std::string log_level;
  Overrides ov;

  const auto common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "TOML run configuration")->check(CLI::ExistingFile);
    sub->add_option("--seed", seed, "Run seed (overrides [run] seed)");
    sub->add_option("--jobs", jobs, "Worker threads for parallel stages (0 = all cores)");
    sub->add_option("--out", out,
                    "Output directory (default: $FOLLOWBENCH_OUT/<command> or runs/<command>)");
    sub->add_option("--set", ov.sets, "Override any config value: table.key=value");
    sub->add_option("--log-level", log_level, "trace, debug, info, warn, error");
  };

  std::map<std::string, int (*)(Run&)> handlers;
  const auto add = [&](const std::string& name, const std::string& help, int (*fn)(Run&)) {
    auto* sub = app.add_subcommand(name, help);
    common(sub);
    handlers[name] = fn;
    return sub;
  };

  auto* synth = add("synth", "Generate synthetic IDM car-following pairs and event splits", cmd_synth);
  ov.flag(synth, "--profile", "synth", "profile", "constant, sinusoidal, stop_and_go or mixed");
  ov.flag(synth, "--n", "synth", "n", "Number of leader/follower pairs");
  ov.flag(synth, "--duration", "synth", "duration_s", "Event duration in seconds");
  ov.flag(synth, "--noise", "synth", "noise_std_mps2", "Follower acceleration noise (m/s^2)");

  auto* extract = add("extract", "Extract car-following events from a trajectory file", cmd_extract);
  ov.flag(extract, "--input", "extract", "input", "Trajectory CSV");
  ov.flag(extract, "--schema", "extract", "schema", "Column mapping JSON for foreign files");
  ov.flag(extract, "--dataset", "extract", "dataset",
          "Dataset name (registry entry or preset: ngsim, highd, lyft, waymo, spmd, synth)");

  auto* stats = add("stats", "Descriptive statistics and histograms of event splits", cmd_stats);
  ov.flag(stats, "--events", "stats", "events", "Event split directory");

  auto* calib = add("calibrate", "Calibrate IDM or GHR parameters with a genetic algorithm", cmd_calibrate);
  ov.flag(calib, "--events", "calibrate", "events", "Event split directory");
  ov.flag(calib, "--family", "calibrate", "family", "idm or ghr");
  ov.flag(calib, "--generations", "calibrate", "generations", "GA generations");
  ov.flag(calib, "--population", "calibrate", "population_size", "GA population size");

  auto* nn = add("train-nn", "Train the feedforward acceleration model", cmd_train_nn);
  ov.flag(nn, "--events", "train_nn", "events", "Event split directory");
  ov.flag(nn, "--epochs", "train_nn", "epochs", "Training epochs");

  auto* rnn = add("train-rnn", "Train the recurrent acceleration model", cmd_train_rnn);
  ov.flag(rnn, "--events", "train_rnn", "events", "Event split directory");
  ov.flag(rnn, "--epochs", "train_rnn", "epochs", "Training epochs");

  auto* ddpg = add("train-ddpg", "Train the DDPG car-following agent", cmd_train_ddpg);
  ov.flag(ddpg, "--events", "train_ddpg", "events", "Event split directory");
  ov.flag(ddpg, "--episodes", "train_ddpg", "episodes", "Training episodes");
  ov.flag(ddpg, "--reward", "train_ddpg", "reward_variant", "survival_floor or literal");

  auto* eval = add("evaluate", "Roll out one model over an event split", cmd_evaluate);
  ov.flag(eval, "--model", "evaluate", "model", "Model JSON");
  ov.flag(eval, "--events", "evaluate", "events", "Event split directory");
  ov.flag(eval, "--split", "evaluate", "split", "train, val or test");
  ov.flag(eval, "--name", "evaluate", "name", "Model name in the report");

  auto* bench = add("benchmark", "Benchmark table over several models and datasets", cmd_benchmark);
  ov.list_flag(bench, "--model", "benchmark", "models", "Model to evaluate (repeatable)");
  ov.list_flag(bench, "--dataset", "benchmark", "datasets", "Event split directory (repeatable)");
  ov.flag(bench, "--split", "benchmark", "split", "train, val or test");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return kExitUsage;
  }

  const auto* sub = app.get_subcommands().front();
  Run run;
  run.command = sub->get_name();
  try {
    run.config = default_config();
    if (!config_path.empty()) merge_config(run.config, toml::parse_file(config_path), "");
    merge_config(run.config, ov.values, "");
    merge_config(run.config, ov.set_values(), "");
    auto& rt = run.config["run"];
    if (seed) rt["seed"] = *seed;
    if (jobs) rt["jobs"] = *jobs;
    if (!out.empty()) rt["out"] = out;
    if (!log_level.empty()) rt["log_level"] = log_level;

    const auto level = spdlog::level::from_str(rt.at("log_level").get<std::string>());
    if (level == spdlog::level::off && rt.at("log_level") != "off")
      throw Error(fmt::format("unknown log level '{}'", rt.at("log_level").get<std::string>()));
    spdlog::set_level(level);
    run.seed = rt.at("seed").get<std::uint64_t>();
    if (const int j = rt.at("jobs").get<int>(); j > 0) omp_set_num_threads(j);

    std::string out_dir = rt.at("out").get<std::string>();
    if (out_dir.empty()) {
      const char* root = std::getenv("FOLLOWBENCH_OUT");
      out_dir = (fs::path(root && *root ? root : "runs") / run.command).string();
    }
    run.out = out_dir;
    fs::create_directories(run.out);

    const int code = handlers.at(run.command)(run);
    run.write_manifest();
    spdlog::info("{}: wrote {}", run.command, run.out.string());
    return code;
  } catch (const Error& e) {
    spdlog::error("{}", e.what());
    return kExitConfig;
  } catch (const nlohmann::json::exception& e) {
    spdlog::error("config: {}", e.what());
    return kExitConfig;
  }
}
