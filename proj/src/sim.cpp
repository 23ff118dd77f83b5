#include "followbench/sim.hpp"

#include <cmath>
#include <numbers>
#include <random>

#include <fmt/format.h>

#include "followbench/common.hpp"

namespace followbench {

PairSimulator::PairSimulator(const CarFollowingEvent& event, std::size_t history_depth)
    : event_(&event), state_{HistoryRing(history_depth), 0, event.dt_s} {
  const auto n = event.length();
  if (n < 2) throw Error(fmt::format("event {}: too short to simulate", event.event_id));
  // Leader rear bumper by trapezoidal integration of its speed, in a frame
  // where the follower's front bumper starts at 0.
  lv_rear_m_.resize(n);
  lv_rear_m_[0] = event.spacing_m[0];
  for (std::size_t k = 0; k + 1 < n; ++k)
    lv_rear_m_[k + 1] =
        lv_rear_m_[k] + 0.5 * (event.v_lv_mps[k] + event.v_lv_mps[k + 1]) * event.dt_s;
  state_.history.fill({event.spacing_m[0], event.v_fv_mps[0],
                       event.v_fv_mps[0] - event.v_lv_mps[0], event.v_lv_mps[0]});
}

double PairSimulator::advance(double accel) {
  if (finished()) throw Error("advance() on a finished simulation");
  const double dt = state_.dt_s;
  const double v = state_.v_fv_mps();
  const double applied = std::max(accel, -v / dt);
  const double v_next = std::max(0.0, v + applied * dt);
  fv_front_m_ += v * dt + 0.5 * applied * dt * dt;

  const std::size_t k = ++state_.step;
  const double v_lv = event_->v_lv_mps[k];
  const double spacing = lv_rear_m_[k] - fv_front_m_;
  state_.history.push({spacing, v_next, v_next - v_lv, v_lv});
  collided_ = spacing <= 0.0;
  return applied;
}

RolloutResult rollout(const Policy& policy, const CarFollowingEvent& event) {
  PairSimulator sim(event, policy.history_depth(event.dt_s));
  RolloutResult r;
  const auto n = event.length();
  r.spacing_sim_m.reserve(n);
  r.v_sim_mps.reserve(n);
  r.a_sim_mps2.reserve(n);
  r.spacing_sim_m.push_back(sim.state().spacing_m());
  r.v_sim_mps.push_back(sim.state().v_fv_mps());
  r.a_sim_mps2.push_back(0.0);
  while (!sim.finished()) {
    const double a = policy.accel(sim.state());
    if (!std::isfinite(a))
      throw Error(fmt::format("event {}: {} policy returned non-finite acceleration at step {}",
                              event.event_id, policy.kind(), sim.step()));
    r.a_sim_mps2.push_back(sim.advance(a));
    r.spacing_sim_m.push_back(sim.state().spacing_m());
    r.v_sim_mps.push_back(sim.state().v_fv_mps());
  }
  r.collided = sim.collided();
  if (r.collided) r.collision_step = sim.step();
  r.steps_completed = r.spacing_sim_m.size();
  return r;
}

namespace {
RolloutOutcome guarded_rollout(const Policy& policy, const CarFollowingEvent& event) {
  RolloutOutcome out;
  try {
    out.result = rollout(policy, event);
  } catch (const std::exception& e) {
    out.error = e.what();
  }
  return out;
}
}  // namespace

std::vector<RolloutOutcome> rollout_batch(const Policy& policy,
                                          std::span<const CarFollowingEvent> events) {
  std::vector<RolloutOutcome> out(events.size());
  const auto n = static_cast<std::ptrdiff_t>(events.size());
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t i = 0; i < n; ++i) out[i] = guarded_rollout(policy, events[i]);
  return out;
}

std::vector<RolloutOutcome> rollout_batch_serial(const Policy& policy,
                                                 std::span<const CarFollowingEvent> events) {
  std::vector<RolloutOutcome> out;
  out.reserve(events.size());
  for (const auto& e : events) out.push_back(guarded_rollout(policy, e));
  return out;
}

std::string rollout_csv(const RolloutResult& r) {
  std::string out = "t_index,spacing_sim_m,v_sim_mps,a_sim_mps2\n";
  for (std::size_t k = 0; k < r.steps_completed; ++k)
    out += fmt::format("{},{},{},{}\n", k, format_real(r.spacing_sim_m[k]),
                       format_real(r.v_sim_mps[k]), format_real(r.a_sim_mps2[k]));
  return out;
}

std::vector<double> derived_accel_targets(const CarFollowingEvent& event) {
  const auto& v = event.v_fv_mps;
  if (v.size() < 2) throw Error("derived_accel_targets: event shorter than 2 samples");
  std::vector<double> a(v.size() - 1);
  for (std::size_t k = 0; k + 1 < v.size(); ++k) a[k] = (v[k + 1] - v[k]) / event.dt_s;
  return a;
}

ReplayPolicy::ReplayPolicy(const CarFollowingEvent& event)
    : targets_(derived_accel_targets(event)) {}

double ReplayPolicy::accel(const CFState& state) const {
  return state.step < targets_.size() ? targets_[state.step] : 0.0;
}

nlohmann::json ReplayPolicy::to_json() const {
  return {{"kind", kind()}, {"version", 1}, {"targets", targets_}};
}

ProfileKind profile_from_name(const std::string& name) {
  if (name == "constant") return ProfileKind::kConstant;
  if (name == "sinusoidal") return ProfileKind::kSinusoidal;
  if (name == "stop_and_go") return ProfileKind::kStopAndGo;
  throw Error(fmt::format("unknown leader profile '{}' (constant, sinusoidal, stop_and_go)", name));
}

std::string profile_name(ProfileKind kind) {
  switch (kind) {
    case ProfileKind::kConstant: return "constant";
    case ProfileKind::kSinusoidal: return "sinusoidal";
    case ProfileKind::kStopAndGo: return "stop_and_go";
  }
  return "unknown";
}

double LeaderProfile::speed_at(double t) const {
  switch (kind) {
    case ProfileKind::kConstant:
      return base_speed_mps;
    case ProfileKind::kSinusoidal:
      return std::max(0.0, base_speed_mps + amplitude_mps * std::sin(2.0 * std::numbers::pi *
                                                                     (t + phase_s) / period_s));
    case ProfileKind::kStopAndGo: {
      const double braking = base_speed_mps / decel_mps2;
      const double launching = base_speed_mps / accel_mps2;
      const double cruise = period_s - braking - stop_duration_s - launching;
      if (cruise < 0.0) throw Error("stop_and_go period too short for its phases");
      double tau = std::fmod(t + phase_s, period_s);
      if (tau < 0.0) tau += period_s;
      if (tau < cruise) return base_speed_mps;
      tau -= cruise;
      if (tau < braking) return base_speed_mps - decel_mps2 * tau;
      tau -= braking;
      if (tau < stop_duration_s) return 0.0;
      tau -= stop_duration_s;
      return std::min(base_speed_mps, accel_mps2 * tau);
    }
  }
  return base_speed_mps;
}

double idm_equilibrium_gap(const IDMParams& p, double v) {
  const double free = 1.0 - std::pow(v / p.v_des, p.lambda_exp);
  if (!(free > 0.0)) throw Error("no IDM equilibrium at or above the desired speed");
  return idm_desired_gap(p, v, 0.0) / std::sqrt(free);
}

SyntheticPair synthesize_pair(const LeaderProfile& profile, const Policy& generator,
                              double noise_std, std::uint64_t seed,
                              const SynthesisOptions& opt) {
  if (opt.duration_s + 1e-9 < 15.0) throw Error("synthetic events must last at least 15 s");
  if (noise_std < 0.0) throw Error("noise standard deviation must be non-negative");
  const auto n = static_cast<std::size_t>(std::llround(opt.duration_s / opt.dt_s)) + 1;

  CarFollowingEvent e;
  e.dt_s = opt.dt_s;
  e.event_id = fmt::format("synth_{}_{}", profile_name(profile.kind), seed);
  e.source = "synthetic";
  e.fv_id = 1;
  e.lv_id = 0;
  e.v_lv_mps.resize(n);
  for (std::size_t k = 0; k < n; ++k) e.v_lv_mps[k] = profile.speed_at(k * opt.dt_s);

  double v0 = opt.initial_speed_mps;
  double s0 = opt.initial_spacing_m;
  if (opt.start_at_equilibrium) {
    v0 = e.v_lv_mps[0];
    if (const auto* idm = dynamic_cast<const IDMPolicy*>(&generator))
      s0 = idm_equilibrium_gap(idm->params(), v0);
    v0 += opt.speed_offset_mps;
    s0 += opt.spacing_offset_m;
  }
  if (!(s0 > 0.0) || v0 < 0.0) throw Error("invalid synthetic initial state");

  // Rollout-compatible leader: the simulator reconstructs the same positions.
  e.spacing_m.assign(n, s0);
  e.v_fv_mps.assign(n, v0);
  e.dv_mps.assign(n, v0 - e.v_lv_mps[0]);
  PairSimulator sim(e, generator.history_depth(opt.dt_s));

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  SyntheticPair pair;
  pair.fv_front_m.assign(1, 0.0);
  double x = 0.0;
  while (!sim.finished()) {
    const double a = generator.accel(sim.state()) + noise_std * noise(rng);
    const double v = sim.state().v_fv_mps();
    const double applied = sim.advance(a);
    x += v * opt.dt_s + 0.5 * applied * opt.dt_s * opt.dt_s;
    const std::size_t k = sim.step();
    if (sim.collided())
      throw Error(fmt::format("synthetic generator collided at step {} (seed {})", k, seed));
    e.spacing_m[k] = sim.state().spacing_m();
    e.v_fv_mps[k] = sim.state().v_fv_mps();
    e.dv_mps[k] = e.v_fv_mps[k] - e.v_lv_mps[k];
    pair.fv_front_m.push_back(x);
  }
  pair.lv_front_m.resize(n);
  for (std::size_t k = 0; k < n; ++k)
    pair.lv_front_m[k] = pair.fv_front_m[k] + e.spacing_m[k] + opt.leader_length_m;
  validate_event(e);
  pair.event = std::move(e);
  return pair;
}

CarFollowingEvent synthesize_event(const LeaderProfile& profile, const IDMParams& generator,
                                   double noise_std, std::uint64_t seed,
                                   const SynthesisOptions& options) {
  return synthesize_pair(profile, IDMPolicy(generator), noise_std, seed, options).event;
}

}  // namespace followbench
