#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "followbench/events.hpp"
#include "followbench/models.hpp"

namespace followbench {

struct RolloutResult {
  std::vector<double> spacing_sim_m;
  std::vector<double> v_sim_mps;
  /// a_sim[k] is the acceleration applied over the step ending at sample k;
  /// a_sim[0] is 0.
  std::vector<double> a_sim_mps2;
  bool collided = false;
  std::optional<std::size_t> collision_step;
  std::size_t steps_completed = 0;
};

/// Closed-loop follower against an open-loop leader replaying its observed
/// speeds. Shared by rollout() and the reinforcement-learning environment so
/// both integrate identically.
///
/// Update per step, with a_eff = max(a, -v/dt) so speed never goes negative:
///   v+ = v + a_eff*dt,  x+ = x + v*dt + a_eff*dt^2/2.
class PairSimulator {
 public:
  PairSimulator(const CarFollowingEvent& event, std::size_t history_depth);

  const CFState& state() const { return state_; }
  std::size_t step() const { return state_.step; }
  std::size_t last_step() const { return lv_rear_m_.size() - 1; }
  bool finished() const { return collided_ || step() == last_step(); }
  bool collided() const { return collided_; }

  /// Advances one step; returns the acceleration actually applied.
  double advance(double accel_mps2);

 private:
  const CarFollowingEvent* event_;
  std::vector<double> lv_rear_m_;
  double fv_front_m_ = 0.0;
  CFState state_;
  bool collided_ = false;
};

/// Throws Error if the policy returns a non-finite acceleration.
RolloutResult rollout(const Policy& policy, const CarFollowingEvent& event);

struct RolloutOutcome {
  RolloutResult result;
  std::optional<std::string> error;
};

/// One rollout per event, OpenMP-parallel over events. Failures are captured
/// per event instead of aborting the batch.
std::vector<RolloutOutcome> rollout_batch(const Policy& policy,
                                          std::span<const CarFollowingEvent> events);
/// Single-threaded reference for rollout_batch.
std::vector<RolloutOutcome> rollout_batch_serial(const Policy& policy,
                                                 std::span<const CarFollowingEvent> events);

std::string rollout_csv(const RolloutResult& result);

/// a*(k) = (v_fv(k+1) - v_fv(k)) / dt, length L-1.
std::vector<double> derived_accel_targets(const CarFollowingEvent& event);

/// Replays derived_accel_targets step by step; 0 past the end.
class ReplayPolicy final : public Policy {
 public:
  explicit ReplayPolicy(const CarFollowingEvent& event);
  double accel(const CFState& state) const override;
  std::string kind() const override { return "replay"; }
  nlohmann::json to_json() const override;

 private:
  std::vector<double> targets_;
};

// Synthetic events -------------------------------------------------------------

enum class ProfileKind { kConstant, kSinusoidal, kStopAndGo };

ProfileKind profile_from_name(const std::string& name);
std::string profile_name(ProfileKind kind);

/// Scripted leader speed. For stop_and_go each period is: cruise, brake to
/// standstill at decel_mps2, stand for stop_duration_s, accelerate back at
/// accel_mps2, cruise.
struct LeaderProfile {
  ProfileKind kind = ProfileKind::kConstant;
  double base_speed_mps = 15.0;
  double amplitude_mps = 3.0;  // sinusoidal
  double period_s = 20.0;      // sinusoidal, stop_and_go
  double phase_s = 0.0;
  double decel_mps2 = 2.0;
  double accel_mps2 = 1.5;
  double stop_duration_s = 3.0;

  double speed_at(double t_s) const;
};

struct SynthesisOptions {
  double duration_s = 20.0;
  double dt_s = 0.1;
  /// Start the follower at the leader's speed and the generator's
  /// equilibrium gap (IDM generators only); otherwise use the fields below.
  bool start_at_equilibrium = true;
  double initial_speed_mps = 15.0;
  double initial_spacing_m = 30.0;
  /// Added to the equilibrium gap / leader speed when starting at equilibrium.
  double spacing_offset_m = 0.0;
  double speed_offset_mps = 0.0;
  double leader_length_m = 4.5;
};

struct SyntheticPair {
  CarFollowingEvent event;
  std::vector<double> lv_front_m;
  std::vector<double> fv_front_m;
};

/// Equilibrium gap of the IDM at speed v with dv = 0.
double idm_equilibrium_gap(const IDMParams& params, double v_mps);

/// Leader follows the profile; the follower is driven by `generator` plus
/// seeded Gaussian acceleration noise. Throws Error on collision.
SyntheticPair synthesize_pair(const LeaderProfile& profile, const Policy& generator,
                              double noise_std_mps2, std::uint64_t seed,
                              const SynthesisOptions& options = {});
CarFollowingEvent synthesize_event(const LeaderProfile& profile, const IDMParams& generator,
                                   double noise_std_mps2, std::uint64_t seed,
                                   const SynthesisOptions& options = {});

}  // namespace followbench
