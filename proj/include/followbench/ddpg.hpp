#pragma once

#include <array>
#include <cstdint>
#include <deque>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "followbench/events.hpp"
#include "followbench/neural.hpp"
#include "followbench/sim.hpp"

namespace followbench {

enum class RewardVariant { kLiteral, kSurvivalFloor };

RewardVariant reward_variant_from_name(const std::string& name);
std::string reward_variant_name(RewardVariant variant);

struct DDPGConfig {
  double gamma = 0.99;
  double tau = 0.005;
  std::size_t buffer_capacity = 100000;
  std::size_t batch_size = 64;
  double actor_lr = 1e-4;
  double critic_lr = 1e-3;
  double action_bound_mps2 = 3.0;
  /// Gaussian exploration noise, decayed linearly to exploration_sigma_final
  /// over the episodes.
  double exploration_sigma = 0.5;
  double exploration_sigma_final = 0.0;
  double H = 1.0;
  double penalty = -50.0;
  double epsilon_floor = 1e-6;
  RewardVariant reward_variant = RewardVariant::kSurvivalFloor;
  std::size_t episodes = 300;
  std::size_t hidden_size = 64;
  /// Weight of mean (action/bound)^2 added to the actor loss; keeps the
  /// tanh head out of saturation.
  double action_l2 = 1.0;
  /// Transitions collected before the first update.
  std::size_t warmup_transitions = 1000;
  /// Probe evaluation cadence in episodes (the last episode is always probed).
  std::size_t probe_every = 10;
  std::uint64_t seed = 0;

  void validate() const;
  double sigma_at(std::size_t episode) const;
};

nlohmann::json to_json(const DDPGConfig& cfg);

/// literal:        r = -max(ln eps, H)
/// survival_floor: r =  max(-ln eps, H)
/// with eps = max(|sim - obs| / obs, epsilon_floor), plus cfg.penalty on collision.
double reward(double spacing_sim_m, double spacing_obs_m, bool collided, const DDPGConfig& cfg);

using Observation = std::array<double, 3>;

/// Fixed-scale features (spacing/100, v_fv/40, dv/10).
Observation observe(const Frame& frame);

struct Transition {
  Observation state{};
  double action = 0.0;
  double reward = 0.0;
  Observation next_state{};
  bool done = false;
};

struct StepResult {
  Observation next_state{};
  double reward = 0.0;
  bool done = false;
  double applied_accel_mps2 = 0.0;
};

/// One episode over one event, sharing the rollout integrator.
class DdpgEnv {
 public:
  DdpgEnv(const CarFollowingEvent& event, const DDPGConfig& cfg);

  Observation observation() const { return observe(sim_.state().now()); }
  const CFState& state() const { return sim_.state(); }
  bool done() const { return sim_.finished(); }
  bool collided() const { return sim_.collided(); }

  /// Clips the action to the bound and advances one step.
  StepResult step(double action_mps2);

 private:
  const CarFollowingEvent* event_;
  const DDPGConfig* cfg_;
  PairSimulator sim_;
};

/// FIFO experience buffer with seeded uniform sampling.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity);

  void push(const Transition& t);
  std::size_t size() const { return items_.size(); }
  std::size_t capacity() const { return capacity_; }
  const Transition& at(std::size_t i) const { return items_.at(i); }
  /// Draws `batch_size` items with replacement; throws if size() < batch_size.
  std::vector<Transition> sample(std::size_t batch_size, std::mt19937_64& rng) const;
  std::vector<std::size_t> sample_indices(std::size_t batch_size, std::mt19937_64& rng) const;

 private:
  std::size_t capacity_;
  std::deque<Transition> items_;
};

/// target <- tau*online + (1-tau)*target
void soft_update(ParamSet& target, const ParamSet& online, double tau);

/// r + gamma*(1-done)*q_next
double td_target(double reward, double gamma, double q_next, bool done);

MLPSpec actor_spec(const DDPGConfig& cfg);
MLPSpec critic_spec(const DDPGConfig& cfg);

/// Critic input: the observation followed by action / action_bound.
std::array<double, 4> critic_input(const Observation& s, double action, double action_bound);

struct ActorCritic {
  Mlp actor;
  Mlp critic;
  Mlp actor_target;
  Mlp critic_target;
  AdamState actor_opt;
  AdamState critic_opt;

  ActorCritic(const DDPGConfig& cfg, std::mt19937_64& rng);
};

struct UpdateLosses {
  double critic_loss = 0.0;
  double actor_loss = 0.0;  // -mean Q(s, mu(s)) + action_l2 * mean (mu/bound)^2
};

/// Mean squared TD error of the critic on `batch` and its parameter gradient.
LossAndGrad critic_loss_gradients(const Mlp& critic, const Mlp& actor_target,
                                  const Mlp& critic_target, std::span<const Transition> batch,
                                  const DDPGConfig& cfg);

/// Critic step, actor step, then soft target updates. Throws on non-finite losses.
UpdateLosses update_step(ActorCritic& nets, std::span<const Transition> batch,
                         const DDPGConfig& cfg);

class DdpgActorPolicy final : public Policy {
 public:
  explicit DdpgActorPolicy(Mlp actor);
  double accel(const CFState& state) const override;
  std::string kind() const override { return "ddpg_actor"; }
  nlohmann::json to_json() const override;
  const Mlp& net() const { return actor_; }

 private:
  Mlp actor_;
};

struct DdpgReport {
  std::vector<double> episode_return;
  std::vector<bool> collided;
  std::vector<std::string> event_id;
  /// NaN for episodes without a probe evaluation.
  std::vector<double> probe_mse;

  std::string to_csv() const;
};

struct DdpgResult {
  ModelHandle actor;
  ParamSet critic_params;
  DdpgReport report;
};

/// Episodes cycle through `train_events` in a freshly shuffled order per
/// pass. Probe MSE is the bench spacing MSE of the deterministic actor on
/// `probe_events` (collided rollouts truncated).
DdpgResult train_ddpg(std::span<const CarFollowingEvent> train_events, const DDPGConfig& cfg,
                      std::span<const CarFollowingEvent> probe_events = {});

}  // namespace followbench
