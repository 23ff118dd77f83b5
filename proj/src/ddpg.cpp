#include "followbench/ddpg.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "followbench/bench.hpp"
#include "followbench/common.hpp"

namespace followbench {

RewardVariant reward_variant_from_name(const std::string& name) {
  if (name == "literal") return RewardVariant::kLiteral;
  if (name == "survival_floor") return RewardVariant::kSurvivalFloor;
  throw Error(fmt::format("unknown reward variant '{}' (literal, survival_floor)", name));
}

std::string reward_variant_name(RewardVariant variant) {
  return variant == RewardVariant::kLiteral ? "literal" : "survival_floor";
}

void DDPGConfig::validate() const {
  if (!(gamma > 0.0 && gamma <= 1.0)) throw Error("ddpg: gamma must lie in (0, 1]");
  if (!(tau > 0.0 && tau <= 1.0)) throw Error("ddpg: tau must lie in (0, 1]");
  if (!(action_bound_mps2 > 0.0)) throw Error("ddpg: action bound must be positive");
  if (!(epsilon_floor > 0.0)) throw Error("ddpg: epsilon floor must be positive");
  if (batch_size < 1 || buffer_capacity < batch_size)
    throw Error("ddpg: buffer capacity must hold at least one batch");
  if (!(actor_lr > 0.0 && critic_lr > 0.0)) throw Error("ddpg: learning rates must be positive");
  if (exploration_sigma < 0.0 || exploration_sigma_final < 0.0)
    throw Error("ddpg: exploration sigma must be non-negative");
  if (hidden_size < 1) throw Error("ddpg: hidden size must be positive");
  if (action_l2 < 0.0) throw Error("ddpg: action_l2 must be non-negative");
  if (probe_every < 1) throw Error("ddpg: probe cadence must be at least 1");
}

double DDPGConfig::sigma_at(std::size_t episode) const {
  if (episodes <= 1) return exploration_sigma;
  const double frac =
      std::min(1.0, static_cast<double>(episode) / static_cast<double>(episodes - 1));
  return exploration_sigma + frac * (exploration_sigma_final - exploration_sigma);
}

nlohmann::json to_json(const DDPGConfig& c) {
  return {{"gamma", c.gamma},
          {"tau", c.tau},
          {"buffer_capacity", c.buffer_capacity},
          {"batch_size", c.batch_size},
          {"actor_lr", c.actor_lr},
          {"critic_lr", c.critic_lr},
          {"action_bound_mps2", c.action_bound_mps2},
          {"exploration_sigma", c.exploration_sigma},
          {"exploration_sigma_final", c.exploration_sigma_final},
          {"H", c.H},
          {"penalty", c.penalty},
          {"epsilon_floor", c.epsilon_floor},
          {"reward_variant", reward_variant_name(c.reward_variant)},
          {"episodes", c.episodes},
          {"hidden_size", c.hidden_size},
          {"action_l2", c.action_l2},
          {"warmup_transitions", c.warmup_transitions},
          {"probe_every", c.probe_every},
          {"seed", c.seed}};
}

double reward(double spacing_sim_m, double spacing_obs_m, bool collided, const DDPGConfig& cfg) {
  if (!(spacing_obs_m > 0.0))
    throw Error(fmt::format("reward: observed spacing must be positive, got {}", spacing_obs_m));
  const double eps =
      std::max(std::abs(spacing_sim_m - spacing_obs_m) / spacing_obs_m, cfg.epsilon_floor);
  const double base = cfg.reward_variant == RewardVariant::kLiteral
                          ? -std::max(std::log(eps), cfg.H)
                          : std::max(-std::log(eps), cfg.H);
  return base + (collided ? cfg.penalty : 0.0);
}

Observation observe(const Frame& f) {
  return {f.spacing_m / 100.0, f.v_fv_mps / 40.0, f.dv_mps / 10.0};
}

DdpgEnv::DdpgEnv(const CarFollowingEvent& event, const DDPGConfig& cfg)
    : event_(&event), cfg_(&cfg), sim_(event, 1) {}

StepResult DdpgEnv::step(double action) {
  if (done()) throw Error(fmt::format("event {}: step() on a terminal environment", event_->event_id));
  const double bound = cfg_->action_bound_mps2;
  StepResult out;
  out.applied_accel_mps2 = sim_.advance(std::clamp(action, -bound, bound));
  out.next_state = observation();
  out.done = done();
  out.reward = reward(sim_.state().spacing_m(), event_->spacing_m[sim_.step()], collided(), *cfg_);
  return out;
}

ReplayBuffer::ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
  if (capacity == 0) throw Error("replay buffer capacity must be positive");
}

void ReplayBuffer::push(const Transition& t) {
  if (items_.size() == capacity_) items_.pop_front();
  items_.push_back(t);
}

std::vector<std::size_t> ReplayBuffer::sample_indices(std::size_t batch_size,
                                                      std::mt19937_64& rng) const {
  if (items_.size() < batch_size)
    throw Error(fmt::format("replay buffer holds {} transitions, batch needs {}", items_.size(),
                            batch_size));
  std::uniform_int_distribution<std::size_t> pick(0, items_.size() - 1);
  std::vector<std::size_t> idx(batch_size);
  for (auto& i : idx) i = pick(rng);
  return idx;
}

std::vector<Transition> ReplayBuffer::sample(std::size_t batch_size, std::mt19937_64& rng) const {
  std::vector<Transition> out;
  out.reserve(batch_size);
  for (auto i : sample_indices(batch_size, rng)) out.push_back(items_[i]);
  return out;
}

void soft_update(ParamSet& target, const ParamSet& online, double tau) {
  check_same_shapes(target, online);
  for (std::size_t t = 0; t < target.size(); ++t)
    for (std::size_t i = 0; i < target[t].data.size(); ++i)
      target[t].data[i] = tau * online[t].data[i] + (1.0 - tau) * target[t].data[i];
}

double td_target(double r, double gamma, double q_next, bool done) {
  return done ? r : r + gamma * q_next;
}

MLPSpec actor_spec(const DDPGConfig& cfg) {
  return {{kFrameFeatures, cfg.hidden_size, cfg.hidden_size, 1}, OutputActivation::kTanh,
          cfg.action_bound_mps2};
}

MLPSpec critic_spec(const DDPGConfig& cfg) {
  return {{kFrameFeatures + 1, cfg.hidden_size, cfg.hidden_size, 1}, OutputActivation::kLinear, 1.0};
}

std::array<double, 4> critic_input(const Observation& s, double action, double bound) {
  return {s[0], s[1], s[2], action / bound};
}

namespace {

// Output layers start near zero so the actor is unsaturated and Q starts flat.
void shrink_output_layer(Mlp& net, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-3e-3, 3e-3);
  auto& params = net.params();
  for (std::size_t t = params.size() - 2; t < params.size(); ++t)
    for (auto& w : params[t].data) w = dist(rng);
}

}  // namespace

ActorCritic::ActorCritic(const DDPGConfig& cfg, std::mt19937_64& rng)
    : actor(actor_spec(cfg)),
      critic(critic_spec(cfg)),
      actor_target(actor_spec(cfg)),
      critic_target(critic_spec(cfg)) {
  actor.init_glorot(rng);
  critic.init_glorot(rng);
  shrink_output_layer(actor, rng);
  shrink_output_layer(critic, rng);
  actor_target.params() = actor.params();
  critic_target.params() = critic.params();
  actor_opt = adam_init(actor.params());
  critic_opt = adam_init(critic.params());
}

LossAndGrad critic_loss_gradients(const Mlp& critic, const Mlp& actor_target,
                                  const Mlp& critic_target, std::span<const Transition> batch,
                                  const DDPGConfig& cfg) {
  if (batch.empty()) throw Error("ddpg: empty batch");
  const double bound = cfg.action_bound_mps2;
  LossAndGrad out{0.0, zeros_like(critic.params())};
  Mlp::Cache cache;
  const double scale = 1.0 / static_cast<double>(batch.size());
  for (const auto& t : batch) {
    double q_next = 0.0;
    if (!t.done) {
      const double a_next = actor_target.forward(t.next_state)[0];
      q_next = critic_target.forward(critic_input(t.next_state, a_next, bound))[0];
    }
    const double y = td_target(t.reward, cfg.gamma, q_next, t.done);
    const double q = critic.forward(critic_input(t.state, t.action, bound), cache)[0];
    const double err = q - y;
    out.loss += err * err * scale;
    const double g = 2.0 * err * scale;
    critic.backward(cache, std::span<const double>(&g, 1), out.grads);
  }
  return out;
}

UpdateLosses update_step(ActorCritic& nets, std::span<const Transition> batch,
                         const DDPGConfig& cfg) {
  UpdateLosses losses;
  const auto critic_lg =
      critic_loss_gradients(nets.critic, nets.actor_target, nets.critic_target, batch, cfg);
  losses.critic_loss = critic_lg.loss;
  if (!std::isfinite(losses.critic_loss)) throw Error("ddpg: non-finite critic loss");
  AdamConfig critic_adam;
  critic_adam.learning_rate = cfg.critic_lr;
  adam_step(nets.critic.params(), critic_lg.grads, nets.critic_opt, critic_adam);

  // Actor ascends Q(s, mu(s)) through the critic's action input.
  const double bound = cfg.action_bound_mps2;
  const double scale = 1.0 / static_cast<double>(batch.size());
  ParamSet actor_grads = zeros_like(nets.actor.params());
  ParamSet critic_scratch = zeros_like(nets.critic.params());
  Mlp::Cache actor_cache, critic_cache;
  for (const auto& t : batch) {
    const double a = nets.actor.forward(t.state, actor_cache)[0];
    const double q = nets.critic.forward(critic_input(t.state, a, bound), critic_cache)[0];
    const double u = a / bound;
    losses.actor_loss += (cfg.action_l2 * u * u - q) * scale;
    const double one = 1.0;
    const auto dq_dinput = nets.critic.backward(critic_cache, std::span<const double>(&one, 1),
                                                critic_scratch);
    const double g = (2.0 * cfg.action_l2 * u - dq_dinput[kFrameFeatures]) / bound * scale;
    nets.actor.backward(actor_cache, std::span<const double>(&g, 1), actor_grads);
  }
  if (!std::isfinite(losses.actor_loss)) throw Error("ddpg: non-finite actor loss");
  AdamConfig actor_adam;
  actor_adam.learning_rate = cfg.actor_lr;
  adam_step(nets.actor.params(), actor_grads, nets.actor_opt, actor_adam);

  soft_update(nets.critic_target.params(), nets.critic.params(), cfg.tau);
  soft_update(nets.actor_target.params(), nets.actor.params(), cfg.tau);
  return losses;
}

DdpgActorPolicy::DdpgActorPolicy(Mlp actor) : actor_(std::move(actor)) {
  if (actor_.input_size() != kFrameFeatures || actor_.output_size() != 1)
    throw Error("ddpg actor must map 3 features to 1 action");
}

double DdpgActorPolicy::accel(const CFState& state) const {
  return actor_.forward(observe(state.now()))[0];
}

nlohmann::json DdpgActorPolicy::to_json() const {
  return {{"kind", kind()},
          {"version", 1},
          {"spec", followbench::to_json(actor_.spec())},
          {"tensors", params_to_json(actor_.params())}};
}

std::string DdpgReport::to_csv() const {
  std::string out = "episode,return,collided,probe_mse\n";
  for (std::size_t e = 0; e < episode_return.size(); ++e)
    out += fmt::format("{},{},{},{}\n", e, format_real(episode_return[e]), collided[e] ? 1 : 0,
                       std::isnan(probe_mse[e]) ? std::string() : format_real(probe_mse[e]));
  return out;
}

DdpgResult train_ddpg(std::span<const CarFollowingEvent> train_events, const DDPGConfig& cfg,
                      std::span<const CarFollowingEvent> probe_events) {
  cfg.validate();
  if (train_events.empty()) throw Error("train_ddpg: no training events");
  std::mt19937_64 rng(cfg.seed);
  ActorCritic nets(cfg, rng);
  ReplayBuffer buffer(cfg.buffer_capacity);
  std::normal_distribution<double> gauss(0.0, 1.0);

  std::vector<std::size_t> order(train_events.size());
  std::iota(order.begin(), order.end(), 0);
  DdpgReport report;
  for (std::size_t ep = 0; ep < cfg.episodes; ++ep) {
    const std::size_t pos = ep % order.size();
    if (pos == 0) std::shuffle(order.begin(), order.end(), rng);
    const auto& event = train_events[order[pos]];
    const double sigma = cfg.sigma_at(ep);

    DdpgEnv env(event, cfg);
    double ret = 0.0;
    while (!env.done()) {
      Transition t;
      t.state = env.observation();
      const double mu = nets.actor.forward(t.state)[0];
      t.action = std::clamp(mu + sigma * gauss(rng), -cfg.action_bound_mps2, cfg.action_bound_mps2);
      const auto step = env.step(t.action);
      t.reward = step.reward;
      t.next_state = step.next_state;
      t.done = step.done;
      ret += t.reward;
      buffer.push(t);
      if (buffer.size() >= std::max(cfg.batch_size, cfg.warmup_transitions)) {
        const auto batch = buffer.sample(cfg.batch_size, rng);
        update_step(nets, batch, cfg);
      }
    }
    report.episode_return.push_back(ret);
    report.collided.push_back(env.collided());
    report.event_id.push_back(event.event_id);

    double probe = std::numeric_limits<double>::quiet_NaN();
    if (!probe_events.empty() && ((ep + 1) % cfg.probe_every == 0 || ep + 1 == cfg.episodes)) {
      const DdpgActorPolicy policy(nets.actor);
      probe = evaluate_model_serial(policy, probe_events, CollisionHandling::kTruncate)
                  .mse_spacing_m2;
    }
    report.probe_mse.push_back(probe);
    spdlog::debug("ddpg episode {}: return {:.3f} collided {} probe {}", ep, ret, env.collided(),
                  probe);
  }

  DdpgResult out;
  out.actor = std::make_shared<DdpgActorPolicy>(nets.actor);
  out.critic_params = nets.critic.params();
  out.report = std::move(report);
  return out;
}

}  // namespace followbench
