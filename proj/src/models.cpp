#include "followbench/models.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "followbench/common.hpp"

namespace followbench {

HistoryRing::HistoryRing(std::size_t capacity) : slots_(std::max<std::size_t>(capacity, 1)) {}

void HistoryRing::push(const Frame& frame) {
  head_ = (head_ + 1) % slots_.size();
  slots_[head_] = frame;
}

void HistoryRing::fill(const Frame& frame) {
  std::fill(slots_.begin(), slots_.end(), frame);
}

const Frame& HistoryRing::lag(std::size_t k) const {
  if (k >= slots_.size())
    throw Error(fmt::format("history lag {} exceeds depth {}", k, slots_.size()));
  return slots_[(head_ + slots_.size() - k) % slots_.size()];
}

std::size_t ghr_delay_steps(const GHRParams& params, double dt_s) {
  if (params.reaction_time_s < 0.0) throw Error("GHR reaction time must be non-negative");
  const double steps = params.reaction_time_s / dt_s;
  const double whole = std::round(steps);
  if (std::abs(steps - whole) * dt_s > 1e-9)
    throw Error(fmt::format("GHR reaction time {} s is not a multiple of dt {} s",
                            params.reaction_time_s, dt_s));
  return static_cast<std::size_t>(whole);
}

double ghr_accel(const GHRParams& params, const CFState& state, const GHROptions& options) {
  const std::size_t delay = ghr_delay_steps(params, state.dt_s);
  if (delay >= state.history.capacity())
    throw Error(fmt::format("GHR needs {} frames of history, state holds {}", delay + 1,
                            state.history.capacity()));
  const Frame& past = state.history.lag(delay);
  if (!(past.spacing_m > 0.0)) throw Error("GHR: delayed spacing must be positive");
  const double v = state.v_fv_mps();
  if (v < 0.0) throw Error("GHR: negative follower speed");

  const double stimulus = options.stimulus_leader_minus_follower ? -past.dv_mps : past.dv_mps;
  const double v_eff =
      params.m_exp < 0.0 ? std::max(v, options.min_speed_for_negative_exponent_mps) : v;
  const double speed_term = params.m_exp == 0.0 ? 1.0 : std::pow(v_eff, params.m_exp);
  return params.c * speed_term * stimulus / std::pow(past.spacing_m, params.l_exp);
}

void IDMParams::validate() const {
  if (!(a0 > 0.0 && b > 0.0 && v_des > 0.0 && t_des > 0.0 && s0 > 0.0))
    throw Error("IDM parameters a0, b, v_des, t_des, s0 must be positive");
  if (!(lambda_exp >= 1.0)) throw Error("IDM exponent must be >= 1");
}

double idm_desired_gap(const IDMParams& p, double v, double dv, bool unfloored_gap) {
  const double dynamic = v * p.t_des + v * dv / (2.0 * std::sqrt(p.a0 * p.b));
  return p.s0 + (unfloored_gap ? dynamic : std::max(0.0, dynamic));
}

double idm_accel(const IDMParams& p, const CFState& state, const IDMOptions& options) {
  const double s = state.spacing_m();
  if (!(s > 0.0)) throw Error("IDM: spacing must be positive");
  const double v = state.v_fv_mps();
  const double gap = idm_desired_gap(p, v, state.dv_mps(), options.unfloored_gap);
  const double ratio = gap / s;
  const double a = p.a0 * (1.0 - std::pow(v / p.v_des, p.lambda_exp) - ratio * ratio);
  return std::clamp(a, options.min_accel_mps2, p.a0);
}

GHRPolicy::GHRPolicy(GHRParams params, GHROptions options, AccelClip clip)
    : params_(params), options_(options), clip_(clip) {
  if (params_.reaction_time_s < 0.0) throw Error("GHR reaction time must be non-negative");
}

double GHRPolicy::accel(const CFState& state) const {
  return std::clamp(ghr_accel(params_, state, options_), clip_.min_mps2, clip_.max_mps2);
}

std::size_t GHRPolicy::history_depth(double dt_s) const {
  return ghr_delay_steps(params_, dt_s) + 1;
}

nlohmann::json GHRPolicy::to_json() const {
  return {{"kind", kind()},
          {"version", 1},
          {"params", followbench::to_json(params_)},
          {"options",
           {{"stimulus_leader_minus_follower", options_.stimulus_leader_minus_follower},
            {"min_speed_for_negative_exponent_mps",
             options_.min_speed_for_negative_exponent_mps}}},
          {"clip", {{"min_mps2", clip_.min_mps2}, {"max_mps2", clip_.max_mps2}}}};
}

IDMPolicy::IDMPolicy(IDMParams params, IDMOptions options) : params_(params), options_(options) {
  params_.validate();
}

double IDMPolicy::accel(const CFState& state) const { return idm_accel(params_, state, options_); }

nlohmann::json IDMPolicy::to_json() const {
  return {{"kind", kind()},
          {"version", 1},
          {"params", followbench::to_json(params_)},
          {"options",
           {{"unfloored_gap", options_.unfloored_gap},
            {"min_accel_mps2", options_.min_accel_mps2}}}};
}

nlohmann::json ConstantPolicy::to_json() const {
  return {{"kind", kind()}, {"version", 1}, {"accel_mps2", accel_}};
}

nlohmann::json to_json(const GHRParams& p) {
  return {{"c", p.c}, {"m_exp", p.m_exp}, {"l_exp", p.l_exp}, {"reaction_time_s", p.reaction_time_s}};
}

nlohmann::json to_json(const IDMParams& p) {
  return {{"a0_mps2", p.a0},   {"b_mps2", p.b},  {"v_des_mps", p.v_des},
          {"t_des_s", p.t_des}, {"s0_m", p.s0}, {"lambda", p.lambda_exp}};
}

GHRParams ghr_params_from_json(const nlohmann::json& j) {
  GHRParams p;
  p.c = j.at("c").get<double>();
  p.m_exp = j.at("m_exp").get<double>();
  p.l_exp = j.at("l_exp").get<double>();
  p.reaction_time_s = j.at("reaction_time_s").get<double>();
  return p;
}

IDMParams idm_params_from_json(const nlohmann::json& j) {
  IDMParams p;
  p.a0 = j.at("a0_mps2").get<double>();
  p.b = j.at("b_mps2").get<double>();
  p.v_des = j.at("v_des_mps").get<double>();
  p.t_des = j.at("t_des_s").get<double>();
  p.s0 = j.at("s0_m").get<double>();
  p.lambda_exp = j.at("lambda").get<double>();
  p.validate();
  return p;
}

}  // namespace followbench
