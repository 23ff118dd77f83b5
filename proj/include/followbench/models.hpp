#pragma once

#include <cstddef>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace followbench {

/// Observation of the follower/leader pair at one step.
struct Frame {
  double spacing_m = 0.0;
  double v_fv_mps = 0.0;
  double dv_mps = 0.0;  // v_fv - v_lv
  double v_lv_mps = 0.0;
};

/// Fixed-capacity ring of recent frames. Lag 0 is the newest frame.
class HistoryRing {
 public:
  explicit HistoryRing(std::size_t capacity = 1);

  void push(const Frame& frame);
  /// Fills every slot with `frame`, so lags before the first push repeat it.
  void fill(const Frame& frame);
  const Frame& lag(std::size_t k) const;
  std::size_t capacity() const { return slots_.size(); }

 private:
  std::vector<Frame> slots_;
  std::size_t head_ = 0;  // index of lag 0
};

/// Everything a policy may read when choosing the follower's acceleration.
struct CFState {
  HistoryRing history;
  std::size_t step = 0;  // index into the event being simulated
  double dt_s = 0.1;

  const Frame& now() const { return history.lag(0); }
  double spacing_m() const { return now().spacing_m; }
  double v_fv_mps() const { return now().v_fv_mps; }
  double dv_mps() const { return now().dv_mps; }
  double v_lv_mps() const { return now().v_lv_mps; }
};

/// Acceleration policy behind every benchmarked model. Implementations must
/// be safe to call concurrently on a const instance.
class Policy {
 public:
  virtual ~Policy() = default;
  virtual double accel(const CFState& state) const = 0;
  /// Frames (including the current one) the policy reads at step `dt_s`.
  virtual std::size_t history_depth(double /*dt_s*/) const { return 1; }
  virtual std::string kind() const = 0;
  /// Self-describing document accepted by load_model.
  virtual nlohmann::json to_json() const = 0;
};

using ModelHandle = std::shared_ptr<const Policy>;

struct AccelClip {
  double min_mps2 = -8.0;
  double max_mps2 = 8.0;
};

// GHR ------------------------------------------------------------------------

struct GHRParams {
  double c = 1.0;
  double m_exp = 0.0;
  double l_exp = 1.0;
  double reaction_time_s = 0.0;
};

struct GHROptions {
  /// true: stimulus = v_lv - v_fv (a faster leader pulls the follower along).
  /// false: stimulus = v_fv - v_lv, the relative-speed convention of the IDM.
  bool stimulus_leader_minus_follower = true;
  /// Floor applied to the follower speed when m_exp < 0, avoiding 0^-m.
  double min_speed_for_negative_exponent_mps = 0.1;
};

/// Reaction delay in whole steps; throws if not a multiple of dt within 1e-9.
std::size_t ghr_delay_steps(const GHRParams& params, double dt_s);

/// a = c * v(t)^m * stimulus(t-T) / spacing(t-T)^l
double ghr_accel(const GHRParams& params, const CFState& state, const GHROptions& options = {});

// IDM ------------------------------------------------------------------------

struct IDMParams {
  double a0 = 1.0;
  double b = 1.5;
  double v_des = 30.0;
  double t_des = 1.5;
  double s0 = 2.0;
  double lambda_exp = 4.0;

  void validate() const;
};

struct IDMOptions {
  /// Evaluate the desired gap without flooring its dynamic part at zero.
  bool unfloored_gap = false;
  /// Lower clamp on the returned acceleration; the upper clamp is a0.
  double min_accel_mps2 = -8.0;
};

/// Desired gap s0 + max(0, v*T + v*dv / (2*sqrt(a0*b))).
double idm_desired_gap(const IDMParams& params, double v_mps, double dv_mps,
                       bool unfloored_gap = false);
double idm_accel(const IDMParams& params, const CFState& state, const IDMOptions& options = {});

// Policies -------------------------------------------------------------------

class GHRPolicy final : public Policy {
 public:
  GHRPolicy(GHRParams params, GHROptions options = {}, AccelClip clip = {});
  double accel(const CFState& state) const override;
  std::size_t history_depth(double dt_s) const override;
  std::string kind() const override { return "ghr"; }
  nlohmann::json to_json() const override;
  const GHRParams& params() const { return params_; }

 private:
  GHRParams params_;
  GHROptions options_;
  AccelClip clip_;
};

class IDMPolicy final : public Policy {
 public:
  explicit IDMPolicy(IDMParams params, IDMOptions options = {});
  double accel(const CFState& state) const override;
  std::string kind() const override { return "idm"; }
  nlohmann::json to_json() const override;
  const IDMParams& params() const { return params_; }

 private:
  IDMParams params_;
  IDMOptions options_;
};

/// Constant acceleration; used as a baseline and in tests.
class ConstantPolicy final : public Policy {
 public:
  explicit ConstantPolicy(double accel_mps2) : accel_(accel_mps2) {}
  double accel(const CFState&) const override { return accel_; }
  std::string kind() const override { return "constant"; }
  nlohmann::json to_json() const override;

 private:
  double accel_;
};

nlohmann::json to_json(const GHRParams& p);
nlohmann::json to_json(const IDMParams& p);
GHRParams ghr_params_from_json(const nlohmann::json& j);
IDMParams idm_params_from_json(const nlohmann::json& j);

}  // namespace followbench
