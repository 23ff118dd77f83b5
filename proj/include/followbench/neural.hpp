#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "followbench/events.hpp"
#include "followbench/models.hpp"

namespace followbench {

/// Named parameter tensor, row-major.
struct Tensor {
  std::string name;
  std::vector<std::size_t> shape;
  std::vector<double> data;
};

using ParamSet = std::vector<Tensor>;

/// Same names and shapes as `like`, all zeros.
ParamSet zeros_like(const ParamSet& like);
void check_same_shapes(const ParamSet& a, const ParamSet& b);
nlohmann::json params_to_json(const ParamSet& params);
ParamSet params_from_json(const nlohmann::json& j);
/// Copies tensors by name; every tensor of `dst` must appear in `src` with the
/// same shape.
void assign_params(ParamSet& dst, const ParamSet& src);

// Feature normalization ---------------------------------------------------------

struct Normalizer {
  std::vector<double> mean;
  std::vector<double> stddev;

  /// Rows of `dim` features; throws if any feature has std < 1e-9.
  static Normalizer fit(std::span<const double> rows, std::size_t dim);
  void apply(std::span<double> row) const;
  void invert(std::span<double> row) const;
  nlohmann::json to_json() const;
  static Normalizer from_json(const nlohmann::json& j);
};

/// (spacing, v_fv, dv) of a frame.
inline constexpr std::size_t kFrameFeatures = 3;

// Dense network -------------------------------------------------------------------

enum class OutputActivation { kLinear, kTanh };

struct MLPSpec {
  std::vector<std::size_t> layer_sizes{kFrameFeatures, 64, 64, 1};
  OutputActivation output = OutputActivation::kLinear;
  /// Multiplies the output after the activation (e.g. an action bound).
  double output_scale = 1.0;

  void validate() const;
};

/// Tanh hidden layers, configurable output head. Parameters are named
/// "layer<k>.weight" [out, in] and "layer<k>.bias" [out].
class Mlp {
 public:
  explicit Mlp(MLPSpec spec);

  void init_glorot(std::mt19937_64& rng);
  const MLPSpec& spec() const { return spec_; }
  std::size_t input_size() const { return spec_.layer_sizes.front(); }
  std::size_t output_size() const { return spec_.layer_sizes.back(); }
  ParamSet& params() { return params_; }
  const ParamSet& params() const { return params_; }

  struct Cache {
    std::vector<std::vector<double>> activations;  // per layer, input first
  };

  std::vector<double> forward(std::span<const double> input) const;
  std::vector<double> forward(std::span<const double> input, Cache& cache) const;
  /// Accumulates parameter gradients for one sample into `grads`; returns the
  /// gradient with respect to the input.
  std::vector<double> backward(const Cache& cache, std::span<const double> grad_output,
                               ParamSet& grads) const;

 private:
  MLPSpec spec_;
  ParamSet params_;
};

/// Inputs are rows of `input_dim` values; one scalar target per row.
struct SupervisedData {
  std::size_t input_dim = 0;
  std::vector<double> inputs;
  std::vector<double> targets;

  std::size_t size() const { return targets.size(); }
  std::span<const double> row(std::size_t i) const {
    return {inputs.data() + i * input_dim, input_dim};
  }
};

struct LossAndGrad {
  double loss = 0.0;
  ParamSet grads;
};

/// Mean squared error of a single-output network over `rows` and its gradient.
LossAndGrad mlp_mse_gradients(const Mlp& net, const SupervisedData& data,
                              std::span<const std::size_t> rows);
double mlp_mse(const Mlp& net, const SupervisedData& data);

// Gated recurrent network -----------------------------------------------------------

struct RecurrentSpec {
  std::size_t input_size = kFrameFeatures;
  std::size_t window_steps = 10;
  std::size_t hidden_size = 64;
  std::size_t num_layers = 1;
  double dropout_prob = 0.1;

  void validate() const;
};

enum class Mode { kEval, kTrain };

/// Stacked LSTM cells (input, forget, candidate, output gates, no peepholes)
/// with a linear head on the last hidden state. Dropout sits between layers
/// and before the head, only in kTrain mode. Parameters: "lstm<l>.w_input"
/// [4H, in], "lstm<l>.w_hidden" [4H, H], "lstm<l>.bias" [4H], "head.weight"
/// [1, H], "head.bias" [1]; gate blocks ordered i, f, g, o.
class RecurrentNet {
 public:
  explicit RecurrentNet(RecurrentSpec spec);

  void init_glorot(std::mt19937_64& rng);
  const RecurrentSpec& spec() const { return spec_; }
  ParamSet& params() { return params_; }
  const ParamSet& params() const { return params_; }

  struct Cache;

  /// `window` holds window_steps rows of input_size values, oldest first.
  /// `rng` is required in kTrain mode when dropout_prob > 0.
  double forward(std::span<const double> window, Mode mode = Mode::kEval,
                 std::mt19937_64* rng = nullptr) const;
  double forward(std::span<const double> window, Mode mode, std::mt19937_64* rng,
                 Cache& cache) const;
  void backward(const Cache& cache, double grad_output, ParamSet& grads) const;

 private:
  RecurrentSpec spec_;
  ParamSet params_;
};

struct RecurrentNet::Cache {
  struct Step {
    std::vector<double> input, h_prev, c_prev, i, f, g, o, c, tanh_c, h;
  };
  std::vector<std::vector<Step>> layers;            // [layer][time]
  std::vector<std::vector<double>> input_masks;     // dropout on inputs of layers > 0
  std::vector<double> head_mask;
  std::vector<double> head_input;
};

LossAndGrad recurrent_mse_gradients(const RecurrentNet& net, const SupervisedData& data,
                                    std::span<const std::size_t> rows, Mode mode,
                                    std::mt19937_64* rng);
double recurrent_mse(const RecurrentNet& net, const SupervisedData& data);

// Optimizer ---------------------------------------------------------------------------

struct AdamConfig {
  double learning_rate = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::size_t batch_size = 256;
  std::size_t epochs = 50;
  std::uint64_t seed = 0;

  void validate() const;
};

struct AdamState {
  ParamSet m;
  ParamSet v;
  std::size_t step = 0;
};

AdamState adam_init(const ParamSet& params);
/// Bias-corrected Adam update of `params` in place.
void adam_step(ParamSet& params, const ParamSet& grads, AdamState& state, const AdamConfig& cfg);

// Training ------------------------------------------------------------------------------

struct TrainReport {
  std::vector<double> train_loss;
  std::vector<double> val_loss;
  std::size_t best_epoch = 0;

  std::string to_csv() const;
};

/// Features (spacing, v_fv, dv) per step with derived acceleration targets.
SupervisedData frame_dataset(std::span<const CarFollowingEvent> events);
/// Windows of `window` frames ending at each step, padded with the first
/// frame, matching the history a rollout provides.
SupervisedData window_dataset(std::span<const CarFollowingEvent> events, std::size_t window);
/// Normalizes every frame of every row in place.
void normalize_rows(SupervisedData& data, const Normalizer& norm);

/// Minibatch Adam on a prepared dataset; keeps the weights of the epoch with
/// the lowest validation loss.
TrainReport fit_mlp(Mlp& net, const SupervisedData& train, const SupervisedData& val,
                    const AdamConfig& cfg);
TrainReport fit_recurrent(RecurrentNet& net, const SupervisedData& train,
                          const SupervisedData& val, const AdamConfig& cfg);

class MlpPolicy final : public Policy {
 public:
  MlpPolicy(Mlp net, Normalizer norm);
  double accel(const CFState& state) const override;
  std::string kind() const override { return "mlp"; }
  nlohmann::json to_json() const override;
  const Mlp& net() const { return net_; }

 private:
  Mlp net_;
  Normalizer norm_;
};

class RecurrentPolicy final : public Policy {
 public:
  RecurrentPolicy(RecurrentNet net, Normalizer norm);
  double accel(const CFState& state) const override;
  std::size_t history_depth(double) const override { return net_.spec().window_steps; }
  std::string kind() const override { return "recurrent"; }
  nlohmann::json to_json() const override;
  const RecurrentNet& net() const { return net_; }

 private:
  RecurrentNet net_;
  Normalizer norm_;
};

struct TrainedModel {
  ModelHandle policy;
  TrainReport report;
};

TrainedModel train_supervised(const MLPSpec& spec, std::span<const CarFollowingEvent> train_events,
                              std::span<const CarFollowingEvent> val_events,
                              const AdamConfig& cfg);
TrainedModel train_supervised(const RecurrentSpec& spec,
                              std::span<const CarFollowingEvent> train_events,
                              std::span<const CarFollowingEvent> val_events,
                              const AdamConfig& cfg);

nlohmann::json to_json(const MLPSpec& spec);
MLPSpec mlp_spec_from_json(const nlohmann::json& j);
nlohmann::json to_json(const RecurrentSpec& spec);
RecurrentSpec recurrent_spec_from_json(const nlohmann::json& j);
nlohmann::json to_json(const AdamConfig& cfg);

}  // namespace followbench
