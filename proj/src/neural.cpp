#include "followbench/neural.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <Eigen/Dense>
#include <fmt/format.h>

#include "followbench/common.hpp"
#include "followbench/sim.hpp"

namespace followbench {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;
using Vec = Eigen::VectorXd;
using VecMap = Eigen::Map<Vec>;
using ConstVecMap = Eigen::Map<const Vec>;

ConstMatMap as_matrix(const Tensor& t) {
  return {t.data.data(), static_cast<Eigen::Index>(t.shape[0]),
          static_cast<Eigen::Index>(t.shape[1])};
}
MatMap as_matrix(Tensor& t) {
  return {t.data.data(), static_cast<Eigen::Index>(t.shape[0]),
          static_cast<Eigen::Index>(t.shape[1])};
}
ConstVecMap as_vector(const Tensor& t) {
  return {t.data.data(), static_cast<Eigen::Index>(t.data.size())};
}
VecMap as_vector(Tensor& t) { return {t.data.data(), static_cast<Eigen::Index>(t.data.size())}; }
ConstVecMap as_vector(std::span<const double> s) {
  return {s.data(), static_cast<Eigen::Index>(s.size())};
}

Tensor make_tensor(std::string name, std::vector<std::size_t> shape) {
  const std::size_t n =
      std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
  return {std::move(name), std::move(shape), std::vector<double>(n, 0.0)};
}

void glorot(Tensor& w, std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-limit, limit);
  for (auto& x : w.data) x = dist(rng);
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

std::vector<double> dropout_mask(std::size_t n, double p, Mode mode, std::mt19937_64* rng) {
  std::vector<double> mask(n, 1.0);
  if (mode != Mode::kTrain || p <= 0.0) return mask;
  if (rng == nullptr) throw Error("training-mode dropout needs a random generator");
  std::bernoulli_distribution keep(1.0 - p);
  for (auto& m : mask) m = keep(*rng) ? 1.0 / (1.0 - p) : 0.0;
  return mask;
}

}  // namespace

void assign_params(ParamSet& dst, const ParamSet& src) {
  for (auto& t : dst) {
    const auto it = std::find_if(src.begin(), src.end(), [&](const Tensor& s) { return s.name == t.name; });
    if (it == src.end()) throw Error(fmt::format("weights: missing tensor '{}'", t.name));
    if (it->shape != t.shape) throw Error(fmt::format("weights: shape mismatch for '{}'", t.name));
    t.data = it->data;
  }
}

ParamSet zeros_like(const ParamSet& like) {
  ParamSet out = like;
  for (auto& t : out) std::fill(t.data.begin(), t.data.end(), 0.0);
  return out;
}

void check_same_shapes(const ParamSet& a, const ParamSet& b) {
  if (a.size() != b.size()) throw Error("parameter sets differ in tensor count");
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a[i].shape != b[i].shape || a[i].data.size() != b[i].data.size())
      throw Error(fmt::format("tensor '{}' shape mismatch", a[i].name));
}

nlohmann::json params_to_json(const ParamSet& params) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& t : params) j[t.name] = {{"shape", t.shape}, {"data", t.data}};
  return j;
}

ParamSet params_from_json(const nlohmann::json& j) {
  ParamSet out;
  for (const auto& [name, value] : j.items()) {
    Tensor t{name, value.at("shape").get<std::vector<std::size_t>>(),
             value.at("data").get<std::vector<double>>()};
    const std::size_t n =
        std::accumulate(t.shape.begin(), t.shape.end(), std::size_t{1}, std::multiplies<>());
    if (n != t.data.size()) throw Error(fmt::format("tensor '{}': data does not match shape", name));
    out.push_back(std::move(t));
  }
  return out;
}

// Normalizer ----------------------------------------------------------------------------

Normalizer Normalizer::fit(std::span<const double> rows, std::size_t dim) {
  if (dim == 0 || rows.empty() || rows.size() % dim != 0)
    throw Error("normalizer: rows do not divide into features");
  const std::size_t n = rows.size() / dim;
  Normalizer norm;
  norm.mean.assign(dim, 0.0);
  norm.stddev.assign(dim, 0.0);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t d = 0; d < dim; ++d) norm.mean[d] += rows[r * dim + d];
  for (auto& m : norm.mean) m /= static_cast<double>(n);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t d = 0; d < dim; ++d) {
      const double x = rows[r * dim + d] - norm.mean[d];
      norm.stddev[d] += x * x;
    }
  for (std::size_t d = 0; d < dim; ++d) {
    norm.stddev[d] = std::sqrt(norm.stddev[d] / static_cast<double>(n));
    if (norm.stddev[d] < 1e-9)
      throw Error(fmt::format("normalizer: feature {} is constant on the training split", d));
  }
  return norm;
}

void Normalizer::apply(std::span<double> row) const {
  for (std::size_t d = 0; d < row.size(); ++d) row[d] = (row[d] - mean[d]) / stddev[d];
}

void Normalizer::invert(std::span<double> row) const {
  for (std::size_t d = 0; d < row.size(); ++d) row[d] = row[d] * stddev[d] + mean[d];
}

nlohmann::json Normalizer::to_json() const { return {{"mean", mean}, {"std", stddev}}; }

Normalizer Normalizer::from_json(const nlohmann::json& j) {
  Normalizer n{j.at("mean").get<std::vector<double>>(), j.at("std").get<std::vector<double>>()};
  if (n.mean.size() != n.stddev.size()) throw Error("normalizer: mean/std lengths differ");
  return n;
}

// Mlp ---------------------------------------------------------------------------------------

void MLPSpec::validate() const {
  if (layer_sizes.size() < 3) throw Error("MLP needs at least one hidden layer");
  for (auto s : layer_sizes)
    if (s == 0) throw Error("MLP layer sizes must be positive");
  if (output == OutputActivation::kTanh && output_scale == 0.0)
    throw Error("tanh output head needs a non-zero scale");
}

Mlp::Mlp(MLPSpec spec) : spec_(std::move(spec)) {
  spec_.validate();
  for (std::size_t k = 0; k + 1 < spec_.layer_sizes.size(); ++k) {
    params_.push_back(make_tensor(fmt::format("layer{}.weight", k),
                                  {spec_.layer_sizes[k + 1], spec_.layer_sizes[k]}));
    params_.push_back(make_tensor(fmt::format("layer{}.bias", k), {spec_.layer_sizes[k + 1]}));
  }
}

void Mlp::init_glorot(std::mt19937_64& rng) {
  for (std::size_t k = 0; k + 1 < spec_.layer_sizes.size(); ++k) {
    glorot(params_[2 * k], spec_.layer_sizes[k], spec_.layer_sizes[k + 1], rng);
    std::fill(params_[2 * k + 1].data.begin(), params_[2 * k + 1].data.end(), 0.0);
  }
}

std::vector<double> Mlp::forward(std::span<const double> input) const {
  Cache cache;
  return forward(input, cache);
}

std::vector<double> Mlp::forward(std::span<const double> input, Cache& cache) const {
  if (input.size() != input_size())
    throw Error(fmt::format("MLP input has {} values, expected {}", input.size(), input_size()));
  const std::size_t layers = spec_.layer_sizes.size() - 1;
  cache.activations.resize(layers + 1);
  cache.activations[0].assign(input.begin(), input.end());
  for (std::size_t k = 0; k < layers; ++k) {
    const auto w = as_matrix(params_[2 * k]);
    const auto b = as_vector(params_[2 * k + 1]);
    Vec z = w * as_vector(std::span<const double>(cache.activations[k])) + b;
    if (k + 1 < layers) {
      z = z.array().tanh();
    } else if (spec_.output == OutputActivation::kTanh) {
      z = spec_.output_scale * z.array().tanh();
    }
    cache.activations[k + 1].assign(z.data(), z.data() + z.size());
  }
  return cache.activations.back();
}

std::vector<double> Mlp::backward(const Cache& cache, std::span<const double> grad_output,
                                  ParamSet& grads) const {
  const std::size_t layers = spec_.layer_sizes.size() - 1;
  Vec delta = as_vector(grad_output);
  if (spec_.output == OutputActivation::kTanh) {
    const auto& y = cache.activations.back();
    for (Eigen::Index i = 0; i < delta.size(); ++i) {
      const double t = y[i] / spec_.output_scale;
      delta[i] *= spec_.output_scale * (1.0 - t * t);
    }
  }
  for (std::size_t k = layers; k-- > 0;) {
    const auto& a = cache.activations[k];
    const auto a_vec = as_vector(std::span<const double>(a));
    as_matrix(grads[2 * k]).noalias() += delta * a_vec.transpose();
    as_vector(grads[2 * k + 1]) += delta;
    Vec back = as_matrix(params_[2 * k]).transpose() * delta;
    if (k > 0) back = back.array() * (1.0 - a_vec.array().square());
    delta = std::move(back);
  }
  return {delta.data(), delta.data() + delta.size()};
}

LossAndGrad mlp_mse_gradients(const Mlp& net, const SupervisedData& data,
                              std::span<const std::size_t> rows) {
  if (rows.empty()) throw Error("gradient batch is empty");
  LossAndGrad out{0.0, zeros_like(net.params())};
  Mlp::Cache cache;
  const double scale = 1.0 / static_cast<double>(rows.size());
  for (std::size_t r : rows) {
    const double y = net.forward(data.row(r), cache)[0];
    const double err = y - data.targets[r];
    out.loss += err * err * scale;
    const double g = 2.0 * err * scale;
    net.backward(cache, std::span<const double>(&g, 1), out.grads);
  }
  if (!std::isfinite(out.loss)) throw Error("non-finite training loss");
  return out;
}

double mlp_mse(const Mlp& net, const SupervisedData& data) {
  double acc = 0.0;
  for (std::size_t r = 0; r < data.size(); ++r) {
    const double err = net.forward(data.row(r))[0] - data.targets[r];
    acc += err * err;
  }
  return acc / static_cast<double>(std::max<std::size_t>(data.size(), 1));
}

// Recurrent -----------------------------------------------------------------------------------

void RecurrentSpec::validate() const {
  if (window_steps < 1) throw Error("recurrent window must hold at least one step");
  if (hidden_size < 1 || num_layers < 1 || input_size < 1)
    throw Error("recurrent sizes must be positive");
  if (!(dropout_prob >= 0.0 && dropout_prob < 1.0)) throw Error("dropout must lie in [0, 1)");
}

RecurrentNet::RecurrentNet(RecurrentSpec spec) : spec_(spec) {
  spec_.validate();
  const std::size_t h = spec_.hidden_size;
  for (std::size_t l = 0; l < spec_.num_layers; ++l) {
    const std::size_t in = l == 0 ? spec_.input_size : h;
    params_.push_back(make_tensor(fmt::format("lstm{}.w_input", l), {4 * h, in}));
    params_.push_back(make_tensor(fmt::format("lstm{}.w_hidden", l), {4 * h, h}));
    params_.push_back(make_tensor(fmt::format("lstm{}.bias", l), {4 * h}));
  }
  params_.push_back(make_tensor("head.weight", {1, h}));
  params_.push_back(make_tensor("head.bias", {1}));
}

void RecurrentNet::init_glorot(std::mt19937_64& rng) {
  const std::size_t h = spec_.hidden_size;
  for (std::size_t l = 0; l < spec_.num_layers; ++l) {
    const std::size_t in = l == 0 ? spec_.input_size : h;
    glorot(params_[3 * l], in, h, rng);
    glorot(params_[3 * l + 1], h, h, rng);
    auto& bias = params_[3 * l + 2].data;
    std::fill(bias.begin(), bias.end(), 0.0);
    std::fill(bias.begin() + h, bias.begin() + 2 * h, 1.0);  // forget gate
  }
  glorot(params_[3 * spec_.num_layers], h, 1, rng);
  params_.back().data[0] = 0.0;
}

double RecurrentNet::forward(std::span<const double> window, Mode mode,
                             std::mt19937_64* rng) const {
  Cache cache;
  return forward(window, mode, rng, cache);
}

double RecurrentNet::forward(std::span<const double> window, Mode mode, std::mt19937_64* rng,
                             Cache& cache) const {
  const std::size_t steps = spec_.window_steps;
  const std::size_t h = spec_.hidden_size;
  if (window.size() != steps * spec_.input_size)
    throw Error(fmt::format("recurrent window has {} values, expected {} steps x {}",
                            window.size(), steps, spec_.input_size));
  cache.layers.assign(spec_.num_layers, std::vector<Cache::Step>(steps));
  cache.input_masks.assign(spec_.num_layers, {});

  for (std::size_t l = 0; l < spec_.num_layers; ++l) {
    const auto w_in = as_matrix(params_[3 * l]);
    const auto w_h = as_matrix(params_[3 * l + 1]);
    const auto bias = as_vector(params_[3 * l + 2]);
    if (l > 0) cache.input_masks[l] = dropout_mask(h, spec_.dropout_prob, mode, rng);
    Vec h_prev = Vec::Zero(h), c_prev = Vec::Zero(h);
    for (std::size_t t = 0; t < steps; ++t) {
      auto& s = cache.layers[l][t];
      if (l == 0) {
        s.input.assign(window.begin() + t * spec_.input_size,
                       window.begin() + (t + 1) * spec_.input_size);
      } else {
        s.input = cache.layers[l - 1][t].h;
        for (std::size_t j = 0; j < h; ++j) s.input[j] *= cache.input_masks[l][j];
      }
      const Vec z = w_in * as_vector(std::span<const double>(s.input)) + w_h * h_prev + bias;
      s.h_prev.assign(h_prev.data(), h_prev.data() + h);
      s.c_prev.assign(c_prev.data(), c_prev.data() + h);
      s.i.resize(h), s.f.resize(h), s.g.resize(h), s.o.resize(h), s.c.resize(h),
          s.tanh_c.resize(h), s.h.resize(h);
      for (std::size_t j = 0; j < h; ++j) {
        s.i[j] = sigmoid(z[j]);
        s.f[j] = sigmoid(z[h + j]);
        s.g[j] = std::tanh(z[2 * h + j]);
        s.o[j] = sigmoid(z[3 * h + j]);
        s.c[j] = s.f[j] * c_prev[j] + s.i[j] * s.g[j];
        s.tanh_c[j] = std::tanh(s.c[j]);
        s.h[j] = s.o[j] * s.tanh_c[j];
      }
      h_prev = ConstVecMap(s.h.data(), static_cast<Eigen::Index>(h));
      c_prev = ConstVecMap(s.c.data(), static_cast<Eigen::Index>(h));
    }
  }
  cache.head_mask = dropout_mask(h, spec_.dropout_prob, mode, rng);
  cache.head_input = cache.layers.back().back().h;
  for (std::size_t j = 0; j < h; ++j) cache.head_input[j] *= cache.head_mask[j];
  const auto& head_w = params_[3 * spec_.num_layers].data;
  double y = params_.back().data[0];
  for (std::size_t j = 0; j < h; ++j) y += head_w[j] * cache.head_input[j];
  return y;
}

void RecurrentNet::backward(const Cache& cache, double grad_output, ParamSet& grads) const {
  const std::size_t steps = spec_.window_steps;
  const std::size_t h = spec_.hidden_size;
  const std::size_t layers = spec_.num_layers;

  auto& g_head_w = grads[3 * layers].data;
  const auto& head_w = params_[3 * layers].data;
  grads.back().data[0] += grad_output;
  // dL/dh for every (time step) of the layer currently being processed.
  std::vector<Vec> dh_seq(steps, Vec::Zero(h));
  for (std::size_t j = 0; j < h; ++j) {
    g_head_w[j] += grad_output * cache.head_input[j];
    dh_seq[steps - 1][j] = grad_output * head_w[j] * cache.head_mask[j];
  }

  for (std::size_t l = layers; l-- > 0;) {
    const auto w_in = as_matrix(params_[3 * l]);
    const auto w_h = as_matrix(params_[3 * l + 1]);
    auto gw_in = as_matrix(grads[3 * l]);
    auto gw_h = as_matrix(grads[3 * l + 1]);
    auto gb = as_vector(grads[3 * l + 2]);
    std::vector<Vec> dx_seq(steps);
    Vec dh_next = Vec::Zero(h), dc_next = Vec::Zero(h);
    Vec dz(4 * h);
    for (std::size_t t = steps; t-- > 0;) {
      const auto& s = cache.layers[l][t];
      const Vec dh = dh_seq[t] + dh_next;
      for (std::size_t j = 0; j < h; ++j) {
        const double d_o = dh[j] * s.tanh_c[j];
        const double dc = dc_next[j] + dh[j] * s.o[j] * (1.0 - s.tanh_c[j] * s.tanh_c[j]);
        dz[j] = dc * s.g[j] * s.i[j] * (1.0 - s.i[j]);
        dz[h + j] = dc * s.c_prev[j] * s.f[j] * (1.0 - s.f[j]);
        dz[2 * h + j] = dc * s.i[j] * (1.0 - s.g[j] * s.g[j]);
        dz[3 * h + j] = d_o * s.o[j] * (1.0 - s.o[j]);
        dc_next[j] = dc * s.f[j];
      }
      gw_in.noalias() += dz * as_vector(std::span<const double>(s.input)).transpose();
      gw_h.noalias() += dz * as_vector(std::span<const double>(s.h_prev)).transpose();
      gb += dz;
      dh_next = w_h.transpose() * dz;
      dx_seq[t] = w_in.transpose() * dz;
    }
    if (l > 0) {
      for (std::size_t t = 0; t < steps; ++t)
        for (std::size_t j = 0; j < h; ++j) dx_seq[t][j] *= cache.input_masks[l][j];
      dh_seq = std::move(dx_seq);
    }
  }
}

LossAndGrad recurrent_mse_gradients(const RecurrentNet& net, const SupervisedData& data,
                                    std::span<const std::size_t> rows, Mode mode,
                                    std::mt19937_64* rng) {
  if (rows.empty()) throw Error("gradient batch is empty");
  LossAndGrad out{0.0, zeros_like(net.params())};
  RecurrentNet::Cache cache;
  const double scale = 1.0 / static_cast<double>(rows.size());
  for (std::size_t r : rows) {
    const double y = net.forward(data.row(r), mode, rng, cache);
    const double err = y - data.targets[r];
    out.loss += err * err * scale;
    net.backward(cache, 2.0 * err * scale, out.grads);
  }
  if (!std::isfinite(out.loss)) throw Error("non-finite training loss");
  return out;
}

double recurrent_mse(const RecurrentNet& net, const SupervisedData& data) {
  double acc = 0.0;
  for (std::size_t r = 0; r < data.size(); ++r) {
    const double err = net.forward(data.row(r)) - data.targets[r];
    acc += err * err;
  }
  return acc / static_cast<double>(std::max<std::size_t>(data.size(), 1));
}

// Adam ------------------------------------------------------------------------------------------

void AdamConfig::validate() const {
  if (!(learning_rate > 0.0)) throw Error("Adam learning rate must be positive");
  if (!(beta1 > 0.0 && beta1 < 1.0 && beta2 > 0.0 && beta2 < 1.0))
    throw Error("Adam betas must lie in (0, 1)");
  if (!(epsilon > 0.0)) throw Error("Adam epsilon must be positive");
  if (batch_size < 1) throw Error("batch size must be positive");
}

AdamState adam_init(const ParamSet& params) {
  return {zeros_like(params), zeros_like(params), 0};
}

void adam_step(ParamSet& params, const ParamSet& grads, AdamState& state, const AdamConfig& cfg) {
  check_same_shapes(params, grads);
  check_same_shapes(params, state.m);
  ++state.step;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (std::size_t t = 0; t < params.size(); ++t) {
    auto& w = params[t].data;
    const auto& g = grads[t].data;
    auto& m = state.m[t].data;
    auto& v = state.v[t].data;
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
      w[i] -= cfg.learning_rate * (m[i] / c1) / (std::sqrt(v[i] / c2) + cfg.epsilon);
    }
  }
}

// Training ------------------------------------------------------------------------------------------

std::string TrainReport::to_csv() const {
  std::string out = "epoch,train_loss,val_loss\n";
  for (std::size_t e = 0; e < train_loss.size(); ++e)
    out += fmt::format("{},{},{}\n", e, format_real(train_loss[e]), format_real(val_loss[e]));
  return out;
}

SupervisedData frame_dataset(std::span<const CarFollowingEvent> events) {
  SupervisedData d;
  d.input_dim = kFrameFeatures;
  for (const auto& e : events) {
    const auto targets = derived_accel_targets(e);
    for (std::size_t k = 0; k < targets.size(); ++k) {
      d.inputs.insert(d.inputs.end(), {e.spacing_m[k], e.v_fv_mps[k], e.dv_mps[k]});
      d.targets.push_back(targets[k]);
    }
  }
  return d;
}

SupervisedData window_dataset(std::span<const CarFollowingEvent> events, std::size_t window) {
  SupervisedData d;
  d.input_dim = kFrameFeatures * window;
  for (const auto& e : events) {
    const auto targets = derived_accel_targets(e);
    for (std::size_t k = 0; k < targets.size(); ++k) {
      for (std::size_t j = 0; j < window; ++j) {
        const std::size_t lag = window - 1 - j;
        const std::size_t idx = k >= lag ? k - lag : 0;
        d.inputs.insert(d.inputs.end(), {e.spacing_m[idx], e.v_fv_mps[idx], e.dv_mps[idx]});
      }
      d.targets.push_back(targets[k]);
    }
  }
  return d;
}

void normalize_rows(SupervisedData& data, const Normalizer& norm) {
  const std::size_t f = norm.mean.size();
  for (std::size_t off = 0; off + f <= data.inputs.size(); off += f)
    norm.apply(std::span<double>(data.inputs.data() + off, f));
}

namespace {

template <typename LossGrad, typename Evaluate>
TrainReport fit_loop(ParamSet& params, const SupervisedData& train, const AdamConfig& cfg,
                     LossGrad&& loss_grad, Evaluate&& evaluate) {
  cfg.validate();
  if (train.size() == 0) throw Error("training split is empty");
  std::mt19937_64 rng(cfg.seed);
  AdamState state = adam_init(params);
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);

  TrainReport report;
  ParamSet best = params;
  double best_val = std::numeric_limits<double>::infinity();
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      const std::span<const std::size_t> batch(order.data() + start, end - start);
      const auto lg = loss_grad(batch, rng);
      adam_step(params, lg.grads, state, cfg);
    }
    const auto [train_loss, val_loss] = evaluate();
    if (!std::isfinite(train_loss) || !std::isfinite(val_loss))
      throw Error(fmt::format("training diverged at epoch {} (loss {}, val {})", epoch,
                              train_loss, val_loss));
    report.train_loss.push_back(train_loss);
    report.val_loss.push_back(val_loss);
    if (val_loss < best_val) {
      best_val = val_loss;
      best = params;
      report.best_epoch = epoch;
    }
  }
  if (cfg.epochs > 0) params = best;
  return report;
}

}  // namespace

TrainReport fit_mlp(Mlp& net, const SupervisedData& train, const SupervisedData& val,
                    const AdamConfig& cfg) {
  return fit_loop(
      net.params(), train, cfg,
      [&](std::span<const std::size_t> batch, std::mt19937_64&) {
        return mlp_mse_gradients(net, train, batch);
      },
      [&] {
        return std::pair{mlp_mse(net, train), val.size() ? mlp_mse(net, val) : mlp_mse(net, train)};
      });
}

TrainReport fit_recurrent(RecurrentNet& net, const SupervisedData& train,
                          const SupervisedData& val, const AdamConfig& cfg) {
  return fit_loop(
      net.params(), train, cfg,
      [&](std::span<const std::size_t> batch, std::mt19937_64& rng) {
        return recurrent_mse_gradients(net, train, batch, Mode::kTrain, &rng);
      },
      [&] {
        return std::pair{recurrent_mse(net, train),
                         val.size() ? recurrent_mse(net, val) : recurrent_mse(net, train)};
      });
}

MlpPolicy::MlpPolicy(Mlp net, Normalizer norm) : net_(std::move(net)), norm_(std::move(norm)) {
  if (net_.input_size() != kFrameFeatures || norm_.mean.size() != kFrameFeatures)
    throw Error("MLP policy expects (spacing, v_fv, dv) inputs");
}

double MlpPolicy::accel(const CFState& state) const {
  double x[kFrameFeatures] = {state.spacing_m(), state.v_fv_mps(), state.dv_mps()};
  norm_.apply(x);
  return net_.forward(x)[0];
}

nlohmann::json MlpPolicy::to_json() const {
  return {{"kind", kind()},
          {"version", 1},
          {"spec", followbench::to_json(net_.spec())},
          {"tensors", params_to_json(net_.params())},
          {"normalizer", norm_.to_json()}};
}

RecurrentPolicy::RecurrentPolicy(RecurrentNet net, Normalizer norm)
    : net_(std::move(net)), norm_(std::move(norm)) {
  if (net_.spec().input_size != kFrameFeatures || norm_.mean.size() != kFrameFeatures)
    throw Error("recurrent policy expects (spacing, v_fv, dv) inputs");
}

double RecurrentPolicy::accel(const CFState& state) const {
  const std::size_t window = net_.spec().window_steps;
  std::vector<double> x(window * kFrameFeatures);
  for (std::size_t j = 0; j < window; ++j) {
    const Frame& f = state.history.lag(window - 1 - j);
    std::span<double> row(x.data() + j * kFrameFeatures, kFrameFeatures);
    row[0] = f.spacing_m;
    row[1] = f.v_fv_mps;
    row[2] = f.dv_mps;
    norm_.apply(row);
  }
  return net_.forward(x, Mode::kEval);
}

nlohmann::json RecurrentPolicy::to_json() const {
  return {{"kind", kind()},
          {"version", 1},
          {"spec", followbench::to_json(net_.spec())},
          {"tensors", params_to_json(net_.params())},
          {"normalizer", norm_.to_json()}};
}

TrainedModel train_supervised(const MLPSpec& spec, std::span<const CarFollowingEvent> train_events,
                              std::span<const CarFollowingEvent> val_events,
                              const AdamConfig& cfg) {
  if (train_events.empty() || val_events.empty())
    throw Error("train_supervised: training and validation splits must be non-empty");
  auto train = frame_dataset(train_events);
  auto val = frame_dataset(val_events);
  const auto norm = Normalizer::fit(train.inputs, kFrameFeatures);
  normalize_rows(train, norm);
  normalize_rows(val, norm);
  Mlp net(spec);
  std::mt19937_64 rng(cfg.seed);
  net.init_glorot(rng);
  TrainedModel out;
  out.report = fit_mlp(net, train, val, cfg);
  out.policy = std::make_shared<MlpPolicy>(std::move(net), norm);
  return out;
}

TrainedModel train_supervised(const RecurrentSpec& spec,
                              std::span<const CarFollowingEvent> train_events,
                              std::span<const CarFollowingEvent> val_events,
                              const AdamConfig& cfg) {
  if (train_events.empty() || val_events.empty())
    throw Error("train_supervised: training and validation splits must be non-empty");
  // Normalizer statistics come from single frames, then apply to every frame.
  const auto frames = frame_dataset(train_events);
  const auto norm = Normalizer::fit(frames.inputs, kFrameFeatures);
  auto train = window_dataset(train_events, spec.window_steps);
  auto val = window_dataset(val_events, spec.window_steps);
  normalize_rows(train, norm);
  normalize_rows(val, norm);
  RecurrentNet net(spec);
  std::mt19937_64 rng(cfg.seed);
  net.init_glorot(rng);
  TrainedModel out;
  out.report = fit_recurrent(net, train, val, cfg);
  out.policy = std::make_shared<RecurrentPolicy>(std::move(net), norm);
  return out;
}

nlohmann::json to_json(const MLPSpec& s) {
  return {{"layer_sizes", s.layer_sizes},
          {"output", s.output == OutputActivation::kTanh ? "tanh" : "linear"},
          {"output_scale", s.output_scale}};
}

MLPSpec mlp_spec_from_json(const nlohmann::json& j) {
  MLPSpec s;
  s.layer_sizes = j.at("layer_sizes").get<std::vector<std::size_t>>();
  s.output = j.value("output", std::string("linear")) == "tanh" ? OutputActivation::kTanh
                                                                 : OutputActivation::kLinear;
  s.output_scale = j.value("output_scale", 1.0);
  s.validate();
  return s;
}

nlohmann::json to_json(const RecurrentSpec& s) {
  return {{"input_size", s.input_size},   {"window_steps", s.window_steps},
          {"hidden_size", s.hidden_size}, {"num_layers", s.num_layers},
          {"dropout_prob", s.dropout_prob}};
}

RecurrentSpec recurrent_spec_from_json(const nlohmann::json& j) {
  RecurrentSpec s;
  s.input_size = j.value("input_size", s.input_size);
  s.window_steps = j.at("window_steps").get<std::size_t>();
  s.hidden_size = j.at("hidden_size").get<std::size_t>();
  s.num_layers = j.value("num_layers", s.num_layers);
  s.dropout_prob = j.value("dropout_prob", s.dropout_prob);
  s.validate();
  return s;
}

nlohmann::json to_json(const AdamConfig& c) {
  return {{"learning_rate", c.learning_rate}, {"beta1", c.beta1},   {"beta2", c.beta2},
          {"epsilon", c.epsilon},             {"batch_size", c.batch_size},
          {"epochs", c.epochs},               {"seed", c.seed}};
}

}  // namespace followbench
