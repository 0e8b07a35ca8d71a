#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "dlm/errors.hpp"
#include "dlm/random.hpp"

namespace dlm::nn {

enum class Activation { tanh };

// Architecture of a fully connected scalar-output network. Hidden layers use
// the activation, the output layer is the identity.
struct MLPSpec {
  std::size_t input_dim = 2;
  std::size_t hidden_layers = 20;
  std::size_t hidden_width = 10;
  std::size_t output_dim = 1;
  Activation activation = Activation::tanh;

  std::size_t layer_count() const noexcept { return hidden_layers + 1; }
  std::size_t fan_in(std::size_t layer) const noexcept {
    return layer == 0 ? input_dim : hidden_width;
  }
  std::size_t fan_out(std::size_t layer) const noexcept {
    return layer + 1 == layer_count() ? output_dim : hidden_width;
  }

  std::size_t param_count() const noexcept {
    std::size_t n = 0;
    for (std::size_t l = 0; l < layer_count(); ++l) n += (fan_in(l) + 1) * fan_out(l);
    return n;
  }

  void validate() const {
    if (input_dim < 1) throw std::invalid_argument("MLPSpec: input_dim must be >= 1");
    if (hidden_layers < 1) throw std::invalid_argument("MLPSpec: hidden_layers must be >= 1");
    if (hidden_width < 1) throw std::invalid_argument("MLPSpec: hidden_width must be >= 1");
    if (output_dim != 1) throw std::invalid_argument("MLPSpec: only scalar-output networks are supported");
  }

  friend bool operator==(const MLPSpec&, const MLPSpec&) = default;
};

// Position of one layer inside the flat parameter vector.
//
// Layout, layer by layer from the input side: the fan_out x fan_in weight
// matrix in row-major order (row = receiving neuron), followed by the
// fan_out biases. This map is frozen; checkpoints and optimizer moments rely
// on it.
struct LayerOffsets {
  std::size_t weights;
  std::size_t biases;
  std::size_t fan_in;
  std::size_t fan_out;
};

inline std::vector<LayerOffsets> layer_offsets(const MLPSpec& spec) {
  std::vector<LayerOffsets> out;
  out.reserve(spec.layer_count());
  std::size_t at = 0;
  for (std::size_t l = 0; l < spec.layer_count(); ++l) {
    const std::size_t in = spec.fan_in(l), o = spec.fan_out(l);
    out.push_back({at, at + in * o, in, o});
    at += (in + 1) * o;
  }
  return out;
}

class MLPModel {
 public:
  MLPModel() = default;

  MLPModel(MLPSpec spec, std::vector<double> params) : spec_(spec), params_(std::move(params)) {
    spec_.validate();
    if (params_.size() != spec_.param_count())
      throw DimensionError("MLPModel: expected " + std::to_string(spec_.param_count()) +
                           " parameters, got " + std::to_string(params_.size()));
    for (double p : params_)
      if (!std::isfinite(p)) throw std::invalid_argument("MLPModel: non-finite parameter");
    offsets_ = layer_offsets(spec_);
  }

  static MLPModel zeros(const MLPSpec& spec) {
    spec.validate();
    return MLPModel(spec, std::vector<double>(spec.param_count(), 0.0));
  }

  const MLPSpec& spec() const noexcept { return spec_; }
  std::span<const double> params() const noexcept { return params_; }
  std::size_t size() const noexcept { return params_.size(); }
  const std::vector<LayerOffsets>& offsets() const noexcept { return offsets_; }

  // Index of the output-layer bias.
  std::size_t output_bias_index() const noexcept { return params_.size() - 1; }

  MLPModel with_params(std::vector<double> params) const { return MLPModel(spec_, std::move(params)); }

 private:
  MLPSpec spec_{};
  std::vector<double> params_;
  std::vector<LayerOffsets> offsets_;
};

// Glorot-uniform weights (times gain), zero biases.
inline MLPModel init_params(const MLPSpec& spec, std::uint64_t seed, double gain = 1.0) {
  spec.validate();
  std::vector<double> p(spec.param_count(), 0.0);
  Rng rng = make_rng(seed::derive(seed, seed::kInit));
  for (const auto& layer : layer_offsets(spec)) {
    const double limit = gain * std::sqrt(6.0 / static_cast<double>(layer.fan_in + layer.fan_out));
    for (std::size_t i = 0; i < layer.fan_in * layer.fan_out; ++i)
      p[layer.weights + i] = limit * (2.0 * uniform01(rng) - 1.0);
  }
  return MLPModel(spec, std::move(p));
}

// Scratch buffers for one evaluation. Reusing a workspace keeps the hot loops
// allocation-free; each thread needs its own.
struct Workspace {
  std::vector<std::vector<double>> act;  // act[0] = input, act[l+1] = output of hidden layer l
  std::vector<double> delta, upstream;
};

// Output value, optionally with the gradient w.r.t. parameters (same layout
// as params) and w.r.t. the input. Gradient spans may be empty to skip them.
inline double evaluate(const MLPModel& model, std::span<const double> input, Workspace& ws,
                       std::span<double> grad_params = {}, std::span<double> grad_input = {}) {
  const MLPSpec& spec = model.spec();
  if (input.size() != spec.input_dim)
    throw DimensionError("MLP input has length " + std::to_string(input.size()) + ", expected " +
                         std::to_string(spec.input_dim));
  if (!grad_params.empty() && grad_params.size() != model.size())
    throw DimensionError("grad_params buffer has wrong length");
  if (!grad_input.empty() && grad_input.size() != spec.input_dim)
    throw DimensionError("grad_input buffer has wrong length");

  const auto& offs = model.offsets();
  const auto p = model.params();
  const std::size_t hidden = spec.hidden_layers;

  ws.act.resize(hidden + 1);
  ws.act[0].assign(input.begin(), input.end());
  for (std::size_t l = 0; l < hidden; ++l) {
    const auto& L = offs[l];
    auto& out = ws.act[l + 1];
    const auto& in = ws.act[l];
    out.resize(L.fan_out);
    for (std::size_t r = 0; r < L.fan_out; ++r) {
      double s = p[L.biases + r];
      const double* w = &p[L.weights + r * L.fan_in];
      for (std::size_t c = 0; c < L.fan_in; ++c) s += w[c] * in[c];
      out[r] = std::tanh(s);
    }
  }
  const auto& last = offs[hidden];
  const auto& top = ws.act[hidden];
  double y = p[last.biases];
  for (std::size_t c = 0; c < last.fan_in; ++c) y += p[last.weights + c] * top[c];

  if (grad_params.empty() && grad_input.empty()) return y;

  // Reverse sweep. upstream holds d y / d(activation of the current layer).
  ws.upstream.assign(p.begin() + static_cast<std::ptrdiff_t>(last.weights),
                     p.begin() + static_cast<std::ptrdiff_t>(last.weights + last.fan_in));
  if (!grad_params.empty()) {
    for (std::size_t c = 0; c < last.fan_in; ++c) grad_params[last.weights + c] = top[c];
    grad_params[last.biases] = 1.0;
  }
  for (std::size_t l = hidden; l-- > 0;) {
    const auto& L = offs[l];
    const auto& out = ws.act[l + 1];
    const auto& in = ws.act[l];
    ws.delta.resize(L.fan_out);
    for (std::size_t r = 0; r < L.fan_out; ++r) ws.delta[r] = ws.upstream[r] * (1.0 - out[r] * out[r]);
    if (!grad_params.empty()) {
      for (std::size_t r = 0; r < L.fan_out; ++r) {
        double* g = &grad_params[L.weights + r * L.fan_in];
        for (std::size_t c = 0; c < L.fan_in; ++c) g[c] = ws.delta[r] * in[c];
        grad_params[L.biases + r] = ws.delta[r];
      }
    }
    if (l == 0 && grad_input.empty()) break;
    ws.upstream.assign(L.fan_in, 0.0);
    for (std::size_t r = 0; r < L.fan_out; ++r) {
      const double* w = &p[L.weights + r * L.fan_in];
      for (std::size_t c = 0; c < L.fan_in; ++c) ws.upstream[c] += w[c] * ws.delta[r];
    }
  }
  if (!grad_input.empty())
    for (std::size_t c = 0; c < spec.input_dim; ++c) grad_input[c] = ws.upstream[c];
  return y;
}

inline double forward(const MLPModel& model, std::span<const double> input) {
  Workspace ws;
  return evaluate(model, input, ws);
}

inline std::vector<double> grad_params(const MLPModel& model, std::span<const double> input) {
  Workspace ws;
  std::vector<double> g(model.size(), 0.0);
  evaluate(model, input, ws, g);
  return g;
}

inline std::vector<double> grad_input(const MLPModel& model, std::span<const double> input) {
  Workspace ws;
  std::vector<double> g(model.spec().input_dim, 0.0);
  evaluate(model, input, ws, {}, g);
  return g;
}

// Sum of |output weights| + |output bias|: a bound on |forward| for any input.
inline double output_bound(const MLPModel& model) {
  const auto& last = model.offsets().back();
  const auto p = model.params();
  double s = std::fabs(p[last.biases]);
  for (std::size_t c = 0; c < last.fan_in; ++c) s += std::fabs(p[last.weights + c]);
  return s;
}

}  // namespace dlm::nn
