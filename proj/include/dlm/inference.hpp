#pragma once

// Deep latent model for DSPP intensities.
//
// Prior:       dZ = b(Z, t; theta) dt + g(Z, t) dW
// Variational: dZ = [b(Z, t; theta) + g(Z, t) u(k, t; beta)] dt + g(Z, t) dW
//
// with g = eta * sqrt(Z) (fixed) or a learned positive network. Because the
// control u depends only on the count context k and on t, Girsanov's density
// between the two path laws gives the lower bound
//
//   ELBO(Y) = E_Q[ log P(Y | Z) ] - 1/2 int_0^T u(k, s)^2 ds,
//
// estimated by a sample average over m Euler paths per observation and
// differentiated pathwise (discretize, then differentiate the recursion).

#include <chrono>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dlm/checkpoint.hpp"
#include "dlm/dspp.hpp"
#include "dlm/errors.hpp"
#include "dlm/nn.hpp"
#include "dlm/parallel.hpp"
#include "dlm/random.hpp"
#include "dlm/sde.hpp"

namespace dlm::inference {

using dspp::CountSample;
using dspp::ObservationScheme;
using sde::IntensityPath;
using sde::ScaledNet;
using sde::TimeGrid;

enum class DiffusionMode { fixed, learned };
// Which counts feed the control: X(T) alone, or the (X(T/2), X(T)) pair.
enum class ContextMode { terminal, pair };

inline std::string to_string(DiffusionMode d) { return d == DiffusionMode::fixed ? "fixed" : "learned"; }
inline std::string to_string(ContextMode c) { return c == ContextMode::terminal ? "terminal" : "pair"; }

struct VariationalModel {
  ScaledNet prior;    // b(z, t; theta), inputs (z, t)
  ScaledNet control;  // u(k, t; beta), inputs (context..., t)
  DiffusionMode diffusion = DiffusionMode::fixed;
  double eta = 1.0;
  std::optional<ScaledNet> sigma;  // learned diffusion, inputs (z, t)
  double sigma_floor = 1e-4;
  double z0 = 5.0;
  ContextMode context_mode = ContextMode::terminal;

  std::size_t prior_size() const { return prior.net.size(); }
  std::size_t control_size() const { return control.net.size(); }
  std::size_t sigma_size() const { return sigma ? sigma->net.size() : 0; }
  std::size_t param_count() const { return prior_size() + control_size() + sigma_size(); }

  std::vector<double> context_of(const CountSample& c) const {
    if (context_mode == ContextMode::terminal) return {static_cast<double>(c.terminal())};
    if (c.cumulative.size() < 2) throw DimensionError("pair context needs at least two epochs");
    return {static_cast<double>(c.cumulative[c.cumulative.size() - 2]), static_cast<double>(c.terminal())};
  }

  sde::Diffusion diffusion_spec() const {
    if (diffusion == DiffusionMode::fixed) return sde::SqrtDiffusion{eta};
    return sde::NeuralDiffusion{*sigma, sigma_floor};
  }

  sde::DriftSpec controlled(std::vector<double> context) const {
    return {sde::ControlledDrift{prior, control, std::move(context)}, diffusion_spec()};
  }
  sde::DriftSpec prior_spec() const { return {sde::NeuralDrift{prior}, diffusion_spec()}; }

  // Flat parameters in the [theta | beta | theta_hat] layout.
  std::vector<double> params() const {
    std::vector<double> p(prior.net.params().begin(), prior.net.params().end());
    p.insert(p.end(), control.net.params().begin(), control.net.params().end());
    if (sigma) p.insert(p.end(), sigma->net.params().begin(), sigma->net.params().end());
    return p;
  }

  VariationalModel with_params(std::span<const double> p) const {
    if (p.size() != param_count()) throw DimensionError("VariationalModel: wrong parameter count");
    VariationalModel out = *this;
    auto take = [&](std::size_t at, std::size_t n) { return std::vector<double>(p.begin() + at, p.begin() + at + n); };
    out.prior.net = prior.net.with_params(take(0, prior_size()));
    out.control.net = control.net.with_params(take(prior_size(), control_size()));
    if (sigma) out.sigma->net = sigma->net.with_params(take(prior_size() + control_size(), sigma_size()));
    return out;
  }

  void validate() const {
    prior.validate();
    control.validate();
    if (prior.net.spec().input_dim != 2) throw DimensionError("prior drift net must take (z, t)");
    const std::size_t ctx = context_mode == ContextMode::terminal ? 1 : 2;
    if (control.net.spec().input_dim != ctx + 1) throw DimensionError("control net input_dim must be context + 1");
    if (diffusion == DiffusionMode::learned) {
      if (!sigma) throw std::invalid_argument("learned diffusion requires a sigma network");
      sigma->validate();
    } else if (!(eta >= 0.0)) {
      throw std::invalid_argument("eta must be >= 0");
    }
    if (!(z0 >= 0.0)) throw std::invalid_argument("z0 must be >= 0");
  }
};

// Architecture and feature scaling used to build a fresh model.
struct ModelShape {
  nn::MLPSpec prior_net{2, 20, 10, 1};
  nn::MLPSpec control_net{2, 20, 10, 1};
  nn::MLPSpec sigma_net{2, 20, 10, 1};
  double z_scale = 100.0;        // intensity input divided by this
  double k_scale = 100.0;        // count context divided by this
  double drift_scale = 20.0;     // b = drift_scale * net
  // Initial output bias of the drift net. Zero makes Z = 0 absorbing at
  // initialization, and absorbed paths have zero likelihood.
  double prior_bias = 0.5;
  double init_gain = 1.0;  // multiplies the Glorot limit
  double control_scale = 1.0;    // u = control_scale * net
  double sigma_scale = 1.0;      // sigma = floor + softplus(sigma_scale * net)
  DiffusionMode diffusion = DiffusionMode::fixed;
  double eta = 1.0;
  double z0 = 5.0;
  ContextMode context_mode = ContextMode::terminal;
};

inline VariationalModel make_model(const ModelShape& shape, double horizon, std::uint64_t seed) {
  VariationalModel m;
  const std::size_t ctx = shape.context_mode == ContextMode::terminal ? 1 : 2;
  nn::MLPSpec cspec = shape.control_net;
  cspec.input_dim = ctx + 1;
  auto prior_net = nn::init_params(shape.prior_net, seed::derive(seed, seed::kInit, 0), shape.init_gain);
  std::vector<double> pp(prior_net.params().begin(), prior_net.params().end());
  pp[prior_net.output_bias_index()] = shape.prior_bias;
  m.prior = {prior_net.with_params(pp), {shape.z_scale, horizon}, shape.drift_scale};
  std::vector<double> cscale(ctx, shape.k_scale);
  cscale.push_back(horizon);
  m.control = {nn::init_params(cspec, seed::derive(seed, seed::kInit, 1), shape.init_gain), cscale, shape.control_scale};
  m.diffusion = shape.diffusion;
  m.eta = shape.eta;
  if (shape.diffusion == DiffusionMode::learned)
    m.sigma = ScaledNet{nn::init_params(shape.sigma_net, seed::derive(seed, seed::kInit, 2), shape.init_gain), {shape.z_scale, horizon},
                        shape.sigma_scale};
  m.z0 = shape.z0;
  m.context_mode = shape.context_mode;
  m.validate();
  return m;
}

// b(z, t) + g(z, t) * u(k, t), evaluated at z+ = max(z, 0).
inline double controlled_drift(double z, double t, std::span<const double> context, const VariationalModel& model) {
  const double zp = std::max(z, 0.0);
  const double in_zt[2] = {zp, t};
  std::vector<double> in_k(context.begin(), context.end());
  in_k.push_back(t);
  const double b = model.prior(in_zt);
  const double u = model.control(in_k);
  double g;
  if (model.diffusion == DiffusionMode::fixed) {
    g = model.eta * std::sqrt(zp);
  } else {
    g = model.sigma_floor + sde::softplus((*model.sigma)(in_zt));
  }
  return b + g * u;
}

// Noise seed of inner path j for batch entry i.
inline std::uint64_t inner_seed(std::uint64_t seed, std::size_t i, std::size_t j) {
  return seed::derive(seed::derive(seed, seed::kInnerMc, i), seed::kInnerMc, j);
}

struct ElboEstimate {
  double value = 0.0;
  std::vector<double> gradient;  // [theta | beta | theta_hat]; empty when not requested
};

namespace detail {

// Interval intensities are floored at kSqrtFloor inside the objective. A path
// absorbed at zero for a whole interval with positive counts would otherwise
// make the estimate -infinity; the gradient formula uses the same floor.
inline double floored_log_likelihood(const CountSample& y, std::vector<double> lam) {
  for (double& l : lam) l = std::max(l, sde::kSqrtFloor);
  return dspp::log_likelihood_from_intervals(y, lam);
}

struct SampleTerm {
  double value = 0.0;  // sum over the m paths of log-likelihood minus penalty
  std::vector<double> grad;
};

inline SampleTerm sample_term(const VariationalModel& model, const CountSample& y, const ObservationScheme& scheme,
                              const std::vector<std::size_t>& idx, const TimeGrid& grid, std::size_t m,
                              std::uint64_t seed, std::size_t i, bool with_grad) {
  dspp::check_conforms(y, scheme);
  sde::StepModel step(model.controlled(model.context_of(y)), grid, with_grad);
  const double dt = grid.step();
  const std::size_t P = model.param_count();
  const std::size_t np = model.prior_size(), nc = model.control_size();

  double penalty = 0.0;
  for (std::size_t s = 0; s < grid.steps(); ++s) penalty += step.control(s) * step.control(s);
  penalty *= 0.5 * dt;

  SampleTerm out;
  if (with_grad) out.grad.assign(P, 0.0);
  std::vector<double> dlam(with_grad ? idx.size() * P : 0);
  for (std::size_t j = 0; j < m; ++j) {
    const auto noise = sde::sample_noise(grid, inner_seed(seed, i, j));
    if (!with_grad) {
      const auto path = sde::euler_maruyama(step, model.z0, noise);
      out.value += floored_log_likelihood(y, dspp::interval_intensities(path, idx)) - penalty;
      continue;
    }

    // d lam_I / dp as the left Riemann sum of the sensitivity over interval I.
    std::fill(dlam.begin(), dlam.end(), 0.0);
    std::size_t interval = 0;
    const auto path = sde::euler_maruyama_sensitivity(step, model.z0, noise, [&](std::size_t s, std::span<const double> D) {
      while (interval < idx.size() && s >= idx[interval]) ++interval;
      if (interval >= idx.size()) return;
      double* acc = &dlam[interval * P];
      for (std::size_t q = 0; q < P; ++q) acc[q] += D[q] * dt;
    });
    const auto lam = dspp::interval_intensities(path, idx);
    out.value += floored_log_likelihood(y, lam) - penalty;
    for (std::size_t I = 0; I < idx.size(); ++I) {
      const double w = static_cast<double>(y.increment(I)) / std::max(lam[I], sde::kSqrtFloor) - 1.0;
      const double* acc = &dlam[I * P];
      for (std::size_t q = 0; q < P; ++q) out.grad[q] += w * acc[q];
    }
  }
  if (with_grad) {
    // -d/dbeta of m * penalty: -m * dt * sum_s u_s du_s/dbeta.
    for (std::size_t s = 0; s < grid.steps(); ++s) {
      const double u = step.control(s);
      const auto up = step.control_grad(s);
      for (std::size_t q = 0; q < nc; ++q) out.grad[np + q] -= static_cast<double>(m) * dt * u * up[q];
    }
  }
  return out;
}

inline ElboEstimate estimate(const VariationalModel& model, std::span<const CountSample> batch,
                             const ObservationScheme& scheme, const TimeGrid& grid, std::size_t m, std::uint64_t seed,
                             bool with_grad) {
  if (m < 1) throw std::invalid_argument("elbo: m must be >= 1");
  if (batch.empty()) throw std::invalid_argument("elbo: empty batch");
  model.validate();
  const auto idx = scheme.indices(grid);
  std::vector<SampleTerm> terms(batch.size());
  parallel_for(batch.size(), [&](std::size_t i) {
    terms[i] = sample_term(model, batch[i], scheme, idx, grid, m, seed, i, with_grad);
  });
  const double scale = 1.0 / (static_cast<double>(batch.size()) * static_cast<double>(m));
  ElboEstimate est;
  if (with_grad) est.gradient.assign(model.param_count(), 0.0);
  for (const auto& t : terms) {
    est.value += t.value;
    for (std::size_t q = 0; q < est.gradient.size(); ++q) est.gradient[q] += t.grad[q];
  }
  est.value *= scale;
  for (double& g : est.gradient) g *= scale;
  return est;
}

}  // namespace detail

// Sample-average ELBO over the batch with m inner paths per observation.
inline double elbo_saa(const VariationalModel& model, std::span<const CountSample> batch,
                       const ObservationScheme& scheme, const TimeGrid& grid, std::size_t m, std::uint64_t seed) {
  return detail::estimate(model, batch, scheme, grid, m, seed, false).value;
}

// elbo_saa and its exact pathwise gradient at the same inner seeds.
inline ElboEstimate elbo_gradient(const VariationalModel& model, std::span<const CountSample> batch,
                                  const ObservationScheme& scheme, const TimeGrid& grid, std::size_t m,
                                  std::uint64_t seed) {
  return detail::estimate(model, batch, scheme, grid, m, seed, true);
}

// m paths of the controlled SDE keyed to the counts' context.
inline std::vector<IntensityPath> posterior_paths(const VariationalModel& model, const CountSample& counts,
                                                  const TimeGrid& grid, std::size_t m, std::uint64_t seed) {
  std::vector<IntensityPath> out;
  if (m == 0) return out;
  sde::StepModel step(model.controlled(model.context_of(counts)), grid, false);
  out.reserve(m);
  for (std::size_t j = 0; j < m; ++j) out.push_back(sde::euler_maruyama(step, model.z0, sde::sample_noise(grid, inner_seed(seed, 0, j))));
  return out;
}

// m paths of the uncontrolled prior, same seed rule as posterior_paths.
inline std::vector<IntensityPath> prior_paths(const VariationalModel& model, const TimeGrid& grid, std::size_t m,
                                              std::uint64_t seed) {
  std::vector<IntensityPath> out;
  if (m == 0) return out;
  sde::StepModel step(model.prior_spec(), grid, false);
  out.reserve(m);
  for (std::size_t j = 0; j < m; ++j) out.push_back(sde::euler_maruyama(step, model.z0, sde::sample_noise(grid, inner_seed(seed, 0, j))));
  return out;
}

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// Moments share the flat parameter layout.
struct AdamState {
  std::vector<double> m, v;
  std::uint64_t t = 0;
};

// One Adam step in the ascent direction with per-coordinate learning rates.
inline void adam_ascent(std::vector<double>& params, std::span<const double> grad, std::span<const double> lr,
                        AdamState& state, const AdamConfig& cfg) {
  if (state.m.empty()) {
    state.m.assign(params.size(), 0.0);
    state.v.assign(params.size(), 0.0);
  }
  if (grad.size() != params.size() || lr.size() != params.size() || state.m.size() != params.size())
    throw DimensionError("adam: size mismatch");
  ++state.t;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * grad[i];
    state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
    params[i] += lr[i] * (state.m[i] / c1) / (std::sqrt(state.v[i] / c2) + cfg.epsilon);
  }
}

struct TrainConfig {
  std::size_t m = 5;
  std::size_t minibatch = 10;
  std::size_t epochs = 35;
  double lr_theta = 0.01;
  double lr_beta = 0.01;
  double lr_sigma = 0.01;
  AdamConfig adam;
  TimeGrid grid{4.0, 60};
  std::uint64_t seed = 1;
  // Reuse one inner seed for every update (a fixed SAA problem) instead of
  // fresh Monte Carlo paths per step.
  bool fixed_saa = false;

  void validate(std::size_t n) const {
    if (m < 1 || minibatch < 1 || epochs < 1) throw std::invalid_argument("train: m, minibatch, epochs must be >= 1");
    if (minibatch > n) throw std::invalid_argument("train: minibatch larger than dataset");
    if (!(lr_theta > 0.0) || !(lr_beta > 0.0) || !(lr_sigma > 0.0))
      throw std::invalid_argument("train: learning rates must be > 0");
  }
  std::size_t updates_per_epoch(std::size_t n) const { return n / minibatch; }
};

struct TrainReport {
  std::uint64_t first_update = 0;  // global index of trace[0]
  std::vector<double> elbo;
  std::vector<double> grad_norm;
  std::vector<double> wallclock_ms;  // elapsed since the start of this run
  double total_ms = 0.0;
};

struct TrainState {
  VariationalModel model;
  AdamState adam;
  std::uint64_t updates = 0;
};

namespace detail {
inline std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::uint64_t epoch) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng = make_rng(seed::derive(seed, seed::kShuffle, epoch));
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng() % i]);
  return order;
}
}  // namespace detail

// Runs config.epochs * floor(n / minibatch) Adam ascent steps, continuing the
// update numbering of `state`.
inline TrainReport train_from(TrainState& state, const dspp::Dataset& data, const TrainConfig& config) {
  const std::size_t n = data.samples.size();
  if (n == 0) throw std::invalid_argument("train: empty dataset");
  config.validate(n);
  state.model.validate();
  const std::size_t per_epoch = config.updates_per_epoch(n);
  const std::size_t total = config.epochs * per_epoch;

  const auto& mdl = state.model;
  std::vector<double> lr(mdl.param_count());
  std::fill_n(lr.begin(), mdl.prior_size(), config.lr_theta);
  std::fill_n(lr.begin() + static_cast<std::ptrdiff_t>(mdl.prior_size()), mdl.control_size(), config.lr_beta);
  std::fill(lr.begin() + static_cast<std::ptrdiff_t>(mdl.prior_size() + mdl.control_size()), lr.end(), config.lr_sigma);

  TrainReport report;
  report.first_update = state.updates;
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<double> params = state.model.params();
  std::vector<CountSample> batch(config.minibatch);
  std::vector<std::size_t> order;
  std::uint64_t order_epoch = ~0ull;

  for (std::size_t k = 0; k < total; ++k) {
    const std::uint64_t u = state.updates;
    const std::uint64_t epoch = u / per_epoch;
    if (epoch != order_epoch) {
      order = detail::epoch_order(n, config.seed, epoch);
      order_epoch = epoch;
    }
    const std::size_t pos = (u % per_epoch) * config.minibatch;
    for (std::size_t b = 0; b < config.minibatch; ++b) batch[b] = data.samples[order[pos + b]];
    const std::uint64_t inner = seed::derive(config.seed, seed::kInnerMc, config.fixed_saa ? 0 : u);

    const auto est = elbo_gradient(state.model, batch, data.scheme, config.grid, config.m, inner);
    double norm = 0.0;
    for (double g : est.gradient) norm += g * g;
    norm = std::sqrt(norm);
    if (!std::isfinite(est.value) || !std::isfinite(norm)) throw DivergenceError(u);

    adam_ascent(params, est.gradient, lr, state.adam, config.adam);
    state.model = state.model.with_params(params);
    ++state.updates;

    report.elbo.push_back(est.value);
    report.grad_norm.push_back(norm);
    report.wallclock_ms.push_back(
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count());
  }
  report.total_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  return report;
}

struct TrainResult {
  TrainState state;
  TrainReport report;
};

inline TrainResult train(const dspp::Dataset& data, const TrainConfig& config, const ModelShape& shape,
                         std::uint64_t init_seed) {
  TrainResult r{{make_model(shape, config.grid.horizon(), init_seed), {}, 0}, {}};
  r.report = train_from(r.state, data, config);
  return r;
}

// Training trace CSV: update,elbo,grad_norm,wallclock_ms.
inline void write_trace(const TrainReport& report, const std::string& file) {
  csv::Writer w(file, "train_trace", "update,elbo,grad_norm,wallclock_ms");
  for (std::size_t i = 0; i < report.elbo.size(); ++i)
    w.row(report.first_update + i, report.elbo[i], report.grad_norm[i], report.wallclock_ms[i]);
}

// Checkpoint: nets "prior", "control" and optionally "sigma"; Adam moments
// as arrays "adam_m" / "adam_v"; everything else in metadata.
namespace detail {
inline std::string exact(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}
inline std::string join(const std::vector<double>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + exact(v[i]);
  return s;
}
inline std::vector<double> split_reals(const std::string& s) {
  std::vector<double> out;
  for (const auto& cell : csv::split(s)) out.push_back(std::stod(cell));
  return out;
}
}  // namespace detail

inline Checkpoint to_checkpoint(const TrainState& st, const TimeGrid& grid, bool trained) {
  using detail::exact;
  using detail::join;
  const auto& m = st.model;
  Checkpoint ck;
  ck.meta["kind"] = "variational_model";
  ck.meta["diffusion"] = to_string(m.diffusion);
  ck.meta["eta"] = exact(m.eta);
  ck.meta["sigma_floor"] = exact(m.sigma_floor);
  ck.meta["z0"] = exact(m.z0);
  ck.meta["context"] = to_string(m.context_mode);
  ck.meta["grid.horizon"] = exact(grid.horizon());
  ck.meta["grid.steps"] = std::to_string(grid.steps());
  ck.meta["prior.input_scale"] = join(m.prior.input_scale);
  ck.meta["prior.output_scale"] = exact(m.prior.output_scale);
  ck.meta["control.input_scale"] = join(m.control.input_scale);
  ck.meta["control.output_scale"] = exact(m.control.output_scale);
  ck.meta["updates"] = std::to_string(st.updates);
  ck.meta["adam.t"] = std::to_string(st.adam.t);
  ck.meta["trained"] = trained ? "true" : "false";
  ck.nets.emplace_back("prior", m.prior.net);
  ck.nets.emplace_back("control", m.control.net);
  if (m.sigma) {
    ck.meta["sigma.input_scale"] = join(m.sigma->input_scale);
    ck.meta["sigma.output_scale"] = exact(m.sigma->output_scale);
    ck.nets.emplace_back("sigma", m.sigma->net);
  }
  ck.arrays.emplace_back("adam_m", st.adam.m);
  ck.arrays.emplace_back("adam_v", st.adam.v);
  return ck;
}

struct LoadedModel {
  TrainState state;
  TimeGrid grid;
  bool trained;
};

inline LoadedModel from_checkpoint(const Checkpoint& ck) {
  try {
    if (ck.require_meta("kind") != "variational_model") throw FormatError("checkpoint: not a variational model");
    auto net = [&](const char* name) {
      const auto* n = ck.net(name);
      if (!n) throw FormatError(std::string("checkpoint: missing network '") + name + "'");
      return *n;
    };
    VariationalModel m;
    m.prior = {net("prior"), detail::split_reals(ck.require_meta("prior.input_scale")),
               std::stod(ck.require_meta("prior.output_scale"))};
    m.control = {net("control"), detail::split_reals(ck.require_meta("control.input_scale")),
                 std::stod(ck.require_meta("control.output_scale"))};
    const auto& mode = ck.require_meta("diffusion");
    if (mode == "learned") {
      m.diffusion = DiffusionMode::learned;
      m.sigma = ScaledNet{net("sigma"), detail::split_reals(ck.require_meta("sigma.input_scale")),
                          std::stod(ck.require_meta("sigma.output_scale"))};
    } else if (mode != "fixed") {
      throw FormatError("checkpoint: unknown diffusion mode '" + mode + "'");
    }
    m.eta = std::stod(ck.require_meta("eta"));
    m.sigma_floor = std::stod(ck.require_meta("sigma_floor"));
    m.z0 = std::stod(ck.require_meta("z0"));
    m.context_mode = ck.require_meta("context") == "pair" ? ContextMode::pair : ContextMode::terminal;
    m.validate();
    TimeGrid grid(std::stod(ck.require_meta("grid.horizon")), std::stoull(ck.require_meta("grid.steps")));
    TrainState st{std::move(m), {}, std::stoull(ck.require_meta("updates"))};
    if (const auto* a = ck.array("adam_m")) st.adam.m = *a;
    if (const auto* a = ck.array("adam_v")) st.adam.v = *a;
    st.adam.t = std::stoull(ck.require_meta("adam.t"));
    if (!st.adam.m.empty() && st.adam.m.size() != st.model.param_count())
      throw FormatError("checkpoint: optimizer state does not match the parameter count");
    return {std::move(st), grid, ck.require_meta("trained") == "true"};
  } catch (const std::logic_error& e) {
    throw FormatError(std::string("checkpoint: malformed model section: ") + e.what());
  }
}

}  // namespace dlm::inference
