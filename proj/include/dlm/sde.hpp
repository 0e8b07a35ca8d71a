#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "dlm/csv.hpp"
#include "dlm/errors.hpp"
#include "dlm/nn.hpp"
#include "dlm/random.hpp"

namespace dlm::sde {

// Below this level sqrt(z) is treated as singular: coefficients carrying
// 1/sqrt(z) are set to zero.
inline constexpr double kSqrtFloor = 1e-8;

class TimeGrid {
 public:
  TimeGrid(double horizon, std::size_t steps) : horizon_(horizon), steps_(steps) {
    if (!(horizon > 0.0) || !std::isfinite(horizon)) throw std::invalid_argument("TimeGrid: horizon must be > 0");
    if (steps == 0) throw std::invalid_argument("TimeGrid: steps must be >= 1");
  }

  double horizon() const noexcept { return horizon_; }
  std::size_t steps() const noexcept { return steps_; }
  std::size_t size() const noexcept { return steps_ + 1; }
  double step() const noexcept { return horizon_ / static_cast<double>(steps_); }
  double time(std::size_t m) const noexcept {
    return horizon_ * static_cast<double>(m) / static_cast<double>(steps_);
  }

  std::size_t index_of(double t) const {
    const double x = t / step();
    const double r = std::round(x);
    if (!(r >= 0.0) || r > static_cast<double>(steps_) || std::fabs(x - r) > 1e-9 * std::max(1.0, x))
      throw OffGridError("epoch " + csv::format_real(t) + " is not on the time grid");
    return static_cast<std::size_t>(r);
  }

  friend bool operator==(const TimeGrid& a, const TimeGrid& b) {
    return a.horizon_ == b.horizon_ && a.steps_ == b.steps_;
  }

 private:
  double horizon_;
  std::size_t steps_;
};

struct IntensityPath {
  TimeGrid grid;
  std::vector<double> values;  // Z(t_m), m = 0..N
};

struct NoisePath {
  TimeGrid grid;
  std::vector<double> increments;  // dW_m, m = 0..N-1
};

struct SensitivityPath {
  TimeGrid grid;
  std::vector<double> values;  // dZ(t_m)/dp, m = 0..N
};

inline NoisePath sample_noise(const TimeGrid& grid, std::uint64_t seed) {
  Rng rng = make_rng(seed::derive(seed, seed::kPathNoise));
  const double sd = std::sqrt(grid.step());
  std::vector<double> inc(grid.steps());
  for (auto& w : inc) w = sd * standard_normal(rng);
  return {grid, std::move(inc)};
}

// A network evaluated on rescaled inputs: out_scale * net(x_0 / s_0, x_1 / s_1, ...).
struct ScaledNet {
  nn::MLPModel net;
  std::vector<double> input_scale;
  double output_scale = 1.0;

  void validate() const {
    if (input_scale.size() != net.spec().input_dim)
      throw DimensionError("ScaledNet: input_scale length differs from network input_dim");
    for (double s : input_scale)
      if (!(s > 0.0)) throw std::invalid_argument("ScaledNet: input scales must be > 0");
    if (!(output_scale > 0.0)) throw std::invalid_argument("ScaledNet: output scale must be > 0");
  }

  // Value, with optional parameter and raw-input gradients.
  double eval(std::span<const double> raw, nn::Workspace& ws, std::vector<double>& scaled,
              std::span<double> grad_params = {}, std::span<double> grad_input = {}) const {
    if (raw.size() != input_scale.size()) throw DimensionError("ScaledNet: wrong input length");
    scaled.resize(raw.size());
    for (std::size_t i = 0; i < raw.size(); ++i) scaled[i] = raw[i] / input_scale[i];
    const double y = nn::evaluate(net, scaled, ws, grad_params, grad_input);
    for (double& g : grad_params) g *= output_scale;
    for (std::size_t i = 0; i < grad_input.size(); ++i) grad_input[i] *= output_scale / input_scale[i];
    return output_scale * y;
  }

  double operator()(std::span<const double> raw) const {
    nn::Workspace ws;
    std::vector<double> scaled;
    return eval(raw, ws, scaled);
  }
};

// Drift families.
struct CirDrift {
  double kappa;  // mean-reversion rate
  double level;  // long-run level
};
struct NeuralDrift {
  ScaledNet prior;  // b(z, t)
};
// b(z, t) + g(z, t) * u(context, t): the control never reads z.
struct ControlledDrift {
  ScaledNet prior;
  ScaledNet control;            // inputs: (context..., t)
  std::vector<double> context;  // raw count context
};
using Drift = std::variant<CirDrift, NeuralDrift, ControlledDrift>;

// Diffusion families.
struct SqrtDiffusion {
  double eta;  // eta * sqrt(z)
};
struct PowerSqrtDiffusion {
  double eta, level, alpha;  // eta * level^alpha * sqrt(z)
};
struct NeuralDiffusion {
  ScaledNet net;  // floor + softplus(net(z, t))
  double floor = 1e-4;
};
using Diffusion = std::variant<SqrtDiffusion, PowerSqrtDiffusion, NeuralDiffusion>;

inline double softplus(double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); }
inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

struct DriftSpec {
  Drift drift;
  Diffusion diffusion;

  static DriftSpec cir(double kappa, double level, double eta) {
    return {CirDrift{kappa, level}, SqrtDiffusion{eta}};
  }
  // Zero-noise limit of cir().
  static DriftSpec ode(double kappa, double level) { return cir(kappa, level, 0.0); }
  // dZ = (level - Z) dt + eta * level^alpha * sqrt(Z) dW.
  static DriftSpec cir_power(double eta, double level, double alpha) {
    return {CirDrift{1.0, level}, PowerSqrtDiffusion{eta, level, alpha}};
  }

  void validate() const {
    if (const auto* c = std::get_if<CirDrift>(&drift)) {
      if (!(c->kappa > 0.0) || !(c->level > 0.0))
        throw std::invalid_argument("CIR drift needs kappa > 0 and level > 0");
    } else if (const auto* n = std::get_if<NeuralDrift>(&drift)) {
      n->prior.validate();
    } else {
      const auto& c = std::get<ControlledDrift>(drift);
      c.prior.validate();
      c.control.validate();
      if (c.context.size() + 1 != c.control.input_scale.size())
        throw DimensionError("controlled drift: context length must be control input_dim - 1");
    }
    if (const auto* s = std::get_if<SqrtDiffusion>(&diffusion)) {
      if (!(s->eta >= 0.0)) throw std::invalid_argument("diffusion eta must be >= 0");
    } else if (const auto* p = std::get_if<PowerSqrtDiffusion>(&diffusion)) {
      if (!(p->eta >= 0.0) || !(p->level > 0.0) || !(p->alpha > 0.0 && p->alpha <= 0.5))
        throw std::invalid_argument("CIR diffusion needs eta >= 0, level > 0, alpha in (0, 1/2]");
    } else {
      const auto& n = std::get<NeuralDiffusion>(diffusion);
      n.net.validate();
      if (!(n.floor > 0.0)) throw std::invalid_argument("neural diffusion floor must be > 0");
    }
  }

  // Flat parameter coordinates: [prior drift | control | diffusion net].
  std::size_t prior_size() const {
    if (const auto* n = std::get_if<NeuralDrift>(&drift)) return n->prior.net.size();
    if (const auto* c = std::get_if<ControlledDrift>(&drift)) return c->prior.net.size();
    return 0;
  }
  std::size_t control_size() const {
    if (const auto* c = std::get_if<ControlledDrift>(&drift)) return c->control.net.size();
    return 0;
  }
  std::size_t diffusion_size() const {
    if (const auto* n = std::get_if<NeuralDiffusion>(&diffusion)) return n->net.net.size();
    return 0;
  }
  std::size_t param_count() const { return prior_size() + control_size() + diffusion_size(); }

  // Diffusion coefficient with the neural networks' parameters untouched;
  // the drift is replaced by its uncontrolled prior part.
  DriftSpec without_control() const {
    DriftSpec out = *this;
    if (const auto* c = std::get_if<ControlledDrift>(&drift)) out.drift = NeuralDrift{c->prior};
    return out;
  }
};

// Coefficients of one Euler step, linearized in the state and parameters.
// f = b + g * u, with u the control at t_m (0 when uncontrolled).
struct StepLinearization {
  double f = 0.0, g = 0.0;
  double f_z = 0.0, g_z = 0.0;
  double u = 0.0;
  std::vector<double> prior_p;      // d b / d theta (scaled)
  std::vector<double> diffusion_p;  // d g / d theta_hat
};

// Evaluates a DriftSpec on a fixed grid. Control values depend only on the
// time index and context, so they (and their parameter gradients) are
// tabulated once per instance. Not thread-safe; use one per thread.
class StepModel {
 public:
  StepModel(const DriftSpec& spec, const TimeGrid& grid, bool with_gradients)
      : spec_(spec), grid_(grid), grads_(with_gradients) {
    spec_.validate();
    if (const auto* c = std::get_if<ControlledDrift>(&spec_.drift)) {
      const std::size_t n = grid.size();
      const std::size_t pc = c->control.net.size();
      control_.resize(n);
      if (grads_) control_p_.assign(n * pc, 0.0);
      std::vector<double> in(c->context);
      in.push_back(0.0);
      for (std::size_t m = 0; m < n; ++m) {
        in.back() = grid.time(m);
        std::span<double> gp = grads_ ? std::span<double>(control_p_).subspan(m * pc, pc) : std::span<double>{};
        control_[m] = c->control.eval(in, ws_, scaled_, gp);
        if (!std::isfinite(control_[m])) throw IntegrationError(m, "non-finite control value");
      }
    }
    lin_.prior_p.assign(spec_.prior_size(), 0.0);
    lin_.diffusion_p.assign(spec_.diffusion_size(), 0.0);
  }

  const DriftSpec& spec() const noexcept { return spec_; }
  const TimeGrid& grid() const noexcept { return grid_; }
  bool has_control() const noexcept { return !control_.empty(); }
  double control(std::size_t m) const noexcept { return control_.empty() ? 0.0 : control_[m]; }
  std::span<const double> control_grad(std::size_t m) const {
    const std::size_t pc = spec_.control_size();
    return std::span<const double>(control_p_).subspan(m * pc, pc);
  }

  // Coefficients at grid index m and state z (truncated to z+ = max(z, 0)).
  // With linearize = true also fills the derivatives (requires gradients).
  const StepLinearization& evaluate(std::size_t m, double z, bool linearize) {
    const double zp = std::max(z, 0.0);
    const double t = grid_.time(m);
    auto& L = lin_;
    const bool lin = linearize && grads_;
    L.u = control(m);

    double b = 0.0, b_z = 0.0;
    if (const auto* c = std::get_if<CirDrift>(&spec_.drift)) {
      b = c->kappa * (c->level - zp);
      b_z = -c->kappa;
    } else {
      const ScaledNet& prior = std::holds_alternative<NeuralDrift>(spec_.drift)
                                   ? std::get<NeuralDrift>(spec_.drift).prior
                                   : std::get<ControlledDrift>(spec_.drift).prior;
      double in[2] = {zp, t};
      double gi[2] = {0.0, 0.0};
      b = prior.eval(in, ws_, scaled_, lin ? std::span<double>(L.prior_p) : std::span<double>{},
                     lin ? std::span<double>(gi) : std::span<double>{});
      b_z = gi[0];
    }

    double g = 0.0, g_z = 0.0;
    if (const auto* s = std::get_if<SqrtDiffusion>(&spec_.diffusion)) {
      g = s->eta * std::sqrt(zp);
      g_z = zp > kSqrtFloor ? s->eta / (2.0 * std::sqrt(zp)) : 0.0;
    } else if (const auto* p = std::get_if<PowerSqrtDiffusion>(&spec_.diffusion)) {
      const double c = p->eta * std::pow(p->level, p->alpha);
      g = c * std::sqrt(zp);
      g_z = zp > kSqrtFloor ? c / (2.0 * std::sqrt(zp)) : 0.0;
    } else {
      const auto& nd = std::get<NeuralDiffusion>(spec_.diffusion);
      double in[2] = {zp, t};
      double gi[2] = {0.0, 0.0};
      const double a = nd.net.eval(in, ws_, scaled_, lin ? std::span<double>(L.diffusion_p) : std::span<double>{},
                                   lin ? std::span<double>(gi) : std::span<double>{});
      g = nd.floor + softplus(a);
      if (lin) {
        const double sg = sigmoid(a);
        g_z = sg * gi[0];
        for (double& x : L.diffusion_p) x *= sg;
      }
    }

    L.f = b + g * L.u;
    L.g = g;
    L.f_z = b_z + g_z * L.u;
    L.g_z = g_z;
    if (!std::isfinite(L.f) || !std::isfinite(L.g))
      throw IntegrationError(m, "non-finite drift or diffusion at t=" + csv::format_real(t));
    return L;
  }

 private:
  DriftSpec spec_;
  TimeGrid grid_;
  bool grads_;
  std::vector<double> control_, control_p_;
  StepLinearization lin_;
  nn::Workspace ws_;
  std::vector<double> scaled_;
};

namespace detail {
inline void check_noise(const TimeGrid& grid, const NoisePath& noise) {
  if (!(noise.grid == grid) || noise.increments.size() != grid.steps())
    throw DimensionError("noise path does not match the time grid");
}
}  // namespace detail

// Full-truncation Euler-Maruyama: coefficients at max(Z, 0), state clamped
// at 0 after every step.
inline IntensityPath euler_maruyama(StepModel& model, double z0, const NoisePath& noise) {
  const TimeGrid& grid = model.grid();
  detail::check_noise(grid, noise);
  if (!(z0 >= 0.0) || !std::isfinite(z0)) throw std::invalid_argument("euler_maruyama: z0 must be >= 0");
  const double dt = grid.step();
  std::vector<double> z(grid.size());
  z[0] = z0;
  for (std::size_t m = 0; m < grid.steps(); ++m) {
    const auto& c = model.evaluate(m, z[m], false);
    const double next = z[m] + c.f * dt + c.g * noise.increments[m];
    if (!std::isfinite(next)) throw IntegrationError(m, "non-finite state");
    z[m + 1] = std::max(next, 0.0);
  }
  return {grid, std::move(z)};
}

inline IntensityPath euler_maruyama(const DriftSpec& spec, double z0, const TimeGrid& grid, const NoisePath& noise) {
  StepModel model(spec, grid, false);
  return euler_maruyama(model, z0, noise);
}

namespace detail {
// One step of the sensitivity recursion given the linearization at Z(t_m).
inline void advance_sensitivity(StepModel& model, const StepLinearization& L, std::size_t m, double dw, double pre,
                                std::vector<double>& D) {
  if (!(pre > 0.0)) {
    std::fill(D.begin(), D.end(), 0.0);
    return;
  }
  const DriftSpec& spec = model.spec();
  const std::size_t np = spec.prior_size(), nc = spec.control_size(), nd = spec.diffusion_size();
  const double dt = model.grid().step();
  const double a = 1.0 + L.f_z * dt + L.g_z * dw;
  double* d = D.data();
  for (std::size_t i = 0; i < np; ++i) d[i] = a * d[i] + L.prior_p[i] * dt;
  if (nc > 0) {
    const auto up = model.control_grad(m);
    const double w = L.g * dt;
    for (std::size_t i = 0; i < nc; ++i) d[np + i] = a * d[np + i] + w * up[i];
  }
  if (nd > 0) {
    const double w = L.u * dt + dw;
    for (std::size_t i = 0; i < nd; ++i) d[np + nc + i] = a * d[np + nc + i] + w * L.diffusion_p[i];
  }
}
}  // namespace detail

// Forward sensitivity sweep of the discretized recursion for every parameter
// coordinate at once. visit(m, D) is called for m = 0..N with D = dZ(t_m)/dp.
//
//   D_{m+1} = D_m + (f_z D_m + f_p) dt + (g_z D_m + g_p) dW_m,   D_0 = 0,
//
// and D_{m+1} = 0 whenever the truncation clamps Z_{m+1} to zero.
template <class Visit>
void sensitivity_sweep(StepModel& model, const IntensityPath& path, const NoisePath& noise, Visit&& visit) {
  const TimeGrid& grid = model.grid();
  detail::check_noise(grid, noise);
  if (!(path.grid == grid) || path.values.size() != grid.size())
    throw DimensionError("intensity path does not match the time grid");
  std::vector<double> D(model.spec().param_count(), 0.0);
  const double dt = grid.step();
  visit(std::size_t{0}, std::span<const double>(D));
  for (std::size_t m = 0; m < grid.steps(); ++m) {
    const double dw = noise.increments[m];
    const auto& L = model.evaluate(m, path.values[m], true);
    detail::advance_sensitivity(model, L, m, dw, path.values[m] + L.f * dt + L.g * dw, D);
    visit(m + 1, std::span<const double>(D));
  }
}

// euler_maruyama and sensitivity_sweep in a single pass: one linearized
// evaluation per step instead of two.
template <class Visit>
IntensityPath euler_maruyama_sensitivity(StepModel& model, double z0, const NoisePath& noise, Visit&& visit) {
  const TimeGrid& grid = model.grid();
  detail::check_noise(grid, noise);
  if (!(z0 >= 0.0) || !std::isfinite(z0)) throw std::invalid_argument("euler_maruyama: z0 must be >= 0");
  const double dt = grid.step();
  std::vector<double> z(grid.size());
  std::vector<double> D(model.spec().param_count(), 0.0);
  z[0] = z0;
  visit(std::size_t{0}, std::span<const double>(D));
  for (std::size_t m = 0; m < grid.steps(); ++m) {
    const double dw = noise.increments[m];
    const auto& L = model.evaluate(m, z[m], true);
    const double next = z[m] + L.f * dt + L.g * dw;
    if (!std::isfinite(next)) throw IntegrationError(m, "non-finite state");
    detail::advance_sensitivity(model, L, m, dw, next, D);
    z[m + 1] = std::max(next, 0.0);
    visit(m + 1, std::span<const double>(D));
  }
  return {grid, std::move(z)};
}

// dZ(t_m)/dp for one parameter coordinate p (index into the flat
// [prior | control | diffusion] layout).
inline SensitivityPath simulate_sensitivity(const DriftSpec& spec, const IntensityPath& path, const NoisePath& noise,
                                            std::size_t which) {
  if (which >= spec.param_count()) throw DimensionError("simulate_sensitivity: parameter index out of range");
  StepModel model(spec, path.grid, true);
  SensitivityPath out{path.grid, std::vector<double>(path.grid.size(), 0.0)};
  sensitivity_sweep(model, path, noise, [&](std::size_t m, std::span<const double> D) { out.values[m] = D[which]; });
  return out;
}

// Left-endpoint Riemann sum of Z over [t_i, t_j) on grid indices i <= j.
inline double integrated_intensity_idx(const IntensityPath& path, std::size_t i, std::size_t j) {
  if (i > j || j >= path.values.size()) throw std::invalid_argument("integrated_intensity: bad index range");
  double s = 0.0;
  for (std::size_t m = i; m < j; ++m) s += path.values[m];
  return s * path.grid.step();
}

inline double integrated_intensity(const IntensityPath& path, double s, double t) {
  const std::size_t i = path.grid.index_of(s), j = path.grid.index_of(t);
  if (i > j) throw std::invalid_argument("integrated_intensity: s must not exceed t");
  return integrated_intensity_idx(path, i, j);
}

inline void write_path_csv(const IntensityPath& path, const std::string& file) {
  csv::Writer w(file, "intensity_path", "t,value");
  for (std::size_t m = 0; m < path.values.size(); ++m) w.row(path.grid.time(m), path.values[m]);
}

}  // namespace dlm::sde
