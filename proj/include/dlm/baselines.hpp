#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "dlm/csv.hpp"
#include "dlm/dspp.hpp"
#include "dlm/errors.hpp"

namespace dlm::baselines {

enum class PieceKind { constant, linear };

inline std::string to_string(PieceKind k) { return k == PieceKind::constant ? "constant" : "linear"; }

// Piecewise intensity on knots t_0 < ... < t_d spanning [0, T].
//   constant: value[i] holds on [t_i, t_{i+1}); an interior knot belongs to
//             the piece on its right; the last value repeats the last piece
//             so that t = T is covered.
//   linear:   linear interpolation of the nodal values.
struct PiecewiseIntensity {
  std::vector<double> knots;
  std::vector<double> values;
  PieceKind kind = PieceKind::linear;

  double horizon() const { return knots.back(); }

  void validate() const {
    if (knots.size() < 2 || values.size() != knots.size())
      throw DimensionError("piecewise intensity needs matching knots and values (at least two)");
    if (knots.front() != 0.0) throw std::invalid_argument("piecewise intensity must start at 0");
    for (std::size_t i = 1; i < knots.size(); ++i)
      if (!(knots[i] > knots[i - 1])) throw std::invalid_argument("knots must increase");
    for (double v : values)
      if (!(v >= 0.0)) throw std::invalid_argument("piecewise intensity values must be >= 0");
  }
};

inline double evaluate(const PiecewiseIntensity& pi, double t) {
  if (!(t >= pi.knots.front()) || !(t <= pi.knots.back()))
    throw std::out_of_range("evaluate: t outside [0, T]");
  auto it = std::upper_bound(pi.knots.begin(), pi.knots.end(), t);
  std::size_t i = static_cast<std::size_t>(it - pi.knots.begin());
  i = i == 0 ? 0 : i - 1;
  if (i + 1 >= pi.knots.size()) i = pi.knots.size() - 2;  // t == T
  if (pi.kind == PieceKind::constant) return t == pi.knots.back() ? pi.values.back() : pi.values[i];
  const double w = (t - pi.knots[i]) / (pi.knots[i + 1] - pi.knots[i]);
  return (1.0 - w) * pi.values[i] + w * pi.values[i + 1];
}

// Intensity on the simulation grid, e.g. to drive the queue simulator.
inline sde::IntensityPath to_path(const PiecewiseIntensity& pi, const sde::TimeGrid& grid) {
  std::vector<double> z(grid.size());
  for (std::size_t m = 0; m < grid.size(); ++m) z[m] = evaluate(pi, std::min(grid.time(m), pi.horizon()));
  return {grid, std::move(z)};
}

namespace detail {
inline std::vector<double> mean_increments(const dspp::Dataset& ds) {
  if (ds.samples.empty()) throw std::invalid_argument("baseline: empty dataset");
  std::vector<double> mean(ds.scheme.epochs.size(), 0.0);
  for (const auto& s : ds.samples) {
    dspp::check_conforms(s, ds.scheme);
    for (std::size_t i = 0; i < mean.size(); ++i) mean[i] += static_cast<double>(s.increment(i));
  }
  for (double& m : mean) m /= static_cast<double>(ds.samples.size());
  return mean;
}
}  // namespace detail

// Piecewise-constant NHPP MLE on the observation intervals: mean increment
// divided by interval length.
inline PiecewiseIntensity pc_mle(const dspp::Dataset& ds) {
  const auto mean = detail::mean_increments(ds);
  PiecewiseIntensity pi;
  pi.kind = PieceKind::constant;
  pi.knots.push_back(0.0);
  double prev = 0.0;
  for (std::size_t i = 0; i < mean.size(); ++i) {
    const double e = ds.scheme.epochs[i];
    pi.knots.push_back(e);
    pi.values.push_back(mean[i] / (e - prev));
    prev = e;
  }
  pi.values.push_back(pi.values.back());
  return pi;
}

// Integral of each nodal hat function over [a, b]: row I of the linear map
// from nodal values to the integrated intensity of observation interval I.
inline std::vector<double> hat_integrals(const std::vector<double>& knots, double a, double b) {
  std::vector<double> row(knots.size(), 0.0);
  for (std::size_t k = 0; k + 1 < knots.size(); ++k) {
    const double l = knots[k], r = knots[k + 1], h = r - l;
    const double lo = std::max(a, l), hi = std::min(b, r);
    if (!(hi > lo)) continue;
    row[k] += ((r - lo) * (r - lo) - (r - hi) * (r - hi)) / (2.0 * h);
    row[k + 1] += ((hi - l) * (hi - l) - (lo - l) * (lo - l)) / (2.0 * h);
  }
  return row;
}

struct PlFit {
  PiecewiseIntensity fit;
  std::vector<double> objective_trace;  // accepted iterates, nondecreasing
  std::size_t iterations = 0;
};

struct PlOptions {
  double tolerance = 1e-8;  // on objective change
  std::size_t max_iterations = 100000;
};

// Continuous piecewise-linear NHPP MLE with d uniform pieces over [0, horizon]:
// maximizes sum_I [ xbar_I log(A_I v) - A_I v ] over v >= 0 (per-sample
// average of the Poisson log-likelihood up to constants) by projected
// gradient ascent with backtracking, starting from the flat pooled rate.
inline PlFit pl_mle_detailed(const dspp::Dataset& ds, std::size_t d, double horizon, const PlOptions& opt = {}) {
  if (d < 1) throw std::invalid_argument("pl_mle: d must be >= 1");
  const auto mean = detail::mean_increments(ds);
  const std::size_t nk = d + 1;
  std::vector<double> knots(nk);
  for (std::size_t j = 0; j < nk; ++j) knots[j] = horizon * static_cast<double>(j) / static_cast<double>(d);
  knots.back() = horizon;

  std::vector<std::vector<double>> A;
  double prev = 0.0, observed = 0.0, total = 0.0;
  for (std::size_t i = 0; i < mean.size(); ++i) {
    A.push_back(hat_integrals(knots, prev, ds.scheme.epochs[i]));
    observed += ds.scheme.epochs[i] - prev;
    total += mean[i];
    prev = ds.scheme.epochs[i];
  }

  auto objective = [&](const std::vector<double>& v) {
    double L = 0.0;
    for (std::size_t i = 0; i < A.size(); ++i) {
      double lam = 0.0;
      for (std::size_t j = 0; j < nk; ++j) lam += A[i][j] * v[j];
      if (mean[i] > 0.0) {
        if (!(lam > 0.0)) return -std::numeric_limits<double>::infinity();
        L += mean[i] * std::log(lam);
      }
      L -= lam;
    }
    return L;
  };
  auto gradient = [&](const std::vector<double>& v) {
    std::vector<double> g(nk, 0.0);
    for (std::size_t i = 0; i < A.size(); ++i) {
      double lam = 0.0;
      for (std::size_t j = 0; j < nk; ++j) lam += A[i][j] * v[j];
      const double w = (mean[i] > 0.0 ? mean[i] / lam : 0.0) - 1.0;
      for (std::size_t j = 0; j < nk; ++j) g[j] += w * A[i][j];
    }
    return g;
  };

  std::vector<double> v(nk, total / observed);
  double L = objective(v);
  PlFit out;
  out.objective_trace.push_back(L);
  double step = 1.0;
  bool converged = false;
  std::size_t it = 0;
  for (; it < opt.max_iterations && !converged; ++it) {
    const auto g = gradient(v);
    bool accepted = false;
    for (int halvings = 0; halvings < 80; ++halvings, step *= 0.5) {
      std::vector<double> c(nk);
      double ascent = 0.0;
      for (std::size_t j = 0; j < nk; ++j) {
        c[j] = std::max(0.0, v[j] + step * g[j]);
        ascent += g[j] * (c[j] - v[j]);
      }
      const double Lc = objective(c);
      if (Lc >= L + 1e-4 * ascent && Lc >= L) {
        converged = Lc - L < opt.tolerance;
        v = std::move(c);
        L = Lc;
        accepted = true;
        break;
      }
    }
    if (!accepted) converged = true;  // no representable ascent step left
    out.objective_trace.push_back(L);
    step *= 2.0;
  }
  if (!converged) throw ConvergenceError("pl_mle: no convergence within the iteration cap", v);
  out.iterations = it;
  out.fit = {knots, v, PieceKind::linear};
  return out;
}

inline PiecewiseIntensity pl_mle(const dspp::Dataset& ds, std::size_t d, double horizon) {
  return pl_mle_detailed(ds, d, horizon).fit;
}

// Horizon defaults to the last observation epoch.
inline PiecewiseIntensity pl_mle(const dspp::Dataset& ds, std::size_t d) {
  return pl_mle(ds, d, ds.scheme.epochs.back());
}

// Fitted baseline CSV: knot_time,value,kind.
inline void write_fit(const PiecewiseIntensity& pi, const std::string& file) {
  csv::Writer w(file, "baseline_fit", "knot_time,value,kind");
  for (std::size_t i = 0; i < pi.knots.size(); ++i) w.row(pi.knots[i], pi.values[i], to_string(pi.kind));
}

inline PiecewiseIntensity read_fit(const std::string& file) {
  const auto t = csv::read(file);
  const std::size_t ck = t.column("knot_time"), cv = t.column("value"), cx = t.column("kind");
  PiecewiseIntensity pi;
  try {
    for (const auto& r : t.rows) {
      pi.knots.push_back(std::stod(r[ck]));
      pi.values.push_back(std::stod(r[cv]));
      pi.kind = r[cx] == "constant" ? PieceKind::constant : PieceKind::linear;
    }
  } catch (const std::logic_error&) {
    throw FormatError("baseline fit: unparsable number in '" + file + "'");
  }
  pi.validate();
  return pi;
}

}  // namespace dlm::baselines
