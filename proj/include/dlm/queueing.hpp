#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include <boost/math/distributions/chi_squared.hpp>

#include "dlm/baselines.hpp"
#include "dlm/csv.hpp"
#include "dlm/dspp.hpp"
#include "dlm/inference.hpp"
#include "dlm/parallel.hpp"
#include "dlm/random.hpp"
#include "dlm/sde.hpp"

namespace dlm::queueing {

struct ServiceDist {
  enum class Kind { exponential, erlang };
  Kind kind = Kind::exponential;
  double rate = 2.0;    // mu for exponential, lambda for erlang
  unsigned shape = 1;   // erlang k

  static ServiceDist exponential(double mu) { return {Kind::exponential, mu, 1}; }
  static ServiceDist erlang(unsigned k, double lambda) { return {Kind::erlang, lambda, k}; }

  void validate() const {
    if (!(rate > 0.0)) throw std::invalid_argument("service rate must be > 0");
    if (kind == Kind::erlang && shape < 1) throw std::invalid_argument("erlang shape must be >= 1");
  }
  double mean() const { return (kind == Kind::exponential ? 1.0 : static_cast<double>(shape)) / rate; }

  double sample(Rng& rng) const {
    if (kind == Kind::exponential) return -std::log(uniform01(rng)) / rate;
    double s = 0.0;
    for (unsigned i = 0; i < shape; ++i) s -= std::log(uniform01(rng));
    return s / rate;
  }

  std::string name() const { return kind == Kind::exponential ? "exponential" : "erlang"; }
};

struct ArrivalStream {
  std::vector<double> times;  // sorted
};

// Per grid cell [t_m, t_{m+1}): N_m ~ Poisson(Z(t_m) dt) arrivals placed
// uniformly in the cell.
inline ArrivalStream arrivals_from_path(const sde::IntensityPath& path, std::uint64_t seed) {
  Rng rng = make_rng(seed::derive(seed, seed::kArrivals));
  const double dt = path.grid.step();
  ArrivalStream s;
  for (std::size_t m = 0; m < path.grid.steps(); ++m) {
    const double z = path.values[m];
    if (!(z >= 0.0)) throw std::invalid_argument("arrivals_from_path: negative intensity");
    const std::int64_t n = poisson(rng, z * dt);
    const double t0 = path.grid.time(m);
    const std::size_t first = s.times.size();
    for (std::int64_t i = 0; i < n; ++i) s.times.push_back(t0 + dt * uniform01(rng));
    std::sort(s.times.begin() + static_cast<std::ptrdiff_t>(first), s.times.end());
  }
  return s;
}

// Occupancy of an infinite-server queue at each probe:
// #{i : a_i <= t < a_i + S_i}.
inline std::vector<std::int64_t> simulate_infinite_server(const ArrivalStream& stream, const ServiceDist& service,
                                                          const std::vector<double>& probes, std::uint64_t seed) {
  service.validate();
  Rng rng = make_rng(seed::derive(seed, seed::kService));
  std::vector<std::int64_t> busy(probes.size(), 0);
  for (double a : stream.times) {
    const double depart = a + service.sample(rng);
    for (std::size_t p = 0; p < probes.size(); ++p)
      if (a <= probes[p] && probes[p] < depart) ++busy[p];
  }
  return busy;
}

struct ProbeStats {
  double epoch = 0.0;
  double mean = 0.0;
  double ci_half = 0.0;  // 1.96 sd / sqrt(R)
  double variance = 0.0;
  double var_lo = 0.0, var_hi = 0.0;  // chi-square 95% interval
  std::size_t replications = 0;
};

using OccupancyStats = std::vector<ProbeStats>;

inline ProbeStats summarize(double epoch, const std::vector<double>& x) {
  const std::size_t R = x.size();
  if (R < 2) throw std::invalid_argument("occupancy_stats: need at least 2 samples");
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= static_cast<double>(R);
  double ss = 0.0;
  for (double v : x) ss += (v - mean) * (v - mean);
  const double df = static_cast<double>(R - 1);
  const double var = ss / df;
  boost::math::chi_squared chi(df);
  ProbeStats s;
  s.epoch = epoch;
  s.mean = mean;
  s.ci_half = 1.96 * std::sqrt(var / static_cast<double>(R));
  s.variance = var;
  s.var_lo = df * var / boost::math::quantile(chi, 0.975);
  s.var_hi = df * var / boost::math::quantile(chi, 0.025);
  s.replications = R;
  return s;
}

inline OccupancyStats occupancy_stats(const std::vector<std::vector<double>>& per_probe,
                                      const std::vector<double>& epochs) {
  if (per_probe.size() != epochs.size()) throw DimensionError("occupancy_stats: one sample vector per probe");
  OccupancyStats out;
  for (std::size_t p = 0; p < epochs.size(); ++p) out.push_back(summarize(epochs[p], per_probe[p]));
  return out;
}

// Traffic sources for run-through experiments.
struct TrueSource {
  dspp::TruthModel truth;
};

enum class DlmMode {
  self_generated,  // counts drawn from the fitted prior, then a posterior path
  prior,           // prior paths directly
  heldout,         // posterior paths conditioned on supplied counts, cycled
};

struct DlmSource {
  inference::VariationalModel model;
  dspp::ObservationScheme scheme;
  DlmMode mode = DlmMode::self_generated;
  std::vector<dspp::CountSample> heldout;
};

struct PlSource {
  baselines::PiecewiseIntensity fit;
};

using TrafficSource = std::variant<TrueSource, DlmSource, PlSource>;

struct RunThroughResult {
  OccupancyStats occupancy;
  OccupancyStats counts;  // cumulative arrivals at the probes
};

// One intensity path per replication from the source.
inline sde::IntensityPath draw_path(const TrafficSource& src, const sde::TimeGrid& grid, std::uint64_t rep_seed,
                                    std::size_t r) {
  if (const auto* t = std::get_if<TrueSource>(&src)) {
    return sde::euler_maruyama(t->truth.spec, t->truth.z0, grid, sde::sample_noise(grid, rep_seed));
  }
  if (const auto* p = std::get_if<PlSource>(&src)) return baselines::to_path(p->fit, grid);
  const auto& d = std::get<DlmSource>(src);
  const auto prior_noise = sde::sample_noise(grid, rep_seed);
  if (d.mode == DlmMode::prior) return sde::euler_maruyama(d.model.prior_spec(), d.model.z0, grid, prior_noise);
  dspp::CountSample ctx;
  if (d.mode == DlmMode::heldout) {
    if (d.heldout.empty()) throw std::invalid_argument("heldout DLM source needs counts");
    ctx = d.heldout[r % d.heldout.size()];
  } else {
    const auto prior = sde::euler_maruyama(d.model.prior_spec(), d.model.z0, grid, prior_noise);
    ctx = dspp::sample_counts(prior, d.scheme, seed::derive(rep_seed, seed::kContext));
  }
  return sde::euler_maruyama(d.model.controlled(d.model.context_of(ctx)), d.model.z0, grid,
                             sde::sample_noise(grid, seed::derive(rep_seed, seed::kInnerMc)));
}

inline RunThroughResult run_through(const TrafficSource& src, const sde::TimeGrid& grid,
                                    const std::vector<double>& probes, const ServiceDist& service, std::size_t R,
                                    std::uint64_t seed) {
  if (R < 2) throw std::invalid_argument("run_through: need at least 2 replications");
  service.validate();
  for (double p : probes)
    if (!(p >= 0.0 && p <= grid.horizon())) throw std::invalid_argument("run_through: probe outside [0, T]");
  std::vector<std::vector<double>> busy(probes.size(), std::vector<double>(R));
  std::vector<std::vector<double>> count(probes.size(), std::vector<double>(R));
  parallel_for(R, [&](std::size_t r) {
    const std::uint64_t rs = seed::derive(seed, seed::kRunThrough, r);
    const auto path = draw_path(src, grid, rs, r);
    const auto stream = arrivals_from_path(path, rs);
    const auto occ = simulate_infinite_server(stream, service, probes, rs);
    for (std::size_t p = 0; p < probes.size(); ++p) {
      busy[p][r] = static_cast<double>(occ[p]);
      const auto n = std::upper_bound(stream.times.begin(), stream.times.end(), probes[p]) - stream.times.begin();
      count[p][r] = static_cast<double>(n);
    }
  });
  return {occupancy_stats(busy, probes), occupancy_stats(count, probes)};
}

// Results CSV mirroring the occupancy tables.
inline void write_results(const std::vector<std::pair<std::string, OccupancyStats>>& rows, const std::string& file) {
  csv::Writer w(file, "runthrough", "source,probe,mean,ci_half,variance,var_lo,var_hi,replications");
  for (const auto& [source, stats] : rows)
    for (const auto& s : stats) w.row(source, s.epoch, s.mean, s.ci_half, s.variance, s.var_lo, s.var_hi, s.replications);
}

}  // namespace dlm::queueing
