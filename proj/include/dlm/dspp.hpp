#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "dlm/csv.hpp"
#include "dlm/errors.hpp"
#include "dlm/parallel.hpp"
#include "dlm/random.hpp"
#include "dlm/sde.hpp"

namespace dlm::dspp {

using sde::IntensityPath;
using sde::TimeGrid;

struct ObservationScheme {
  std::vector<double> epochs;  // strictly increasing, in (0, T], on the grid

  static ObservationScheme halves(const TimeGrid& grid) { return {{grid.horizon() / 2.0, grid.horizon()}}; }

  void validate(const TimeGrid& grid) const { (void)indices(grid); }

  // Grid indices of the epochs, with validation.
  std::vector<std::size_t> indices(const TimeGrid& grid) const {
    if (epochs.empty()) throw std::invalid_argument("observation scheme has no epochs");
    std::vector<std::size_t> idx;
    idx.reserve(epochs.size());
    for (double e : epochs) {
      if (!(e > 0.0) || e > grid.horizon() * (1.0 + 1e-12))
        throw std::invalid_argument("observation epoch " + csv::format_real(e) + " outside (0, T]");
      const std::size_t i = grid.index_of(e);
      if (!idx.empty() && i <= idx.back()) throw std::invalid_argument("observation epochs must increase");
      idx.push_back(i);
    }
    return idx;
  }
};

struct CountSample {
  std::vector<std::int64_t> cumulative;  // X(epoch_i)

  std::int64_t increment(std::size_t i) const { return cumulative[i] - (i == 0 ? 0 : cumulative[i - 1]); }
  std::int64_t terminal() const { return cumulative.back(); }
  friend bool operator==(const CountSample&, const CountSample&) = default;
};

inline void check_conforms(const CountSample& c, const ObservationScheme& s) {
  if (c.cumulative.size() != s.epochs.size()) throw DimensionError("count sample does not match the scheme");
  for (std::size_t i = 0; i < c.cumulative.size(); ++i)
    if (c.increment(i) < 0) throw std::invalid_argument("cumulative counts must be nonnegative and nondecreasing");
}

// A truth model: drift/diffusion plus the initial intensity.
struct TruthModel {
  sde::DriftSpec spec;
  double z0 = 5.0;
};

struct Dataset {
  ObservationScheme scheme;
  std::vector<CountSample> samples;
  nlohmann::json provenance = nlohmann::json::object();
  std::vector<IntensityPath> paths;  // only with keep_paths; never read by estimators
};

// Integrated intensity over each observation interval [e_{i-1}, e_i), e_0 = 0.
inline std::vector<double> interval_intensities(const IntensityPath& path, const std::vector<std::size_t>& idx) {
  std::vector<double> out(idx.size());
  std::size_t prev = 0;
  for (std::size_t i = 0; i < idx.size(); ++i) {
    out[i] = sde::integrated_intensity_idx(path, prev, idx[i]);
    prev = idx[i];
  }
  return out;
}

inline CountSample sample_counts(const IntensityPath& path, const ObservationScheme& scheme, std::uint64_t seed) {
  const auto idx = scheme.indices(path.grid);
  const auto lam = interval_intensities(path, idx);
  Rng rng = make_rng(seed::derive(seed, seed::kCounts));
  CountSample c;
  c.cumulative.resize(idx.size());
  std::int64_t total = 0;
  for (std::size_t i = 0; i < idx.size(); ++i) {
    total += poisson(rng, lam[i]);
    c.cumulative[i] = total;
  }
  return c;
}

// log P(counts | path): sum over intervals of -L + dX log L - log dX!,
// with 0 log 0 = 0 and -infinity when L = 0 < dX.
inline double log_likelihood_from_intervals(const CountSample& counts, const std::vector<double>& lam) {
  double ll = 0.0;
  for (std::size_t i = 0; i < lam.size(); ++i) {
    const auto dx = static_cast<double>(counts.increment(i));
    if (dx > 0.0) {
      if (!(lam[i] > 0.0)) return -std::numeric_limits<double>::infinity();
      ll += dx * std::log(lam[i]) - std::lgamma(dx + 1.0);
    }
    ll -= lam[i];
  }
  return ll;
}

inline double log_likelihood(const CountSample& counts, const IntensityPath& path, const ObservationScheme& scheme) {
  check_conforms(counts, scheme);
  for (double z : path.values)
    if (!(z >= 0.0)) throw std::invalid_argument("log_likelihood: intensity path must be nonnegative");
  return log_likelihood_from_intervals(counts, interval_intensities(path, scheme.indices(path.grid)));
}

// Per-sample seeds: noise from derive(master, kPathNoise, i), counts from
// derive(master, kCounts, i).
inline std::uint64_t sample_noise_seed(std::uint64_t master, std::size_t i) {
  return seed::derive(master, seed::kPathNoise, i);
}
inline std::uint64_t sample_count_seed(std::uint64_t master, std::size_t i) {
  return seed::derive(master, seed::kCounts, i);
}

inline nlohmann::json describe(const TruthModel& truth) {
  nlohmann::json j;
  j["z0"] = truth.z0;
  if (const auto* c = std::get_if<sde::CirDrift>(&truth.spec.drift)) {
    j["drift"] = {{"kind", "mean_reverting"}, {"kappa", c->kappa}, {"level", c->level}};
  } else {
    j["drift"] = {{"kind", "neural"}};
  }
  if (const auto* s = std::get_if<sde::SqrtDiffusion>(&truth.spec.diffusion)) {
    j["diffusion"] = {{"kind", "sqrt"}, {"eta", s->eta}};
  } else if (const auto* p = std::get_if<sde::PowerSqrtDiffusion>(&truth.spec.diffusion)) {
    j["diffusion"] = {{"kind", "cir_power"}, {"eta", p->eta}, {"level", p->level}, {"alpha", p->alpha}};
  } else {
    j["diffusion"] = {{"kind", "neural"}};
  }
  return j;
}

inline Dataset generate_dataset(const TruthModel& truth, const TimeGrid& grid, const ObservationScheme& scheme,
                                std::size_t n, std::uint64_t master_seed, bool keep_paths = false) {
  if (n < 1) throw std::invalid_argument("generate_dataset: n must be >= 1");
  truth.spec.validate();
  scheme.validate(grid);
  Dataset ds;
  ds.scheme = scheme;
  ds.samples.resize(n);
  std::vector<IntensityPath> paths(keep_paths ? n : 0, IntensityPath{grid, {}});
  parallel_for(n, [&](std::size_t i) {
    sde::StepModel model(truth.spec, grid, false);
    auto path = sde::euler_maruyama(model, truth.z0, sde::sample_noise(grid, sample_noise_seed(master_seed, i)));
    ds.samples[i] = sample_counts(path, scheme, sample_count_seed(master_seed, i));
    if (keep_paths) paths[i] = std::move(path);
  });
  ds.paths = std::move(paths);
  ds.provenance = {{"generator", describe(truth)},
                   {"grid", {{"horizon", grid.horizon()}, {"steps", grid.steps()}}},
                   {"epochs", scheme.epochs},
                   {"n", n},
                   {"master_seed", master_seed},
                   {"seed_rule", "noise=derive(master,1,i) counts=derive(master,2,i)"}};
  return ds;
}

// Dataset CSV: sample_id,epoch,cumulative_count. Provenance goes to a JSON
// sidecar "<file>.meta.json".
inline void write_dataset(const Dataset& ds, const std::string& file) {
  csv::Writer w(file, "dataset", "sample_id,epoch,cumulative_count");
  for (std::size_t i = 0; i < ds.samples.size(); ++i)
    for (std::size_t e = 0; e < ds.scheme.epochs.size(); ++e)
      w.row(i, ds.scheme.epochs[e], ds.samples[i].cumulative[e]);
  std::ofstream meta(file + ".meta.json", std::ios::binary);
  if (!meta) throw IoError("cannot write '" + file + ".meta.json'");
  meta << ds.provenance.dump(2) << '\n';
}

inline Dataset read_dataset(const std::string& file) {
  const auto t = csv::read(file);
  const std::size_t cid = t.column("sample_id"), cep = t.column("epoch"), cc = t.column("cumulative_count");
  std::map<std::size_t, std::map<double, std::int64_t>> by_sample;
  try {
    for (const auto& r : t.rows) by_sample[std::stoull(r[cid])][std::stod(r[cep])] = std::stoll(r[cc]);
  } catch (const std::logic_error&) {
    throw FormatError("dataset: unparsable number in '" + file + "'");
  }
  Dataset ds;
  if (by_sample.empty()) throw FormatError("dataset: no samples in '" + file + "'");
  for (const auto& [e, _] : by_sample.begin()->second) ds.scheme.epochs.push_back(e);
  std::size_t expect = 0;
  for (const auto& [id, row] : by_sample) {
    if (id != expect++) throw FormatError("dataset: sample ids must be 0..n-1");
    CountSample c;
    if (row.size() != ds.scheme.epochs.size()) throw FormatError("dataset: samples disagree on epochs");
    std::size_t k = 0;
    for (const auto& [e, x] : row) {
      if (e != ds.scheme.epochs[k++]) throw FormatError("dataset: samples disagree on epochs");
      c.cumulative.push_back(x);
    }
    check_conforms(c, ds.scheme);
    ds.samples.push_back(std::move(c));
  }
  std::ifstream meta(file + ".meta.json");
  if (meta) {
    try {
      ds.provenance = nlohmann::json::parse(meta);
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(std::string("dataset metadata: ") + e.what());
    }
  }
  return ds;
}

}  // namespace dlm::dspp
