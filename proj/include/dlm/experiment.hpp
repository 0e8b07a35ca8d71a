#pragma once

// Experiment driver: configuration, the generate/train/baseline/runthrough/
// report pipeline and the scenario building blocks shared with the
// acceptance suite. See docs/config.md for the configuration grammar.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <json.hpp>

#include "dlm/baselines.hpp"
#include "dlm/checkpoint.hpp"
#include "dlm/csv.hpp"
#include "dlm/dspp.hpp"
#include "dlm/errors.hpp"
#include "dlm/inference.hpp"
#include "dlm/parallel.hpp"
#include "dlm/queueing.hpp"
#include "dlm/random.hpp"
#include "dlm/sde.hpp"

namespace dlm::experiment {

namespace fs = std::filesystem;

struct TruthConfig {
  std::string drift = "mean_reverting";  // or "power": dZ = (level - Z) dt + eta level^alpha sqrt(Z) dW
  double kappa = 0.3;
  double level = 80.0;
  double eta = 1.0;
  double alpha = 0.25;
  double z0 = 5.0;

  dspp::TruthModel model() const {
    if (drift == "power") return {sde::DriftSpec::cir_power(eta, level, alpha), z0};
    return {sde::DriftSpec::cir(kappa, level, eta), z0};
  }
  // The truth's diffusion written as c * sqrt(Z).
  double sqrt_coefficient() const { return drift == "power" ? eta * std::pow(level, alpha) : eta; }
};

struct ExperimentConfig {
  TruthConfig truth;
  double horizon = 4.0;
  std::size_t steps = 60;
  std::vector<double> epochs;  // empty: {T/2, T}

  std::size_t n = 200;
  std::size_t test_n = 200;
  std::optional<std::uint64_t> dataset_seed;
  std::string dataset_file;  // empty: <out>/dataset.csv

  inference::ModelShape shape;
  std::optional<double> model_eta;  // empty: the truth's sqrt coefficient
  std::optional<std::uint64_t> init_seed;

  inference::TrainConfig train;
  std::optional<std::uint64_t> train_seed;
  std::string checkpoint_file;  // empty: <out>/model.ckpt

  std::vector<std::size_t> baseline_d{2};

  queueing::ServiceDist service = queueing::ServiceDist::exponential(2.0);
  double mu = 2.0;
  unsigned erlang_k = 3;
  double erlang_rate = 6.0;
  std::size_t replications = 500;
  queueing::DlmMode dlm_mode = queueing::DlmMode::self_generated;
  std::optional<std::uint64_t> runthrough_seed;

  std::vector<double> eta_sweep{0.0, 0.25, 0.5, 0.75, 1.0};
  std::vector<std::size_t> d_sweep{2, 10, 20, 50};
  bool learned_diffusion = true;
  std::size_t curve_paths = 5;  // posterior paths per test sample

  std::string out_dir = "out";
  std::uint64_t master_seed = 1;
  std::size_t threads = 0;

  sde::TimeGrid grid() const { return {horizon, steps}; }
  dspp::ObservationScheme scheme() const {
    if (epochs.empty()) return dspp::ObservationScheme::halves(grid());
    return {epochs};
  }

  // Per-purpose seeds split from the master seed unless set explicitly.
  std::uint64_t seed_dataset() const { return dataset_seed.value_or(seed::derive(master_seed, seed::kDataset)); }
  std::uint64_t seed_test() const { return seed::derive(master_seed, seed::kTestSet); }
  std::uint64_t seed_init() const { return init_seed.value_or(seed::derive(master_seed, seed::kInit)); }
  std::uint64_t seed_train() const { return train_seed.value_or(seed::derive(master_seed, seed::kTrain)); }
  std::uint64_t seed_runthrough() const {
    return runthrough_seed.value_or(seed::derive(master_seed, seed::kRunThrough));
  }

  fs::path out() const { return fs::path(out_dir); }
  fs::path dataset_path() const { return dataset_file.empty() ? out() / "dataset.csv" : fs::path(dataset_file); }
  fs::path checkpoint_path() const { return checkpoint_file.empty() ? out() / "model.ckpt" : fs::path(checkpoint_file); }

  inference::ModelShape model_shape() const {
    inference::ModelShape s = shape;
    s.eta = model_eta.value_or(truth.sqrt_coefficient());
    s.z0 = truth.z0;
    return s;
  }
  inference::TrainConfig train_config() const {
    inference::TrainConfig t = train;
    t.grid = grid();
    t.seed = seed_train();
    return t;
  }
};

namespace detail {

template <class T>
T parse_number(const std::string& key, const std::string& v) {
  std::istringstream in(v);
  T x{};
  in >> x;
  if (in.fail() || !(in >> std::ws).eof()) throw ConfigError("config: '" + key + "' = '" + v + "' is not a number");
  if constexpr (std::is_unsigned_v<T>)
    if (v.find('-') != std::string::npos) throw ConfigError("config: '" + key + "' must be nonnegative");
  return x;
}

template <class T>
std::vector<T> parse_list(const std::string& key, const std::string& v) {
  std::vector<T> out;
  std::string cell;
  std::istringstream in(v);
  while (std::getline(in, cell, ',')) {
    const auto a = cell.find_first_not_of(" \t"), b = cell.find_last_not_of(" \t");
    if (a == std::string::npos) continue;
    out.push_back(parse_number<T>(key, cell.substr(a, b - a + 1)));
  }
  return out;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("config: '" + key + "' must be true or false");
}

// Reads one section, rejecting keys outside `allowed`.
class Section {
 public:
  Section(const boost::property_tree::ptree& root, const std::string& name, std::set<std::string> allowed)
      : name_(name) {
    if (auto s = root.get_child_optional(name)) {
      for (const auto& [k, v] : *s) {
        if (!allowed.count(k)) throw ConfigError("config: unknown key '" + name + "." + k + "'");
        values_[k] = v.data();
      }
    }
  }
  template <class T>
  void get(const std::string& key, T& out) const {
    auto it = values_.find(key);
    if (it == values_.end()) return;
    const std::string full = name_ + "." + key;
    if constexpr (std::is_same_v<T, std::string>) {
      out = it->second;
    } else if constexpr (std::is_same_v<T, bool>) {
      out = parse_bool(full, it->second);
    } else if constexpr (std::is_same_v<T, std::optional<std::uint64_t>>) {
      out = parse_number<std::uint64_t>(full, it->second);
    } else if constexpr (std::is_same_v<T, std::optional<double>>) {
      out = parse_number<double>(full, it->second);
    } else if constexpr (std::is_same_v<T, std::vector<double>>) {
      out = parse_list<double>(full, it->second);
    } else if constexpr (std::is_same_v<T, std::vector<std::size_t>>) {
      out = parse_list<std::size_t>(full, it->second);
    } else {
      out = parse_number<T>(full, it->second);
    }
  }
  bool has(const std::string& key) const { return values_.count(key) > 0; }
  std::string raw(const std::string& key) const { return values_.at(key); }

 private:
  std::string name_;
  std::map<std::string, std::string> values_;
};

}  // namespace detail

inline void validate(const ExperimentConfig& c) {
  try {
    if (c.truth.drift != "mean_reverting" && c.truth.drift != "power")
      throw ConfigError("truth.drift must be mean_reverting or power");
    c.truth.model().spec.validate();
    if (!(c.truth.z0 >= 0.0)) throw ConfigError("truth.z0 must be >= 0");
    const auto grid = c.grid();
    c.scheme().validate(grid);
    if (c.n < 1 || c.test_n < 2) throw ConfigError("dataset.n must be >= 1 and dataset.test_n >= 2");
    c.train.validate(c.n);
    if (c.baseline_d.empty()) throw ConfigError("baseline.d must list at least one piece count");
    for (auto d : c.baseline_d)
      if (d < 1) throw ConfigError("baseline.d entries must be >= 1");
    for (auto d : c.d_sweep)
      if (d < 1) throw ConfigError("report.d_sweep entries must be >= 1");
    for (double e : c.eta_sweep)
      if (!(e >= 0.0)) throw ConfigError("report.eta_sweep entries must be >= 0");
    c.service.validate();
    if (!(c.mu > 0.0) || c.erlang_k < 1 || !(c.erlang_rate > 0.0))
      throw ConfigError("runthrough service parameters must be positive");
    if (c.replications < 2) throw ConfigError("runthrough.replications must be >= 2");
    if (c.curve_paths < 1) throw ConfigError("report.curve_paths must be >= 1");
    if (c.model_eta && !(*c.model_eta >= 0.0)) throw ConfigError("model.eta must be >= 0");
    if (c.out_dir.empty()) throw ConfigError("output.dir must not be empty");
    (void)inference::make_model(c.model_shape(), grid.horizon(), 0);
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
}

inline ExperimentConfig parse_config(const boost::property_tree::ptree& root) {
  using detail::Section;
  static const std::set<std::string> sections{"truth", "grid",   "scheme", "dataset", "model", "train",
                                              "baseline", "runthrough", "report", "output", "run"};
  for (const auto& [name, child] : root) {
    if (!sections.count(name)) throw ConfigError("config: unknown section or top-level key '" + name + "'");
    (void)child;
  }
  ExperimentConfig c;

  Section truth(root, "truth", {"drift", "kappa", "level", "eta", "alpha", "z0"});
  truth.get("drift", c.truth.drift);
  truth.get("kappa", c.truth.kappa);
  truth.get("level", c.truth.level);
  truth.get("eta", c.truth.eta);
  truth.get("alpha", c.truth.alpha);
  truth.get("z0", c.truth.z0);

  Section grid(root, "grid", {"horizon", "steps", "dt"});
  grid.get("horizon", c.horizon);
  grid.get("steps", c.steps);
  if (grid.has("dt")) {
    if (grid.has("steps")) throw ConfigError("config: give grid.steps or grid.dt, not both");
    double dt = 0.0;
    grid.get("dt", dt);
    if (!(dt > 0.0)) throw ConfigError("config: grid.dt must be > 0");
    const double s = c.horizon / dt;
    if (std::fabs(s - std::round(s)) > 1e-9 * s) throw ConfigError("config: grid.dt must divide grid.horizon");
    c.steps = static_cast<std::size_t>(std::round(s));
  }

  Section scheme(root, "scheme", {"epochs"});
  scheme.get("epochs", c.epochs);

  Section ds(root, "dataset", {"n", "test_n", "seed", "file"});
  ds.get("n", c.n);
  ds.get("test_n", c.test_n);
  ds.get("seed", c.dataset_seed);
  ds.get("file", c.dataset_file);

  Section model(root, "model", {"diffusion", "eta", "context", "hidden_layers", "hidden_width", "z_scale", "k_scale",
                                "drift_scale", "control_scale", "sigma_scale", "prior_bias", "init_gain", "init_seed"});
  if (model.has("diffusion")) {
    const auto v = model.raw("diffusion");
    if (v == "fixed") c.shape.diffusion = inference::DiffusionMode::fixed;
    else if (v == "learned") c.shape.diffusion = inference::DiffusionMode::learned;
    else throw ConfigError("config: model.diffusion must be fixed or learned");
  }
  model.get("eta", c.model_eta);
  if (model.has("context")) {
    const auto v = model.raw("context");
    if (v == "terminal") c.shape.context_mode = inference::ContextMode::terminal;
    else if (v == "pair") c.shape.context_mode = inference::ContextMode::pair;
    else throw ConfigError("config: model.context must be terminal or pair");
  }
  std::size_t layers = c.shape.prior_net.hidden_layers, width = c.shape.prior_net.hidden_width;
  model.get("hidden_layers", layers);
  model.get("hidden_width", width);
  for (auto* s : {&c.shape.prior_net, &c.shape.control_net, &c.shape.sigma_net}) {
    s->hidden_layers = layers;
    s->hidden_width = width;
  }
  model.get("z_scale", c.shape.z_scale);
  model.get("k_scale", c.shape.k_scale);
  model.get("drift_scale", c.shape.drift_scale);
  model.get("control_scale", c.shape.control_scale);
  model.get("sigma_scale", c.shape.sigma_scale);
  model.get("prior_bias", c.shape.prior_bias);
  model.get("init_gain", c.shape.init_gain);
  model.get("init_seed", c.init_seed);

  Section train(root, "train", {"m", "minibatch", "epochs", "lr_theta", "lr_beta", "lr_sigma", "beta1", "beta2",
                                "epsilon", "seed", "fixed_saa", "checkpoint"});
  train.get("m", c.train.m);
  train.get("minibatch", c.train.minibatch);
  train.get("epochs", c.train.epochs);
  train.get("lr_theta", c.train.lr_theta);
  train.get("lr_beta", c.train.lr_beta);
  train.get("lr_sigma", c.train.lr_sigma);
  train.get("beta1", c.train.adam.beta1);
  train.get("beta2", c.train.adam.beta2);
  train.get("epsilon", c.train.adam.epsilon);
  train.get("seed", c.train_seed);
  train.get("fixed_saa", c.train.fixed_saa);
  train.get("checkpoint", c.checkpoint_file);

  Section base(root, "baseline", {"d"});
  base.get("d", c.baseline_d);

  Section rt(root, "runthrough", {"service", "mu", "erlang_k", "erlang_rate", "replications", "seed", "dlm_mode"});
  std::string service = "exponential";
  rt.get("service", service);
  rt.get("mu", c.mu);
  rt.get("erlang_k", c.erlang_k);
  rt.get("erlang_rate", c.erlang_rate);
  if (service == "exponential") c.service = queueing::ServiceDist::exponential(c.mu);
  else if (service == "erlang") c.service = queueing::ServiceDist::erlang(c.erlang_k, c.erlang_rate);
  else throw ConfigError("config: runthrough.service must be exponential or erlang");
  rt.get("replications", c.replications);
  rt.get("seed", c.runthrough_seed);
  if (rt.has("dlm_mode")) {
    const auto v = rt.raw("dlm_mode");
    if (v == "self") c.dlm_mode = queueing::DlmMode::self_generated;
    else if (v == "prior") c.dlm_mode = queueing::DlmMode::prior;
    else if (v == "heldout") c.dlm_mode = queueing::DlmMode::heldout;
    else throw ConfigError("config: runthrough.dlm_mode must be self, prior or heldout");
  }

  Section rep(root, "report", {"eta_sweep", "d_sweep", "learned_diffusion", "curve_paths"});
  rep.get("eta_sweep", c.eta_sweep);
  rep.get("d_sweep", c.d_sweep);
  rep.get("learned_diffusion", c.learned_diffusion);
  rep.get("curve_paths", c.curve_paths);

  Section out(root, "output", {"dir"});
  out.get("dir", c.out_dir);

  Section run(root, "run", {"seed", "threads"});
  run.get("seed", c.master_seed);
  run.get("threads", c.threads);
  return c;
}

inline ExperimentConfig parse_config_text(const std::string& text) {
  boost::property_tree::ptree root;
  std::istringstream in(text);
  try {
    boost::property_tree::ini_parser::read_ini(in, root);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  return parse_config(root);
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config_text(buf.str());
}

// ---------------------------------------------------------------------------
// Scenario building blocks

struct Scenario {
  dspp::TruthModel truth;
  sde::TimeGrid grid{4.0, 60};
  dspp::ObservationScheme scheme;
  std::size_t n = 200;
  std::size_t test_n = 200;
  inference::ModelShape shape;
  inference::TrainConfig train;
  std::uint64_t data_seed = 1, test_seed = 2, init_seed = 3, run_seed = 4;
  std::size_t pl_pieces = 2;
  std::size_t replications = 500;
  queueing::DlmMode dlm_mode = queueing::DlmMode::self_generated;
};

inline Scenario scenario_from(const ExperimentConfig& c) {
  Scenario s;
  s.truth = c.truth.model();
  s.grid = c.grid();
  s.scheme = c.scheme();
  s.n = c.n;
  s.test_n = c.test_n;
  s.shape = c.model_shape();
  s.train = c.train_config();
  s.data_seed = c.seed_dataset();
  s.test_seed = c.seed_test();
  s.init_seed = c.seed_init();
  s.run_seed = c.seed_runthrough();
  s.pl_pieces = c.baseline_d.front();
  s.replications = c.replications;
  s.dlm_mode = c.dlm_mode;
  return s;
}

// A sweep member: same settings, every seed re-split by (stream, index).
inline Scenario sweep_member(Scenario s, std::uint64_t stream, std::uint64_t index) {
  s.data_seed = seed::derive(s.data_seed, stream, index);
  s.test_seed = seed::derive(s.test_seed, stream, index);
  s.init_seed = seed::derive(s.init_seed, stream, index);
  s.run_seed = seed::derive(s.run_seed, stream, index);
  s.train.seed = seed::derive(s.train.seed, stream, index);
  return s;
}

inline dspp::Dataset training_data(const Scenario& s) {
  return dspp::generate_dataset(s.truth, s.grid, s.scheme, s.n, s.data_seed);
}
inline dspp::Dataset test_data(const Scenario& s) {
  return dspp::generate_dataset(s.truth, s.grid, s.scheme, s.test_n, s.test_seed, true);
}

struct Fitted {
  dspp::Dataset data;
  inference::TrainResult dlm;
  baselines::PiecewiseIntensity pl;
};

inline Fitted fit(const Scenario& s) {
  Fitted f;
  f.data = training_data(s);
  f.dlm = inference::train(f.data, s.train, s.shape, s.init_seed);
  f.pl = baselines::pl_mle(f.data, s.pl_pieces, s.grid.horizon());
  return f;
}

// Pointwise mean of equally gridded paths.
inline std::vector<double> mean_curve(const std::vector<sde::IntensityPath>& paths) {
  if (paths.empty()) throw std::invalid_argument("mean_curve: no paths");
  std::vector<double> m(paths.front().values.size(), 0.0);
  for (const auto& p : paths)
    for (std::size_t k = 0; k < m.size(); ++k) m[k] += p.values[k];
  for (double& v : m) v /= static_cast<double>(paths.size());
  return m;
}

// Left-Riemann running integral of a curve on the grid: out[k] = int_0^{t_k}.
inline std::vector<double> integrated_curve(const std::vector<double>& curve, const sde::TimeGrid& grid) {
  std::vector<double> out(curve.size(), 0.0);
  for (std::size_t k = 1; k < curve.size(); ++k) out[k] = out[k - 1] + curve[k - 1] * grid.step();
  return out;
}

// Average of m posterior paths per count sample.
inline std::vector<double> posterior_mean_curve(const inference::VariationalModel& model,
                                                const std::vector<dspp::CountSample>& counts,
                                                const sde::TimeGrid& grid, std::size_t m, std::uint64_t seed) {
  std::vector<std::vector<double>> per(counts.size());
  parallel_for(counts.size(), [&](std::size_t i) {
    per[i] = mean_curve(inference::posterior_paths(model, counts[i], grid, m, seed::derive(seed, seed::kInnerMc, i)));
  });
  std::vector<double> out(grid.size(), 0.0);
  for (const auto& c : per)
    for (std::size_t k = 0; k < out.size(); ++k) out[k] += c[k];
  for (double& v : out) v /= static_cast<double>(counts.size());
  return out;
}

inline std::vector<double> pl_curve(const baselines::PiecewiseIntensity& pl, const sde::TimeGrid& grid) {
  return baselines::to_path(pl, grid).values;
}

using SourceRows = std::vector<std::pair<std::string, queueing::RunThroughResult>>;

// Run-through of the truth ("test"), the DLM and the PL fit on a common
// service distribution; each source gets its own seed stream.
inline SourceRows compare_sources(const Scenario& s, const Fitted& f, const dspp::Dataset* heldout,
                                  const queueing::ServiceDist& service, const std::vector<double>& probes) {
  queueing::DlmSource dlm{f.dlm.state.model, s.scheme, s.dlm_mode, {}};
  if (s.dlm_mode == queueing::DlmMode::heldout) {
    if (!heldout) throw std::invalid_argument("heldout DLM mode needs a test set");
    dlm.heldout = heldout->samples;
  }
  SourceRows rows;
  rows.emplace_back("test", queueing::run_through(queueing::TrueSource{s.truth}, s.grid, probes, service,
                                                  s.replications, seed::derive(s.run_seed, seed::kRunThrough, 0)));
  rows.emplace_back("dlm", queueing::run_through(dlm, s.grid, probes, service, s.replications,
                                                 seed::derive(s.run_seed, seed::kRunThrough, 1)));
  rows.emplace_back("pl", queueing::run_through(queueing::PlSource{f.pl}, s.grid, probes, service, s.replications,
                                                seed::derive(s.run_seed, seed::kRunThrough, 2)));
  return rows;
}

inline std::vector<std::pair<std::string, queueing::OccupancyStats>> occupancy_rows(const SourceRows& rows) {
  std::vector<std::pair<std::string, queueing::OccupancyStats>> out;
  for (const auto& [name, r] : rows) out.emplace_back(name, r.occupancy);
  return out;
}
inline std::vector<std::pair<std::string, queueing::OccupancyStats>> count_rows(const SourceRows& rows) {
  std::vector<std::pair<std::string, queueing::OccupancyStats>> out;
  for (const auto& [name, r] : rows) out.emplace_back(name, r.counts);
  return out;
}

// Sweep scenarios.
inline Scenario eta_member(const Scenario& base, const TruthConfig& t, double eta, std::size_t index) {
  Scenario s = sweep_member(base, 101, index);
  TruthConfig tc = t;
  tc.eta = eta;
  s.truth = tc.model();
  s.shape.eta = tc.sqrt_coefficient();
  s.shape.diffusion = inference::DiffusionMode::fixed;
  return s;
}

// NHPP truth (zero noise) with DLM diffusion d^{-1/2} sqrt(Z) and d PL pieces.
inline Scenario nhpp_member(const Scenario& base, const TruthConfig& t, std::size_t d, std::size_t index) {
  Scenario s = sweep_member(base, 102, index);
  s.truth = {sde::DriftSpec::ode(t.drift == "power" ? 1.0 : t.kappa, t.level), t.z0};
  s.shape.eta = 1.0 / std::sqrt(static_cast<double>(d));
  s.shape.diffusion = inference::DiffusionMode::fixed;
  s.pl_pieces = d;
  return s;
}

// Truth dZ = (level - Z) dt + eta level^alpha sqrt(Z) dW; DLM learns the diffusion.
inline Scenario learned_member(const Scenario& base, const TruthConfig& t) {
  Scenario s = sweep_member(base, 103, 0);
  s.truth = {sde::DriftSpec::cir_power(t.eta, t.level, t.alpha), t.z0};
  s.shape.diffusion = inference::DiffusionMode::learned;
  return s;
}

// ---------------------------------------------------------------------------
// Commands

inline void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw IoError("cannot create directory '" + dir.string() + "'");
}

struct GenerateResult {
  fs::path file;
  double dispersion = 0.0;  // variance / mean of X(T)
};

inline double dispersion_index(const dspp::Dataset& ds) {
  if (ds.samples.size() < 2) return 0.0;
  double mean = 0.0, ss = 0.0;
  for (const auto& s : ds.samples) mean += static_cast<double>(s.terminal());
  mean /= static_cast<double>(ds.samples.size());
  for (const auto& s : ds.samples) ss += (static_cast<double>(s.terminal()) - mean) * (static_cast<double>(s.terminal()) - mean);
  const double var = ss / static_cast<double>(ds.samples.size() - 1);
  return mean > 0.0 ? var / mean : 0.0;
}

inline GenerateResult cmd_generate(const ExperimentConfig& c, bool keep_paths = false, std::ostream& log = std::cout) {
  validate(c);
  ensure_dir(c.out());
  const auto grid = c.grid();
  auto ds = dspp::generate_dataset(c.truth.model(), grid, c.scheme(), c.n, c.seed_dataset(), keep_paths);
  const auto file = c.dataset_path();
  ensure_dir(file.parent_path().empty() ? fs::path(".") : file.parent_path());
  dspp::write_dataset(ds, file.string());
  if (keep_paths) {
    ensure_dir(c.out() / "paths");
    for (std::size_t i = 0; i < ds.paths.size(); ++i)
      sde::write_path_csv(ds.paths[i], (c.out() / "paths" / ("path_" + std::to_string(i) + ".csv")).string());
  }
  GenerateResult r{file, dispersion_index(ds)};
  log << "generate: " << ds.samples.size() << " samples -> " << file.string() << "\n"
      << "generate: dispersion index of X(T) = " << csv::format_real(r.dispersion) << "\n";
  return r;
}

inline dspp::Dataset load_dataset(const ExperimentConfig& c) {
  const auto file = c.dataset_path();
  if (!fs::exists(file)) throw IoError("dataset '" + file.string() + "' not found (run generate first)");
  auto ds = dspp::read_dataset(file.string());
  c.scheme().validate(c.grid());
  if (ds.scheme.epochs.size() != c.scheme().epochs.size())
    throw FormatError("dataset epochs do not match the configured scheme");
  for (std::size_t i = 0; i < ds.scheme.epochs.size(); ++i)
    if (std::fabs(ds.scheme.epochs[i] - c.scheme().epochs[i]) > 1e-9 * c.horizon)
      throw FormatError("dataset epochs do not match the configured scheme");
  ds.scheme = c.scheme();
  return ds;
}

struct TrainOutcome {
  inference::TrainState state;
  inference::TrainReport report;
};

// Trains from scratch, or continues from `resume` (update numbering and Adam
// state carry over). With init_only the freshly initialized model is saved
// untrained.
inline TrainOutcome cmd_train(const ExperimentConfig& c, const std::string& resume = {}, bool init_only = false,
                              std::ostream& log = std::cout) {
  validate(c);
  ensure_dir(c.out());
  const auto data = load_dataset(c);
  const auto cfg = c.train_config();
  inference::TrainState state;
  if (!resume.empty()) {
    auto loaded = inference::from_checkpoint(load_checkpoint(resume));
    if (!(loaded.grid == cfg.grid)) throw ConfigError("resume: checkpoint grid differs from the configured grid");
    state = std::move(loaded.state);
    log << "train: resuming from " << resume << " at update " << state.updates << "\n";
  } else {
    state = {inference::make_model(c.model_shape(), cfg.grid.horizon(), c.seed_init()), {}, 0};
  }
  if (init_only) {
    save_checkpoint(inference::to_checkpoint(state, cfg.grid, false), c.checkpoint_path().string());
    log << "train: untrained model -> " << c.checkpoint_path().string() << "\n";
    return {std::move(state), {}};
  }
  auto report = inference::train_from(state, data, cfg);
  save_checkpoint(inference::to_checkpoint(state, cfg.grid, true), c.checkpoint_path().string());
  inference::write_trace(report, (c.out() / "trace.csv").string());
  log << "train: " << report.elbo.size() << " updates";
  if (!report.elbo.empty()) log << " (" << report.first_update << " to " << report.first_update + report.elbo.size() - 1 << ")";
  log << ", final ELBO "
      << (report.elbo.empty() ? std::string("n/a") : csv::format_real(report.elbo.back())) << ", "
      << csv::format_real(report.total_ms / 1000.0) << " s -> " << c.checkpoint_path().string() << "\n";
  return {std::move(state), std::move(report)};
}

inline fs::path pl_path(const ExperimentConfig& c, std::size_t d) { return c.out() / ("pl_d" + std::to_string(d) + ".csv"); }

inline void cmd_baseline(const ExperimentConfig& c, std::ostream& log = std::cout) {
  validate(c);
  ensure_dir(c.out());
  const auto data = load_dataset(c);
  for (auto d : c.baseline_d) {
    const auto fit = baselines::pl_mle(data, d, c.horizon);
    baselines::write_fit(fit, pl_path(c, d).string());
    log << "baseline: PL d=" << d << " -> " << pl_path(c, d).string() << "\n";
  }
  baselines::write_fit(baselines::pc_mle(data), (c.out() / "pc.csv").string());
  log << "baseline: PC -> " << (c.out() / "pc.csv").string() << "\n";
}

inline inference::LoadedModel load_model(const ExperimentConfig& c) {
  const auto file = c.checkpoint_path();
  if (!fs::exists(file)) throw IoError("checkpoint '" + file.string() + "' not found (run train first)");
  auto m = inference::from_checkpoint(load_checkpoint(file.string()));
  if (!(m.grid == c.grid())) throw ConfigError("checkpoint grid differs from the configured grid");
  return m;
}

inline baselines::PiecewiseIntensity load_or_fit_pl(const ExperimentConfig& c, const dspp::Dataset& data) {
  const auto file = pl_path(c, c.baseline_d.front());
  if (fs::exists(file)) return baselines::read_fit(file.string());
  return baselines::pl_mle(data, c.baseline_d.front(), c.horizon);
}

inline SourceRows cmd_runthrough(const ExperimentConfig& c, std::ostream& log = std::cout) {
  validate(c);
  ensure_dir(c.out());
  const auto s = scenario_from(c);
  Fitted f;
  f.data = load_dataset(c);
  f.dlm.state = load_model(c).state;
  f.pl = load_or_fit_pl(c, f.data);
  const auto test = c.dlm_mode == queueing::DlmMode::heldout ? std::optional(test_data(s)) : std::nullopt;
  const auto rows = compare_sources(s, f, test ? &*test : nullptr, c.service, c.scheme().epochs);
  queueing::write_results(occupancy_rows(rows), (c.out() / "runthrough.csv").string());
  log << "runthrough: " << c.service.name() << " service, R=" << c.replications << " -> "
      << (c.out() / "runthrough.csv").string() << "\n";
  return rows;
}

namespace detail {
inline void write_sweep_row(csv::Writer& w, const std::string& head, const std::string& source,
                            const queueing::ProbeStats& p) {
  w.row(head, source, p.mean, p.ci_half, p.variance, p.var_lo, p.var_hi, p.replications);
}
}  // namespace detail

inline void cmd_report(const ExperimentConfig& c, std::ostream& log = std::cout) {
  validate(c);
  const auto dir = c.out() / "report";
  ensure_dir(dir);
  const auto s = scenario_from(c);
  const auto grid = c.grid();
  const auto loaded = load_model(c);
  Fitted f;
  f.data = load_dataset(c);
  f.dlm.state = loaded.state;
  f.pl = load_or_fit_pl(c, f.data);
  const auto test = test_data(s);
  const auto epochs = c.scheme().epochs;

  // (a), (b): intensity and integrated-intensity curves.
  const auto truth_mean = mean_curve(test.paths);
  const auto dlm_mean = posterior_mean_curve(f.dlm.state.model, test.samples, grid, c.curve_paths,
                                             seed::derive(c.seed_runthrough(), seed::kInnerMc));
  const auto pl_mean = pl_curve(f.pl, grid);
  {
    csv::Writer w((dir / "intensity.csv").string(), "intensity_curve", "t,true_mean,dlm_posterior_mean,pl");
    for (std::size_t k = 0; k < grid.size(); ++k) w.row(grid.time(k), truth_mean[k], dlm_mean[k], pl_mean[k]);
  }
  {
    const auto a = integrated_curve(truth_mean, grid), b = integrated_curve(dlm_mean, grid),
               p = integrated_curve(pl_mean, grid);
    csv::Writer w((dir / "integrated.csv").string(), "integrated_curve", "t,true_mean,dlm_posterior_mean,pl");
    for (std::size_t k = 0; k < grid.size(); ++k) w.row(grid.time(k), a[k], b[k], p[k]);
  }
  log << "report: intensity curves -> " << (dir / "intensity.csv").string() << "\n";

  // (c): run-through tables for both service distributions.
  const auto exp_rows = compare_sources(s, f, &test, queueing::ServiceDist::exponential(c.mu), epochs);
  queueing::write_results(occupancy_rows(exp_rows), (dir / "table1.csv").string());
  const auto erl_rows = compare_sources(s, f, &test, queueing::ServiceDist::erlang(c.erlang_k, c.erlang_rate), epochs);
  queueing::write_results(occupancy_rows(erl_rows), (dir / "table2.csv").string());
  log << "report: run-through tables -> table1.csv, table2.csv\n";

  const std::vector<double> at_T{c.horizon};
  // (d): eta sweep; occupancy at T under exponential service.
  if (!c.eta_sweep.empty()) {
    csv::Writer w((dir / "eta_sweep.csv").string(), "eta_sweep",
                  "eta,estimator,mean,ci_half,variance,var_lo,var_hi,replications");
    std::vector<std::pair<double, SourceRows>> all;
    for (std::size_t j = 0; j < c.eta_sweep.size(); ++j) {
      const auto sc = eta_member(s, c.truth, c.eta_sweep[j], j);
      const auto fj = fit(sc);
      all.emplace_back(c.eta_sweep[j], compare_sources(sc, fj, nullptr, queueing::ServiceDist::exponential(c.mu), at_T));
      log << "report: eta=" << csv::format_real(c.eta_sweep[j]) << " done\n";
    }
    for (const char* est : {"test", "dlm", "pl"})
      for (const auto& [eta, rows] : all)
        for (const auto& [name, r] : rows)
          if (name == est) detail::write_sweep_row(w, csv::format_real(eta), name, r.occupancy.front());
  }
  // (e): NHPP d sweep; traffic count X(T).
  if (!c.d_sweep.empty()) {
    csv::Writer w((dir / "nhpp.csv").string(), "nhpp_sweep", "d,source,mean,ci_half,variance,var_lo,var_hi,replications");
    for (std::size_t j = 0; j < c.d_sweep.size(); ++j) {
      const auto sc = nhpp_member(s, c.truth, c.d_sweep[j], j);
      const auto fj = fit(sc);
      for (const auto& [name, r] : compare_sources(sc, fj, nullptr, queueing::ServiceDist::exponential(c.mu), at_T))
        detail::write_sweep_row(w, std::to_string(c.d_sweep[j]), name, r.counts.front());
      log << "report: d=" << c.d_sweep[j] << " done\n";
    }
  }
  // (f): learned diffusion; counts at the scheme epochs.
  if (c.learned_diffusion) {
    const auto sc = learned_member(s, c.truth);
    const auto fj = fit(sc);
    queueing::write_results(count_rows(compare_sources(sc, fj, nullptr, queueing::ServiceDist::exponential(c.mu), epochs)),
                            (dir / "learned_diffusion.csv").string());
    log << "report: learned diffusion -> learned_diffusion.csv\n";
  }

  nlohmann::json meta{{"trained", loaded.trained},
                      {"updates", loaded.state.updates},
                      {"master_seed", c.master_seed},
                      {"test_n", c.test_n},
                      {"replications", c.replications}};
  std::ofstream m(dir / "meta.json", std::ios::binary);
  if (!m) throw IoError("cannot write '" + (dir / "meta.json").string() + "'");
  m << meta.dump(2) << '\n';
}

}  // namespace dlm::experiment
