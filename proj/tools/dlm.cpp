// Command-line driver for the DSPP deep latent model experiments.
//
//   dlm generate|train|baseline|runthrough|report|selftest [options]
//
// Exit codes: 0 success, 2 configuration error, 3 numerical failure,
// 4 I/O or file-format error.

#include <CLI11.hpp>

#include <iostream>
#include <optional>
#include <string>

#include "dlm/experiment.hpp"
#include "dlm/selftest.hpp"

namespace {

enum Exit { kOk = 0, kConfig = 2, kNumerical = 3, kIo = 4 };

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> threads;
  std::string out;
  bool keep_paths = false;
  std::string resume;
  bool init_only = false;
};

dlm::experiment::ExperimentConfig resolve(const Options& o) {
  auto c = o.config.empty() ? dlm::experiment::ExperimentConfig{} : dlm::experiment::load_config(o.config);
  if (o.seed) c.master_seed = *o.seed;
  if (o.threads) c.threads = *o.threads;
  if (!o.out.empty()) c.out_dir = o.out;
  dlm::set_threads(c.threads);
  return c;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Deep latent model for doubly stochastic Poisson intensities"};
  app.require_subcommand(1);
  Options o;
  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config, "INI configuration file")->check(CLI::ExistingFile);
    sub->add_option("--seed", o.seed, "master seed (overrides run.seed)");
    sub->add_option("--threads", o.threads, "worker threads, 0 = hardware parallelism");
    sub->add_option("--out", o.out, "output directory (overrides output.dir)");
  };
  auto* gen = app.add_subcommand("generate", "simulate a count dataset from the truth model");
  common(gen);
  gen->add_flag("--keep-paths", o.keep_paths, "also write the latent intensity paths");
  auto* train = app.add_subcommand("train", "fit the deep latent model");
  common(train);
  train->add_option("--resume", o.resume, "continue from this checkpoint")->check(CLI::ExistingFile);
  train->add_flag("--init-only", o.init_only, "save the initialized, untrained model");
  auto* base = app.add_subcommand("baseline", "fit piecewise-linear and piecewise-constant NHPP baselines");
  common(base);
  auto* rt = app.add_subcommand("runthrough", "infinite-server run-through of truth, DLM and PL traffic");
  common(rt);
  auto* rep = app.add_subcommand("report", "curves, run-through tables and sweeps as CSV");
  common(rep);
  auto* self = app.add_subcommand("selftest", "run the built-in oracle checks");
  common(self);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }

  try {
    if (self->parsed()) {
      (void)resolve(o);
      return dlm::selftest::run() ? kOk : kNumerical;
    }
    const auto c = resolve(o);
    if (gen->parsed()) dlm::experiment::cmd_generate(c, o.keep_paths);
    else if (train->parsed()) dlm::experiment::cmd_train(c, o.resume, o.init_only);
    else if (base->parsed()) dlm::experiment::cmd_baseline(c);
    else if (rt->parsed()) dlm::experiment::cmd_runthrough(c);
    else if (rep->parsed()) dlm::experiment::cmd_report(c);
    return kOk;
  } catch (const dlm::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const dlm::FormatError& e) {
    std::cerr << "format error: " << e.what() << "\n";
    return kIo;
  } catch (const dlm::IoError& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return kIo;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const std::exception& e) {
    // Integration, divergence and convergence failures.
    std::cerr << "numerical failure: " << e.what() << "\n";
    return kNumerical;
  }
}
