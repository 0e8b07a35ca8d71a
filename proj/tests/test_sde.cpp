#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <vector>

#include "dlm/sde.hpp"

using namespace dlm;
using namespace dlm::sde;

namespace {

const double kOde4 = 80.0 - 75.0 * std::exp(-1.2);  // 57.410434106584844

ScaledNet net(std::size_t in, std::uint64_t seed, double out_scale, double bias = 0.0) {
  auto m = nn::init_params({in, 2, 5, 1}, seed);
  std::vector<double> p(m.params().begin(), m.params().end());
  p.back() = bias;
  return {m.with_params(p), std::vector<double>(in, in == 2 ? 50.0 : 100.0), out_scale};
}

DriftSpec controlled_spec(double eta) {
  return {ControlledDrift{net(2, 1, 10.0, 0.8), net(2, 2, 1.0, 0.1), {250.0}}, SqrtDiffusion{eta}};
}

}  // namespace

TEST(TimeGrid, EpochsAndIndices) {
  const TimeGrid g(4.0, 60);
  EXPECT_EQ(g.time(0), 0.0);
  EXPECT_EQ(g.time(60), 4.0);
  EXPECT_DOUBLE_EQ(g.step(), 1.0 / 15.0);
  EXPECT_EQ(g.index_of(2.0), 30u);
  EXPECT_EQ(g.index_of(4.0), 60u);
  EXPECT_THROW(g.index_of(0.1), OffGridError);
  EXPECT_THROW(g.index_of(4.5), OffGridError);
  EXPECT_THROW(TimeGrid(0.0, 10), std::invalid_argument);
  EXPECT_THROW(TimeGrid(1.0, 0), std::invalid_argument);
}

TEST(Noise, DeterministicPerSeed) {
  const TimeGrid g(4.0, 60);
  EXPECT_EQ(sample_noise(g, 42).increments, sample_noise(g, 42).increments);
  EXPECT_NE(sample_noise(g, 42).increments, sample_noise(g, 43).increments);
}

TEST(Noise, IncrementMomentsMatchBrownianScale) {
  const TimeGrid g(4.0, 60);
  const double dt = g.step();
  const std::size_t n = 100000;
  double s = 0.0, ss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double w = sample_noise(g, i).increments[i % 60];
    s += w;
    ss += w * w;
  }
  const double mean = s / n;
  const double var = ss / n - mean * mean;
  EXPECT_LE(std::fabs(mean), 3.0 * std::sqrt(dt / n));
  EXPECT_LE(std::fabs(var - dt), 0.05 * dt);
}

TEST(EulerMaruyama, ZeroNoiseMatchesOdeOnFineGrid) {
  const TimeGrid g(4.0, 600);
  const auto path = euler_maruyama(DriftSpec::ode(0.3, 80.0), 5.0, g, sample_noise(g, 1));
  EXPECT_LE(std::fabs(path.values.back() - kOde4), 0.1);
}

TEST(EulerMaruyama, ZeroNoiseMatchesDiscreteRecursionExactly) {
  // Z_{m+1} = Z_m + kappa (level - Z_m) dt  =>  Z_N = level - (level - z0)(1 - kappa dt)^N
  const TimeGrid g(4.0, 60);
  const auto path = euler_maruyama(DriftSpec::ode(0.3, 80.0), 5.0, g, sample_noise(g, 1));
  EXPECT_NEAR(path.values.back(), 80.0 - 75.0 * std::pow(1.0 - 0.3 / 15.0, 60), 1e-10);
}

TEST(EulerMaruyama, ZeroDriftZeroDiffusionIsConstant) {
  const DriftSpec spec{NeuralDrift{{nn::MLPModel::zeros({2, 1, 3, 1}), {1.0, 1.0}, 1.0}}, SqrtDiffusion{0.0}};
  const TimeGrid g(4.0, 60);
  const auto path = euler_maruyama(spec, 5.0, g, sample_noise(g, 3));
  for (double z : path.values) EXPECT_EQ(z, 5.0);
}

TEST(EulerMaruyama, MonteCarloMeanMatchesDiscreteMoments) {
  // With eta = 1 the mean obeys the same linear recursion as the ODE scheme.
  const TimeGrid g(4.0, 60);
  const auto spec = DriftSpec::cir(0.3, 80.0, 1.0);
  StepModel model(spec, g, false);
  const std::size_t n = 20000;
  double s = 0.0, ss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double z = euler_maruyama(model, 5.0, sample_noise(g, i)).values.back();
    s += z;
    ss += z * z;
  }
  const double mean = s / n, se = std::sqrt((ss / n - mean * mean) / n);
  EXPECT_NEAR(mean, 80.0 - 75.0 * std::pow(1.0 - 0.02, 60), 3.0 * se);
}

TEST(EulerMaruyama, PathsAreNonnegative) {
  const TimeGrid g(4.0, 60);
  const auto spec = DriftSpec::cir(0.3, 2.0, 5.0);
  StepModel model(spec, g, false);
  for (std::uint64_t seed = 0; seed < 2000; ++seed)
    for (double z : euler_maruyama(model, 0.1, sample_noise(g, seed)).values) ASSERT_GE(z, 0.0);
}

TEST(EulerMaruyama, ZeroDiffusionIgnoresNoise) {
  const TimeGrid g(4.0, 60);
  const auto spec = controlled_spec(0.0);
  EXPECT_EQ(euler_maruyama(spec, 5.0, g, sample_noise(g, 1)).values,
            euler_maruyama(spec, 5.0, g, sample_noise(g, 2)).values);
}

TEST(EulerMaruyama, GridRefinementErrorIsFirstOrder) {
  auto err = [](std::size_t n) {
    const TimeGrid g(4.0, n);
    return euler_maruyama(DriftSpec::ode(0.3, 80.0), 5.0, g, sample_noise(g, 1)).values.back() - kOde4;
  };
  const double e60 = err(60), e120 = err(120), e240 = err(240);
  EXPECT_NEAR(e60 / e120, 2.0, 0.05);
  EXPECT_NEAR(e120 / e240, 2.0, 0.05);
  EXPECT_LE(std::fabs(e60), 0.3 / 15.0 * 75.0);
}

TEST(EulerMaruyama, NonFiniteDriftNamesTheStep) {
  const TimeGrid g(1.0, 10);
  try {
    euler_maruyama(DriftSpec::cir(1e300, 1e300, 0.0), 0.0, g, sample_noise(g, 1));
    FAIL() << "expected IntegrationError";
  } catch (const IntegrationError& e) {
    EXPECT_EQ(e.step(), 0u);
  }
}

TEST(EulerMaruyama, RejectsMismatchedNoise) {
  EXPECT_THROW(euler_maruyama(DriftSpec::ode(0.3, 80.0), 5.0, TimeGrid(4.0, 60), sample_noise(TimeGrid(4.0, 30), 1)),
               DimensionError);
  EXPECT_THROW(euler_maruyama(DriftSpec::ode(0.3, 80.0), -1.0, TimeGrid(4.0, 60), sample_noise(TimeGrid(4.0, 60), 1)),
               std::invalid_argument);
}

TEST(Sensitivity, StartsAtZero) {
  const TimeGrid g(4.0, 60);
  const auto spec = controlled_spec(1.0);
  const auto noise = sample_noise(g, 5);
  const auto path = euler_maruyama(spec, 5.0, g, noise);
  for (std::size_t p = 0; p < spec.param_count(); p += 9)
    EXPECT_EQ(simulate_sensitivity(spec, path, noise, p).values[0], 0.0);
}

TEST(Sensitivity, ControlOutputBiasMatchesPathFiniteDifferences) {
  const TimeGrid g(4.0, 60);
  const auto spec = controlled_spec(1.0);
  const auto noise = sample_noise(g, 5);
  const auto path = euler_maruyama(spec, 5.0, g, noise);
  const std::size_t which = spec.prior_size() + spec.control_size() - 1;
  const auto sens = simulate_sensitivity(spec, path, noise, which);

  auto shifted = [&](double h) {
    auto c = std::get<ControlledDrift>(spec.drift);
    std::vector<double> p(c.control.net.params().begin(), c.control.net.params().end());
    p.back() += h;
    c.control.net = c.control.net.with_params(p);
    return euler_maruyama(DriftSpec{c, spec.diffusion}, 5.0, g, noise);
  };
  const auto up = shifted(1e-5), dn = shifted(-1e-5);
  for (std::size_t m = 1; m < g.size(); ++m) {
    if (path.values[m] <= kSqrtFloor) continue;
    const double fd = (up.values[m] - dn.values[m]) / 2e-5;
    EXPECT_NEAR(sens.values[m], fd, 1e-4 * std::fabs(fd) + 1e-9) << "m = " << m;
  }
}

TEST(Sensitivity, EveryCoordinateMatchesPathFiniteDifferences) {
  const TimeGrid g(2.0, 30);
  const auto spec = controlled_spec(1.0);
  const auto noise = sample_noise(g, 8);
  const auto path = euler_maruyama(spec, 5.0, g, noise);
  const auto c = std::get<ControlledDrift>(spec.drift);
  const std::size_t np = spec.prior_size();
  auto perturbed = [&](std::size_t q, double h) {
    auto d = c;
    if (q < np) {
      std::vector<double> p(d.prior.net.params().begin(), d.prior.net.params().end());
      p[q] += h;
      d.prior.net = d.prior.net.with_params(p);
    } else {
      std::vector<double> p(d.control.net.params().begin(), d.control.net.params().end());
      p[q - np] += h;
      d.control.net = d.control.net.with_params(p);
    }
    return euler_maruyama(DriftSpec{d, spec.diffusion}, 5.0, g, noise).values.back();
  };
  std::vector<double> D;
  StepModel model(spec, g, true);
  sensitivity_sweep(model, path, noise, [&](std::size_t m, std::span<const double> d) {
    if (m == g.steps()) D.assign(d.begin(), d.end());
  });
  for (std::size_t q = 0; q < spec.param_count(); ++q) {
    const double fd = (perturbed(q, 1e-5) - perturbed(q, -1e-5)) / 2e-5;
    EXPECT_NEAR(D[q], fd, 1e-4 * std::fabs(fd) + 1e-8) << "coordinate " << q;
  }
}

TEST(Sensitivity, FusedSweepAgreesWithSeparateSweep) {
  const TimeGrid g(4.0, 60);
  const auto spec = controlled_spec(1.0);
  const auto noise = sample_noise(g, 21);
  std::vector<std::vector<double>> a, b;
  StepModel m1(spec, g, true), m2(spec, g, true);
  const auto path = euler_maruyama_sensitivity(m1, 5.0, noise, [&](std::size_t, std::span<const double> d) {
    a.emplace_back(d.begin(), d.end());
  });
  EXPECT_EQ(path.values, euler_maruyama(spec, 5.0, g, noise).values);
  sensitivity_sweep(m2, path, noise, [&](std::size_t, std::span<const double> d) { b.emplace_back(d.begin(), d.end()); });
  EXPECT_EQ(a, b);
}

TEST(Sensitivity, DisconnectedWeightsHaveZeroInfluence) {
  // Zero the output weight of hidden unit 0: its incoming weights cannot move Z.
  auto c = std::get<ControlledDrift>(controlled_spec(1.0).drift);
  std::vector<double> p(c.prior.net.params().begin(), c.prior.net.params().end());
  const auto offs = c.prior.net.offsets();
  const auto& last = offs.back();
  const auto& hidden = offs[offs.size() - 2];
  p[last.weights + 0] = 0.0;
  c.prior.net = c.prior.net.with_params(p);
  const DriftSpec spec{c, SqrtDiffusion{1.0}};
  const TimeGrid g(4.0, 60);
  const auto noise = sample_noise(g, 2);
  const auto path = euler_maruyama(spec, 5.0, g, noise);
  for (std::size_t k = 0; k < hidden.fan_in; ++k)
    for (double v : simulate_sensitivity(spec, path, noise, hidden.weights + k).values) EXPECT_EQ(v, 0.0);
}

TEST(Integrated, ConstantPath) {
  const TimeGrid g(4.0, 16);
  const IntensityPath path{g, std::vector<double>(g.size(), 3.0)};
  EXPECT_EQ(integrated_intensity(path, 1.0, 3.5), 7.5);
  EXPECT_EQ(integrated_intensity(path, 2.0, 2.0), 0.0);
}

TEST(Integrated, LeftRiemannOfIdentity) {
  const TimeGrid g(4.0, 60);
  IntensityPath path{g, std::vector<double>(g.size())};
  for (std::size_t m = 0; m < g.size(); ++m) path.values[m] = g.time(m);
  EXPECT_NEAR(integrated_intensity(path, 0.0, 4.0), 8.0 - 4.0 / 30.0, 1e-12);  // 7.8667
}

TEST(Integrated, IntervalAdditivityIsExact) {
  const TimeGrid g(4.0, 16);
  IntensityPath path{g, std::vector<double>(g.size())};
  for (std::size_t m = 0; m < g.size(); ++m) path.values[m] = static_cast<double>((m * 7) % 11);
  for (double b : {0.0, 0.25, 1.5, 2.0, 3.75, 4.0})
    EXPECT_EQ(integrated_intensity(path, 0.0, b) + integrated_intensity(path, b, 4.0), integrated_intensity(path, 0.0, 4.0));
}

TEST(Integrated, RejectsOffGridAndReversedEpochs) {
  const TimeGrid g(4.0, 60);
  const IntensityPath path{g, std::vector<double>(g.size(), 1.0)};
  EXPECT_THROW(integrated_intensity(path, 0.0, 0.01), OffGridError);
  EXPECT_THROW(integrated_intensity(path, 2.0, 1.0), std::invalid_argument);
}

TEST(PathCsv, HeaderAndRows) {
  const TimeGrid g(1.0, 4);
  const auto file = (std::filesystem::temp_directory_path() / "dlm_path_test.csv").string();
  write_path_csv({g, {1, 2, 3, 4, 5}}, file);
  std::ifstream in(file);
  std::string schema, header;
  std::getline(in, schema);
  std::getline(in, header);
  EXPECT_EQ(schema, "# schema: intensity_path/1");
  EXPECT_EQ(header, "t,value");
  int rows = 0;
  for (std::string line; std::getline(in, line);) ++rows;
  EXPECT_EQ(rows, 5);
}
