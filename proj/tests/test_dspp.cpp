#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <vector>

#include "dlm/dspp.hpp"

using namespace dlm;
using namespace dlm::dspp;
using sde::DriftSpec;

namespace {

const TimeGrid kGrid(4.0, 60);
const ObservationScheme kHalves{{2.0, 4.0}};

IntensityPath constant(const TimeGrid& g, double c) { return {g, std::vector<double>(g.size(), c)}; }

// Mean and standard error of the index of dispersion of X(T), by batches.
std::pair<double, double> dispersion(const Dataset& ds, std::size_t batches) {
  auto index = [](auto first, auto last) {
    double s = 0.0, ss = 0.0, n = static_cast<double>(last - first);
    for (auto it = first; it != last; ++it) s += static_cast<double>(it->terminal());
    const double mean = s / n;
    for (auto it = first; it != last; ++it) ss += std::pow(static_cast<double>(it->terminal()) - mean, 2);
    return ss / (n - 1.0) / mean;
  };
  const std::size_t per = ds.samples.size() / batches;
  std::vector<double> d;
  for (std::size_t b = 0; b < batches; ++b)
    d.push_back(index(ds.samples.begin() + b * per, ds.samples.begin() + (b + 1) * per));
  double mean = 0.0, ss = 0.0;
  for (double v : d) mean += v / batches;
  for (double v : d) ss += (v - mean) * (v - mean);
  return {mean, std::sqrt(ss / (batches - 1.0) / batches)};
}

std::string temp_file(const std::string& name) { return (std::filesystem::temp_directory_path() / name).string(); }

}  // namespace

TEST(SampleCounts, ZeroPathGivesZeroCounts) {
  for (std::uint64_t s = 0; s < 50; ++s) EXPECT_EQ(sample_counts(constant(kGrid, 0.0), kHalves, s).cumulative, (std::vector<std::int64_t>{0, 0}));
}

TEST(SampleCounts, PoissonMeanOfConstantPath) {
  const auto path = constant(kGrid, 80.0);
  const std::size_t n = 100000;
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += static_cast<double>(sample_counts(path, kHalves, i).terminal());
  EXPECT_NEAR(s / n, 320.0, 3.0 * std::sqrt(320.0 / n));
}

TEST(SampleCounts, CumulativeCountsNeverDecrease) {
  const ObservationScheme fine{{0.4, 0.8, 1.2, 2.0, 3.0, 4.0}};
  const auto ds = generate_dataset({DriftSpec::cir(0.3, 80.0, 1.0), 5.0}, kGrid, fine, 2000, 17);
  for (const auto& c : ds.samples)
    for (std::size_t i = 0; i < c.cumulative.size(); ++i) ASSERT_GE(c.increment(i), 0);
}

TEST(SampleCounts, CoxCountsAreOverdispersed) {
  const auto ds = generate_dataset({DriftSpec::cir(0.3, 80.0, 1.0), 5.0}, kGrid, kHalves, 10000, 23);
  const auto [d, se] = dispersion(ds, 20);
  EXPECT_GT(d - 1.0, 3.0 * se) << "dispersion " << d << " se " << se;
}

TEST(SampleCounts, PoissonCountsHaveUnitDispersion) {
  const auto ds = generate_dataset({DriftSpec::ode(0.3, 80.0), 5.0}, kGrid, kHalves, 10000, 29);
  const auto [d, se] = dispersion(ds, 20);
  EXPECT_NEAR(d, 1.0, 3.0 * se);
}

TEST(LogLikelihood, EmptyCountsGiveMinusIntegral) {
  EXPECT_EQ(log_likelihood({{0, 0}}, constant(kGrid, 2.5), kHalves), -10.0);
}

TEST(LogLikelihood, SingleArrivalInFirstInterval) {
  const TimeGrid g(4.0, 16);
  EXPECT_NEAR(log_likelihood({{1, 1}}, constant(g, 1.0), kHalves), -3.3068528194400546, 1e-14);
}

TEST(LogLikelihood, SumsToOneOverOutcomes) {
  const TimeGrid g(2.0, 4);
  const ObservationScheme scheme{{1.0, 2.0}};
  double total = 0.0;
  for (std::int64_t k1 = 0; k1 <= 20; ++k1)
    for (std::int64_t k2 = k1; k2 <= 20; ++k2) total += std::exp(log_likelihood({{k1, k2}}, constant(g, 0.5), scheme));
  EXPECT_NEAR(total, 1.0, 1e-6);
}

TEST(LogLikelihood, ZeroIntensityConventions) {
  const auto zero = constant(kGrid, 0.0);
  EXPECT_EQ(log_likelihood({{0, 0}}, zero, kHalves), 0.0);
  EXPECT_EQ(log_likelihood({{0, 3}}, zero, kHalves), -std::numeric_limits<double>::infinity());
}

TEST(LogLikelihood, FactorizesOverIntervals) {
  const auto ds = generate_dataset({DriftSpec::cir(0.3, 80.0, 1.0), 5.0}, kGrid, ObservationScheme{{1.0, 2.0, 4.0}}, 1, 3, true);
  const auto& path = ds.paths[0];
  const auto& c = ds.samples[0];
  const double whole = log_likelihood(c, path, ds.scheme);
  double pieces = 0.0;
  const double edges[4] = {0.0, 1.0, 2.0, 4.0};
  for (std::size_t i = 0; i < 3; ++i)
    pieces += log_likelihood_from_intervals({{c.increment(i)}}, {sde::integrated_intensity(path, edges[i], edges[i + 1])});
  EXPECT_NEAR(whole, pieces, 1e-10);
}

TEST(LogLikelihood, RejectsNonconformingCounts) {
  EXPECT_THROW(log_likelihood({{1, 2, 3}}, constant(kGrid, 1.0), kHalves), DimensionError);
  EXPECT_THROW(log_likelihood({{5, 2}}, constant(kGrid, 1.0), kHalves), std::invalid_argument);
}

TEST(Dataset, SingleSampleIsOneEulerPathPlusCounts) {
  const TruthModel truth{DriftSpec::cir(0.3, 80.0, 1.0), 5.0};
  const auto ds = generate_dataset(truth, kGrid, kHalves, 1, 77);
  const auto path = sde::euler_maruyama(truth.spec, 5.0, kGrid, sde::sample_noise(kGrid, sample_noise_seed(77, 0)));
  EXPECT_EQ(ds.samples[0], sample_counts(path, kHalves, sample_count_seed(77, 0)));
}

TEST(Dataset, DeterministicPerMasterSeed) {
  const TruthModel truth{DriftSpec::cir(0.3, 80.0, 1.0), 5.0};
  const auto a = generate_dataset(truth, kGrid, kHalves, 200, 5), b = generate_dataset(truth, kGrid, kHalves, 200, 5);
  EXPECT_EQ(a.samples, b.samples);
  EXPECT_EQ(a.provenance, b.provenance);
  EXPECT_NE(a.samples, generate_dataset(truth, kGrid, kHalves, 200, 6).samples);
}

TEST(Dataset, MeanTerminalCountMatchesIntegratedMeanIntensity) {
  // E[Z(0,4)] = int_0^4 (80 - 75 e^{-0.3 t}) dt = 320 - 250 (1 - e^{-1.2})
  const double analytic = 320.0 - 250.0 * (1.0 - std::exp(-1.2));
  ASSERT_NEAR(analytic, 145.2985529780505, 1e-12);
  const auto ds = generate_dataset({DriftSpec::cir(0.3, 80.0, 1.0), 5.0}, kGrid, kHalves, 200, 2024);
  double s = 0.0, ss = 0.0;
  for (const auto& c : ds.samples) s += static_cast<double>(c.terminal());
  const double mean = s / 200.0;
  for (const auto& c : ds.samples) ss += std::pow(static_cast<double>(c.terminal()) - mean, 2);
  EXPECT_NEAR(mean, analytic, 3.0 * std::sqrt(ss / 199.0 / 200.0));
}

TEST(Dataset, MeanTerminalCountMatchesDiscreteScheme) {
  // Left Riemann sum of the Euler mean recursion E[Z_m] = 80 - 75 (1 - 0.02)^m.
  double discrete = 0.0;
  for (int m = 0; m < 60; ++m) discrete += (80.0 - 75.0 * std::pow(0.98, m)) / 15.0;
  const auto ds = generate_dataset({DriftSpec::cir(0.3, 80.0, 1.0), 5.0}, kGrid, kHalves, 10000, 31);
  double s = 0.0, ss = 0.0;
  for (const auto& c : ds.samples) s += static_cast<double>(c.terminal());
  const double mean = s / 10000.0;
  for (const auto& c : ds.samples) ss += std::pow(static_cast<double>(c.terminal()) - mean, 2);
  EXPECT_NEAR(mean, discrete, 3.0 * std::sqrt(ss / 9999.0 / 10000.0));
}

TEST(Dataset, CsvRoundTripWithSidecar) {
  const auto ds = generate_dataset({DriftSpec::cir(0.3, 80.0, 1.0), 5.0}, kGrid, kHalves, 25, 9);
  const auto file = temp_file("dlm_dataset_test.csv");
  write_dataset(ds, file);
  EXPECT_TRUE(std::filesystem::exists(file + ".meta.json"));
  std::ifstream in(file);
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "# schema: dataset/1");
  std::getline(in, line);
  EXPECT_EQ(line, "sample_id,epoch,cumulative_count");
  int rows = 0;
  while (std::getline(in, line)) ++rows;
  EXPECT_EQ(rows, 50);
  const auto back = read_dataset(file);
  EXPECT_EQ(back.samples, ds.samples);
  EXPECT_EQ(back.scheme.epochs, ds.scheme.epochs);
  EXPECT_EQ(back.provenance["master_seed"], 9);
}

TEST(Dataset, MalformedCsvIsAFormatError) {
  const auto file = temp_file("dlm_dataset_bad.csv");
  std::ofstream(file) << "sample_id,epoch,cumulative_count\n0,2,abc\n";
  EXPECT_THROW(read_dataset(file), FormatError);
  std::ofstream(file) << "sample_id,epoch,cumulative_count\n1,2,3\n";
  EXPECT_THROW(read_dataset(file), FormatError);
  EXPECT_THROW(read_dataset(temp_file("dlm_no_such_file.csv")), IoError);
}

TEST(Scheme, ValidatesEpochs) {
  EXPECT_THROW(ObservationScheme({{3.0, 2.0}}).validate(kGrid), std::invalid_argument);
  EXPECT_THROW(ObservationScheme({{0.0, 2.0}}).validate(kGrid), std::invalid_argument);
  EXPECT_THROW(ObservationScheme({{2.0, 5.0}}).validate(kGrid), std::invalid_argument);
  EXPECT_THROW(ObservationScheme({{2.01, 4.0}}).validate(kGrid), OffGridError);
  EXPECT_EQ(ObservationScheme::halves(kGrid).epochs, (std::vector<double>{2.0, 4.0}));
}
