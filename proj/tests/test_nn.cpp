#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <vector>

#include "dlm/nn.hpp"

using namespace dlm;
using nn::MLPSpec;

namespace {

std::vector<double> copy(const nn::MLPModel& m) { return {m.params().begin(), m.params().end()}; }

// |a - b| <= rel |b| + floor
bool close(double a, double b, double rel, double floor = 1e-9) {
  return std::fabs(a - b) <= rel * std::fabs(b) + floor;
}

}  // namespace

TEST(Nn, DefaultArchitectureHas2131Parameters) {
  const MLPSpec spec{2, 20, 10, 1};
  EXPECT_EQ(spec.param_count(), 2131u);
  EXPECT_EQ(nn::init_params(spec, 1).size(), 2131u);
}

TEST(Nn, OffsetMapCoversParametersContiguously) {
  const MLPSpec spec{2, 3, 5, 1};
  std::size_t at = 0;
  for (const auto& l : nn::layer_offsets(spec)) {
    EXPECT_EQ(l.weights, at);
    EXPECT_EQ(l.biases, at + l.fan_in * l.fan_out);
    at = l.biases + l.fan_out;
  }
  EXPECT_EQ(at, spec.param_count());
}

TEST(Nn, InitIsDeterministicWithZeroBiasesAndGlorotBounds) {
  const MLPSpec spec{2, 1, 10, 1};
  const auto a = nn::init_params(spec, 7), b = nn::init_params(spec, 7);
  EXPECT_EQ(copy(a), copy(b));
  EXPECT_NE(copy(a), copy(nn::init_params(spec, 8)));
  for (const auto& l : a.offsets()) {
    const double limit = std::sqrt(6.0 / static_cast<double>(l.fan_in + l.fan_out));
    for (std::size_t i = 0; i < l.fan_in * l.fan_out; ++i) EXPECT_LE(std::fabs(a.params()[l.weights + i]), limit);
    for (std::size_t i = 0; i < l.fan_out; ++i) EXPECT_EQ(a.params()[l.biases + i], 0.0);
  }
}

TEST(Nn, ZeroNetworkOutputsZero) {
  const auto m = nn::MLPModel::zeros({2, 4, 6, 1});
  for (double x : {-3.0, 0.0, 11.0}) {
    const double in[2] = {x, -x};
    EXPECT_EQ(nn::forward(m, in), 0.0);
  }
}

TEST(Nn, OutputBiasPassesThrough) {
  auto p = copy(nn::MLPModel::zeros({2, 3, 4, 1}));
  p.back() = 3.5;
  const auto m = nn::MLPModel({2, 3, 4, 1}, p);
  const double in[2] = {0.7, -2.0};
  EXPECT_EQ(nn::forward(m, in), 3.5);
}

TEST(Nn, WidthOneNetMatchesClosedForm) {
  // weights 1, biases 0: out = tanh(0.5 + 0.5)
  const MLPSpec spec{2, 1, 1, 1};
  const auto m = nn::MLPModel(spec, {1.0, 1.0, 0.0, 1.0, 0.0});
  const double in[2] = {0.5, 0.5};
  EXPECT_NEAR(nn::forward(m, in), 0.7615941559557649, 1e-15);
}

TEST(Nn, OutputBiasGradientIsExactlyOne) {
  const auto m = nn::init_params({2, 5, 7, 1}, 3);
  const double in[2] = {0.2, 1.4};
  EXPECT_EQ(nn::grad_params(m, in)[m.output_bias_index()], 1.0);
}

TEST(Nn, ZeroWeightModelHasZeroHiddenGradient) {
  const auto m = nn::MLPModel::zeros({2, 3, 4, 1});
  const double in[2] = {1.0, 2.0};
  const auto g = nn::grad_params(m, in);
  const auto& last = m.offsets().back();
  for (std::size_t i = 0; i < last.weights; ++i) EXPECT_EQ(g[i], 0.0);
  EXPECT_EQ(nn::grad_input(m, in), std::vector<double>({0.0, 0.0}));
}

TEST(Nn, InputGradientOfLinearisedUnitIsTheWeights) {
  // One hidden unit with weights (a, c), output weight 1; tanh'(0) = 1.
  const double a = 0.37, c = -1.25;
  const auto m = nn::MLPModel({2, 1, 1, 1}, {a, c, 0.0, 1.0, 0.0});
  const double in[2] = {0.0, 0.0};
  const auto g = nn::grad_input(m, in);
  EXPECT_EQ(g[0], a);
  EXPECT_EQ(g[1], c);
}

TEST(Nn, ParameterGradientMatchesFiniteDifferences) {
  const auto m = nn::init_params({2, 4, 10, 1}, 2024);
  const double in[2] = {1.0, 2.0};
  const auto g = nn::grad_params(m, in);
  auto p = copy(m);
  for (std::size_t i = 0; i < p.size(); ++i) {
    auto hi = p, lo = p;
    hi[i] += 1e-5;
    lo[i] -= 1e-5;
    const double fd = (nn::forward(m.with_params(hi), in) - nn::forward(m.with_params(lo), in)) / 2e-5;
    EXPECT_TRUE(close(g[i], fd, 1e-6)) << "coordinate " << i << ": " << g[i] << " vs " << fd;
  }
}

TEST(Nn, GradientsMatchFiniteDifferencesOnRandomModels) {
  std::mt19937_64 rng(99);
  std::uniform_int_distribution<int> layers(1, 5), width(1, 9);
  std::uniform_real_distribution<double> x(-3.0, 3.0);
  for (int trial = 0; trial < 100; ++trial) {
    const MLPSpec spec{2, static_cast<std::size_t>(layers(rng)), static_cast<std::size_t>(width(rng)), 1};
    auto m = nn::init_params(spec, rng());
    auto p = copy(m);
    for (auto& v : p) v += 0.1 * x(rng);  // nonzero biases too
    m = m.with_params(p);
    const double in[2] = {x(rng), x(rng)};
    const auto gp = nn::grad_params(m, in);
    for (std::size_t i = 0; i < p.size(); ++i) {
      auto hi = p, lo = p;
      hi[i] += 1e-5;
      lo[i] -= 1e-5;
      const double fd = (nn::forward(m.with_params(hi), in) - nn::forward(m.with_params(lo), in)) / 2e-5;
      ASSERT_TRUE(close(gp[i], fd, 1e-6)) << "trial " << trial << " param " << i;
    }
    const auto gi = nn::grad_input(m, in);
    for (std::size_t k = 0; k < 2; ++k) {
      double hi[2] = {in[0], in[1]}, lo[2] = {in[0], in[1]};
      hi[k] += 1e-5;
      lo[k] -= 1e-5;
      const double fd = (nn::forward(m, hi) - nn::forward(m, lo)) / 2e-5;
      ASSERT_TRUE(close(gi[k], fd, 1e-6)) << "trial " << trial << " input " << k;
    }
  }
}

TEST(Nn, OutputIsBoundedByOutputLayerNorm) {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> big(0.0, 50.0);
  const auto m = nn::init_params({2, 3, 6, 1}, 11, 3.0);
  const double bound = nn::output_bound(m);
  for (int i = 0; i < 1000; ++i) {
    const double in[2] = {big(rng), big(rng)};
    EXPECT_LE(std::fabs(nn::forward(m, in)), bound + 1e-12);
  }
}

TEST(Nn, EvaluationIsPure) {
  const auto m = nn::init_params({2, 3, 6, 1}, 4);
  const double in[2] = {0.3, 0.9};
  EXPECT_EQ(nn::forward(m, in), nn::forward(m, in));
  EXPECT_EQ(nn::grad_params(m, in), nn::grad_params(m, in));
}

TEST(Nn, RejectsBadShapes) {
  const auto m = nn::init_params({2, 1, 3, 1}, 1);
  const double in3[3] = {1.0, 2.0, 3.0};
  EXPECT_THROW(nn::forward(m, in3), DimensionError);
  EXPECT_THROW(nn::grad_params(m, in3), DimensionError);
  EXPECT_THROW(nn::grad_input(m, in3), DimensionError);
  EXPECT_THROW(nn::MLPModel({2, 1, 3, 1}, {1.0}), DimensionError);
  EXPECT_THROW(nn::init_params({2, 0, 3, 1}, 1), std::invalid_argument);
  EXPECT_THROW(nn::init_params({2, 1, 0, 1}, 1), std::invalid_argument);
}
