#pragma once

// Quick oracle checks runnable from the CLI (`dlm selftest`). The full
// property suite lives in tests/.

#include <cmath>
#include <functional>
#include <iostream>
#include <string>
#include <vector>

#include "dlm/dspp.hpp"
#include "dlm/inference.hpp"
#include "dlm/nn.hpp"
#include "dlm/queueing.hpp"
#include "dlm/sde.hpp"

namespace dlm::selftest {

struct Check {
  std::string name;
  std::function<std::string()> run;  // empty string on success, else a reason
};

inline std::vector<Check> checks() {
  std::vector<Check> out;

  out.push_back({"nn gradient vs finite differences", [] {
                   const auto model = nn::init_params({2, 4, 6, 1}, 17);
                   const double x[2] = {0.3, -1.2};
                   const auto g = nn::grad_params(model, x);
                   auto p = std::vector<double>(model.params().begin(), model.params().end());
                   for (std::size_t i = 0; i < p.size(); ++i) {
                     auto a = p, b = p;
                     a[i] += 1e-5;
                     b[i] -= 1e-5;
                     const double fd = (nn::forward(model.with_params(a), x) - nn::forward(model.with_params(b), x)) / 2e-5;
                     if (std::fabs(fd - g[i]) > 1e-6 * std::max(1.0, std::fabs(fd))) return "coordinate " + std::to_string(i);
                   }
                   return std::string();
                 }});

  out.push_back({"ELBO gradient vs finite differences", [] {
                   const sde::TimeGrid grid(1.0, 15);
                   const dspp::ObservationScheme scheme{{0.4, 1.0}};
                   const auto data = dspp::generate_dataset({sde::DriftSpec::cir(0.3, 80.0, 1.0), 5.0}, grid, scheme, 3, 5);
                   inference::ModelShape shape;
                   shape.prior_net = shape.control_net = {2, 3, 8, 1};
                   const auto model = inference::make_model(shape, 1.0, 9);
                   const auto est = inference::elbo_gradient(model, data.samples, scheme, grid, 2, 11);
                   const auto p = model.params();
                   for (std::size_t i = 0; i < p.size(); i += 7) {
                     auto a = p, b = p;
                     a[i] += 1e-5;
                     b[i] -= 1e-5;
                     const double fd = (inference::elbo_saa(model.with_params(a), data.samples, scheme, grid, 2, 11) -
                                        inference::elbo_saa(model.with_params(b), data.samples, scheme, grid, 2, 11)) /
                                       2e-5;
                     if (std::fabs(fd - est.gradient[i]) > std::max(1e-6, 1e-3 * std::fabs(fd)))
                       return "coordinate " + std::to_string(i);
                   }
                   return std::string();
                 }});

  out.push_back({"zero-noise Euler path vs ODE solution", [] {
                   const sde::TimeGrid grid(4.0, 600);
                   const auto path = sde::euler_maruyama(sde::DriftSpec::ode(0.3, 80.0), 5.0, grid, sde::sample_noise(grid, 1));
                   const double exact = 80.0 - 75.0 * std::exp(-1.2);
                   if (std::fabs(path.values.back() - exact) > 0.05) return "Z(4) = " + csv::format_real(path.values.back());
                   return std::string();
                 }});

  out.push_back({"likelihood sums to one over outcomes", [] {
                   const sde::TimeGrid grid(2.0, 4);
                   const sde::IntensityPath path{grid, std::vector<double>(grid.size(), 0.5)};
                   const dspp::ObservationScheme scheme{{1.0, 2.0}};
                   double total = 0.0;
                   for (std::int64_t k1 = 0; k1 <= 20; ++k1)
                     for (std::int64_t k2 = k1; k2 <= 20; ++k2)
                       total += std::exp(dspp::log_likelihood({{k1, k2}}, path, scheme));
                   if (std::fabs(total - 1.0) > 1e-6) return "sum = " + csv::format_real(total);
                   return std::string();
                 }});

  out.push_back({"M/M/inf transient mean", [] {
                   const sde::TimeGrid grid(4.0, 60);
                   const sde::IntensityPath path{grid, std::vector<double>(grid.size(), 80.0)};
                   const auto service = queueing::ServiceDist::exponential(2.0);
                   const std::size_t R = 2000;
                   std::vector<std::vector<double>> busy(1, std::vector<double>(R));
                   for (std::size_t r = 0; r < R; ++r)
                     busy[0][r] = static_cast<double>(
                         queueing::simulate_infinite_server(queueing::arrivals_from_path(path, r), service, {4.0}, r)[0]);
                   const auto s = queueing::occupancy_stats(busy, {4.0}).front();
                   const double exact = 40.0 * (1.0 - std::exp(-8.0));
                   if (std::fabs(s.mean - exact) > 3.0 * std::sqrt(s.variance / R)) return "mean = " + csv::format_real(s.mean);
                   return std::string();
                 }});

  out.push_back({"chi-square variance interval", [] {
                   // Samples with s^2 = 61.2 at R = 500.
                   std::vector<double> x(500);
                   for (std::size_t i = 0; i < x.size(); ++i) x[i] = (i % 2 ? 1.0 : -1.0) * std::sqrt(61.2 * 499.0 / 500.0);
                   const auto s = queueing::summarize(4.0, x);
                   if (std::fabs(s.var_lo - 54.2633) > 1e-3 || std::fabs(s.var_hi - 69.5648) > 1e-3)
                     return "[" + csv::format_real(s.var_lo) + ", " + csv::format_real(s.var_hi) + "]";
                   return std::string();
                 }});
  return out;
}

// Prints one line per check; true when all pass.
inline bool run(std::ostream& out = std::cout) {
  bool ok = true;
  for (const auto& c : checks()) {
    std::string why;
    try {
      why = c.run();
    } catch (const std::exception& e) {
      why = std::string("threw: ") + e.what();
    }
    out << (why.empty() ? "ok    " : "FAIL  ") << c.name << (why.empty() ? "" : " (" + why + ")") << "\n";
    ok = ok && why.empty();
  }
  return ok;
}

}  // namespace dlm::selftest
