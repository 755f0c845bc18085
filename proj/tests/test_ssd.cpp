#include <cmath>
#include <random>
#include <vector>

#include "doctest.h"
#include "gaslift/ssd.hpp"
#include "gaslift/twin.hpp"
#include "test_support.hpp"

using namespace gaslift;

namespace {

std::vector<double> noisy_ramp(std::mt19937_64& rng, int n, double slope_per_sample, double sigma) {
  std::normal_distribution<double> noise(0.0, sigma);
  std::vector<double> w(n);
  for (int k = 0; k < n; ++k) w[k] = 10.0 + slope_per_sample * k + noise(rng);
  return w;
}

}  // namespace

TEST_CASE("constant window is steady") {
  const std::vector<double> w(40, 7.3);
  const auto r = slope_t_test(w, SSDConfig{});
  CHECK(r.steady);
  CHECK(r.t_stat == 0.0);
}

TEST_CASE("short windows are rejected") {
  const std::vector<double> w{1.0, 2.0};
  CHECK_THROWS_AS(slope_t_test(w, SSDConfig{}), WindowTooShort);
}

TEST_CASE("noiseless ramp is not steady") {
  std::vector<double> w(40);
  for (int k = 0; k < 40; ++k) w[k] = 0.1 * k;
  CHECK_FALSE(slope_t_test(w, SSDConfig{}).steady);
}

TEST_CASE("t statistic matches a closed-form regression") {
  // Three points (0, 0), (1, 1), (2, 3): slope 1.5, residuals -1/6, 1/3, -1/6.
  const std::vector<double> w{0.0, 1.0, 3.0};
  const auto r = slope_t_test(w, SSDConfig{});
  const double se = std::sqrt((1.0 / 36 + 1.0 / 9 + 1.0 / 36) / 1.0 / 2.0);
  CHECK(r.t_stat == doctest::Approx(1.5 / se).epsilon(1e-12));
  // One degree of freedom: critical value at 95% two-sided tail is 6.3138.
  CHECK(slope_critical_value(3, 0.9) == doctest::Approx(6.313752).epsilon(1e-6));
}

TEST_CASE("ramp of 1 L/min per 10 s with 0.1 L/min noise") {
  std::mt19937_64 rng(1);
  const auto w = noisy_ramp(rng, 40, 0.1, 0.1);
  // Expected statistic is about 0.1 / (0.1 / sqrt(5330)) = 73.
  const auto r = slope_t_test(w, SSDConfig{});
  CHECK_FALSE(r.steady);
  CHECK(r.t_stat == doctest::Approx(73.0).epsilon(0.2));
}

TEST_CASE("false alarm rate matches the test level") {
  std::mt19937_64 rng(2);
  const SSDConfig cfg;
  int alarms = 0;
  const int n = 10000;
  for (int k = 0; k < n; ++k) {
    if (!slope_t_test(noisy_ramp(rng, 40, 0.0, 0.1), cfg).steady) ++alarms;
  }
  const double rate = static_cast<double>(alarms) / n;
  MESSAGE("false alarm rate " << rate);
  CHECK(std::abs(rate - (1.0 - cfg.alpha)) < 0.02);
}

TEST_CASE("scale and offset invariance") {
  std::mt19937_64 rng(3);
  const SSDConfig cfg;
  for (int rep = 0; rep < 50; ++rep) {
    auto w = noisy_ramp(rng, 40, 0.002, 0.1);
    const auto base = slope_t_test(w, cfg);
    for (auto& v : w) v *= 3.7;
    const auto scaled = slope_t_test(w, cfg);
    CHECK(scaled.t_stat == doctest::Approx(base.t_stat).epsilon(1e-9));
    CHECK(scaled.steady == base.steady);
    for (auto& v : w) v += 250.0;
    const auto shifted = slope_t_test(w, cfg);
    CHECK(shifted.t_stat == doctest::Approx(base.t_stat).epsilon(1e-7));
    CHECK(shifted.steady == base.steady);
  }
}

TEST_CASE("large ramps are rejected almost surely") {
  std::mt19937_64 rng(4);
  const SSDConfig cfg;
  const double sigma = 0.1;
  const double slope = 4.0 * sigma / 39.0 * 1.05;
  int rejected = 0;
  const int n = 2000;
  for (int k = 0; k < n; ++k) {
    if (!slope_t_test(noisy_ramp(rng, 40, slope, sigma), cfg).steady) ++rejected;
  }
  CHECK(static_cast<double>(rejected) / n > 0.99);
}

TEST_CASE("network verdict needs every signal") {
  std::vector<double> flat(40, 1.0), ramp(40);
  for (int k = 0; k < 40; ++k) ramp[k] = 0.05 * k;
  const SSDConfig cfg;
  CHECK(network_steady({flat, flat, flat}, cfg).steady);
  const auto v = network_steady({flat, ramp, flat}, cfg);
  CHECK_FALSE(v.steady);
  CHECK(v.per_signal[0]);
  CHECK_FALSE(v.per_signal[1]);
}

TEST_CASE("depletion replay: unsteady on ramps, steady before them") {
  using namespace gaslift::testing;
  SimConfig sim;
  sim.rng_seed = 17;
  DigitalTwin twin(rig(), nominal_theta(), sim, default_depletion_profile());
  const auto result = run_scenario(twin, inputs(2.5, 2.5, 2.5), nullptr, 1200.0);
  REQUIRE_FALSE(result.failure);
  const SSDConfig cfg;
  int steady_before = 0, checks_before = 0, steady_ramp = 0, checks_ramp = 0;
  for (int end = 40; end <= 1200; end += 10) {
    std::array<std::vector<double>, 3> w;
    for (int k = end - 39; k <= end; ++k) {
      for (int i = 0; i < 3; ++i) w[i].push_back(result.snapshots[k].measured.q_l(i));
    }
    const bool steady = network_steady({w[0], w[1], w[2]}, cfg).steady;
    if (end <= 240) {
      ++checks_before;
      steady_before += steady;
    } else if (end >= 300 && end <= 1080) {
      ++checks_ramp;
      steady_ramp += steady;
    }
  }
  MESSAGE("steady fraction before ramps " << double(steady_before) / checks_before << ", during "
                                          << double(steady_ramp) / checks_ramp);
  CHECK(double(steady_before) / checks_before > 0.5);
  CHECK(double(steady_ramp) / checks_ramp < 0.2);
}
