// Steady-state detection: OLS slope t-test on each liquid-rate window, with
// the network declared steady only when every signal passes.
#pragma once

#include <array>
#include <span>
#include <stdexcept>

namespace gaslift {

struct SSDConfig {
  double window_s = 40.0;
  double alpha = 0.9;           // probability of accepting a truly flat window
  double sample_period = 1.0;   // s
  double resolution = 1e-9;     // spread below which a window counts as constant

  int window_samples() const;
  void validate() const;
};

struct SlopeTest {
  bool steady = true;
  double t_stat = 0.0;
  double slope = 0.0;
};

struct SSVerdict {
  std::array<bool, 3> per_signal{true, true, true};
  std::array<double, 3> t_stats{0.0, 0.0, 0.0};
  bool steady = true;
};

class WindowTooShort : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Two-sided test of H0: slope = 0 over uniformly spaced samples. A window
/// whose spread is within the resolution is steady.
SlopeTest slope_t_test(std::span<const double> window, const SSDConfig& cfg);

/// Critical |t| for n samples.
double slope_critical_value(int n, double alpha);

SSVerdict network_steady(const std::array<std::span<const double>, 3>& windows, const SSDConfig& cfg);

}  // namespace gaslift
