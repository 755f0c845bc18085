#include "gaslift/ssd.hpp"

#include <algorithm>
#include <cmath>

#include <boost/math/distributions/students_t.hpp>

namespace gaslift {

int SSDConfig::window_samples() const { return static_cast<int>(std::lround(window_s / sample_period)); }

void SSDConfig::validate() const {
  if (!(alpha > 0.0 && alpha < 1.0)) throw std::invalid_argument("ssd alpha must lie in (0, 1)");
  if (!(sample_period > 0.0) || window_s < 3.0 * sample_period) {
    throw std::invalid_argument("ssd window must span at least three samples");
  }
  if (!(resolution >= 0.0)) throw std::invalid_argument("ssd resolution must be non-negative");
}

double slope_critical_value(int n, double alpha) {
  boost::math::students_t dist(static_cast<double>(n - 2));
  return boost::math::quantile(dist, 1.0 - (1.0 - alpha) / 2.0);
}

SlopeTest slope_t_test(std::span<const double> window, const SSDConfig& cfg) {
  const int n = static_cast<int>(window.size());
  if (n < 3) throw WindowTooShort("slope test needs at least three samples");

  const auto [lo, hi] = std::minmax_element(window.begin(), window.end());
  if (*hi - *lo <= cfg.resolution) return SlopeTest{};

  // Sample index as regressor; uniform spacing makes the time unit cancel.
  const double x_mean = 0.5 * (n - 1);
  double y_mean = 0.0;
  for (double y : window) y_mean += y;
  y_mean /= n;
  double sxx = 0.0, sxy = 0.0;
  for (int k = 0; k < n; ++k) {
    const double dx = k - x_mean;
    sxx += dx * dx;
    sxy += dx * (window[k] - y_mean);
  }
  SlopeTest out;
  out.slope = sxy / sxx / cfg.sample_period;
  const double b = sxy / sxx;
  double sse = 0.0;
  for (int k = 0; k < n; ++k) {
    const double r = window[k] - y_mean - b * (k - x_mean);
    sse += r * r;
  }
  if (sse <= 0.0) {
    out.steady = (b == 0.0);
    out.t_stat = (b == 0.0) ? 0.0 : std::copysign(INFINITY, b);
    return out;
  }
  const double se = std::sqrt(sse / (n - 2) / sxx);
  out.t_stat = b / se;
  out.steady = std::abs(out.t_stat) <= slope_critical_value(n, cfg.alpha);
  return out;
}

SSVerdict network_steady(const std::array<std::span<const double>, 3>& windows, const SSDConfig& cfg) {
  SSVerdict v;
  v.steady = true;
  for (int i = 0; i < 3; ++i) {
    const auto r = slope_t_test(windows[i], cfg);
    v.per_signal[i] = r.steady;
    v.t_stats[i] = r.t_stat;
    v.steady = v.steady && r.steady;
  }
  return v;
}

}  // namespace gaslift
