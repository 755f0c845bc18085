#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "gaslift/harness.hpp"

namespace gaslift {

using nlohmann::json;

std::vector<double> moving_average(const std::vector<double>& series, int window) {
  if (window < 1) throw std::invalid_argument("moving_average: window must be at least one sample");
  std::vector<double> out(series.size());
  double sum = 0.0;
  for (std::size_t k = 0; k < series.size(); ++k) {
    sum += series[k];
    if (k >= static_cast<std::size_t>(window)) sum -= series[k - static_cast<std::size_t>(window)];
    const auto n = std::min<std::size_t>(k + 1, static_cast<std::size_t>(window));
    out[k] = sum / static_cast<double>(n);
  }
  return out;
}

std::array<double, 5> quartiles(std::vector<double> values) {
  std::array<double, 5> q{};
  if (values.empty()) return q;
  std::sort(values.begin(), values.end());
  const double last = static_cast<double>(values.size() - 1);
  for (int i = 0; i < 5; ++i) {
    const double pos = last * i / 4.0;
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, values.size() - 1);
    q[i] = values[lo] + (pos - static_cast<double>(lo)) * (values[hi] - values[lo]);
  }
  return q;
}

TimingStats timing_stats(const std::vector<double>& ms) {
  TimingStats s;
  s.count = static_cast<int>(ms.size());
  if (ms.empty()) return s;
  s.mean_ms = std::accumulate(ms.begin(), ms.end(), 0.0) / static_cast<double>(ms.size());
  s.min_ms = *std::min_element(ms.begin(), ms.end());
  s.max_ms = *std::max_element(ms.begin(), ms.end());
  return s;
}

namespace {

std::map<std::uint64_t, std::vector<const LogRow*>> by_seed(const std::vector<LogRow>& log) {
  std::map<std::uint64_t, std::vector<const LogRow*>> out;
  for (const auto& r : log) out[r.seed].push_back(&r);
  return out;
}

}  // namespace

MetricsSummary compute_metrics(const std::vector<LogRow>& log, const std::vector<LogRow>& baseline,
                               const std::vector<DecisionRow>& decisions, const EconomicSettings& econ,
                               const Vec3& initial_inputs, double sample_period, double moving_average_s) {
  const auto runs = by_seed(log);
  const auto base = by_seed(baseline);
  if (runs.empty()) throw std::runtime_error("metrics: the log is empty");
  std::size_t n = std::numeric_limits<std::size_t>::max();
  for (const auto& [seed, rows] : runs) {
    const auto b = base.find(seed);
    if (b == base.end()) throw std::runtime_error("metrics: baseline lacks seed " + std::to_string(seed));
    n = std::min({n, rows.size(), b->second.size()});
  }

  MetricsSummary m;
  const double seeds = static_cast<double>(runs.size());
  const double minutes = sample_period / 60.0;
  for (std::size_t k = 0; k < n; ++k) {
    double J = 0.0, J_fix = 0.0;
    Vec3 u = Vec3::Zero();
    for (const auto& [seed, rows] : runs) {
      J += profit(rows[k]->measured.q_l, econ);
      J_fix += profit(base.at(seed)[k]->measured.q_l, econ);
      u += rows[k]->setpoint;
    }
    J /= seeds;
    J_fix /= seeds;
    m.t.push_back(runs.begin()->second[k]->t);
    m.profit.push_back(J);
    m.baseline_profit.push_back(J_fix);
    m.percent.push_back(100.0 * (J - J_fix) / J_fix);
    m.mean_setpoints.push_back(u / seeds);
    m.cumulative_profit += J * minutes;
    m.cumulative_baseline_profit += J_fix * minutes;
    m.cumulative_percent_min += m.percent.back() * minutes;
  }
  const int window = std::max(1, static_cast<int>(std::lround(moving_average_s / sample_period)));
  m.percent_smoothed = moving_average(m.percent, window);
  if (n > 0) m.mean_percent = std::accumulate(m.percent.begin(), m.percent.end(), 0.0) / static_cast<double>(n);

  // Input moves per seed, starting from the initial setpoints.
  std::map<std::uint64_t, std::vector<const DecisionRow*>> per_seed;
  for (const auto& d : decisions) per_seed[d.seed].push_back(&d);
  std::vector<double> all_ms;
  for (const auto& [seed, rows] : per_seed) {
    Vec3 prev = initial_inputs;
    for (const DecisionRow* d : rows) {
      for (int i = 0; i < kWells; ++i) m.input_changes.push_back(std::abs(d->u_applied(i) - prev(i)));
      prev = d->u_applied;
      all_ms.push_back(d->total_ms);
      if (d->acted) m.acting_ms.push_back(d->total_ms);
      ++m.decisions;
      m.acted += d->acted;
    }
  }
  m.input_change_quartiles = quartiles(m.input_changes);
  m.timing = timing_stats(all_ms);
  m.acting_timing = timing_stats(m.acting_ms);
  return m;
}

namespace {

json timing_json(const TimingStats& s) {
  return {{"count", s.count}, {"mean_ms", s.mean_ms}, {"min_ms", s.min_ms}, {"max_ms", s.max_ms}};
}

}  // namespace

std::string metrics_json(const MetricsSummary& m) {
  json j;
  j["samples"] = m.t.size();
  j["cumulative_profit"] = m.cumulative_profit;
  j["cumulative_baseline_profit"] = m.cumulative_baseline_profit;
  j["cumulative_profit_gain_percent"] =
      m.cumulative_baseline_profit != 0.0
          ? 100.0 * (m.cumulative_profit - m.cumulative_baseline_profit) / m.cumulative_baseline_profit
          : 0.0;
  j["cumulative_percent_min"] = m.cumulative_percent_min;
  j["mean_percent"] = m.mean_percent;
  j["final_percent_smoothed"] = m.percent_smoothed.empty() ? 0.0 : m.percent_smoothed.back();
  j["input_change_quartiles"] = m.input_change_quartiles;
  j["decisions"] = m.decisions;
  j["acted"] = m.acted;
  j["timing"] = timing_json(m.timing);
  j["acting_timing"] = timing_json(m.acting_timing);
  return j.dump();
}

// ---------------------------------------------------------------------------
// Comparison

namespace {

json read_summary(const std::filesystem::path& dir) {
  std::ifstream in(dir / "summary.json");
  if (!in) throw ComparisonError("no summary.json in " + dir.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return json::parse(buf.str());
}

std::string label_of(const std::filesystem::path& dir) {
  auto name = dir.filename();
  if (name.empty()) name = dir.parent_path().filename();
  return name.string();
}

void put(std::string& out, double v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  out.append(buf, res.ptr);
}

}  // namespace

ComparisonReport compare_runs(const std::vector<std::filesystem::path>& run_dirs) {
  if (run_dirs.empty()) throw ComparisonError("nothing to compare");
  ComparisonReport rep;
  json reference;
  for (const auto& dir : run_dirs) {
    const json s = read_summary(dir);
    const json key = {{"scenario", s.at("scenario")},
                      {"seeds", s.at("seeds")},
                      {"horizon_s", s.at("horizon_s")},
                      {"sample_period_s", s.at("sample_period_s")},
                      {"prices", s.at("prices")}};
    if (reference.is_null()) {
      reference = key;
    } else {
      for (auto it = key.begin(); it != key.end(); ++it) {
        if (reference.at(it.key()) != it.value()) {
          throw ComparisonError(dir.string() + ": " + it.key() + " differs from " + run_dirs.front().string());
        }
      }
    }
    const auto kind = parse_supervisor_kind(s.at("supervisor").get<std::string>());
    if (!kind) throw ComparisonError(dir.string() + ": unknown supervisor");
    rep.entries.push_back(ComparisonEntry{label_of(dir), *kind, recompute_metrics(dir)});
  }
  return rep;
}

std::string ComparisonReport::to_json() const {
  json j;
  json rows = json::array();
  const MetricsSummary* ref = entries.empty() ? nullptr : &entries.front().metrics;
  for (const auto& e : entries) {
    const auto& m = e.metrics;
    rows.push_back({{"label", e.label},
                    {"supervisor", to_string(e.kind)},
                    {"cumulative_percent_min", m.cumulative_percent_min},
                    {"mean_percent", m.mean_percent},
                    {"cumulative_profit", m.cumulative_profit},
                    {"acting_mean_ms", m.acting_timing.mean_ms},
                    {"acting_decisions", m.acting_timing.count},
                    {"input_change_quartiles", m.input_change_quartiles},
                    {"delta",
                     {{"cumulative_percent_min", m.cumulative_percent_min - ref->cumulative_percent_min},
                      {"mean_percent", m.mean_percent - ref->mean_percent},
                      {"cumulative_profit", m.cumulative_profit - ref->cumulative_profit},
                      {"acting_mean_ms", m.acting_timing.mean_ms - ref->acting_timing.mean_ms}}}});
  }
  j["reference"] = entries.empty() ? "" : entries.front().label;
  j["entries"] = rows;

  std::vector<const ComparisonEntry*> order;
  for (const auto& e : entries) order.push_back(&e);
  std::stable_sort(order.begin(), order.end(), [](auto* a, auto* b) {
    return a->metrics.cumulative_percent_min > b->metrics.cumulative_percent_min;
  });
  json profit_order = json::array();
  for (auto* e : order) profit_order.push_back(e->label);
  j["profit_ordering"] = profit_order;

  // The fixed baseline does no computation worth timing.
  order.clear();
  for (const auto& e : entries) {
    if (e.kind != SupervisorKind::FIXED && e.metrics.acting_timing.count > 0) order.push_back(&e);
  }
  std::stable_sort(order.begin(), order.end(), [](auto* a, auto* b) {
    return a->metrics.acting_timing.mean_ms < b->metrics.acting_timing.mean_ms;
  });
  json timing_order = json::array();
  for (auto* e : order) timing_order.push_back(e->label);
  j["timing_ordering"] = timing_order;
  return j.dump(2) + "\n";
}

std::string ComparisonReport::profile_csv() const {
  std::string out = "label,t,percent,percent_smoothed\n";
  for (const auto& e : entries) {
    for (std::size_t k = 0; k < e.metrics.t.size(); ++k) {
      out += e.label + ",";
      put(out, e.metrics.t[k]);
      out += ',';
      put(out, e.metrics.percent[k]);
      out += ',';
      put(out, e.metrics.percent_smoothed[k]);
      out += '\n';
    }
  }
  return out;
}

std::string ComparisonReport::input_usage_csv() const {
  std::string out = "label,index,abs_change\n";
  for (const auto& e : entries) {
    for (std::size_t k = 0; k < e.metrics.input_changes.size(); ++k) {
      out += e.label + "," + std::to_string(k) + ",";
      put(out, e.metrics.input_changes[k]);
      out += '\n';
    }
  }
  return out;
}

std::string ComparisonReport::timing_csv() const {
  std::string out = "label,index,total_ms\n";
  for (const auto& e : entries) {
    for (std::size_t k = 0; k < e.metrics.acting_ms.size(); ++k) {
      out += e.label + "," + std::to_string(k) + ",";
      put(out, e.metrics.acting_ms[k]);
      out += '\n';
    }
  }
  return out;
}

}  // namespace gaslift
