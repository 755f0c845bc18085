// Command-line front end: closed-loop runs, comparisons and the offline
// checks (step test, identifiability Monte Carlo, grid oracle).
//
// Exit codes: 0 success, 2 configuration or usage error, 3 runtime failure.

#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "gaslift/harness.hpp"

namespace {

constexpr int kConfigError = 2;
constexpr int kRuntimeError = 3;

gaslift::HarnessConfig load_config(const std::string& path) {
  return path.empty() ? gaslift::HarnessConfig::defaults() : gaslift::HarnessConfig::load(path);
}

void write(const std::filesystem::path& file, const std::string& text) {
  std::ofstream out(file, std::ios::binary);
  out << text;
  if (!out) throw std::runtime_error("cannot write " + file.string());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Gas-lift real-time optimization benchmark on a digital twin"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir;
  std::string supervisor_name = "ropa";
  std::vector<std::uint64_t> seeds;
  std::vector<std::string> run_dirs;

  auto* run = app.add_subcommand("run", "Run a supervisor and the fixed baseline on every seed");
  run->add_option("--config", config_path, "Configuration file (JSON)")->check(CLI::ExistingFile);
  run->add_option("--seed", seeds, "Noise seed; repeat for replicates (overrides the config)");
  run->add_option("--out", out_dir, "Output directory")->required();
  run->add_option("--supervisor", supervisor_name, "ropa, ssrto, drto or fixed")
      ->check(CLI::IsMember({"ropa", "ssrto", "drto", "fixed"}));

  auto* compare = app.add_subcommand("compare", "Compare run directories that share a scenario");
  compare->add_option("runs", run_dirs, "Run directories")->required()->check(CLI::ExistingDirectory);
  compare->add_option("--out", out_dir, "Directory for comparison.json and the plot-ready CSV files");

  auto* step = app.add_subcommand("step-test", "Step response and the recommended execution period");
  step->add_option("--config", config_path, "Configuration file (JSON)")->check(CLI::ExistingFile);
  step->add_option("--out", out_dir, "Directory for step_test.json");

  auto* ident = app.add_subcommand("identifiability", "Monte Carlo of the steady-state parameter fit");
  ident->add_option("--config", config_path, "Configuration file (JSON)")->check(CLI::ExistingFile);
  ident->add_option("--seed", seeds, "Monte Carlo seed (overrides the config)")->expected(0, 1);
  ident->add_option("--out", out_dir, "Directory for the report and CSV files");

  auto* oracle = app.add_subcommand("oracle", "Brute-force steady-state optimum next to the NLP optimum");
  oracle->add_option("--config", config_path, "Configuration file (JSON)")->check(CLI::ExistingFile);
  oracle->add_option("--out", out_dir, "Directory for oracle.json");

  auto* validate = app.add_subcommand("validate-config", "Check a configuration and print it in full");
  validate->add_option("--config", config_path, "Configuration file (JSON)")->required()->check(CLI::ExistingFile);

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kConfigError;
  }

  gaslift::HarnessConfig cfg;
  try {
    cfg = load_config(config_path);
    if (!seeds.empty()) {
      if (*ident) {
        cfg.identifiability.seed = seeds.front();
      } else {
        cfg.experiment.seeds = seeds;
      }
      cfg.validate();
    }
  } catch (const gaslift::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfigError;
  }

  try {
    if (*validate) {
      std::cout << cfg.to_json();
    } else if (*run) {
      const auto kind = *gaslift::parse_supervisor_kind(supervisor_name);
      const auto result = gaslift::run_experiment(cfg, kind, out_dir);
      std::cout << gaslift::metrics_json(result.metrics) << "\n";
      for (const auto& f : result.failures) std::cerr << "run failed: " << f << "\n";
      if (!result.failures.empty()) return kRuntimeError;
    } else if (*compare) {
      std::vector<std::filesystem::path> dirs(run_dirs.begin(), run_dirs.end());
      const auto report = gaslift::compare_runs(dirs);
      std::cout << report.to_json();
      if (!out_dir.empty()) {
        std::filesystem::create_directories(out_dir);
        write(std::filesystem::path(out_dir) / "comparison.json", report.to_json());
        write(std::filesystem::path(out_dir) / "profile.csv", report.profile_csv());
        write(std::filesystem::path(out_dir) / "input_usage.csv", report.input_usage_csv());
        write(std::filesystem::path(out_dir) / "timing.csv", report.timing_csv());
      }
    } else if (*step) {
      const auto report = gaslift::step_test(cfg);
      std::cout << "control response " << report.control_response_s << " s, plant response "
                << report.plant_response_s << " s, recommended period " << report.recommended_period_s << " s\n";
      if (!out_dir.empty()) {
        std::filesystem::create_directories(out_dir);
        write(std::filesystem::path(out_dir) / "step_test.json", report.to_json());
      }
    } else if (*ident) {
      const auto report = gaslift::identifiability_mc(cfg.model, cfg.identifiability_config());
      std::cout << report.to_json();
      if (!out_dir.empty()) {
        std::filesystem::create_directories(out_dir);
        write(std::filesystem::path(out_dir) / "identifiability.json", report.to_json());
        write(std::filesystem::path(out_dir) / "estimates.csv", report.estimates_csv());
        write(std::filesystem::path(out_dir) / "histograms.csv", report.histogram_csv());
      }
    } else if (*oracle) {
      const auto check = gaslift::oracle_check(cfg);
      std::cout << check.to_json();
      if (!out_dir.empty()) {
        std::filesystem::create_directories(out_dir);
        write(std::filesystem::path(out_dir) / "oracle.json", check.to_json());
      }
    }
  } catch (const gaslift::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfigError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntimeError;
  }
  return 0;
}
