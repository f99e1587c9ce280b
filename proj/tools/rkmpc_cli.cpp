#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "rkmpc/experiments.hpp"

namespace {

rkmpc::ScenarioConfig load_config(const std::string& path,
                                  rkmpc::ScenarioId fallback) {
  if (path.empty()) return rkmpc::make_default_config(fallback);
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot read config file: " + path);
  nlohmann::json j;
  is >> j;
  if (!j.contains("scenario")) j["scenario"] = rkmpc::to_string(fallback);
  return rkmpc::scenario_config_from_json(j);
}

void print_metrics(const rkmpc::ScenarioResult& result) {
  for (const auto& run : result.runs) {
    std::cout << run.controller << ": mse=" << run.metrics.mse
              << " rad^2, settling=";
    if (run.metrics.settling_time)
      std::cout << *run.metrics.settling_time << " s";
    else
      std::cout << "not settled";
    std::cout << ", input_energy=" << run.metrics.input_energy << "\n";
    if (!run.trace.completed)
      std::cout << "  aborted at step " << run.trace.failed_step << ": "
                << run.trace.failure << "\n";
  }
}

void print_summary(const rkmpc::CampaignSummary& summary) {
  std::cout << "Hp=" << summary.Hp << " Hu=" << summary.Hu
            << " (failed runs: " << summary.failed_runs << ")\n";
  for (const auto& [name, q] : summary.mse_quartiles)
    std::cout << "  " << name << ": median MSE " << q.median << " [q25 "
              << q.q25 << ", q75 " << q.q75 << "]\n";
}

std::vector<std::pair<int, int>> parse_pairs(const std::string& spec) {
  std::vector<std::pair<int, int>> pairs;
  std::stringstream ss(spec);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto colon = item.find(':');
    if (colon == std::string::npos)
      throw std::runtime_error("horizon pair must look like Hp:Hu, got " +
                               item);
    pairs.emplace_back(std::stoi(item.substr(0, colon)),
                       std::stoi(item.substr(colon + 1)));
  }
  return pairs;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"MPC with robust Kalman filtering: servomechanism simulations"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir;
  std::string scenario_name = "nominal";
  double c = 0.1;
  double theta_bar = -1.0;
  unsigned long seed = 1;
  int runs = 50;
  std::string c_list_str = "0.1,0.01,0.001";
  std::string pairs_str = "10:8,15:3";

  auto* simulate = app.add_subcommand("simulate", "single closed-loop run");
  simulate->add_option("--scenario", scenario_name,
                       "nominal or mismatch");
  simulate->add_option("--c", c, "robust filter tolerance");
  simulate->add_option("--theta-bar", theta_bar,
                       "risk parameter (derived from R-MPC when negative)");
  simulate->add_option("--seed", seed, "noise seed");
  simulate->add_option("--out", out_dir, "output directory for CSVs");
  simulate->add_option("--config", config_path, "JSON config overriding flags");

  auto* montecarlo =
      app.add_subcommand("montecarlo", "perturbed-plant Monte Carlo campaign");
  montecarlo->add_option("--runs", runs, "number of runs");
  montecarlo->add_option("--c-list", c_list_str, "comma-separated tolerances");
  montecarlo->add_option("--seed", seed, "master seed");
  montecarlo->add_option("--out", out_dir, "output directory");
  montecarlo->add_option("--config", config_path, "JSON config");

  auto* horizons =
      app.add_subcommand("horizons", "Monte Carlo over horizon pairs");
  horizons->add_option("--pairs", pairs_str, "comma-separated Hp:Hu pairs");
  horizons->add_option("--runs", runs, "number of runs per pair");
  horizons->add_option("--c-list", c_list_str, "comma-separated tolerances");
  horizons->add_option("--seed", seed, "master seed");
  horizons->add_option("--out", out_dir, "output directory");
  horizons->add_option("--config", config_path, "JSON config");

  CLI11_PARSE(app, argc, argv);

  try {
    if (simulate->parsed()) {
      auto cfg = load_config(config_path,
                             rkmpc::scenario_from_string(scenario_name));
      if (config_path.empty()) {
        cfg.scenario = rkmpc::scenario_from_string(scenario_name);
        cfg.duration =
            cfg.scenario == rkmpc::ScenarioId::mismatch ? 35.0 : 20.0;
        cfg.c = c;
        if (theta_bar >= 0.0) cfg.theta_bar = theta_bar;
        cfg.seed = seed;
      }
      if (!out_dir.empty()) cfg.out_dir = out_dir;
      const auto result = rkmpc::run_scenario(cfg);
      print_metrics(result);
      for (const auto& run : result.runs)
        if (!run.trace.completed) return 1;
    } else if (montecarlo->parsed()) {
      auto cfg = load_config(config_path, rkmpc::ScenarioId::montecarlo);
      if (config_path.empty()) {
        cfg.runs = runs;
        cfg.seed = seed;
        cfg.c_list.clear();
        std::stringstream ss(c_list_str);
        std::string item;
        while (std::getline(ss, item, ',')) cfg.c_list.push_back(std::stod(item));
      }
      if (!out_dir.empty()) cfg.out_dir = out_dir;
      print_summary(rkmpc::run_montecarlo(cfg));
    } else if (horizons->parsed()) {
      auto cfg = load_config(config_path, rkmpc::ScenarioId::horizons);
      if (config_path.empty()) {
        cfg.runs = runs;
        cfg.seed = seed;
        cfg.horizon_pairs = parse_pairs(pairs_str);
        cfg.c_list.clear();
        std::stringstream ss(c_list_str);
        std::string item;
        while (std::getline(ss, item, ',')) cfg.c_list.push_back(std::stod(item));
      }
      if (!out_dir.empty()) cfg.out_dir = out_dir;
      for (const auto& summary : rkmpc::run_horizons(cfg))
        print_summary(summary);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
