#pragma once

#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "rkmpc/mpc.hpp"
#include "rkmpc/servo.hpp"

namespace rkmpc {

enum class ScenarioId { nominal_match, mismatch, montecarlo, horizons };

std::string to_string(ScenarioId id);
ScenarioId scenario_from_string(const std::string& s);

struct ScenarioConfig {
  ScenarioId scenario = ScenarioId::nominal_match;
  double reference = M_PI / 2.0;  // rad
  double duration = 20.0;        // s
  double T = 0.1;                // s
  MpcConfig mpc;                 // defaults set by make_default_config
  double c = 0.1;                // robust tolerance
  std::optional<double> theta_bar;  // risk parameter; derived when absent
  unsigned long seed = 1;
  int runs = 50;
  std::vector<double> c_list{0.1, 0.01, 0.001};
  std::vector<std::pair<int, int>> horizon_pairs{{10, 8}, {15, 3}};
  NoiseConfig noise;
  PerturbationSpec perturbation;
  int substeps = 10;
  std::string out_dir;
};

/// Paper-style defaults: Q = R = 0.1, Hp = 10, Hu = 3, r = pi/2.
ScenarioConfig make_default_config(ScenarioId scenario);

nlohmann::json to_json(const ScenarioConfig& cfg);
ScenarioConfig scenario_config_from_json(const nlohmann::json& j);

struct Metrics {
  double mse = 0.0;                       // rad^2, over the first 20 s
  std::optional<double> settling_time;    // 5% band, s
  double input_energy = 0.0;              // sum u^2 T
};

/// First time tau with |y_t - r| <= band |r| for every t >= tau.
std::optional<double> settling_time(const std::vector<double>& y, double r,
                                    double band, double T);

Metrics compute_metrics(const ClosedLoopResult& result, double r, double T,
                        double mse_window = 20.0);

struct ControllerRun {
  std::string controller;
  FilterVariant variant;
  ClosedLoopResult trace;
  Metrics metrics;
};

struct ScenarioResult {
  ScenarioConfig config;
  std::vector<ControllerRun> runs;
  double derived_theta_bar = 0.0;
};

/// Runs S-MPC, R-MPC and RS-MPC on the configured plant (matched linear
/// plant for nominal_match, nonlinear servo with real parameters for
/// mismatch). Writes one CSV per controller when out_dir is set.
ScenarioResult run_scenario(const ScenarioConfig& cfg);

struct CampaignEntry {
  std::string controller;
  int run = 0;
  unsigned long seed = 0;
  Metrics metrics;
};

struct Quartiles {
  double q25 = 0.0;
  double median = 0.0;
  double q75 = 0.0;
};

Quartiles quartiles(std::vector<double> samples);

struct CampaignSummary {
  std::vector<CampaignEntry> entries;
  std::map<std::string, std::vector<double>> mse_samples;
  std::map<std::string, Quartiles> mse_quartiles;
  std::map<std::string, double> median_input_energy;
  int failed_runs = 0;
  int Hp = 0, Hu = 0;
};

/// Monte Carlo campaign over randomly perturbed plants: per run, one
/// perturbed servo and one noise realization shared by every controller
/// (S-MPC plus one R-MPC per tolerance in c_list).
CampaignSummary run_montecarlo(const ScenarioConfig& cfg);

/// Repeats the Monte Carlo campaign for each (Hp, Hu) pair.
std::vector<CampaignSummary> run_horizons(const ScenarioConfig& cfg);

/// Flat-file export: per-run time-series CSVs, campaign CSV, boxplot summary
/// CSV and a manifest JSON capturing the full configuration and seeds.
void export_scenario(const ScenarioResult& result, const std::string& dir);
void export_campaign(const CampaignSummary& summary, const ScenarioConfig& cfg,
                     const std::string& dir, const std::string& tag = "");

}  // namespace rkmpc
