#pragma once

#include <Eigen/Dense>
#include <array>
#include <random>

#include "json.hpp"
#include "rkmpc/model.hpp"
#include "rkmpc/mpc.hpp"

namespace rkmpc {

/// Physical parameters of the DC-motor / gearbox / elastic-shaft / load
/// servomechanism. SI units throughout.
struct ServoParams {
  double L = 0.0;        // armature inductance [H]
  double J_m = 0.5;      // motor inertia
  double beta_m = 0.1;   // motor viscous friction
  double R = 20.0;       // armature resistance [Ohm]
  double K_t = 10.0;     // motor constant
  double rho = 20.0;     // gear ratio
  double k_theta = 1280.2;  // torsional rigidity
  double J_l = 25.0;     // load inertia
  double beta_l = 25.0;  // load viscous friction
  std::array<double, 3> alpha_l{0.0, 0.0, 0.0};  // load Coulomb/deadzone
  std::array<double, 3> alpha_m{0.0, 0.0, 0.0};  // motor Coulomb/deadzone
};

/// Nominal values (Table of nominal parameters); frictions absent, L = 0.
ServoParams default_nominal_params();
/// "Real" plant values: fixed +-5%/+-10% offsets plus nonzero inductance and
/// friction triples.
ServoParams default_real_params();

struct PlantState {
  double theta_l = 0.0;  // load angle [rad]
  double omega_l = 0.0;
  double theta_m = 0.0;  // motor angle [rad]
  double omega_m = 0.0;
  double I_m = 0.0;      // armature current; dynamic state only when L > 0
};

/// Coulomb plus deadzone friction torque
///   alpha0 sgn(w) + alpha1 exp(-alpha2 |w|) sgn(w),  sgn(0) = 0.
double friction_torque(double omega, const std::array<double, 3>& alpha);

/// Time derivative of the plant state for a held armature voltage. When
/// L = 0 the current is eliminated algebraically and d(I_m)/dt is 0.
PlantState dynamics_rhs(const ServoParams& p, const PlantState& s, double V);

/// Advances the state by T seconds of held input using fixed-step RK4 with
/// T/substeps internal steps.
PlantState integrate_step(const ServoParams& p, const PlantState& s, double V,
                          double T, int substeps);

/// Noisy load-angle measurement.
double measure(const PlantState& s, double noise_std, std::mt19937_64& rng);

/// Mechanical (plus electrical, when L > 0) energy stored in the system.
double mechanical_energy(const ServoParams& p, const PlantState& s);

struct PerturbationSpec {
  double eps_min_range = 0.10;  // R, rho, k_theta
  double eps_max_range = 0.20;  // J_m, beta_m, K_t, beta_l
  double J_l_range = 0.80;      // load inertia
  unsigned long seed = 0;
};

/// Multiplies each parameter by (1 + delta) with delta uniform in its class
/// interval. Inductance and friction triples are left untouched.
ServoParams perturb_params(const ServoParams& nominal_real,
                           const PerturbationSpec& spec);

struct NoiseConfig {
  double accel_std = 0.12;  // disturbance on the motor angular acceleration
  double meas_std = 0.008;  // measurement noise on the load angle [rad]
  // The load-side disturbance is scaled down relative to the motor side:
  // unmodeled torques (friction, voltage disturbances) act mostly through
  // the motor, and the filter should not be able to explain away load-angle
  // innovations as load-side process noise.
  double load_accel_scale = 0.1;
};

/// Linearized nominal model: frictions dropped, L treated as 0, current
/// eliminated, state [theta_l, omega_l, theta_m, omega_m], output the load
/// angle. Discretized with zero-order hold at sampling time T.
LinearModel nominal_linear_model(const ServoParams& p, const NoiseConfig& noise,
                                 double T);

/// Continuous-time linear dynamics used by nominal_linear_model, exposed for
/// cross-checks against the nonlinear plant.
ContinuousModel nominal_continuous_model(const ServoParams& p,
                                         const NoiseConfig& noise);

/// Nonlinear servomechanism behind the closed-loop Plant interface. Process
/// noise enters as acceleration disturbances on both speeds, matching the
/// nominal model's noise topology.
class ServoPlant : public Plant {
 public:
  ServoPlant(ServoParams params, NoiseConfig noise, double T, int substeps,
             unsigned long seed);
  VectorXd measure() override;
  void apply(const VectorXd& u) override;
  Eigen::Index output_dim() const override { return 1; }
  const PlantState& state() const { return state_; }

 private:
  ServoParams params_;
  NoiseConfig noise_;
  double T_;
  int substeps_;
  PlantState state_;
  std::mt19937_64 rng_;
  std::normal_distribution<double> gauss_{0.0, 1.0};
};

nlohmann::json to_json(const ServoParams& p);
ServoParams servo_params_from_json(const nlohmann::json& j);
nlohmann::json to_json(const PerturbationSpec& spec);
PerturbationSpec perturbation_spec_from_json(const nlohmann::json& j);

}  // namespace rkmpc
