#include "rkmpc/servo.hpp"

#include <cmath>
#include <stdexcept>

namespace rkmpc {

ServoParams default_nominal_params() { return ServoParams{}; }

ServoParams default_real_params() {
  constexpr double eps_min = 0.05;
  constexpr double eps_max = 0.10;
  ServoParams p;
  p.L = 0.8;
  p.J_m = 0.5 * (1.0 + eps_max);
  p.beta_m = 0.1 * (1.0 + eps_max);
  p.R = 20.0 * (1.0 + eps_min);
  p.K_t = 10.0 * (1.0 + eps_max);
  p.rho = 20.0 * (1.0 + eps_min);
  p.k_theta = 1280.2 * (1.0 + eps_min);
  p.J_l = 25.0 * (1.0 - eps_max);
  p.beta_l = 25.0 * (1.0 + eps_max);
  p.alpha_l = {0.5, 10.0, 0.5};
  p.alpha_m = {0.1, 2.0, 0.5};
  return p;
}

namespace {
double sgn(double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); }
}  // namespace

double friction_torque(double omega, const std::array<double, 3>& alpha) {
  return (alpha[0] + alpha[1] * std::exp(-alpha[2] * std::abs(omega))) *
         sgn(omega);
}

PlantState dynamics_rhs(const ServoParams& p, const PlantState& s, double V) {
  const double T_s = (p.k_theta / p.rho) * (s.theta_m / p.rho - s.theta_l);
  const double I_m =
      p.L > 0.0 ? s.I_m : (V - p.K_t * s.omega_m) / p.R;
  const double T_m = p.K_t * I_m;

  PlantState d;
  d.theta_l = s.omega_l;
  d.omega_l = (p.rho * T_s - p.beta_l * s.omega_l -
               friction_torque(s.omega_l, p.alpha_l)) /
              p.J_l;
  d.theta_m = s.omega_m;
  d.omega_m = (T_m - T_s - p.beta_m * s.omega_m -
               friction_torque(s.omega_m, p.alpha_m)) /
              p.J_m;
  d.I_m = p.L > 0.0 ? (V - p.R * s.I_m - p.K_t * s.omega_m) / p.L : 0.0;
  return d;
}

namespace {

PlantState axpy(const PlantState& s, double h, const PlantState& d) {
  PlantState r;
  r.theta_l = s.theta_l + h * d.theta_l;
  r.omega_l = s.omega_l + h * d.omega_l;
  r.theta_m = s.theta_m + h * d.theta_m;
  r.omega_m = s.omega_m + h * d.omega_m;
  r.I_m = s.I_m + h * d.I_m;
  return r;
}

bool finite(const PlantState& s) {
  return std::isfinite(s.theta_l) && std::isfinite(s.omega_l) &&
         std::isfinite(s.theta_m) && std::isfinite(s.omega_m) &&
         std::isfinite(s.I_m);
}

}  // namespace

PlantState integrate_step(const ServoParams& p, const PlantState& s, double V,
                          double T, int substeps) {
  if (T <= 0.0 || substeps < 1)
    throw std::invalid_argument("integrate_step: need T > 0 and substeps >= 1");
  const double h = T / substeps;
  PlantState cur = s;
  for (int i = 0; i < substeps; ++i) {
    const PlantState k1 = dynamics_rhs(p, cur, V);
    const PlantState k2 = dynamics_rhs(p, axpy(cur, 0.5 * h, k1), V);
    const PlantState k3 = dynamics_rhs(p, axpy(cur, 0.5 * h, k2), V);
    const PlantState k4 = dynamics_rhs(p, axpy(cur, h, k3), V);
    PlantState next = cur;
    next.theta_l += h / 6.0 * (k1.theta_l + 2 * k2.theta_l + 2 * k3.theta_l +
                               k4.theta_l);
    next.omega_l += h / 6.0 * (k1.omega_l + 2 * k2.omega_l + 2 * k3.omega_l +
                               k4.omega_l);
    next.theta_m += h / 6.0 * (k1.theta_m + 2 * k2.theta_m + 2 * k3.theta_m +
                               k4.theta_m);
    next.omega_m += h / 6.0 * (k1.omega_m + 2 * k2.omega_m + 2 * k3.omega_m +
                               k4.omega_m);
    next.I_m += h / 6.0 * (k1.I_m + 2 * k2.I_m + 2 * k3.I_m + k4.I_m);
    if (!finite(next))
      throw std::runtime_error("integrate_step: state diverged at t = " +
                               std::to_string((i + 1) * h));
    cur = next;
  }
  return cur;
}

double measure(const PlantState& s, double noise_std, std::mt19937_64& rng) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  return s.theta_l + noise_std * gauss(rng);
}

double mechanical_energy(const ServoParams& p, const PlantState& s) {
  const double twist = s.theta_m / p.rho - s.theta_l;
  double e = 0.5 * p.J_l * s.omega_l * s.omega_l +
             0.5 * p.J_m * s.omega_m * s.omega_m +
             0.5 * p.k_theta * twist * twist;
  if (p.L > 0.0) e += 0.5 * p.L * s.I_m * s.I_m;
  return e;
}

ServoParams perturb_params(const ServoParams& nominal_real,
                           const PerturbationSpec& spec) {
  if (spec.eps_min_range < 0.0 || spec.eps_min_range >= 1.0 ||
      spec.eps_max_range < 0.0 || spec.eps_max_range >= 1.0 ||
      spec.J_l_range < 0.0 || spec.J_l_range >= 1.0)
    throw std::invalid_argument("perturb_params: half-widths must be in [0,1)");

  std::mt19937_64 rng(spec.seed);
  auto draw = [&rng](double half_width) {
    std::uniform_real_distribution<double> u(-half_width, half_width);
    return u(rng);
  };

  ServoParams p = nominal_real;
  p.R *= 1.0 + draw(spec.eps_min_range);
  p.rho *= 1.0 + draw(spec.eps_min_range);
  p.k_theta *= 1.0 + draw(spec.eps_min_range);
  p.J_m *= 1.0 + draw(spec.eps_max_range);
  p.beta_m *= 1.0 + draw(spec.eps_max_range);
  p.K_t *= 1.0 + draw(spec.eps_max_range);
  p.beta_l *= 1.0 + draw(spec.eps_max_range);
  p.J_l *= 1.0 + draw(spec.J_l_range);

  if (p.J_m <= 0.0 || p.J_l <= 0.0 || p.R <= 0.0 || p.rho <= 0.0 ||
      p.k_theta <= 0.0)
    throw std::runtime_error("perturb_params: nonpositive physical parameter");
  return p;
}

ContinuousModel nominal_continuous_model(const ServoParams& p,
                                         const NoiseConfig& noise) {
  // L treated as 0: T_m = K_t (V - K_t omega_m) / R.
  ContinuousModel cm;
  cm.A = MatrixXd::Zero(4, 4);
  cm.A(0, 1) = 1.0;
  cm.A(1, 0) = -p.k_theta / p.J_l;
  cm.A(1, 1) = -p.beta_l / p.J_l;
  cm.A(1, 2) = p.k_theta / (p.rho * p.J_l);
  cm.A(2, 3) = 1.0;
  cm.A(3, 0) = p.k_theta / (p.rho * p.J_m);
  cm.A(3, 2) = -p.k_theta / (p.rho * p.rho * p.J_m);
  cm.A(3, 3) = -(p.beta_m + p.K_t * p.K_t / p.R) / p.J_m;

  cm.B = MatrixXd::Zero(4, 1);
  cm.B(3, 0) = p.K_t / (p.R * p.J_m);

  cm.C = MatrixXd::Zero(1, 4);
  cm.C(0, 0) = 1.0;

  // m = n + p noise channels: the first n drive the state (accelerations
  // only), the last one the measurement. Keeps G D^T = 0.
  cm.G = MatrixXd::Zero(4, 5);
  cm.G(1, 1) = noise.load_accel_scale * noise.accel_std;
  cm.G(3, 3) = noise.accel_std;
  cm.D = MatrixXd::Zero(1, 5);
  cm.D(0, 4) = noise.meas_std;
  return cm;
}

LinearModel nominal_linear_model(const ServoParams& p, const NoiseConfig& noise,
                                 double T) {
  return zoh_discretize(nominal_continuous_model(p, noise), T);
}

ServoPlant::ServoPlant(ServoParams params, NoiseConfig noise, double T,
                       int substeps, unsigned long seed)
    : params_(params), noise_(noise), T_(T), substeps_(substeps), rng_(seed) {}

VectorXd ServoPlant::measure() {
  VectorXd y(1);
  y(0) = state_.theta_l + noise_.meas_std * gauss_(rng_);
  return y;
}

void ServoPlant::apply(const VectorXd& u) {
  state_ = integrate_step(params_, state_, u(0), T_, substeps_);
  // Discrete-time acceleration disturbance with the same intensity as the
  // nominal model's sqrt(T)-scaled process noise.
  const double scale = noise_.accel_std * std::sqrt(T_);
  state_.omega_l += noise_.load_accel_scale * scale * gauss_(rng_);
  state_.omega_m += scale * gauss_(rng_);
}

nlohmann::json to_json(const ServoParams& p) {
  return nlohmann::json{{"L", p.L},
                        {"J_m", p.J_m},
                        {"beta_m", p.beta_m},
                        {"R", p.R},
                        {"K_t", p.K_t},
                        {"rho", p.rho},
                        {"k_theta", p.k_theta},
                        {"J_l", p.J_l},
                        {"beta_l", p.beta_l},
                        {"alpha_l", p.alpha_l},
                        {"alpha_m", p.alpha_m}};
}

ServoParams servo_params_from_json(const nlohmann::json& j) {
  ServoParams p;
  p.L = j.at("L").get<double>();
  p.J_m = j.at("J_m").get<double>();
  p.beta_m = j.at("beta_m").get<double>();
  p.R = j.at("R").get<double>();
  p.K_t = j.at("K_t").get<double>();
  p.rho = j.at("rho").get<double>();
  p.k_theta = j.at("k_theta").get<double>();
  p.J_l = j.at("J_l").get<double>();
  p.beta_l = j.at("beta_l").get<double>();
  p.alpha_l = j.at("alpha_l").get<std::array<double, 3>>();
  p.alpha_m = j.at("alpha_m").get<std::array<double, 3>>();
  return p;
}

nlohmann::json to_json(const PerturbationSpec& spec) {
  return nlohmann::json{{"eps_min_range", spec.eps_min_range},
                        {"eps_max_range", spec.eps_max_range},
                        {"J_l_range", spec.J_l_range},
                        {"seed", spec.seed}};
}

PerturbationSpec perturbation_spec_from_json(const nlohmann::json& j) {
  PerturbationSpec spec;
  spec.eps_min_range = j.at("eps_min_range").get<double>();
  spec.eps_max_range = j.at("eps_max_range").get<double>();
  spec.J_l_range = j.at("J_l_range").get<double>();
  spec.seed = j.at("seed").get<unsigned long>();
  return spec;
}

}  // namespace rkmpc
