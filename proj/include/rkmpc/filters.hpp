#pragma once

#include <Eigen/Dense>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "rkmpc/model.hpp"

namespace rkmpc {

enum class FilterKind { Standard, Robust, RiskSensitive, RiskSensitiveTau };

/// One-step estimator family. The robust variant solves, at each step, a
/// mini-max estimation problem over a Kullback-Leibler ball of radius c
/// around the nominal conditional density; the risk-sensitive variants use
/// a fixed risk parameter theta_bar instead.
struct FilterVariant {
  FilterKind kind = FilterKind::Standard;
  double c = 0.0;          // KL tolerance (Robust)
  double theta_bar = 0.0;  // risk parameter (RiskSensitive / Tau)

  static FilterVariant standard() { return {FilterKind::Standard, 0.0, 0.0}; }
  static FilterVariant robust(double c) {
    return {FilterKind::Robust, c, 0.0};
  }
  static FilterVariant risk_sensitive(double theta_bar) {
    return {FilterKind::RiskSensitive, 0.0, theta_bar};
  }
  static FilterVariant risk_sensitive_tau(double theta_bar) {
    return {FilterKind::RiskSensitiveTau, 0.0, theta_bar};
  }
  std::string name() const;
};

struct FilterState {
  VectorXd x_pred;  // predicted mean x_{t|t-1}
  MatrixXd P;       // nominal prior covariance
  MatrixXd V;       // least-favorable covariance (== P for Standard)
  double theta = 0.0;
  MatrixXd L;  // filtered gain
  MatrixXd K;  // predictor gain, K = A L
  int t = 0;
};

FilterState make_initial_state(const VectorXd& x0_mean, const MatrixXd& P0);

/// KL divergence D(f_tilde || f) between two Gaussians of equal dimension.
double kl_gaussian(const GaussianBelief& f_tilde, const GaussianBelief& f);

/// Left-hand side of the tolerance equation as a function of theta:
///   log det(I - theta P) + tr[(I - theta P)^{-1}] - n.
/// Equals the KL divergence between the least-favorable and nominal
/// conditional densities induced by theta. Strictly increasing and convex on
/// [0, 1/lambda_max(P)).
double kl_radius(const MatrixXd& P, double theta);

/// Solves kl_radius(P, theta) = c by bisection on (0, 1/lambda_max(P)).
/// Throws std::domain_error("tolerance out of range") when c is unreachable.
double solve_theta(const MatrixXd& P, double c, double eps = 1e-9);

/// One step of the standard Kalman filter (measurement update, control input,
/// time update). Returns the filtered estimate x_{t|t} and the next state.
std::pair<VectorXd, FilterState> kalman_step(const LinearModel& model,
                                             const FilterState& st,
                                             const VectorXd& y,
                                             const VectorXd& u);

/// Robust step: theta_t solves the tolerance equation for budget c,
/// V_t = (P_t^{-1} - theta_t I)^{-1}, and the Kalman recursion runs with V_t
/// in place of P_t in the gain and Riccati update.
std::pair<VectorXd, FilterState> robust_step(const LinearModel& model,
                                             const FilterState& st,
                                             const VectorXd& y,
                                             const VectorXd& u, double c);

/// Risk-sensitive step: same recursion with fixed theta_bar. Throws
/// std::domain_error("risk parameter too large") when I - theta_bar P is not
/// positive definite.
std::pair<VectorXd, FilterState> risk_sensitive_step(const LinearModel& model,
                                                     const FilterState& st,
                                                     const VectorXd& y,
                                                     const VectorXd& u,
                                                     double theta_bar);

/// Tau-divergence (tau = 1) covariance inflation V = F exp(theta_bar F^T F)
/// F^T with P = F F^T the lower Cholesky factor. PD for any theta_bar >= 0.
MatrixXd tau_divergence_V(const MatrixXd& P, double theta_bar);

/// Variant-dispatched step.
std::pair<VectorXd, FilterState> filter_step(const LinearModel& model,
                                             const FilterVariant& variant,
                                             const FilterState& st,
                                             const VectorXd& y,
                                             const VectorXd& u);

/// Joint Gaussian over z = [x^T y^T]^T in partitioned form.
struct JointGaussian {
  VectorXd m_x;
  VectorXd m_y;
  MatrixXd K_x;
  MatrixXd K_xy;
  MatrixXd K_y;

  GaussianBelief assemble() const;
};

/// Static (one-shot) robust estimation: the Bayes estimator of x given y
/// together with the least-favorable joint density at KL radius c.
struct StaticRobustResult {
  MatrixXd gain;     // K_xy K_y^{-1}
  VectorXd offset;   // estimate = offset + gain * y
  MatrixXd P;        // nominal posterior covariance
  MatrixXd V;        // least-favorable posterior covariance
  double theta = 0.0;
  JointGaussian tilde;  // least-favorable joint
};

StaticRobustResult static_robust_update(const JointGaussian& joint, double c);

struct SteadyStateResult {
  MatrixXd P;
  MatrixXd V;
  double theta = 0.0;
  MatrixXd L;
  MatrixXd K;
  bool converged = false;
  int iterations = 0;
  double spectral_radius = 0.0;  // of A - K C
  std::vector<std::string> warnings;  // reachability/observability advisories
};

/// Iterates the variant's covariance recursion to a fixed point. Emits
/// advisory warnings when (A, G) is not reachable or (A, C) not observable.
SteadyStateResult steady_state(const LinearModel& model,
                               const FilterVariant& variant,
                               const MatrixXd& P0, int max_iters = 5000,
                               double tol = 1e-10);

/// Tolerance-selection heuristic: mean KL divergence between actual and
/// nominal one-step conditional densities over the first t_max steps.
double suggest_tolerance(
    const std::vector<std::pair<GaussianBelief, GaussianBelief>>& lf_trajectory,
    std::size_t t_max);

/// CSV export of a filter trace: t, x_pred, diag(P), diag(V), theta, gain
/// norms. One row per recorded state.
std::string filter_trace_csv(const std::vector<FilterState>& trace);

}  // namespace rkmpc
