#pragma once

#include <Eigen/Dense>
#include <random>
#include <string>
#include <vector>

#include "rkmpc/filters.hpp"
#include "rkmpc/model.hpp"

namespace rkmpc {

/// Convention for the tail of the prediction matrix Theta when Hu < Hp:
/// toeplitz_zero_tail keeps the plain block-Toeplitz structure; held_input
/// additionally accumulates the effect of holding the last input beyond the
/// control horizon.
enum class ThetaConvention { toeplitz_zero_tail, held_input };

struct MpcConfig {
  int Hp = 10;  // prediction horizon
  int Hu = 3;   // control horizon, 1 <= Hu <= Hp
  MatrixXd Q;   // p x p output-error weight, applied at every step
  MatrixXd R;   // q x q input weight, positive definite
  ThetaConvention theta_convention = ThetaConvention::toeplitz_zero_tail;
  // When true, closed_loop drives the plant with the increment-form law
  // (control_law_delta); R then weights input increments, which gives the
  // loop integral action. The direct law remains the default.
  bool increment_form = false;
};

/// Stacked prediction matrices of the receding-horizon law
///   u = [I 0 ...] (Theta^T Q Theta + R)^{-1} Theta^T Q (r - Psi x).
struct PredictorMatrices {
  MatrixXd Psi;       // (p Hp) x n, rows C A^i
  MatrixXd Theta;     // (p Hp) x (q Hu), block lower-triangular
  MatrixXd Qblk;      // (p Hp) x (p Hp)
  MatrixXd Rblk;      // (q Hu) x (q Hu)
  MatrixXd gain_row;  // q x (p Hp): first block row of (Th'QTh+R)^{-1}Th'Q
  Eigen::Index n = 0, q = 0, p = 0;
  int Hp = 0, Hu = 0;
};

PredictorMatrices build_predictor(const LinearModel& model,
                                  const MpcConfig& cfg);

/// Stacked future references [r_{t+1}; ...; r_{t+Hp}].
using ReferenceWindow = VectorXd;

/// First input of the unconstrained minimizer of the stacked quadratic cost.
VectorXd control_law(const PredictorMatrices& pm, const VectorXd& x_filt,
                     const ReferenceWindow& refs);

/// Delta-u form of the law: penalizes input increments relative to the
/// previously applied input instead of the input itself. Non-default option.
VectorXd control_law_delta(const PredictorMatrices& pm, const VectorXd& x_filt,
                           const ReferenceWindow& refs, const VectorXd& u_prev);

/// Plant seen by the closed loop: measure the current output, then apply an
/// input that holds for one control interval.
class Plant {
 public:
  virtual ~Plant() = default;
  virtual VectorXd measure() = 0;
  virtual void apply(const VectorXd& u) = 0;
  virtual Eigen::Index output_dim() const = 0;
};

/// Discrete linear plant driven by the model's own noise channels. Used for
/// matched-model scenarios.
class LinearPlant : public Plant {
 public:
  LinearPlant(LinearModel model, VectorXd x0, double noise_scale,
              unsigned long seed);
  VectorXd measure() override;
  void apply(const VectorXd& u) override;
  Eigen::Index output_dim() const override { return model_.p(); }
  const VectorXd& state() const { return x_; }

 private:
  LinearModel model_;
  VectorXd x_;
  double noise_scale_;
  std::mt19937_64 rng_;
  std::normal_distribution<double> gauss_{0.0, 1.0};
  VectorXd last_noise_;
};

struct ClosedLoopResult {
  std::vector<double> time;       // seconds, t = k T
  std::vector<VectorXd> ref;      // r_t actually tracked
  std::vector<VectorXd> output;   // y_t
  std::vector<VectorXd> input;    // u_{t|t}
  std::vector<VectorXd> x_filt;   // filtered estimate
  std::vector<VectorXd> y_hat;    // C x_filt
  std::vector<double> theta;      // theta_t trace
  bool completed = true;
  int failed_step = -1;
  std::string failure;
};

/// Runs the receding-horizon loop: collect y, filter update, compute the
/// control move, apply it to the plant, filter predict. refs holds one
/// p-vector per step; windows past the end hold the last value.
ClosedLoopResult closed_loop(Plant& plant, const LinearModel& model,
                             const MpcConfig& cfg, const FilterVariant& variant,
                             const std::vector<VectorXd>& refs, int steps,
                             double T, const VectorXd& x0_mean,
                             const MatrixXd& P0);

std::string closed_loop_csv(const ClosedLoopResult& result);

}  // namespace rkmpc
