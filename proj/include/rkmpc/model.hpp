#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "json.hpp"

namespace rkmpc {

using Eigen::MatrixXd;
using Eigen::VectorXd;

/// Discrete-time state-space model
///   x_{t+1} = A x_t + B u_t + G v_t
///   y_t     = C x_t + D v_t
/// with v_t white Gaussian, E[v v^T] = I. State noise and measurement noise
/// are assumed independent, i.e. G D^T = 0.
struct LinearModel {
  MatrixXd A;  // n x n
  MatrixXd B;  // n x q
  MatrixXd C;  // p x n
  MatrixXd D;  // p x m
  MatrixXd G;  // n x m

  Eigen::Index n() const { return A.rows(); }
  Eigen::Index q() const { return B.cols(); }
  Eigen::Index p() const { return C.rows(); }
  Eigen::Index m() const { return D.cols(); }
};

/// Continuous-time counterpart, SI units.
struct ContinuousModel {
  MatrixXd A;
  MatrixXd B;
  MatrixXd C;
  MatrixXd D;
  MatrixXd G;
};

struct GaussianBelief {
  VectorXd mean;
  MatrixXd cov;
};

/// Checks dimensional consistency, G D^T = 0 and invertibility of D D^T.
/// Returns a description per violated assumption; empty means admissible.
std::vector<std::string> validate(const LinearModel& model);

/// Zero-order-hold discretization with sampling time T.
/// A = exp(Abar T), B = int_0^T exp(Abar s) ds Bbar (via the augmented
/// block-matrix exponential). Noise is mapped as G = sqrt(T) Gbar, D = Dbar.
LinearModel zoh_discretize(const ContinuousModel& cm, double T);

nlohmann::json to_json(const LinearModel& model);
LinearModel linear_model_from_json(const nlohmann::json& j);

}  // namespace rkmpc
