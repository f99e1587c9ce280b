#include "rkmpc/model.hpp"

#include <cmath>
#include <stdexcept>

#include <unsupported/Eigen/MatrixFunctions>

namespace rkmpc {

std::vector<std::string> validate(const LinearModel& model) {
  std::vector<std::string> violations;
  const auto n = model.n();
  const auto q = model.q();
  const auto p = model.p();
  const auto m = model.m();

  if (n < 1 || q < 1 || p < 1 || m < 1) {
    violations.push_back("dimensions must be positive");
    return violations;
  }
  if (model.A.rows() != n || model.A.cols() != n)
    violations.push_back("A must be n x n");
  if (model.B.rows() != n) violations.push_back("B must have n rows");
  if (model.C.cols() != n) violations.push_back("C must have n columns");
  if (model.D.rows() != p) violations.push_back("D must have p rows");
  if (model.G.rows() != n || model.G.cols() != m)
    violations.push_back("G must be n x m");
  if (!violations.empty()) return violations;

  if ((model.G * model.D.transpose()).cwiseAbs().maxCoeff() > 1e-12)
    violations.push_back("G·Dᵀ ≠ 0");

  const MatrixXd S = model.D * model.D.transpose();
  Eigen::FullPivLU<MatrixXd> lu(S);
  if (!lu.isInvertible()) violations.push_back("D·Dᵀ singular");

  return violations;
}

LinearModel zoh_discretize(const ContinuousModel& cm, double T) {
  if (T <= 0.0) throw std::invalid_argument("zoh_discretize: T must be > 0");
  const auto n = cm.A.rows();
  const auto q = cm.B.cols();

  // exp([A B; 0 0] T) = [exp(AT)  int_0^T exp(As) ds B; 0 I]
  MatrixXd M = MatrixXd::Zero(n + q, n + q);
  M.topLeftCorner(n, n) = cm.A;
  M.topRightCorner(n, q) = cm.B;
  const MatrixXd E = (M * T).exp();
  if (!E.allFinite())
    throw std::runtime_error("zoh_discretize: matrix exponential not finite");

  LinearModel dm;
  dm.A = E.topLeftCorner(n, n);
  dm.B = E.topRightCorner(n, q);
  dm.C = cm.C;
  dm.D = cm.D;
  dm.G = std::sqrt(T) * cm.G;
  return dm;
}

namespace {

nlohmann::json matrix_to_json(const MatrixXd& M) {
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index i = 0; i < M.rows(); ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (Eigen::Index j = 0; j < M.cols(); ++j) row.push_back(M(i, j));
    rows.push_back(row);
  }
  return rows;
}

MatrixXd matrix_from_json(const nlohmann::json& j) {
  const auto rows = j.size();
  if (rows == 0) throw std::invalid_argument("empty matrix in JSON");
  const auto cols = j.at(0).size();
  MatrixXd M(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j2 = 0; j2 < cols; ++j2)
      M(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j2)) =
          j.at(i).at(j2).get<double>();
  return M;
}

}  // namespace

nlohmann::json to_json(const LinearModel& model) {
  return nlohmann::json{{"A", matrix_to_json(model.A)},
                        {"B", matrix_to_json(model.B)},
                        {"C", matrix_to_json(model.C)},
                        {"D", matrix_to_json(model.D)},
                        {"G", matrix_to_json(model.G)},
                        {"dims",
                         {{"n", model.n()},
                          {"q", model.q()},
                          {"p", model.p()},
                          {"m", model.m()}}}};
}

LinearModel linear_model_from_json(const nlohmann::json& j) {
  LinearModel model;
  model.A = matrix_from_json(j.at("A"));
  model.B = matrix_from_json(j.at("B"));
  model.C = matrix_from_json(j.at("C"));
  model.D = matrix_from_json(j.at("D"));
  model.G = matrix_from_json(j.at("G"));
  const auto& dims = j.at("dims");
  if (model.n() != dims.at("n").get<Eigen::Index>() ||
      model.q() != dims.at("q").get<Eigen::Index>() ||
      model.p() != dims.at("p").get<Eigen::Index>() ||
      model.m() != dims.at("m").get<Eigen::Index>())
    throw std::invalid_argument("model dims do not match matrices");
  return model;
}

}  // namespace rkmpc
