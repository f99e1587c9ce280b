#include "rkmpc/filters.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace rkmpc {

namespace {

MatrixXd symmetrize(const MatrixXd& X) { return 0.5 * (X + X.transpose()); }

double max_eigenvalue(const MatrixXd& P) {
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(symmetrize(P),
                                             Eigen::EigenvaluesOnly);
  return es.eigenvalues().maxCoeff();
}

/// V = (P^{-1} - theta I)^{-1}, computed through solves to keep symmetry.
MatrixXd inflate_covariance(const MatrixXd& P, double theta) {
  const auto n = P.rows();
  Eigen::LLT<MatrixXd> llt(symmetrize(P));
  if (llt.info() != Eigen::Success)
    throw std::domain_error("covariance not positive definite");
  const MatrixXd Pinv = llt.solve(MatrixXd::Identity(n, n));
  const MatrixXd M = symmetrize(Pinv) - theta * MatrixXd::Identity(n, n);
  Eigen::LLT<MatrixXd> llt2(symmetrize(M));
  if (llt2.info() != Eigen::Success)
    throw std::domain_error("risk parameter too large");
  return symmetrize(llt2.solve(MatrixXd::Identity(n, n)));
}

struct Gains {
  MatrixXd L;
  MatrixXd K;
  MatrixXd S;  // innovation covariance C V C^T + D D^T
};

Gains compute_gains(const LinearModel& model, const MatrixXd& V) {
  Gains g;
  g.S = symmetrize(model.C * V * model.C.transpose() +
                   model.D * model.D.transpose());
  Eigen::LDLT<MatrixXd> ldlt(g.S);
  if (ldlt.info() != Eigen::Success || !ldlt.isPositive())
    throw std::runtime_error("singular innovation covariance");
  g.L = ldlt.solve(model.C * V).transpose();
  g.K = model.A * g.L;
  return g;
}

std::pair<VectorXd, FilterState> step_with_V(const LinearModel& model,
                                             const FilterState& st,
                                             const VectorXd& y,
                                             const VectorXd& u,
                                             const MatrixXd& V, double theta) {
  const Gains g = compute_gains(model, V);
  const VectorXd innovation = y - model.C * st.x_pred;
  const VectorXd x_filt = st.x_pred + g.L * innovation;

  FilterState next;
  next.x_pred = model.A * st.x_pred + g.K * innovation + model.B * u;
  next.P = symmetrize(model.A * V * model.A.transpose() -
                      g.K * g.S * g.K.transpose() +
                      model.G * model.G.transpose());
  // The carried V, theta and gains are the ones used at the current step.
  next.V = V;
  next.theta = theta;
  next.L = g.L;
  next.K = g.K;
  next.t = st.t + 1;
  return {x_filt, next};
}

}  // namespace

std::string FilterVariant::name() const {
  switch (kind) {
    case FilterKind::Standard:
      return "standard";
    case FilterKind::Robust:
      return "robust";
    case FilterKind::RiskSensitive:
      return "risk_sensitive";
    case FilterKind::RiskSensitiveTau:
      return "risk_sensitive_tau";
  }
  return "unknown";
}

FilterState make_initial_state(const VectorXd& x0_mean, const MatrixXd& P0) {
  FilterState st;
  st.x_pred = x0_mean;
  st.P = symmetrize(P0);
  st.V = st.P;
  st.theta = 0.0;
  st.t = 0;
  return st;
}

double kl_gaussian(const GaussianBelief& f_tilde, const GaussianBelief& f) {
  const auto d = f.mean.size();
  if (f_tilde.mean.size() != d || f.cov.rows() != d || f_tilde.cov.rows() != d)
    throw std::invalid_argument("kl_gaussian: dimension mismatch");

  Eigen::LDLT<MatrixXd> ldlt(symmetrize(f.cov));
  if (ldlt.info() != Eigen::Success || !ldlt.isPositive())
    throw std::domain_error("kl_gaussian: reference covariance singular");

  const double logdet_f = ldlt.vectorD().array().log().sum();
  Eigen::LDLT<MatrixXd> ldlt_t(symmetrize(f_tilde.cov));
  const double logdet_tilde = ldlt_t.vectorD().array().log().sum();

  const VectorXd dm = f.mean - f_tilde.mean;
  const double trace_term = ldlt.solve(f_tilde.cov).trace();
  const double quad = dm.dot(ldlt.solve(dm));

  const double div = 0.5 * (trace_term - static_cast<double>(d) + quad +
                            logdet_f - logdet_tilde);
  if (!std::isfinite(div))
    throw std::runtime_error("kl_gaussian: non-finite result");
  return div;
}

double kl_radius(const MatrixXd& P, double theta) {
  const auto n = P.rows();
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(symmetrize(P),
                                             Eigen::EigenvaluesOnly);
  const VectorXd lam = es.eigenvalues();
  double value = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double w = 1.0 - theta * lam(i);
    if (w <= 0.0)
      throw std::domain_error("kl_radius: I - theta P not positive definite");
    value += std::log(w) + 1.0 / w;
  }
  return value - static_cast<double>(n);
}

double solve_theta(const MatrixXd& P, double c, double eps) {
  if (c <= 0.0) throw std::invalid_argument("solve_theta: c must be > 0");
  const double lambda = max_eigenvalue(P);
  double lo = eps;
  double hi = 1.0 / lambda - eps;
  if (hi <= lo) throw std::domain_error("solve_theta: degenerate bracket");

  if (kl_radius(P, hi) < c)
    throw std::domain_error("tolerance out of range");
  if (kl_radius(P, lo) > c) return lo;

  while (hi - lo > eps) {
    const double mid = 0.5 * (lo + hi);
    if (kl_radius(P, mid) < c)
      lo = mid;
    else
      hi = mid;
  }
  double theta = 0.5 * (lo + hi);

  // Newton polish; the bisection bracket guarantees a good starting point.
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(symmetrize(P),
                                             Eigen::EigenvaluesOnly);
  const VectorXd lam = es.eigenvalues();
  for (int it = 0; it < 4; ++it) {
    double g = -c;
    double dg = 0.0;
    for (Eigen::Index i = 0; i < lam.size(); ++i) {
      const double w = 1.0 - theta * lam(i);
      g += std::log(w) + 1.0 / w - 1.0;
      dg += theta * lam(i) * lam(i) / (w * w);
    }
    if (dg <= 0.0) break;
    const double step = g / dg;
    const double cand = theta - step;
    if (cand <= 0.0 || cand >= 1.0 / lambda) break;
    theta = cand;
  }
  return theta;
}

std::pair<VectorXd, FilterState> kalman_step(const LinearModel& model,
                                             const FilterState& st,
                                             const VectorXd& y,
                                             const VectorXd& u) {
  return step_with_V(model, st, y, u, st.P, 0.0);
}

std::pair<VectorXd, FilterState> robust_step(const LinearModel& model,
                                             const FilterState& st,
                                             const VectorXd& y,
                                             const VectorXd& u, double c) {
  const double theta = solve_theta(st.P, c);
  const MatrixXd V = inflate_covariance(st.P, theta);
  return step_with_V(model, st, y, u, V, theta);
}

std::pair<VectorXd, FilterState> risk_sensitive_step(const LinearModel& model,
                                                     const FilterState& st,
                                                     const VectorXd& y,
                                                     const VectorXd& u,
                                                     double theta_bar) {
  if (theta_bar * max_eigenvalue(st.P) >= 1.0)
    throw std::domain_error("risk parameter too large");
  const MatrixXd V =
      theta_bar > 0.0 ? inflate_covariance(st.P, theta_bar) : st.P;
  return step_with_V(model, st, y, u, V, theta_bar);
}

MatrixXd tau_divergence_V(const MatrixXd& P, double theta_bar) {
  Eigen::LLT<MatrixXd> llt(symmetrize(P));
  if (llt.info() != Eigen::Success)
    throw std::domain_error("tau_divergence_V: P not positive definite");
  const MatrixXd F = llt.matrixL();
  const MatrixXd S = symmetrize(F.transpose() * F);
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(S);
  const MatrixXd expS =
      es.eigenvectors() *
      (theta_bar * es.eigenvalues().array()).exp().matrix().asDiagonal() *
      es.eigenvectors().transpose();
  return symmetrize(F * expS * F.transpose());
}

std::pair<VectorXd, FilterState> filter_step(const LinearModel& model,
                                             const FilterVariant& variant,
                                             const FilterState& st,
                                             const VectorXd& y,
                                             const VectorXd& u) {
  switch (variant.kind) {
    case FilterKind::Standard:
      return kalman_step(model, st, y, u);
    case FilterKind::Robust:
      return robust_step(model, st, y, u, variant.c);
    case FilterKind::RiskSensitive:
      return risk_sensitive_step(model, st, y, u, variant.theta_bar);
    case FilterKind::RiskSensitiveTau: {
      const MatrixXd V = tau_divergence_V(st.P, variant.theta_bar);
      return step_with_V(model, st, y, u, V, variant.theta_bar);
    }
  }
  throw std::logic_error("unknown filter variant");
}

GaussianBelief JointGaussian::assemble() const {
  const auto nx = m_x.size();
  const auto ny = m_y.size();
  GaussianBelief b;
  b.mean.resize(nx + ny);
  b.mean << m_x, m_y;
  b.cov.resize(nx + ny, nx + ny);
  b.cov << K_x, K_xy, K_xy.transpose(), K_y;
  return b;
}

StaticRobustResult static_robust_update(const JointGaussian& joint, double c) {
  Eigen::LDLT<MatrixXd> ldlt(symmetrize(joint.K_y));
  if (ldlt.info() != Eigen::Success || !ldlt.isPositive())
    throw std::domain_error("static_robust_update: K_y singular");

  StaticRobustResult out;
  out.gain = ldlt.solve(joint.K_xy.transpose()).transpose();
  out.offset = joint.m_x - out.gain * joint.m_y;
  out.P = symmetrize(joint.K_x - out.gain * joint.K_xy.transpose());
  // kl_radius is twice the Gaussian KL divergence of the induced joint (the
  // 1/2 of the closed form cancels against nothing there), so meeting a KL
  // budget of c requires the root of kl_radius at 2c.
  out.theta = solve_theta(out.P, 2.0 * c);
  out.V = inflate_covariance(out.P, out.theta);

  out.tilde = joint;
  out.tilde.K_x = symmetrize(out.V + out.gain * joint.K_xy.transpose());
  return out;
}

namespace {

int numerical_rank(const MatrixXd& M) {
  Eigen::JacobiSVD<MatrixXd> svd(M);
  const auto sv = svd.singularValues();
  if (sv.size() == 0) return 0;
  const double thresh = sv(0) * std::max(M.rows(), M.cols()) *
                        std::numeric_limits<double>::epsilon();
  int rank = 0;
  for (Eigen::Index i = 0; i < sv.size(); ++i)
    if (sv(i) > thresh) ++rank;
  return rank;
}

}  // namespace

SteadyStateResult steady_state(const LinearModel& model,
                               const FilterVariant& variant,
                               const MatrixXd& P0, int max_iters, double tol) {
  const auto n = model.n();
  SteadyStateResult out;

  {
    MatrixXd ctrb(n, n * model.m());
    MatrixXd blk = model.G;
    for (Eigen::Index i = 0; i < n; ++i) {
      ctrb.middleCols(i * model.m(), model.m()) = blk;
      blk = model.A * blk;
    }
    if (numerical_rank(ctrb) < n)
      out.warnings.push_back("(A, G) not reachable");

    MatrixXd obsv(n * model.p(), n);
    MatrixXd row = model.C;
    for (Eigen::Index i = 0; i < n; ++i) {
      obsv.middleRows(i * model.p(), model.p()) = row;
      row = row * model.A;
    }
    if (numerical_rank(obsv) < n)
      out.warnings.push_back("(A, C) not observable");
  }

  MatrixXd P = symmetrize(P0);
  double theta = 0.0;
  MatrixXd V = P;
  for (int it = 0; it < max_iters; ++it) {
    switch (variant.kind) {
      case FilterKind::Standard:
        theta = 0.0;
        V = P;
        break;
      case FilterKind::Robust:
        theta = solve_theta(P, variant.c);
        V = inflate_covariance(P, theta);
        break;
      case FilterKind::RiskSensitive:
        theta = variant.theta_bar;
        V = theta > 0.0 ? inflate_covariance(P, theta) : P;
        break;
      case FilterKind::RiskSensitiveTau:
        theta = variant.theta_bar;
        V = tau_divergence_V(P, theta);
        break;
    }
    const Gains g = compute_gains(model, V);
    const MatrixXd Pnext =
        symmetrize(model.A * V * model.A.transpose() -
                   g.K * g.S * g.K.transpose() +
                   model.G * model.G.transpose());
    const double delta = (Pnext - P).cwiseAbs().maxCoeff();
    P = Pnext;
    out.iterations = it + 1;
    if (delta < tol) {
      out.converged = true;
      break;
    }
  }

  out.P = P;
  out.theta = theta;
  out.V = V;
  const Gains g = compute_gains(model, V);
  out.L = g.L;
  out.K = g.K;
  out.spectral_radius =
      (model.A - out.K * model.C).eigenvalues().cwiseAbs().maxCoeff();
  return out;
}

double suggest_tolerance(
    const std::vector<std::pair<GaussianBelief, GaussianBelief>>& lf_trajectory,
    std::size_t t_max) {
  if (lf_trajectory.empty())
    throw std::invalid_argument("suggest_tolerance: empty trajectory");
  const std::size_t count = std::min(t_max, lf_trajectory.size());
  if (count == 0)
    throw std::invalid_argument("suggest_tolerance: t_max must be positive");
  double acc = 0.0;
  for (std::size_t i = 0; i < count; ++i)
    acc += kl_gaussian(lf_trajectory[i].first, lf_trajectory[i].second);
  return acc / static_cast<double>(count);
}

std::string filter_trace_csv(const std::vector<FilterState>& trace) {
  std::ostringstream os;
  os.precision(15);
  os << "t";
  if (!trace.empty()) {
    const auto n = trace.front().x_pred.size();
    for (Eigen::Index i = 0; i < n; ++i) os << ",x_pred_" << i;
    for (Eigen::Index i = 0; i < n; ++i) os << ",P_" << i << i;
    for (Eigen::Index i = 0; i < n; ++i) os << ",V_" << i << i;
    os << ",theta,L_norm,K_norm";
  }
  os << "\n";
  for (const auto& st : trace) {
    os << st.t;
    for (Eigen::Index i = 0; i < st.x_pred.size(); ++i)
      os << "," << st.x_pred(i);
    for (Eigen::Index i = 0; i < st.P.rows(); ++i) os << "," << st.P(i, i);
    for (Eigen::Index i = 0; i < st.V.rows(); ++i) os << "," << st.V(i, i);
    os << "," << st.theta;
    os << "," << (st.L.size() ? st.L.norm() : 0.0);
    os << "," << (st.K.size() ? st.K.norm() : 0.0);
    os << "\n";
  }
  return os.str();
}

}  // namespace rkmpc
