#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "rkmpc/filters.hpp"
#include "test_util.hpp"

using namespace rkmpc;

namespace {

GaussianBelief scalar_belief(double mean, double var) {
  GaussianBelief b;
  b.mean = VectorXd::Constant(1, mean);
  b.cov = MatrixXd::Constant(1, 1, var);
  return b;
}

LinearModel scalar_model(double a, double b, double c, double g, double d) {
  LinearModel m;
  m.A = MatrixXd::Constant(1, 1, a);
  m.B = MatrixXd::Constant(1, 1, b);
  m.C = MatrixXd::Constant(1, 1, c);
  m.G = MatrixXd::Zero(1, 2);
  m.G(0, 0) = g;
  m.D = MatrixXd::Zero(1, 2);
  m.D(0, 1) = d;
  return m;
}

// Scalar brute-force root of kl_radius(P, theta) = c by dense scan plus
// bisection refinement; independent of solve_theta.
double scan_theta(double c, const MatrixXd& P) {
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(P, Eigen::EigenvaluesOnly);
  const VectorXd lam = es.eigenvalues();
  auto g = [&lam](double theta) {
    double v = 0.0;
    for (Eigen::Index i = 0; i < lam.size(); ++i) {
      const double w = 1.0 - theta * lam(i);
      v += std::log(w) + 1.0 / w - 1.0;
    }
    return v;
  };
  const double hi0 = 1.0 / lam.maxCoeff();
  double lo = 0.0, hi = hi0 * (1.0 - 1e-12);
  // dense scan to bracket the root
  const int grid = 100000;
  for (int i = 1; i <= grid; ++i) {
    const double theta = hi0 * i / (grid + 1.0);
    if (g(theta) > c) {
      hi = theta;
      break;
    }
    lo = theta;
  }
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    if (g(mid) < c)
      lo = mid;
    else
      hi = mid;
  }
  return 0.5 * (lo + hi);
}

}  // namespace

TEST_CASE("kl_gaussian is zero for identical densities") {
  std::mt19937_64 rng(2);
  GaussianBelief f;
  f.mean = testutil::random_matrix(4, 1, rng);
  f.cov = testutil::random_spd(4, rng);
  CHECK(kl_gaussian(f, f) == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("kl_gaussian scalar closed forms") {
  CHECK(kl_gaussian(scalar_belief(0, 2), scalar_belief(0, 1)) ==
        doctest::Approx(0.5 * (2.0 - 1.0 - std::log(2.0))).epsilon(1e-12));
  CHECK(kl_gaussian(scalar_belief(1, 1), scalar_belief(0, 1)) ==
        doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("kl_gaussian rejects singular reference covariance") {
  CHECK_THROWS(kl_gaussian(scalar_belief(0, 1), scalar_belief(0, 0)));
}

TEST_CASE("kl_radius at zero and scalar values") {
  const MatrixXd P1 = MatrixXd::Constant(1, 1, 1.0);
  CHECK(kl_radius(P1, 0.0) == doctest::Approx(0.0));
  CHECK(kl_radius(P1, 0.5) ==
        doctest::Approx(std::log(0.5) + 2.0 - 1.0).epsilon(1e-12));
  CHECK(kl_radius(MatrixXd::Identity(2, 2), 0.5) ==
        doctest::Approx(2.0 * (std::log(0.5) + 1.0)).epsilon(1e-12));
}

TEST_CASE("kl_radius rejects theta outside the domain") {
  CHECK_THROWS(kl_radius(MatrixXd::Constant(1, 1, 2.0), 0.5));
}

TEST_CASE("kl_radius is strictly increasing in theta") {
  std::mt19937_64 rng(13);
  for (int trial = 0; trial < 100; ++trial) {
    const int n = 1 + static_cast<int>(rng() % 6);
    const MatrixXd P = testutil::random_spd(n, rng);
    const double hi = 1.0 / Eigen::SelfAdjointEigenSolver<MatrixXd>(
                                P, Eigen::EigenvaluesOnly)
                                .eigenvalues()
                                .maxCoeff();
    double prev = 0.0;
    for (int k = 1; k <= 20; ++k) {
      const double theta = hi * k / 21.0;
      const double val = kl_radius(P, theta);
      CHECK(val > prev);
      prev = val;
    }
  }
}

TEST_CASE("solve_theta: tiny budget gives tiny theta") {
  std::mt19937_64 rng(17);
  const MatrixXd P = testutil::random_spd(3, rng);
  CHECK(solve_theta(P, 1e-12) <= 1e-5);
}

TEST_CASE("solve_theta scalar oracle") {
  const MatrixXd P = MatrixXd::Constant(1, 1, 1.0);
  const double theta = solve_theta(P, 0.1);
  CHECK(theta == doctest::Approx(scan_theta(0.1, P)).epsilon(1e-6));
  CHECK(theta == doctest::Approx(0.3404).epsilon(1e-3));
}

TEST_CASE("solve_theta 2x2 oracle") {
  const MatrixXd P = 2.0 * MatrixXd::Identity(2, 2);
  const double theta = solve_theta(P, 0.1);
  CHECK(theta == doctest::Approx(scan_theta(0.1, P)).epsilon(1e-6));
}

TEST_CASE("solve_theta signals unreachable tolerance") {
  const MatrixXd P = MatrixXd::Constant(1, 1, 1.0);
  CHECK_THROWS_WITH_AS(solve_theta(P, 1e12), "tolerance out of range",
                       std::domain_error);
}

TEST_CASE("solve_theta residual on random SPD matrices") {
  std::mt19937_64 rng(19);
  for (int trial = 0; trial < 100; ++trial) {
    const int n = 1 + static_cast<int>(rng() % 6);
    const MatrixXd P = testutil::random_spd(n, rng);
    for (double c : {1e-4, 1e-2, 1.0}) {
      const double theta = solve_theta(P, c, 1e-9);
      CHECK(std::abs(kl_radius(P, theta) - c) <= 1e-7);
    }
  }
}

TEST_CASE("kalman_step with zero innovation propagates the prediction") {
  const LinearModel m = scalar_model(0.8, 1.0, 1.0, 1.0, 1.0);
  FilterState st = make_initial_state(VectorXd::Constant(1, 2.0),
                                      MatrixXd::Constant(1, 1, 1.0));
  const VectorXd y = VectorXd::Constant(1, 2.0);  // C x_pred = y
  const VectorXd u = VectorXd::Constant(1, 0.5);
  auto [x_filt, next] = kalman_step(m, st, y, u);
  CHECK(x_filt(0) == doctest::Approx(2.0));
  CHECK(next.x_pred(0) == doctest::Approx(0.8 * 2.0 + 1.0 * 0.5));
}

TEST_CASE("kalman_step scalar arithmetic") {
  const LinearModel m = scalar_model(1, 1, 1, 1, 1);
  FilterState st = make_initial_state(VectorXd::Zero(1),
                                      MatrixXd::Constant(1, 1, 1.0));
  auto [x_filt, next] =
      kalman_step(m, st, VectorXd::Constant(1, 1.0), VectorXd::Zero(1));
  CHECK(next.L(0, 0) == doctest::Approx(0.5));
  CHECK(x_filt(0) == doctest::Approx(0.5));
  CHECK(next.x_pred(0) == doctest::Approx(0.5));
  CHECK(next.P(0, 0) == doctest::Approx(1.5));

  auto [x_filt2, next2] =
      kalman_step(m, st, VectorXd::Constant(1, 1.0), VectorXd::Constant(1, 2.0));
  CHECK(x_filt2(0) == doctest::Approx(0.5));
  CHECK(next2.x_pred(0) == doctest::Approx(2.5));
  CHECK(next2.P(0, 0) == doctest::Approx(next.P(0, 0)));
}

TEST_CASE("robust_step degenerates to the Kalman step as c -> 0") {
  const LinearModel m = scalar_model(1, 1, 1, 1, 1);
  FilterState st = make_initial_state(VectorXd::Zero(1),
                                      MatrixXd::Constant(1, 1, 1.0));
  const VectorXd y = VectorXd::Constant(1, 1.0);
  auto [xk, nk] = kalman_step(m, st, y, VectorXd::Zero(1));
  auto [xr, nr] = robust_step(m, st, y, VectorXd::Zero(1), 1e-12);
  CHECK(std::abs(xk(0) - xr(0)) < 1e-6);
  CHECK(std::abs(nk.x_pred(0) - nr.x_pred(0)) < 1e-6);
  CHECK(std::abs(nk.P(0, 0) - nr.P(0, 0)) < 1e-6);
}

TEST_CASE("robust_step scalar composition with the theta oracle") {
  const LinearModel m = scalar_model(1, 1, 1, 1, 1);
  FilterState st = make_initial_state(VectorXd::Zero(1),
                                      MatrixXd::Constant(1, 1, 1.0));
  auto [x_filt, next] =
      robust_step(m, st, VectorXd::Constant(1, 1.0), VectorXd::Zero(1), 0.1);
  const double theta = scan_theta(0.1, st.P);
  const double V = 1.0 / (1.0 - theta);
  CHECK(next.theta == doctest::Approx(theta).epsilon(1e-6));
  CHECK(next.V(0, 0) == doctest::Approx(V).epsilon(1e-6));
  CHECK(next.L(0, 0) == doctest::Approx(V / (V + 1.0)).epsilon(1e-6));
  CHECK(x_filt(0) == doctest::Approx(V / (V + 1.0)).epsilon(1e-6));
  CHECK(next.P(0, 0) ==
        doctest::Approx(V - V * V / (V + 1.0) + 1.0).epsilon(1e-6));
}

TEST_CASE("robust step: V dominates P") {
  std::mt19937_64 rng(23);
  for (int trial = 0; trial < 50; ++trial) {
    const LinearModel m = testutil::random_stable_model(4, 1, 2, rng);
    FilterState st = make_initial_state(VectorXd::Zero(4),
                                        testutil::random_spd(4, rng));
    const VectorXd y = testutil::random_matrix(2, 1, rng);
    auto [x, next] = robust_step(m, st, y, VectorXd::Zero(1), 0.05);
    const MatrixXd diff = next.V - st.P;
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(diff, Eigen::EigenvaluesOnly);
    CHECK(es.eigenvalues().minCoeff() >= -1e-10);
    // carried V satisfies the inflation identity for the P it came from
    const MatrixXd lhs =
        (st.P.inverse() - next.theta * MatrixXd::Identity(4, 4)).inverse();
    CHECK((lhs - next.V).cwiseAbs().maxCoeff() < 1e-9);
  }
}

TEST_CASE("risk_sensitive_step basics") {
  const LinearModel m = scalar_model(1, 1, 1, 1, 1);
  FilterState st = make_initial_state(VectorXd::Zero(1),
                                      MatrixXd::Constant(1, 1, 1.0));
  const VectorXd y = VectorXd::Constant(1, 0.7);
  auto [xk, nk] = kalman_step(m, st, y, VectorXd::Zero(1));
  auto [xr, nr] = risk_sensitive_step(m, st, y, VectorXd::Zero(1), 0.0);
  CHECK(xk(0) == doctest::Approx(xr(0)));
  CHECK(nk.P(0, 0) == doctest::Approx(nr.P(0, 0)));

  auto [x2, n2] = risk_sensitive_step(m, st, y, VectorXd::Zero(1), 0.5);
  CHECK(n2.V(0, 0) == doctest::Approx(2.0));

  FilterState st2 = make_initial_state(VectorXd::Zero(1),
                                       MatrixXd::Constant(1, 1, 2.0));
  CHECK_THROWS_WITH_AS(risk_sensitive_step(m, st2, y, VectorXd::Zero(1), 0.6),
                       "risk parameter too large", std::domain_error);
}

TEST_CASE("tau_divergence_V") {
  CHECK(tau_divergence_V(MatrixXd::Constant(1, 1, 1.0), 0.0)(0, 0) ==
        doctest::Approx(1.0));
  CHECK(tau_divergence_V(MatrixXd::Constant(1, 1, 1.0), 0.1)(0, 0) ==
        doctest::Approx(std::exp(0.1)).epsilon(1e-12));
  CHECK(tau_divergence_V(MatrixXd::Constant(1, 1, 4.0), 0.1)(0, 0) ==
        doctest::Approx(4.0 * std::exp(0.4)).epsilon(1e-12));
  std::mt19937_64 rng(29);
  const MatrixXd P = testutil::random_spd(4, rng);
  const MatrixXd V = tau_divergence_V(P, 2.0);  // large theta still PD
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(V, Eigen::EigenvaluesOnly);
  CHECK(es.eigenvalues().minCoeff() > 0.0);
}

TEST_CASE("filter family degeneracy over random steps") {
  std::mt19937_64 rng(31);
  int steps_checked = 0;
  while (steps_checked < 1000) {
    const int n = 2 + static_cast<int>(rng() % 5);
    const LinearModel m = testutil::random_stable_model(n, 1, 1, rng);
    FilterState s_std = make_initial_state(
        VectorXd::Zero(n), 0.2 * testutil::random_spd(n, rng));
    FilterState s_rob = s_std;
    FilterState s_rs = s_std;
    for (int k = 0; k < 20; ++k) {
      // keep innovations O(1) so the c -> 0 comparison probes the filters,
      // not the growth of the open-loop simulation
      const VectorXd y =
          m.C * s_std.x_pred + testutil::random_matrix(1, 1, rng, 0.1);
      const VectorXd u = testutil::random_matrix(1, 1, rng);
      auto [x1, n1] = kalman_step(m, s_std, y, u);
      auto [x2, n2] = robust_step(m, s_rob, y, u, 1e-12);
      auto [x3, n3] = risk_sensitive_step(m, s_rs, y, u, 0.0);
      CHECK((x1 - x2).cwiseAbs().maxCoeff() < 1e-6);
      CHECK((x1 - x3).cwiseAbs().maxCoeff() < 1e-6);
      s_std = n1;
      s_rob = n2;
      s_rs = n3;
      ++steps_checked;
    }
  }
}

TEST_CASE("gain consistency K = A L for every variant") {
  std::mt19937_64 rng(37);
  const LinearModel m = testutil::random_stable_model(3, 1, 1, rng);
  FilterState st = make_initial_state(VectorXd::Zero(3),
                                      testutil::random_spd(3, rng));
  const VectorXd y = testutil::random_matrix(1, 1, rng);
  const VectorXd u = VectorXd::Zero(1);
  for (const auto& variant :
       {FilterVariant::standard(), FilterVariant::robust(0.05),
        FilterVariant::risk_sensitive(0.01),
        FilterVariant::risk_sensitive_tau(0.01)}) {
    auto [x, next] = filter_step(m, variant, st, y, u);
    CHECK((next.K - m.A * next.L).cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("input enters the recursion through the mean only") {
  std::mt19937_64 rng(41);
  const LinearModel m = testutil::random_stable_model(3, 2, 1, rng);
  FilterState a = make_initial_state(VectorXd::Zero(3),
                                     testutil::random_spd(3, rng));
  FilterState b = a;
  VectorXd forced = VectorXd::Zero(3);
  for (int k = 0; k < 10; ++k) {
    const VectorXd y = testutil::random_matrix(1, 1, rng);
    const VectorXd u = testutil::random_matrix(2, 1, rng);
    const VectorXd shift = testutil::random_matrix(2, 1, rng);
    auto [xa, na] = robust_step(m, a, y, u, 0.05);
    auto [xb, nb] = robust_step(m, b, y, u + shift, 0.05);
    // prediction differences close the loop through the innovation, so they
    // propagate through A - K C rather than A alone
    forced = (m.A - na.K * m.C) * forced + m.B * shift;
    CHECK((nb.x_pred - na.x_pred - forced).cwiseAbs().maxCoeff() < 1e-10);
    CHECK((na.P - nb.P).cwiseAbs().maxCoeff() == 0.0);
    CHECK((na.V - nb.V).cwiseAbs().maxCoeff() == 0.0);
    CHECK(na.theta == nb.theta);
    CHECK((na.L - nb.L).cwiseAbs().maxCoeff() == 0.0);
    CHECK((na.K - nb.K).cwiseAbs().maxCoeff() == 0.0);
    a = na;
    b = nb;
  }
}

TEST_CASE("static_robust_update: limits and structure") {
  std::mt19937_64 rng(43);
  const int nx = 3, ny = 2;
  const MatrixXd Kz = testutil::random_spd(nx + ny, rng);
  JointGaussian joint;
  joint.m_x = testutil::random_matrix(nx, 1, rng);
  joint.m_y = testutil::random_matrix(ny, 1, rng);
  joint.K_x = Kz.topLeftCorner(nx, nx);
  joint.K_xy = Kz.topRightCorner(nx, ny);
  joint.K_y = Kz.bottomRightCorner(ny, ny);

  SUBCASE("c -> 0 keeps the nominal density") {
    const auto res = static_robust_update(joint, 1e-12);
    CHECK((res.V - res.P).cwiseAbs().maxCoeff() < 1e-4);
    CHECK((res.tilde.K_x - joint.K_x).cwiseAbs().maxCoeff() < 1e-4);
  }
  SUBCASE("KL divergence of the least-favorable joint equals c") {
    for (double c : {1e-2, 1e-1}) {
      const auto res = static_robust_update(joint, c);
      CHECK(kl_gaussian(res.tilde.assemble(), joint.assemble()) ==
            doctest::Approx(c).epsilon(1e-8));
    }
  }
  SUBCASE("uncorrelated blocks give a constant estimator") {
    JointGaussian j2 = joint;
    j2.K_xy.setZero();
    const auto res = static_robust_update(j2, 0.1);
    CHECK(res.gain.cwiseAbs().maxCoeff() < 1e-14);
    CHECK((res.offset - j2.m_x).cwiseAbs().maxCoeff() < 1e-14);
    CHECK((res.P - j2.K_x).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("steady_state: scalar fixed-point oracle") {
  const LinearModel m = scalar_model(0.5, 0.0, 1.0, 1.0, 1.0);
  const auto ss = steady_state(m, FilterVariant::standard(),
                               MatrixXd::Constant(1, 1, 1.0));
  CHECK(ss.converged);
  // independent scalar iteration of P = 0.25 P - 0.25 P^2/(P+1) + 1
  double P = 1.0;
  for (int i = 0; i < 10000; ++i)
    P = 0.25 * P - 0.25 * P * P / (P + 1.0) + 1.0;
  CHECK(ss.P(0, 0) == doctest::Approx(P).epsilon(1e-9));
  CHECK(ss.spectral_radius < 1.0);
}

TEST_CASE("steady_state: tiny c matches the standard filter") {
  const LinearModel m = scalar_model(0.5, 0.0, 1.0, 1.0, 1.0);
  const auto s1 = steady_state(m, FilterVariant::standard(),
                               MatrixXd::Constant(1, 1, 1.0));
  const auto s2 = steady_state(m, FilterVariant::robust(1e-12),
                               MatrixXd::Constant(1, 1, 1.0));
  CHECK(std::abs(s1.P(0, 0) - s2.P(0, 0)) < 1e-6);
}

TEST_CASE("steady_state surfaces an unreachable tolerance") {
  const LinearModel m = scalar_model(0.5, 0.0, 1.0, 1.0, 1.0);
  CHECK_THROWS_WITH_AS(steady_state(m, FilterVariant::robust(1e12),
                                    MatrixXd::Constant(1, 1, 1.0)),
                       "tolerance out of range", std::domain_error);
}

TEST_CASE("steady_state warns on unobservable pairs") {
  LinearModel m = scalar_model(0.5, 0.0, 1.0, 1.0, 1.0);
  m.C.setZero();  // unobservable, but DD' still invertible
  const auto ss = steady_state(m, FilterVariant::standard(),
                               MatrixXd::Constant(1, 1, 1.0));
  bool found = false;
  for (const auto& w : ss.warnings)
    if (w.find("observable") != std::string::npos) found = true;
  CHECK(found);
}

TEST_CASE("suggest_tolerance") {
  GaussianBelief a = scalar_belief(0, 1);
  CHECK(suggest_tolerance({{a, a}, {a, a}}, 2) == doctest::Approx(0.0));
  // per-step divergences 0.5 and kl(N(0,2)||N(0,1))
  const GaussianBelief b = scalar_belief(1, 1);
  const GaussianBelief c = scalar_belief(0, 2);
  const double d1 = kl_gaussian(b, a);
  const double d2 = kl_gaussian(c, a);
  CHECK(suggest_tolerance({{b, a}, {c, a}}, 2) ==
        doctest::Approx(0.5 * (d1 + d2)));
  CHECK(suggest_tolerance({{b, a}, {c, a}}, 1) == doctest::Approx(d1));
  CHECK_THROWS(suggest_tolerance({}, 5));
}

TEST_CASE("filter trace CSV has the expected header") {
  FilterState st = make_initial_state(VectorXd::Zero(2),
                                      MatrixXd::Identity(2, 2));
  const std::string csv = filter_trace_csv({st});
  CHECK(csv.find("t,x_pred_0,x_pred_1") == 0);
  CHECK(csv.find("theta") != std::string::npos);
}
