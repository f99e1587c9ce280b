#include "rkmpc/mpc.hpp"

#include <sstream>
#include <stdexcept>

namespace rkmpc {

PredictorMatrices build_predictor(const LinearModel& model,
                                  const MpcConfig& cfg) {
  if (cfg.Hu < 1 || cfg.Hu > cfg.Hp)
    throw std::invalid_argument("build_predictor: need 1 <= Hu <= Hp");
  const auto n = model.n();
  const auto q = model.q();
  const auto p = model.p();
  if (cfg.Q.rows() != p || cfg.Q.cols() != p)
    throw std::invalid_argument("build_predictor: Q must be p x p");
  if (cfg.R.rows() != q || cfg.R.cols() != q)
    throw std::invalid_argument("build_predictor: R must be q x q");

  PredictorMatrices pm;
  pm.n = n;
  pm.q = q;
  pm.p = p;
  pm.Hp = cfg.Hp;
  pm.Hu = cfg.Hu;

  // Powers of A up to Hp; Psi block i (1-based) is C A^i.
  std::vector<MatrixXd> Apow(cfg.Hp + 1);
  Apow[0] = MatrixXd::Identity(n, n);
  for (int i = 1; i <= cfg.Hp; ++i) Apow[i] = model.A * Apow[i - 1];

  pm.Psi.resize(p * cfg.Hp, n);
  for (int i = 1; i <= cfg.Hp; ++i)
    pm.Psi.middleRows(p * (i - 1), p) = model.C * Apow[i];

  pm.Theta = MatrixXd::Zero(p * cfg.Hp, q * cfg.Hu);
  for (int i = 1; i <= cfg.Hp; ++i) {
    for (int j = 1; j <= std::min(i, cfg.Hu); ++j) {
      pm.Theta.block(p * (i - 1), q * (j - 1), p, q) =
          model.C * Apow[i - j] * model.B;
    }
  }
  if (cfg.theta_convention == ThetaConvention::held_input) {
    // The last commanded input is held past the control horizon; rows beyond
    // Hu accumulate its propagated effect in the last block column.
    for (int i = cfg.Hu + 1; i <= cfg.Hp; ++i) {
      MatrixXd acc = MatrixXd::Zero(p, q);
      for (int k = 0; k <= i - cfg.Hu; ++k) acc += model.C * Apow[k] * model.B;
      pm.Theta.block(p * (i - 1), q * (cfg.Hu - 1), p, q) = acc;
    }
  }

  pm.Qblk = MatrixXd::Zero(p * cfg.Hp, p * cfg.Hp);
  for (int i = 0; i < cfg.Hp; ++i)
    pm.Qblk.block(p * i, p * i, p, p) = cfg.Q;
  pm.Rblk = MatrixXd::Zero(q * cfg.Hu, q * cfg.Hu);
  for (int i = 0; i < cfg.Hu; ++i)
    pm.Rblk.block(q * i, q * i, q, q) = cfg.R;

  const MatrixXd H =
      pm.Theta.transpose() * pm.Qblk * pm.Theta + pm.Rblk;
  Eigen::LLT<MatrixXd> llt(0.5 * (H + H.transpose()));
  if (llt.info() != Eigen::Success)
    throw std::runtime_error("build_predictor: Theta'QTheta + R not PD");
  const MatrixXd full_gain = llt.solve(pm.Theta.transpose() * pm.Qblk);
  pm.gain_row = full_gain.topRows(q);
  return pm;
}

VectorXd control_law(const PredictorMatrices& pm, const VectorXd& x_filt,
                     const ReferenceWindow& refs) {
  if (x_filt.size() != pm.n || refs.size() != pm.p * pm.Hp)
    throw std::invalid_argument("control_law: dimension mismatch");
  return pm.gain_row * (refs - pm.Psi * x_filt);
}

VectorXd control_law_delta(const PredictorMatrices& pm, const VectorXd& x_filt,
                           const ReferenceWindow& refs,
                           const VectorXd& u_prev) {
  // u = 1 (x) u_prev + S du with S the block lower-triangular matrix of
  // identities; minimizing over du penalizes the increments.
  const auto q = pm.q;
  MatrixXd S = MatrixXd::Zero(q * pm.Hu, q * pm.Hu);
  for (int i = 0; i < pm.Hu; ++i)
    for (int j = 0; j <= i; ++j)
      S.block(q * i, q * j, q, q) = MatrixXd::Identity(q, q);
  VectorXd u_hold(q * pm.Hu);
  for (int i = 0; i < pm.Hu; ++i) u_hold.segment(q * i, q) = u_prev;

  const VectorXd err = refs - pm.Psi * x_filt - pm.Theta * u_hold;
  const MatrixXd ThS = pm.Theta * S;
  const MatrixXd H = ThS.transpose() * pm.Qblk * ThS + pm.Rblk;
  Eigen::LLT<MatrixXd> llt(0.5 * (H + H.transpose()));
  const VectorXd du = llt.solve(ThS.transpose() * (pm.Qblk * err));
  return u_prev + du.head(q);
}

LinearPlant::LinearPlant(LinearModel model, VectorXd x0, double noise_scale,
                         unsigned long seed)
    : model_(std::move(model)),
      x_(std::move(x0)),
      noise_scale_(noise_scale),
      rng_(seed) {
  last_noise_ = VectorXd::Zero(model_.m());
}

VectorXd LinearPlant::measure() {
  VectorXd v(model_.m());
  for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = gauss_(rng_);
  last_noise_ = v;
  return model_.C * x_ + noise_scale_ * (model_.D * v);
}

void LinearPlant::apply(const VectorXd& u) {
  // Reuse the noise vector drawn at measurement time so state and output
  // noise channels stay aligned with the model's single v_t.
  x_ = model_.A * x_ + model_.B * u + noise_scale_ * (model_.G * last_noise_);
}

namespace {

ReferenceWindow make_window(const std::vector<VectorXd>& refs, int t, int Hp,
                            Eigen::Index p) {
  ReferenceWindow w(p * Hp);
  for (int k = 1; k <= Hp; ++k) {
    const std::size_t idx =
        std::min<std::size_t>(t + k, refs.empty() ? 0 : refs.size() - 1);
    w.segment(p * (k - 1), p) = refs[idx];
  }
  return w;
}

}  // namespace

ClosedLoopResult closed_loop(Plant& plant, const LinearModel& model,
                             const MpcConfig& cfg, const FilterVariant& variant,
                             const std::vector<VectorXd>& refs, int steps,
                             double T, const VectorXd& x0_mean,
                             const MatrixXd& P0) {
  if (refs.empty()) throw std::invalid_argument("closed_loop: empty refs");
  const PredictorMatrices pm = build_predictor(model, cfg);
  FilterState st = make_initial_state(x0_mean, P0);

  ClosedLoopResult out;
  out.time.reserve(steps);
  VectorXd u_prev = VectorXd::Zero(model.q());
  for (int t = 0; t < steps; ++t) {
    try {
      const VectorXd y = plant.measure();
      auto [x_filt, next] = filter_step(model, variant, st, y,
                                        VectorXd::Zero(model.q()));
      // filter_step advances the mean with u = 0; the input term is added
      // below once the control move is known.
      const ReferenceWindow window = make_window(refs, t, cfg.Hp, model.p());
      const VectorXd u = cfg.increment_form
                             ? control_law_delta(pm, x_filt, window, u_prev)
                             : control_law(pm, x_filt, window);
      u_prev = u;
      plant.apply(u);
      next.x_pred += model.B * u;

      out.time.push_back(t * T);
      out.ref.push_back(refs[std::min<std::size_t>(t, refs.size() - 1)]);
      out.output.push_back(y);
      out.input.push_back(u);
      out.x_filt.push_back(x_filt);
      out.y_hat.push_back(model.C * x_filt);
      out.theta.push_back(next.theta);
      st = std::move(next);
    } catch (const std::exception& e) {
      out.completed = false;
      out.failed_step = t;
      out.failure = e.what();
      break;
    }
  }
  return out;
}

std::string closed_loop_csv(const ClosedLoopResult& result) {
  std::ostringstream os;
  os.precision(15);
  os << "t_seconds,r,y,u,y_hat";
  const Eigen::Index n =
      result.x_filt.empty() ? 0 : result.x_filt.front().size();
  for (Eigen::Index i = 0; i < n; ++i) os << ",x_hat_" << i;
  os << ",theta\n";
  for (std::size_t k = 0; k < result.time.size(); ++k) {
    os << result.time[k] << "," << result.ref[k](0) << ","
       << result.output[k](0) << "," << result.input[k](0) << ","
       << result.y_hat[k](0);
    for (Eigen::Index i = 0; i < n; ++i) os << "," << result.x_filt[k](i);
    os << "," << result.theta[k] << "\n";
  }
  return os.str();
}

}  // namespace rkmpc
