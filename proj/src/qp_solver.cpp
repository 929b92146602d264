#include "bilevel/qp_solver.hpp"

#include <algorithm>
#include <cmath>

#include "bilevel/core_model.hpp"

namespace bilevel {

namespace {

double max_step(const Eigen::VectorXd& v, const Eigen::VectorXd& dv) {
  double alpha = 1.0;
  for (Eigen::Index i = 0; i < v.size(); ++i)
    if (dv[i] < 0.0) alpha = std::min(alpha, -v[i] / dv[i]);
  return alpha;
}

}  // namespace

QpResult solve_qp(const QpProblem& pb, const QpOptions& opt) {
  const Eigen::Index n = pb.P.rows();
  const Eigen::Index p = pb.A.rows();
  const Eigen::Index m = pb.G.rows();
  if (pb.P.cols() != n || pb.q.size() != n || (p > 0 && pb.A.cols() != n) || pb.b.size() != p ||
      (m > 0 && pb.G.cols() != n) || pb.h.size() != m)
    throw InvalidArgument("QP dimensions are inconsistent");

  const Eigen::MatrixXd A = p > 0 ? pb.A : Eigen::MatrixXd(0, n);
  const Eigen::MatrixXd G = m > 0 ? pb.G : Eigen::MatrixXd(0, n);

  auto solve_kkt = [&](const Eigen::MatrixXd& K, const Eigen::VectorXd& rx,
                       const Eigen::VectorXd& ry) {
    Eigen::MatrixXd kkt = Eigen::MatrixXd::Zero(n + p, n + p);
    kkt.topLeftCorner(n, n) = K;
    if (p > 0) {
      kkt.topRightCorner(n, p) = A.transpose();
      kkt.bottomLeftCorner(p, n) = A;
    }
    Eigen::VectorXd rhs(n + p);
    rhs << rx, ry;
    return Eigen::VectorXd(kkt.partialPivLu().solve(rhs));
  };

  QpResult res;
  // Equality-constrained start, then push slacks into the interior.
  const double reg = 1e-8 * std::max(1.0, pb.P.diagonal().cwiseAbs().maxCoeff());
  Eigen::VectorXd sol =
      solve_kkt(pb.P + reg * Eigen::MatrixXd::Identity(n, n) + G.transpose() * G, -pb.q, pb.b);
  Eigen::VectorXd x = sol.head(n);
  Eigen::VectorXd y = sol.tail(p);
  Eigen::VectorXd s = (pb.h - G * x).cwiseMax(1.0);
  Eigen::VectorXd z = Eigen::VectorXd::Ones(m);

  const double scale_d = 1.0 + pb.q.lpNorm<Eigen::Infinity>();
  const double scale_p = 1.0 + std::max(pb.b.size() ? pb.b.lpNorm<Eigen::Infinity>() : 0.0,
                                        pb.h.size() ? pb.h.lpNorm<Eigen::Infinity>() : 0.0);

  for (int it = 0; it < opt.max_iterations; ++it) {
    const Eigen::VectorXd rd = pb.P * x + pb.q + A.transpose() * y + G.transpose() * z;
    const Eigen::VectorXd rp = A * x - pb.b;
    const Eigen::VectorXd ri = G * x + s - pb.h;
    const double mu = m > 0 ? s.dot(z) / static_cast<double>(m) : 0.0;

    res.iterations = it;
    res.dual_residual = rd.lpNorm<Eigen::Infinity>();
    res.primal_residual = std::max(p ? rp.lpNorm<Eigen::Infinity>() : 0.0,
                                   m ? ri.lpNorm<Eigen::Infinity>() : 0.0);
    res.duality_gap = mu;
    if (res.dual_residual <= opt.tolerance * scale_d &&
        res.primal_residual <= opt.tolerance * scale_p && mu <= opt.tolerance) {
      res.converged = true;
      break;
    }

    const Eigen::VectorXd w = z.cwiseQuotient(s);
    const Eigen::MatrixXd K = pb.P + G.transpose() * w.asDiagonal() * G;
    Eigen::MatrixXd kkt = Eigen::MatrixXd::Zero(n + p, n + p);
    kkt.topLeftCorner(n, n) = K;
    if (p > 0) {
      kkt.topRightCorner(n, p) = A.transpose();
      kkt.bottomLeftCorner(p, n) = A;
    }
    const Eigen::PartialPivLU<Eigen::MatrixXd> lu(kkt);

    // rc is the complementarity residual S Z e - sigma mu e (+ corrector term).
    auto direction = [&](const Eigen::VectorXd& rc, Eigen::VectorXd& dx, Eigen::VectorXd& dy,
                         Eigen::VectorXd& dz, Eigen::VectorXd& ds) {
      const Eigen::VectorXd tmp = (z.cwiseProduct(ri) - rc).cwiseQuotient(s);
      Eigen::VectorXd rhs(n + p);
      rhs << -rd - G.transpose() * tmp, -rp;
      const Eigen::VectorXd d = lu.solve(rhs);
      dx = d.head(n);
      dy = d.tail(p);
      dz = w.cwiseProduct(G * dx) + tmp;
      ds = -ri - G * dx;
    };

    Eigen::VectorXd dx, dy, dz, ds;
    const Eigen::VectorXd sz = s.cwiseProduct(z);
    direction(sz, dx, dy, dz, ds);
    const double a_aff = std::min(max_step(s, ds), max_step(z, dz));
    const double mu_aff =
        m > 0 ? (s + a_aff * ds).dot(z + a_aff * dz) / static_cast<double>(m) : 0.0;
    const double sigma = mu > 0.0 ? std::pow(mu_aff / mu, 3) : 0.0;
    const Eigen::VectorXd rc =
        sz + ds.cwiseProduct(dz) - Eigen::VectorXd::Constant(m, sigma * mu);
    direction(rc, dx, dy, dz, ds);

    const double alpha = std::min(1.0, 0.99 * std::min(max_step(s, ds), max_step(z, dz)));
    x += alpha * dx;
    y += alpha * dy;
    z += alpha * dz;
    s += alpha * ds;
  }

  res.x = x;
  if (!res.converged)
    res.message = "interior point did not converge: primal " + std::to_string(res.primal_residual) +
                  ", dual " + std::to_string(res.dual_residual) + ", gap " +
                  std::to_string(res.duality_gap);
  return res;
}

}  // namespace bilevel
