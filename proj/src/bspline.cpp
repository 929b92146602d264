#include "bilevel/bspline.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>

namespace bilevel {

void ControlPointSequence::validate() const {
  if (size() < 7) throw InvalidArgument("a clamped cubic spline needs at least 7 control points");
  if (!(dt > 0.0)) throw InvalidArgument("knot interval must be positive");
}

SplineEval evaluate_spline(const ControlPointSequence& q, double t) {
  if (q.size() < 4) throw InvalidArgument("spline needs at least 4 control points");
  const double tau = (t - q.t0) / q.dt;
  const double last = q.size() - 3;
  if (tau < -1e-9 || tau > last + 1e-9) throw InvalidArgument("time outside the spline span");
  int i = std::clamp(static_cast<int>(std::floor(tau)), 0, q.size() - 4);
  const double u = std::clamp(tau - i, 0.0, 1.0);
  const double u2 = u * u, u3 = u2 * u;
  const double b[4] = {(1 - u) * (1 - u) * (1 - u) / 6.0, (3 * u3 - 6 * u2 + 4) / 6.0,
                       (-3 * u3 + 3 * u2 + 3 * u + 1) / 6.0, u3 / 6.0};
  const double db[4] = {-0.5 * (1 - u) * (1 - u), 1.5 * u2 - 2 * u, -1.5 * u2 + u + 0.5, 0.5 * u2};
  const double ddb[4] = {1 - u, 3 * u - 2, -3 * u + 1, u};
  SplineEval e;
  for (int k = 0; k < 4; ++k) {
    const Eigen::Vector2d& p = q.points[i + k];
    e.position += b[k] * p;
    e.velocity += db[k] * p;
    e.accel += ddb[k] * p;
  }
  e.velocity /= q.dt;
  e.accel /= q.dt * q.dt;
  return e;
}

SplineKinematics spline_kinematics(const ControlPointSequence& q) {
  if (q.size() < 4) throw InvalidArgument("spline needs at least 4 control points");
  SplineKinematics k;
  const auto& p = q.points;
  const double h = q.dt;
  for (int i = 0; i + 1 < q.size(); ++i) k.velocity.push_back((p[i + 1] - p[i]) / h);
  for (int i = 0; i + 1 < static_cast<int>(k.velocity.size()); ++i)
    k.accel.push_back((k.velocity[i + 1] - k.velocity[i]) / h);
  for (int i = 0; i + 1 < static_cast<int>(k.accel.size()); ++i)
    k.jerk.push_back((k.accel[i + 1] - k.accel[i]) / h);
  return k;
}

std::array<Eigen::Vector2d, 3> clamp_points(const Eigen::Vector2d& p, const Eigen::Vector2d& v,
                                            const Eigen::Vector2d& a, double dt) {
  const Eigen::Vector2d mid = p - a * dt * dt / 6.0;
  const Eigen::Vector2d lo = mid + 0.5 * a * dt * dt - v * dt;
  const Eigen::Vector2d hi = mid + 0.5 * a * dt * dt + v * dt;
  return {lo, mid, hi};
}

std::pair<int, double> fit_layout(double duration, double target_dt) {
  if (!(duration > 0.0 && target_dt > 0.0))
    throw InvalidArgument("fit layout needs positive duration and interval");
  const int n = std::max(7, static_cast<int>(std::lround(duration / target_dt)) + 3);
  return {n, duration / (n - 3)};
}

ControlPointSequence init_control_points(const MotionSampler& ref, double t_begin, double dt,
                                         int n_c, double abs_offset) {
  if (n_c < 7) throw InvalidArgument("a clamped cubic spline needs at least 7 control points");
  if (!(dt > 0.0)) throw InvalidArgument("knot interval must be positive");
  const double span = (n_c - 3) * dt;
  const double t_end = t_begin + span;
  if (t_begin < ref.t_begin() - 1e-9 || t_end > ref.t_end() + 1e-9)
    throw InvalidArgument("reference is shorter than the spline span");

  auto state = [&](double t) {
    const MotionSample m = ref.sample(t);
    const Eigen::Vector2d dir(std::cos(m.heading), std::sin(m.heading));
    const Eigen::Vector2d nrm(-dir.y(), dir.x());
    const Eigen::Vector2d v = m.speed * dir;
    const Eigen::Vector2d a = m.accel * dir + m.speed * m.speed * m.curvature * nrm;
    return std::tuple{m.position, v, a};
  };

  ControlPointSequence q;
  q.dt = dt;
  q.t0 = t_begin + abs_offset;
  q.points.assign(n_c, Eigen::Vector2d::Zero());
  {
    const auto [p, v, a] = state(t_begin);
    const auto c = clamp_points(p, v, a, dt);
    for (int k = 0; k < 3; ++k) q.points[k] = c[k];
  }
  {
    const auto [p, v, a] = state(t_end);
    const auto c = clamp_points(p, v, a, dt);
    for (int k = 0; k < 3; ++k) q.points[n_c - 3 + k] = c[k];
  }
  const int n_free = n_c - 6;
  if (n_free == 0) return q;

  // Least squares over samples at 4 per knot interval.
  const int per = 4;
  const int n_samples = (n_c - 3) * per + 1;
  Eigen::MatrixXd m = Eigen::MatrixXd::Zero(n_samples, n_free);
  Eigen::MatrixXd rhs(n_samples, 2);
  for (int s = 0; s < n_samples; ++s) {
    const double tau = static_cast<double>(s) / per;
    int i = std::clamp(static_cast<int>(std::floor(tau)), 0, n_c - 4);
    const double u = tau - i;
    const double u2 = u * u, u3 = u2 * u;
    const double b[4] = {(1 - u) * (1 - u) * (1 - u) / 6.0, (3 * u3 - 6 * u2 + 4) / 6.0,
                         (-3 * u3 + 3 * u2 + 3 * u + 1) / 6.0, u3 / 6.0};
    const Eigen::Vector2d target = ref.sample(t_begin + tau * dt).position;
    Eigen::Vector2d fixed = Eigen::Vector2d::Zero();
    for (int k = 0; k < 4; ++k) {
      const int idx = i + k;
      if (q.is_free(idx))
        m(s, idx - 3) += b[k];
      else
        fixed += b[k] * q.points[idx];
    }
    rhs.row(s) = (target - fixed).transpose();
  }
  const Eigen::MatrixXd sol = m.colPivHouseholderQr().solve(rhs);
  for (int k = 0; k < n_free; ++k) q.points[k + 3] = sol.row(k).transpose();
  return q;
}

MotionSample SplineMotion::sample(double t) const {
  const SplineEval e = evaluate_spline(q_, std::clamp(t, q_.t0, q_.t_end()));
  MotionSample m;
  m.position = e.position;
  const double v = e.velocity.norm();
  m.speed = v;
  if (v > 1e-9) {
    m.heading = std::atan2(e.velocity.y(), e.velocity.x());
    m.accel = e.velocity.dot(e.accel) / v;
    m.curvature = (e.velocity.x() * e.accel.y() - e.velocity.y() * e.accel.x()) / (v * v * v);
  }
  return m;
}

}  // namespace bilevel
