#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "bilevel/bspline.hpp"
#include "bilevel/reference_trajectory.hpp"

using namespace bilevel;

namespace {

class LineMotion : public MotionSampler {
 public:
  LineMotion(Eigen::Vector2d p0, Eigen::Vector2d v, double duration) : p0_(p0), v_(v), d_(duration) {}
  double t_begin() const override { return 0.0; }
  double t_end() const override { return d_; }
  MotionSample sample(double t) const override {
    MotionSample m;
    m.position = p0_ + t * v_;
    m.heading = std::atan2(v_.y(), v_.x());
    m.speed = v_.norm();
    return m;
  }

 private:
  Eigen::Vector2d p0_, v_;
  double d_;
};

ControlPointSequence random_sequence(std::mt19937_64& rng, int n, double dt) {
  std::normal_distribution<double> n01;
  ControlPointSequence q;
  q.dt = dt;
  q.t0 = 0.7;
  for (int i = 0; i < n; ++i) q.points.emplace_back(i + n01(rng), n01(rng));
  return q;
}

double cross(const Eigen::Vector2d& o, const Eigen::Vector2d& a, const Eigen::Vector2d& b) {
  return (a - o).x() * (b - o).y() - (a - o).y() * (b - o).x();
}

bool in_hull(std::vector<Eigen::Vector2d> pts, const Eigen::Vector2d& p) {
  std::sort(pts.begin(), pts.end(), [](const auto& a, const auto& b) {
    return a.x() < b.x() || (a.x() == b.x() && a.y() < b.y());
  });
  std::vector<Eigen::Vector2d> hull;
  for (int pass = 0; pass < 2; ++pass) {
    const std::size_t base = hull.size();
    for (const auto& q : pts) {
      while (hull.size() >= base + 2 && cross(hull[hull.size() - 2], hull.back(), q) <= 0) hull.pop_back();
      hull.push_back(q);
    }
    hull.pop_back();
    std::reverse(pts.begin(), pts.end());
  }
  for (std::size_t i = 0; i < hull.size(); ++i)
    if (cross(hull[i], hull[(i + 1) % hull.size()], p) < -1e-12) return false;
  return true;
}

}  // namespace

TEST_CASE("straight constant-speed reference is reproduced") {
  const LineMotion line({1.0, -2.0}, {3.0, 4.0}, 6.0);
  const auto q = init_control_points(line, 0.0, 0.5, 15);
  for (int i = 1; i < q.size(); ++i) {
    CHECK((q.points[i] - q.points[i - 1] - Eigen::Vector2d(1.5, 2.0)).norm() < 1e-9);
  }
  for (int k = 0; k <= 200; ++k) {
    const double t = q.span() * k / 200.0;
    CHECK((evaluate_spline(q, t).position - line.sample(t).position).norm() < 1e-6);
  }
}

TEST_CASE("fit matches endpoint velocity and acceleration") {
  ReferenceLibrary lib(ReferenceConfig{});
  const auto& cm = *lib.plan(1, Maneuver::TurnLeft).crossing;
  const auto [n, dt] = fit_layout(cm.occupancy_end() - cm.occupancy_begin(), 0.2);
  const auto q = init_control_points(cm, cm.occupancy_begin(), dt, n, 5.0);
  CHECK(q.t0 == doctest::Approx(cm.occupancy_begin() + 5.0));
  for (double t_ref : {cm.occupancy_begin(), cm.occupancy_begin() + (n - 3) * dt}) {
    const MotionSample m = cm.sample(t_ref);
    const SplineEval e = evaluate_spline(q, t_ref + 5.0);
    const Eigen::Vector2d dir(std::cos(m.heading), std::sin(m.heading));
    const Eigen::Vector2d nrm(-dir.y(), dir.x());
    CHECK((e.position - m.position).norm() < 1e-6);
    CHECK((e.velocity - m.speed * dir).norm() < 1e-6);
    CHECK((e.accel - (m.accel * dir + m.speed * m.speed * m.curvature * nrm)).norm() < 1e-6);
  }
}

TEST_CASE("left-turn fit at a one-second knot interval") {
  ReferenceConfig cfg;
  cfg.v_ref = 2.0;  // the 8 m/s turn lasts ~1.2 s, too short for 7 points at 1 s
  ReferenceLibrary lib(cfg);
  const auto& traj = *lib.plan(2, Maneuver::TurnLeft).trajectory;
  REQUIRE(traj.duration() >= 4.0);
  const auto q = init_control_points(traj, 0.0, 1.0, 7);
  double worst = 0.0;
  for (int k = 0; k <= 4000; ++k) {
    const double t = q.span() * k / 4000.0;
    worst = std::max(worst, (evaluate_spline(q, t).position - traj.sample(t).position).norm());
  }
  MESSAGE("max fit deviation " << worst << " m");
  CHECK(worst <= 0.1);
}

TEST_CASE("init_control_points preconditions") {
  const LineMotion line({0, 0}, {1, 0}, 3.0);
  CHECK_THROWS_AS(init_control_points(line, 0.0, 1.0, 6), InvalidArgument);
  CHECK_THROWS_AS(init_control_points(line, 0.0, 1.0, 7), InvalidArgument);
  CHECK_NOTHROW(init_control_points(line, 0.0, 0.75, 7));
  ControlPointSequence q;
  q.points.assign(6, Eigen::Vector2d::Zero());
  CHECK_THROWS_AS(q.validate(), InvalidArgument);
}

TEST_CASE("control-point derivatives") {
  ControlPointSequence line;
  line.dt = 0.5;
  for (int i = 0; i < 9; ++i) line.points.emplace_back(2.0 * i, -1.0 * i);
  const auto k = spline_kinematics(line);
  CHECK(k.velocity.size() == 8);
  CHECK(k.accel.size() == 7);
  CHECK(k.jerk.size() == 6);
  for (const auto& a : k.accel) CHECK(a.norm() < 1e-12);
  for (const auto& j : k.jerk) CHECK(j.norm() < 1e-12);

  ControlPointSequence parabola;
  parabola.dt = 0.3;
  for (int i = 0; i < 9; ++i) parabola.points.emplace_back(i, 0.5 * i * i);
  const auto kp = spline_kinematics(parabola);
  for (const auto& a : kp.accel) CHECK((a - kp.accel.front()).norm() < 1e-9);
  CHECK(kp.accel.front().y() == doctest::Approx(1.0 / (0.3 * 0.3)));
}

TEST_CASE("velocity points are the derivative spline's control points") {
  std::mt19937_64 rng(2);
  const auto q = random_sequence(rng, 10, 0.4);
  const auto v = spline_kinematics(q).velocity;
  std::uniform_real_distribution<double> tt(0.0, q.span());
  for (int s = 0; s < 200; ++s) {
    const double tau = tt(rng) / q.dt;
    const int i = std::min(static_cast<int>(tau), q.size() - 4);
    const double u = tau - i;
    const Eigen::Vector2d quad = 0.5 * (1 - u) * (1 - u) * v[i] + 0.5 * (-2 * u * u + 2 * u + 1) * v[i + 1] +
                                 0.5 * u * u * v[i + 2];
    CHECK((evaluate_spline(q, q.t0 + tau * q.dt).velocity - quad).norm() < 1e-9);
  }
}

TEST_CASE("spline evaluation properties") {
  ControlPointSequence line;
  line.dt = 0.5;
  line.t0 = 2.0;
  for (int i = 0; i < 8; ++i) line.points.emplace_back(1.0 * i, 2.0 * i);
  for (int k = 0; k <= 5; ++k) {
    const auto e = evaluate_spline(line, 2.0 + 0.5 * k);
    CHECK(std::abs(2.0 * e.position.x() - e.position.y()) < 1e-12);
    CHECK((e.velocity - Eigen::Vector2d(2.0, 4.0)).norm() < 1e-12);
  }
  CHECK_THROWS_AS(evaluate_spline(line, 1.9), InvalidArgument);
  CHECK_THROWS_AS(evaluate_spline(line, line.t_end() + 0.1), InvalidArgument);

  std::mt19937_64 rng(6);
  const auto q = random_sequence(rng, 12, 0.3);
  std::uniform_real_distribution<double> tt(1e-3, q.span() - 1e-3);
  for (int s = 0; s < 300; ++s) {
    const double t = q.t0 + tt(rng);
    const auto e = evaluate_spline(q, t);
    const int i = std::min(static_cast<int>((t - q.t0) / q.dt), q.size() - 4);
    CHECK(in_hull({q.points.begin() + i, q.points.begin() + i + 4}, e.position));
    const double h = 1e-5;
    const Eigen::Vector2d fd =
        (evaluate_spline(q, t + h).position - evaluate_spline(q, t - h).position) / (2 * h);
    CHECK((fd - e.velocity).norm() < 1e-6 * std::max(1.0, e.velocity.norm()));
    const Eigen::Vector2d fda =
        (evaluate_spline(q, t + h).velocity - evaluate_spline(q, t - h).velocity) / (2 * h);
    CHECK((fda - e.accel).norm() < 1e-5 * std::max(1.0, e.accel.norm()));
  }
}

TEST_CASE("clamp points reproduce the end state") {
  const Eigen::Vector2d p(1.0, 2.0), v(3.0, -1.0), a(0.5, 0.25);
  const auto c = clamp_points(p, v, a, 0.4);
  ControlPointSequence q;
  q.dt = 0.4;
  q.points = {c[0], c[1], c[2], c[2] + Eigen::Vector2d(1, 1)};
  const auto e = evaluate_spline(q, 0.0);
  CHECK((e.position - p).norm() < 1e-12);
  CHECK((e.velocity - v).norm() < 1e-12);
  CHECK((e.accel - a).norm() < 1e-12);
}

TEST_CASE("layout covers the duration") {
  const auto [n, dt] = fit_layout(5.3, 0.2);
  CHECK(n >= 7);
  CHECK((n - 3) * dt == doctest::Approx(5.3));
  CHECK(fit_layout(0.1, 1.0).first == 7);
  CHECK_THROWS_AS(fit_layout(0.0, 1.0), InvalidArgument);
}
