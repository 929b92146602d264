#include <doctest.h>

#include <Eigen/Dense>

#include <cmath>
#include <numbers>

#include "bilevel/reference_trajectory.hpp"

using namespace bilevel;

namespace {

// Finite-difference discretisation of the smoothing problem for one
// coordinate, solved by a primal active-set loop on the box constraints.
struct FdOracle {
  using Mat = Eigen::Matrix<long double, Eigen::Dynamic, Eigen::Dynamic>;
  using Vec = Eigen::Matrix<long double, Eigen::Dynamic, 1>;
  using Row = Eigen::Matrix<long double, 1, Eigen::Dynamic>;

  long double h = 0.0;
  Mat H;  // objective = f' H f / 2

  FdOracle(int m, double length, const std::array<double, 3>& w) : h(length / m) {
    const int n = m + 1;
    H = Mat::Zero(n, n);
    auto add = [&](const std::vector<double>& stencil, int lo, int hi, double weight, int order) {
      for (int k = lo; k <= hi; ++k) {
        Row row = Row::Zero(n);
        for (std::size_t a = 0; a < stencil.size(); ++a) row(k + static_cast<int>(a)) = stencil[a];
        row /= std::pow(h, static_cast<long double>(order));
        H += 2.0 * weight * h * row.transpose() * row;
      }
    };
    add({1, -2, 1}, 0, m - 2, w[0], 2);
    add({-1, 3, -3, 1}, 0, m - 3, w[1], 3);
    add({1, -4, 6, -4, 1}, 0, m - 4, w[2], 4);
  }

  // lo/hi bounds per node (infinite when unconstrained); endpoints fixed.
  double solve(const Vec& lo, const Vec& hi) const {
    const int n = static_cast<int>(H.rows());
    std::vector<int> fixed(n, 0);  // 0 free, -1 at lo, +1 at hi, 2 endpoint
    Vec f = Vec::Zero(n);
    fixed[0] = fixed[n - 1] = 2;
    f(0) = lo(0);
    f(n - 1) = lo(n - 1);
    for (int iter = 0; iter < 2000; ++iter) {
      std::vector<int> free_idx, fix_idx;
      for (int k = 0; k < n; ++k) (fixed[k] ? fix_idx : free_idx).push_back(k);
      Mat Hff(free_idx.size(), free_idx.size());
      Vec rhs = Vec::Zero(free_idx.size());
      for (std::size_t a = 0; a < free_idx.size(); ++a) {
        for (std::size_t b = 0; b < free_idx.size(); ++b) Hff(a, b) = H(free_idx[a], free_idx[b]);
        for (int k : fix_idx) rhs(a) -= H(free_idx[a], k) * f(k);
      }
      const Vec ff = Hff.ldlt().solve(rhs);
      for (std::size_t a = 0; a < free_idx.size(); ++a) f(free_idx[a]) = ff(a);

      int worst = -1;
      long double worst_v = 1e-12L;
      for (int k : free_idx) {
        const long double v = std::max(lo(k) - f(k), f(k) - hi(k));
        if (v > worst_v) worst_v = v, worst = k;
      }
      if (worst >= 0) {
        fixed[worst] = f(worst) < lo(worst) ? -1 : 1;
        f(worst) = fixed[worst] < 0 ? lo(worst) : hi(worst);
        continue;
      }
      const Vec g = H * f;
      int release = -1;
      long double release_v = 1e-12L;
      for (int k : fix_idx) {
        const long double wrong = fixed[k] == 1 ? g(k) : fixed[k] == -1 ? -g(k) : 0.0;
        if (wrong > release_v) release_v = wrong, release = k;
      }
      if (release < 0) return static_cast<double>(0.5L * f.dot(H * f));
      fixed[release] = 0;
    }
    FAIL("active-set oracle did not converge");
    return 0.0;
  }
};

double fd_objective(const StandardPath& path, double bound, const std::array<double, 3>& w,
                    int refine) {
  const int ns = static_cast<int>(path.samples().size()) - 1;
  const int m = ns * refine;
  FdOracle oracle(m, path.length(), w);
  double total = 0.0;
  for (int c = 0; c < 2; ++c) {
    const long double inf = std::numeric_limits<long double>::infinity();
    FdOracle::Vec lo = FdOracle::Vec::Constant(m + 1, -inf);
    FdOracle::Vec hi = FdOracle::Vec::Constant(m + 1, inf);
    for (int j = 0; j <= ns; ++j) {
      const double x = path.samples()[j](c);
      lo(j * refine) = x - bound;
      hi(j * refine) = x + bound;
    }
    lo(0) = hi(0) = path.samples().front()(c);
    lo(m) = hi(m) = path.samples().back()(c);
    total += oracle.solve(lo, hi);
  }
  return total;
}

// Composite Simpson rule of the weighted squared derivatives.
double quadrature_objective(const PathSpline& spline, const std::array<double, 3>& w) {
  double total = 0.0;
  for (const auto& piece : spline.pieces()) {
    const int n = 64;
    const double step = piece.length / n;
    for (int i = 0; i <= n; ++i) {
      const double s = std::min(piece.s0 + i * step, piece.s0 + piece.length * (1 - 1e-12));
      const double c = (i == 0 || i == n) ? 1.0 : (i % 2 ? 4.0 : 2.0);
      double v = 0.0;
      for (int d = 2; d <= 4; ++d) v += w[d - 2] * spline.derivative(s, d).squaredNorm();
      total += c * v * step / 3.0;
    }
  }
  return total;
}

std::array<double, 6> buffer_residuals(const BufferProfile& p, const LongitudinalState& s0,
                                       double end_v, double end_a) {
  return {std::abs(p.position(0.0) - s0.s),
          std::abs(p.velocity(0.0) - s0.v),
          std::abs(p.accel(0.0) - s0.a),
          std::abs(p.position(p.duration) - p.length),
          std::abs(p.velocity(p.duration) - end_v),
          std::abs(p.accel(p.duration) - end_a)};
}

}  // namespace

TEST_CASE("straight standard path is reproduced with zero objective") {
  IntersectionConfig cfg;
  const auto path = standard_path(1, 3, Maneuver::GoStraight, cfg);
  const auto spline = smooth_path(path);
  CHECK(spline.objective == doctest::Approx(0.0).epsilon(1e-8));
  CHECK(std::abs(spline.objective) < 1e-8);
  CHECK(max_sample_deviation(spline, path) < 1e-8);
  CHECK(spline.arc_length() == doctest::Approx(8.0).epsilon(1e-9));
}

TEST_CASE("left turn respects the 1 m deviation bound") {
  IntersectionConfig cfg;
  const auto path = standard_path(1, 2, Maneuver::TurnLeft, cfg);
  const auto spline = smooth_path(path);
  CHECK(max_sample_deviation(spline, path) <= 1.0);
  CHECK((spline.position(0.0) - path.start()).norm() < 1e-8);
  CHECK((spline.position(spline.param_length()) - path.end()).norm() < 1e-8);
  MESSAGE("dense deviation (monitor only): " << max_dense_deviation(spline, path));
}

TEST_CASE("every maneuver meets endpoint, bound and steering properties") {
  IntersectionConfig cfg;
  const VehicleSpec v;
  for (int r = 1; r <= 4; ++r)
    for (Maneuver m : kAllManeuvers) {
      const auto path = standard_path(r, road_target(r, m, cfg), m, cfg);
      const auto spline = smooth_path(path);
      CHECK((spline.position(0.0) - path.start()).norm() < 1e-8);
      CHECK((spline.position(spline.param_length()) - path.end()).norm() < 1e-8);
      CHECK(max_sample_deviation(spline, path) <= 1.0);

      double kmax = 0.0;
      for (int i = 0; i <= 2000; ++i)
        kmax = std::max(kmax, std::abs(spline.curvature(spline.param_length() * i / 2000.0)));
      CHECK(std::atan(v.wheelbase * kmax) <= v.steer_max);

      for (double k : spline.knots()) {
        if (k <= 0.0 || k >= spline.param_length()) continue;
        for (int order = 0; order <= 3; ++order) {
          const Eigen::Vector2d a = spline.derivative(k - 1e-9, order);
          const Eigen::Vector2d b = spline.derivative(k + 1e-9, order);
          CHECK((a - b).norm() < 1e-5 * (1.0 + a.norm()));
        }
      }
    }
}

TEST_CASE("quarter-arc objective matches a finite-difference oracle") {
  IntersectionConfig cfg;
  const auto path = standard_path(1, 2, Maneuver::TurnLeft, cfg);
  SmoothingOptions opt;
  opt.bound = 0.3;
  opt.piece_length = 0.5;
  opt.pin_end_tangents = false;
  const auto spline = smooth_path(path, opt);
  CHECK(smoothing_objective(spline, opt.weights) == doctest::Approx(spline.objective).epsilon(1e-6));
  const double quad = quadrature_objective(spline, opt.weights);
  CHECK(std::abs(quad - spline.objective) <= 1e-8 * spline.objective);
  const double oracle = fd_objective(path, opt.bound, opt.weights, 8);
  MESSAGE("spline objective " << spline.objective << ", finite-difference oracle " << oracle);
  CHECK(std::abs(spline.objective - oracle) <= 0.01 * oracle);
}

TEST_CASE("smooth_path input validation") {
  IntersectionConfig cfg;
  const auto path = standard_path(1, 2, Maneuver::TurnLeft, cfg);
  SmoothingOptions opt;
  opt.bound = 0.0;
  CHECK_THROWS_AS(smooth_path(path, opt), InvalidArgument);
  opt = {};
  opt.weights = {1.0, -1.0, 1.0};
  CHECK_THROWS_AS(smooth_path(path, opt), InvalidArgument);
}

TEST_CASE("linear speed profile") {
  auto p = speed_profile(20.0, 20.0, 8.0);
  CHECK(p.s(1.0) == doctest::Approx(8.0));
  CHECK(p.duration == doctest::Approx(2.5));
  p = speed_profile(20.0, 25.0, 8.0);
  CHECK(p.s(1.0) == doctest::Approx(6.4));
  CHECK(p.s(p.duration) == doctest::Approx(20.0));
  CHECK(p.s(0.0) == 0.0);
  CHECK_THROWS_AS(speed_profile(0.0, 1.0, 1.0), InvalidArgument);
}

TEST_CASE("ground speed along a left turn is close to v_ref") {
  ReferenceLibrary lib(ReferenceConfig{});
  const auto& traj = *lib.plan(1, Maneuver::TurnLeft).trajectory;
  const int n = 1000;
  const double h = 1e-5;
  double mean_err = 0.0;
  for (int i = 0; i < n; ++i) {
    const double t = traj.duration() * (i + 0.5) / n;
    const Pose2 a = sample_pose(traj, t - h, 0.0);
    const Pose2 b = sample_pose(traj, t + h, 0.0);
    mean_err += std::abs(std::hypot(b.x - a.x, b.y - a.y) / (2 * h) - 8.0);
  }
  mean_err /= n;
  CHECK(mean_err <= 0.05 * 8.0);
}

TEST_CASE("buffer quintic boundary conditions") {
  const VehicleSpec spec;
  const LongitudinalState rest{0.0, 0.0, 0.0};
  const auto p = buffer_profile(8.0, 8.0, 0.0, rest, spec);
  for (double r : buffer_residuals(p, rest, 8.0, 0.0)) CHECK(r < 1e-9);
  CHECK(buffer_within_limits(p, spec));
  CHECK(p.duration == doctest::Approx(1.8));

  const LongitudinalState cruise{0.0, 6.0, 0.0};
  const auto c = buffer_quintic(6.0 * 1.5, cruise, 6.0, 0.0, 1.5);
  for (int i = 0; i <= 30; ++i) {
    const double t = 1.5 * i / 30.0;
    CHECK(c.position(t) == doctest::Approx(6.0 * t).epsilon(1e-12));
  }
}

TEST_CASE("buffer quintic matches a dense linear solve") {
  const LongitudinalState s0{0.0, 2.0, -0.5};
  const double T = 2.3, L = 11.0, vT = 7.0, aT = 0.8;
  const auto p = buffer_quintic(L, s0, vT, aT, T);
  Eigen::Matrix<double, 6, 6> A;
  Eigen::Matrix<double, 6, 1> b;
  auto row = [&](double t, int d) {
    Eigen::Matrix<double, 1, 6> r = Eigen::Matrix<double, 1, 6>::Zero();
    for (int k = d; k < 6; ++k) {
      double c = 1.0;
      for (int j = 0; j < d; ++j) c *= k - j;
      r(k) = c * std::pow(t, k - d);
    }
    return r;
  };
  A << row(0, 0), row(0, 1), row(0, 2), row(T, 0), row(T, 1), row(T, 2);
  b << 0.0, s0.v, s0.a, L, vT, aT;
  const Eigen::Matrix<double, 6, 1> oracle = A.fullPivLu().solve(b);
  for (int k = 0; k < 6; ++k) CHECK(std::abs(p.coeffs(k) - oracle(k)) < 1e-9);
  for (double r : buffer_residuals(p, s0, vT, aT)) CHECK(r < 1e-9);
}

TEST_CASE("buffer profile reports infeasibility") {
  VehicleSpec slow;
  slow.speed_max = 5.0;
  CHECK_THROWS(buffer_profile(8.0, 8.0, 0.0, {}, slow, 10.0));
}

TEST_CASE("sample_pose boundaries and headings") {
  ReferenceLibrary lib(ReferenceConfig{});
  const IntersectionConfig cfg;
  const auto& left = *lib.plan(1, Maneuver::TurnLeft).trajectory;
  const Pose2 entry = sample_pose(left, 3.0, 3.0);
  CHECK(std::hypot(entry.x - cfg.entry_point(1).x(), entry.y - cfg.entry_point(1).y()) < 1e-8);
  CHECK(std::abs(wrap_angle(entry.heading - cfg.entry_heading(1))) < 1e-6);
  const Pose2 exit = sample_pose(left, 3.0 + left.duration(), 3.0);
  CHECK(std::hypot(exit.x - cfg.exit_point(2).x(), exit.y - cfg.exit_point(2).y()) < 1e-8);
  CHECK_THROWS_AS(sample_pose(left, 2.9, 3.0), InvalidArgument);
  CHECK_THROWS_AS(sample_pose(left, 3.1 + left.duration(), 3.0), InvalidArgument);

  // Road 2 (west arm) straight runs eastbound.
  const auto& east = *lib.plan(2, Maneuver::GoStraight).trajectory;
  for (int i = 0; i <= 50; ++i)
    CHECK(std::abs(sample_pose(east, east.duration() * i / 50.0, 0.0).heading) < 1e-9);

  const double tm = 0.5 * left.duration(), h = 1e-6;
  const Pose2 a = sample_pose(left, tm - h, 0.0), b = sample_pose(left, tm + h, 0.0);
  CHECK(std::abs(wrap_angle(sample_pose(left, tm, 0.0).heading - std::atan2(b.y - a.y, b.x - a.x))) <
        1e-4);
}

TEST_CASE("buffer to conflict-area junction is continuous") {
  ReferenceLibrary lib(ReferenceConfig{});
  for (const auto& plan : lib.plans()) {
    const auto& cm = *plan.crossing;
    const MotionSample before = cm.sample(-1e-9);
    const MotionSample after = cm.sample(1e-9);
    CHECK((before.position - after.position).norm() < 1e-6);
    CHECK(before.speed == doctest::Approx(after.speed).epsilon(1e-6));
    CHECK(before.accel == doctest::Approx(after.accel).epsilon(1e-4));
    CHECK(plan.buffer.velocity(plan.buffer.duration) ==
          doctest::Approx(plan.trajectory->sample(0.0).speed).epsilon(1e-9));
  }
  CHECK(lib.plans().size() == 12);
}
