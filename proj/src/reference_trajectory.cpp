#include "bilevel/reference_trajectory.hpp"

#include <algorithm>
#include <cmath>

#include "bilevel/qp_solver.hpp"

namespace bilevel {

namespace {

constexpr int kDegree = 5;
constexpr int kCoeffs = kDegree + 1;

double falling_factorial(int a, int d) {
  double r = 1.0;
  for (int k = 0; k < d; ++k) r *= (a - k);
  return r;
}

// Row r such that r . coeffs = d^order/du^order of the polynomial at u.
Eigen::Matrix<double, 1, kCoeffs> basis_row(double u, int order) {
  Eigen::Matrix<double, 1, kCoeffs> r = Eigen::Matrix<double, 1, kCoeffs>::Zero();
  for (int a = order; a < kCoeffs; ++a) r[a] = falling_factorial(a, order) * std::pow(u, a - order);
  return r;
}

// Hessian of sum_i w_i int_0^L (p^(i)(u))^2 du in the monomial basis.
Eigen::Matrix<double, kCoeffs, kCoeffs> piece_hessian(double length,
                                                      const std::array<double, 3>& weights) {
  Eigen::Matrix<double, kCoeffs, kCoeffs> h = Eigen::Matrix<double, kCoeffs, kCoeffs>::Zero();
  for (int i = 2; i <= 4; ++i) {
    const double w = weights[i - 2];
    if (w == 0.0) continue;
    for (int a = i; a < kCoeffs; ++a)
      for (int b = i; b < kCoeffs; ++b) {
        const int e = a + b - 2 * i + 1;
        h(a, b) += w * falling_factorial(a, i) * falling_factorial(b, i) * std::pow(length, e) / e;
      }
  }
  return h;
}

double poly_eval(const PathSpline::Coeffs& c, double u, int order) {
  return basis_row(u, order).dot(c.transpose());
}

// Gauss-Legendre nodes/weights on [-1, 1].
constexpr std::array<double, 5> kGlNodes{-0.9061798459386640, -0.5384693101056831, 0.0,
                                         0.5384693101056831, 0.9061798459386640};
constexpr std::array<double, 5> kGlWeights{0.2369268850561891, 0.4786286704993665,
                                           0.5688888888888889, 0.4786286704993665,
                                           0.2369268850561891};

}  // namespace

// ---------------------------------------------------------------------------
// PathSpline

PathSpline::PathSpline(std::vector<Piece> pieces) : pieces_(std::move(pieces)) {
  if (pieces_.empty()) throw InvalidArgument("path spline needs at least one piece");
  param_length_ = pieces_.back().s0 + pieces_.back().length;
  for (const auto& p : pieces_) {
    constexpr int sub = 8;
    const double h = p.length / sub;
    for (int k = 0; k < sub; ++k)
      for (std::size_t g = 0; g < kGlNodes.size(); ++g) {
        const double u = h * (k + 0.5 * (kGlNodes[g] + 1.0));
        const double dx = poly_eval(p.fx, u, 1);
        const double dy = poly_eval(p.fy, u, 1);
        arc_length_ += 0.5 * h * kGlWeights[g] * std::hypot(dx, dy);
      }
  }
}

std::pair<const PathSpline::Piece*, double> PathSpline::locate(double s) const {
  s = std::clamp(s, 0.0, param_length_);
  auto it = std::upper_bound(pieces_.begin(), pieces_.end(), s,
                             [](double v, const Piece& p) { return v < p.s0; });
  const Piece* piece = (it == pieces_.begin()) ? &pieces_.front() : &*std::prev(it);
  return {piece, std::min(s - piece->s0, piece->length)};
}

Eigen::Vector2d PathSpline::derivative(double s, int order) const {
  const auto [p, u] = locate(s);
  return {poly_eval(p->fx, u, order), poly_eval(p->fy, u, order)};
}

double PathSpline::curvature(double s) const {
  const Eigen::Vector2d d1 = derivative(s, 1);
  const Eigen::Vector2d d2 = derivative(s, 2);
  const double n = d1.norm();
  if (n < 1e-12) return 0.0;
  return (d1.x() * d2.y() - d1.y() * d2.x()) / (n * n * n);
}

std::vector<double> PathSpline::knots() const {
  std::vector<double> k;
  for (const auto& p : pieces_) k.push_back(p.s0);
  k.push_back(param_length_);
  return k;
}

double smoothing_objective(const PathSpline& spline, const std::array<double, 3>& weights) {
  double j = 0.0;
  for (const auto& p : spline.pieces()) {
    const auto h = piece_hessian(p.length, weights);
    j += p.fx.dot(h * p.fx) + p.fy.dot(h * p.fy);
  }
  return j;
}

PathSpline smooth_path(const StandardPath& standard, const SmoothingOptions& opt) {
  if (!(opt.bound > 0.0)) throw InvalidArgument("deviation bound d_b must be positive");
  if (!(opt.piece_length > 0.0)) throw InvalidArgument("piece length must be positive");
  if (std::any_of(opt.weights.begin(), opt.weights.end(), [](double w) { return w < 0.0; }))
    throw InvalidArgument("smoothing weights must be non-negative");
  const double tight = opt.bound - opt.bound_margin;
  // The standard path meets every sample constraint with zero deviation.
  if (!(tight > 0.0)) throw InvalidArgument("deviation bound is below the solver margin");

  const double total = standard.length();
  const int n = std::max(1, static_cast<int>(std::lround(total / opt.piece_length)));
  const double len = total / n;
  const int per_coord = kCoeffs * n;
  const int nv = 2 * per_coord;
  auto col = [&](int coord, int piece) { return coord * per_coord + kCoeffs * piece; };

  QpProblem qp;
  qp.P = Eigen::MatrixXd::Zero(nv, nv);
  qp.q = Eigen::VectorXd::Zero(nv);
  const auto hp = piece_hessian(len, opt.weights);
  for (int c = 0; c < 2; ++c)
    for (int k = 0; k < n; ++k) qp.P.block<kCoeffs, kCoeffs>(col(c, k), col(c, k)) = 2.0 * hp;

  std::vector<Eigen::RowVectorXd> eq_rows;
  std::vector<double> eq_rhs;
  auto add_eq = [&](const Eigen::RowVectorXd& row, double rhs) {
    eq_rows.push_back(row);
    eq_rhs.push_back(rhs);
  };
  auto point_row = [&](int coord, int piece, double u, int order) {
    Eigen::RowVectorXd r = Eigen::RowVectorXd::Zero(nv);
    r.segment<kCoeffs>(col(coord, piece)) = basis_row(u, order);
    return r;
  };

  const Eigen::Vector2d p0 = standard.start();
  const Eigen::Vector2d p1 = standard.end();
  for (int c = 0; c < 2; ++c) {
    add_eq(point_row(c, 0, 0.0, 0), p0[c]);
    add_eq(point_row(c, n - 1, len, 0), p1[c]);
    for (int k = 1; k < n; ++k)
      for (int d = 0; d <= 3; ++d) add_eq(point_row(c, k - 1, len, d) - point_row(c, k, 0.0, d), 0.0);
  }
  if (opt.pin_end_tangents) {
    const double h0 = standard.start_heading();
    const double h1 = standard.end_heading();
    add_eq(std::sin(h0) * point_row(0, 0, 0.0, 1) - std::cos(h0) * point_row(1, 0, 0.0, 1), 0.0);
    add_eq(std::sin(h1) * point_row(0, n - 1, len, 1) - std::cos(h1) * point_row(1, n - 1, len, 1),
           0.0);
    for (int c = 0; c < 2; ++c) {
      add_eq(point_row(c, 0, 0.0, 2), 0.0);
      add_eq(point_row(c, n - 1, len, 2), 0.0);
    }
  }
  qp.A.resize(static_cast<Eigen::Index>(eq_rows.size()), nv);
  qp.b.resize(static_cast<Eigen::Index>(eq_rows.size()));
  for (std::size_t i = 0; i < eq_rows.size(); ++i) {
    qp.A.row(static_cast<Eigen::Index>(i)) = eq_rows[i];
    qp.b[static_cast<Eigen::Index>(i)] = eq_rhs[i];
  }

  // Box constraints at interior samples; the end samples are pinned by equality.
  const auto& ss = standard.sample_s();
  const auto& pts = standard.samples();
  const int interior = std::max(0, static_cast<int>(ss.size()) - 2);
  qp.G = Eigen::MatrixXd::Zero(4 * interior, nv);
  qp.h = Eigen::VectorXd::Zero(4 * interior);
  int row = 0;
  for (int j = 1; j + 1 < static_cast<int>(ss.size()); ++j) {
    const int piece = std::min(n - 1, static_cast<int>(ss[j] / len));
    const double u = ss[j] - piece * len;
    for (int c = 0; c < 2; ++c) {
      const Eigen::RowVectorXd r = point_row(c, piece, u, 0);
      qp.G.row(row) = r;
      qp.h[row++] = pts[j][c] + tight;
      qp.G.row(row) = -r;
      qp.h[row++] = -pts[j][c] + tight;
    }
  }

  const QpResult res = solve_qp(qp);
  if (!res.converged) throw std::runtime_error("path smoothing QP failed: " + res.message);

  std::vector<PathSpline::Piece> pieces(n);
  for (int k = 0; k < n; ++k) {
    pieces[k].s0 = k * len;
    pieces[k].length = len;
    pieces[k].fx = res.x.segment<kCoeffs>(col(0, k));
    pieces[k].fy = res.x.segment<kCoeffs>(col(1, k));
  }
  PathSpline spline(std::move(pieces));
  spline.objective = smoothing_objective(spline, opt.weights);
  spline.solver_iterations = res.iterations;
  return spline;
}

double max_sample_deviation(const PathSpline& spline, const StandardPath& standard) {
  double worst = 0.0;
  const auto& ss = standard.sample_s();
  for (std::size_t j = 0; j < ss.size(); ++j)
    worst = std::max(worst, (spline.position(ss[j]) - standard.samples()[j]).cwiseAbs().maxCoeff());
  return worst;
}

double max_dense_deviation(const PathSpline& spline, const StandardPath& standard, int factor) {
  const int n = factor * std::max<int>(1, static_cast<int>(standard.sample_s().size()) - 1);
  double worst = 0.0;
  for (int k = 0; k <= n; ++k) {
    const double s = standard.length() * k / n;
    worst = std::max(worst, (spline.position(s) - standard.point_at(s)).cwiseAbs().maxCoeff());
  }
  return worst;
}

// ---------------------------------------------------------------------------
// Speed profiles

SpeedProfile speed_profile(double s_t, double s_n, double v_ref) {
  if (!(s_t > 0.0 && s_n > 0.0 && v_ref > 0.0))
    throw InvalidArgument("speed profile needs positive s_t, s_n and v_ref");
  return {s_t / s_n * v_ref, s_n / v_ref, s_t};
}

double BufferProfile::position(double t) const {
  double r = 0.0;
  for (int a = kDegree; a >= 0; --a) r = r * t + coeffs[a];
  return r;
}

double BufferProfile::velocity(double t) const {
  double r = 0.0;
  for (int a = kDegree; a >= 1; --a) r = r * t + a * coeffs[a];
  return r;
}

double BufferProfile::accel(double t) const {
  double r = 0.0;
  for (int a = kDegree; a >= 2; --a) r = r * t + a * (a - 1) * coeffs[a];
  return r;
}

BufferProfile buffer_quintic(double adjust_length, const LongitudinalState& start, double end_speed,
                             double end_accel, double duration) {
  if (!(duration > 0.0)) throw InvalidArgument("buffer duration must be positive");
  const double T = duration;
  BufferProfile p;
  p.duration = T;
  p.length = adjust_length;
  auto& c = p.coeffs;
  c[0] = 0.0;
  c[1] = start.v;
  c[2] = 0.5 * start.a;
  const double d0 = adjust_length - (c[1] * T + c[2] * T * T);
  const double d1 = end_speed - (c[1] + 2.0 * c[2] * T);
  const double d2 = end_accel - 2.0 * c[2];
  const double T2 = T * T;
  c[3] = (10.0 * d0 - 4.0 * d1 * T + 0.5 * d2 * T2) / (T2 * T);
  c[4] = (-15.0 * d0 + 7.0 * d1 * T - d2 * T2) / (T2 * T2);
  c[5] = (6.0 * d0 - 3.0 * d1 * T + 0.5 * d2 * T2) / (T2 * T2 * T);
  return p;
}

bool buffer_within_limits(const BufferProfile& p, const VehicleSpec& spec) {
  const int n = static_cast<int>(std::ceil(p.duration / 1e-3));
  for (int k = 0; k <= n; ++k) {
    const double t = std::min(p.duration, k * 1e-3);
    const double v = p.velocity(t);
    const double a = p.accel(t);
    if (v < -1e-12 || v > spec.speed_max + 1e-12) return false;
    if (a < spec.accel_min - 1e-12 || a > spec.accel_max + 1e-12) return false;
  }
  return true;
}

BufferProfile buffer_profile(double adjust_length, double end_speed, double end_accel,
                             const LongitudinalState& start, const VehicleSpec& spec,
                             double max_duration) {
  if (!(adjust_length > 0.0)) throw InvalidArgument("adjust length must be positive");
  for (int k = 1; k * 0.1 <= max_duration + 1e-9; ++k) {
    const BufferProfile p = buffer_quintic(adjust_length, start, end_speed, end_accel, k * 0.1);
    if (buffer_within_limits(p, spec)) return p;
  }
  throw std::runtime_error("no buffer profile within vehicle limits up to " +
                           std::to_string(max_duration) + " s");
}

// ---------------------------------------------------------------------------
// Trajectory

Trajectory::Trajectory(PathSpline path, SpeedProfile speed, int road_from, int road_to, Maneuver m)
    : path_(std::move(path)), speed_(speed), road_from_(road_from), road_to_(road_to), maneuver_(m) {}

MotionSample Trajectory::sample(double t) const {
  const double s = speed_.s(std::clamp(t, 0.0, speed_.duration));
  const Eigen::Vector2d d1 = path_.derivative(s, 1);
  const Eigen::Vector2d d2 = path_.derivative(s, 2);
  const double n = d1.norm();
  MotionSample m;
  m.position = path_.position(s);
  m.heading = std::atan2(d1.y(), d1.x());
  m.speed = n * speed_.rate;
  m.accel = n > 1e-12 ? d1.dot(d2) / n * speed_.rate * speed_.rate : 0.0;
  m.curvature = path_.curvature(s);
  return m;
}

Pose2 sample_pose(const Trajectory& traj, double t, double t_e) {
  const double rel = t - t_e;
  if (rel < -1e-9 || rel > traj.duration() + 1e-9)
    throw InvalidArgument("time outside the trajectory window");
  return traj.sample(rel).pose();
}

// ---------------------------------------------------------------------------
// CrossingMotion

CrossingMotion::CrossingMotion(std::shared_ptr<const MotionSampler> core, BufferProfile approach,
                               const VehicleSpec& spec)
    : core_(std::move(core)), approach_(approach) {
  entry_ = core_->sample(core_->t_begin());
  exit_ = core_->sample(core_->t_end());
  const double half = spec.inflated_half_length();
  if (approach_.length <= half)
    throw InvalidArgument("stop line lies within the inflated footprint of the conflict area");
  // Time before entry at which the inflated front reaches the conflict area.
  double lo = 0.0, hi = approach_.duration;
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (approach_.length - approach_.position(mid) > half)
      lo = mid;
    else
      hi = mid;
  }
  lead_in_ = approach_.duration - lo;
  if (!(exit_.speed > 1e-6)) throw InvalidArgument("departure speed must be positive");
  lead_out_ = half / exit_.speed;
}

MotionSample CrossingMotion::sample(double t) const {
  if (t < 0.0) {
    const double tau = std::max(0.0, approach_.duration + t);
    const Eigen::Vector2d dir(std::cos(entry_.heading), std::sin(entry_.heading));
    MotionSample m;
    m.position = entry_.position - (approach_.length - approach_.position(tau)) * dir;
    m.heading = entry_.heading;
    m.speed = approach_.velocity(tau);
    m.accel = approach_.accel(tau);
    return m;
  }
  const double end = core_->t_end();
  if (t <= end) return core_->sample(t);
  const Eigen::Vector2d dir(std::cos(exit_.heading), std::sin(exit_.heading));
  MotionSample m;
  m.position = exit_.position + exit_.speed * (t - end) * dir;
  m.heading = exit_.heading;
  m.speed = exit_.speed;
  return m;
}

// ---------------------------------------------------------------------------
// ReferenceLibrary

ReferenceLibrary::ReferenceLibrary(const ReferenceConfig& config) : config_(config) {
  config_.intersection.validate();
  config_.vehicle.validate();
  for (int r = 1; r <= config_.intersection.road_count; ++r)
    for (Maneuver m : kAllManeuvers) {
      ManeuverPlan plan;
      plan.road_from = r;
      plan.maneuver = m;
      plan.road_to = road_target(r, m, config_.intersection);
      auto standard = std::make_shared<StandardPath>(
          standard_path(r, plan.road_to, m, config_.intersection, config_.sample_spacing));
      PathSpline spline = smooth_path(*standard, config_.smoothing);
      const SpeedProfile sp =
          speed_profile(spline.param_length(), spline.arc_length(), config_.v_ref);
      auto traj = std::make_shared<Trajectory>(std::move(spline), sp, r, plan.road_to, m);
      const MotionSample entry = traj->sample(0.0);
      plan.buffer = buffer_profile(config_.intersection.adjust_length, entry.speed, entry.accel,
                                   {0.0, 0.0, 0.0}, config_.vehicle);
      plan.standard = std::move(standard);
      plan.crossing = std::make_shared<CrossingMotion>(traj, plan.buffer, config_.vehicle);
      plan.trajectory = std::move(traj);
      plans_.push_back(std::move(plan));
    }
}

const ManeuverPlan& ReferenceLibrary::plan(int road_from, Maneuver m) const {
  for (const auto& p : plans_)
    if (p.road_from == road_from && p.maneuver == m) return p;
  throw InvalidArgument("no reference plan for road " + std::to_string(road_from));
}

}  // namespace bilevel
