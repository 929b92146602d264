#pragma once

#include <Eigen/Core>

#include <vector>

#include "bilevel/core_model.hpp"

namespace bilevel {

/// Cubic uniform B-spline in time. Knots are t_j = t0 + (j - 3) dt for
/// j = 0..N+3, so the curve is valid on [t0, t0 + (N - 3) dt].
struct ControlPointSequence {
  static constexpr int kDegree = 3;
  static constexpr int kClamped = 3;

  std::vector<Eigen::Vector2d> points;
  double dt = 1.0;
  double t0 = 0.0;  // absolute time of the span start

  int size() const { return static_cast<int>(points.size()); }
  double span() const { return (size() - kDegree) * dt; }
  double t_end() const { return t0 + span(); }
  bool is_free(int i) const { return i >= kClamped && i < size() - kClamped; }
  /// Absolute time at which Q_i carries its largest basis weight.
  double peak_time(int i) const { return t0 + (i - 1) * dt; }
  void validate() const;
};

struct SplineEval {
  Eigen::Vector2d position = Eigen::Vector2d::Zero();
  Eigen::Vector2d velocity = Eigen::Vector2d::Zero();
  Eigen::Vector2d accel = Eigen::Vector2d::Zero();
};

/// Position and derivatives at absolute time t.
SplineEval evaluate_spline(const ControlPointSequence& q, double t);

struct SplineKinematics {
  std::vector<Eigen::Vector2d> velocity;  // N - 1
  std::vector<Eigen::Vector2d> accel;     // N - 2
  std::vector<Eigen::Vector2d> jerk;      // N - 3
};

SplineKinematics spline_kinematics(const ControlPointSequence& q);

/// Three consecutive control points giving position, velocity and
/// acceleration p, v, a at the knot they straddle (either end of the span).
std::array<Eigen::Vector2d, 3> clamp_points(const Eigen::Vector2d& p, const Eigen::Vector2d& v,
                                            const Eigen::Vector2d& a, double dt);

/// Control point count and interval covering `duration` with an interval
/// close to `target_dt`.
std::pair<int, double> fit_layout(double duration, double target_dt);

/// Least-squares fit to `ref` over [t_begin, t_begin + (n_c - 3) dt] with
/// exact endpoint position, velocity and acceleration. `abs_offset` is added
/// to sampler time to obtain absolute time.
ControlPointSequence init_control_points(const MotionSampler& ref, double t_begin, double dt,
                                         int n_c, double abs_offset = 0.0);

/// Spline seen as a motion, in absolute time.
class SplineMotion : public MotionSampler {
 public:
  explicit SplineMotion(ControlPointSequence q) : q_(std::move(q)) {}
  double t_begin() const override { return q_.t0; }
  double t_end() const override { return q_.t_end(); }
  MotionSample sample(double t) const override;
  const ControlPointSequence& control_points() const { return q_; }

 private:
  ControlPointSequence q_;
};

}  // namespace bilevel
