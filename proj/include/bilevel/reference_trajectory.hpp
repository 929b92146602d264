#pragma once

#include <Eigen/Core>

#include <array>
#include <map>
#include <memory>
#include <vector>

#include "bilevel/core_model.hpp"

namespace bilevel {

/// Options of the path smoothing QP.
struct SmoothingOptions {
  double bound = 1.0;                               // d_b, per-axis deviation at samples
  std::array<double, 3> weights{1.0, 1.0, 1.0};     // 2nd, 3rd, 4th derivative weights
  double piece_length = 2.0;                        // target length of one quintic piece
  bool pin_end_tangents = true;                     // entry/exit heading and zero curvature
  double bound_margin = 1e-7;                       // solver-side tightening of the bound
};

/// Piecewise-quintic planar path (f(s), g(s)), C3 across knots.
class PathSpline {
 public:
  using Coeffs = Eigen::Matrix<double, 6, 1>;
  struct Piece {
    double s0 = 0.0;
    double length = 0.0;
    Coeffs fx = Coeffs::Zero();
    Coeffs fy = Coeffs::Zero();
  };

  PathSpline() = default;
  explicit PathSpline(std::vector<Piece> pieces);

  /// Parameter range is [0, param_length()]; equals the standard path length s_t.
  double param_length() const { return param_length_; }
  /// Realised arc length s_n of the curve.
  double arc_length() const { return arc_length_; }

  Eigen::Vector2d position(double s) const { return derivative(s, 0); }
  Eigen::Vector2d derivative(double s, int order) const;
  double curvature(double s) const;

  const std::vector<Piece>& pieces() const { return pieces_; }
  std::vector<double> knots() const;

  /// Objective of the smoothing problem this spline was produced by.
  double objective = 0.0;
  int solver_iterations = 0;

 private:
  std::pair<const Piece*, double> locate(double s) const;

  std::vector<Piece> pieces_;
  double param_length_ = 0.0;
  double arc_length_ = 0.0;
};

/// Weighted integral of squared 2nd..4th derivatives of both coordinates.
double smoothing_objective(const PathSpline& spline, const std::array<double, 3>& weights);

PathSpline smooth_path(const StandardPath& standard, const SmoothingOptions& options = {});

/// Largest per-axis deviation |f(s_j) - x_j|, |g(s_j) - y_j| over the samples.
double max_sample_deviation(const PathSpline& spline, const StandardPath& standard);
/// Same measure on a grid `factor` times denser than the samples (monitoring only).
double max_dense_deviation(const PathSpline& spline, const StandardPath& standard, int factor = 10);

/// Linear speed profile s(t) = (s_t / s_n) v_ref t.
struct SpeedProfile {
  double rate = 0.0;      // ds/dt
  double duration = 0.0;  // s_n / v_ref
  double param_length = 0.0;

  double s(double t) const { return rate * t; }
};

SpeedProfile speed_profile(double s_t, double s_n, double v_ref);

/// Quintic longitudinal profile over [0, duration] from (0, v0, a0) to (L_A, vT, aT).
struct BufferProfile {
  Eigen::Matrix<double, 6, 1> coeffs = Eigen::Matrix<double, 6, 1>::Zero();
  double duration = 0.0;
  double length = 0.0;

  double position(double t) const;
  double velocity(double t) const;
  double accel(double t) const;
};

struct LongitudinalState {
  double s = 0.0;
  double v = 0.0;
  double a = 0.0;
};

/// Closed-form quintic for a fixed adjust duration.
BufferProfile buffer_quintic(double adjust_length, const LongitudinalState& start, double end_speed,
                             double end_accel, double duration);

/// Whether v stays in [0, v_max] and a in [a_min, a_max] on a 1 ms grid.
bool buffer_within_limits(const BufferProfile& profile, const VehicleSpec& spec);

/// Smallest duration on a 0.1 s grid whose quintic respects the vehicle limits.
/// Throws if none exists below `max_duration`.
BufferProfile buffer_profile(double adjust_length, double end_speed, double end_accel,
                             const LongitudinalState& start, const VehicleSpec& spec,
                             double max_duration = 60.0);

/// Reference trajectory through the conflict area: path, speed profile, routing.
class Trajectory : public MotionSampler {
 public:
  Trajectory(PathSpline path, SpeedProfile speed, int road_from, int road_to, Maneuver m);

  double t_begin() const override { return 0.0; }
  double t_end() const override { return speed_.duration; }
  MotionSample sample(double t) const override;

  double duration() const { return speed_.duration; }
  const PathSpline& path() const { return path_; }
  const SpeedProfile& speed() const { return speed_; }
  int road_from() const { return road_from_; }
  int road_to() const { return road_to_; }
  Maneuver maneuver() const { return maneuver_; }

 private:
  PathSpline path_;
  SpeedProfile speed_;
  int road_from_;
  int road_to_;
  Maneuver maneuver_;
};

/// Pose at absolute time t for a trajectory entered at t_e.
Pose2 sample_pose(const Trajectory& traj, double t, double t_e);

/// Buffer run, conflict-area core and departure stub, with time 0 at CA entry.
/// The run starts from rest on the stop line `adjust_length` before the CA.
class CrossingMotion : public MotionSampler {
 public:
  CrossingMotion(std::shared_ptr<const MotionSampler> core, BufferProfile approach,
                 const VehicleSpec& spec);

  double t_begin() const override { return -approach_.duration; }
  double t_end() const override { return core_->t_end() + lead_out_; }
  MotionSample sample(double t) const override;

  /// Window during which the inflated footprint can overlap the conflict area.
  double occupancy_begin() const { return -lead_in_; }
  double occupancy_end() const { return core_->t_end() + lead_out_; }
  double core_duration() const { return core_->t_end(); }
  double lead_in() const { return lead_in_; }
  double lead_out() const { return lead_out_; }
  const BufferProfile& approach() const { return approach_; }
  const MotionSampler& core() const { return *core_; }
  std::shared_ptr<const MotionSampler> core_ptr() const { return core_; }

 private:
  std::shared_ptr<const MotionSampler> core_;
  BufferProfile approach_;
  MotionSample entry_;
  MotionSample exit_;
  double lead_in_ = 0.0;
  double lead_out_ = 0.0;
};

struct ReferenceConfig {
  IntersectionConfig intersection;
  VehicleSpec vehicle;
  SmoothingOptions smoothing;
  double v_ref = 8.0;
  double sample_spacing = kDefaultSampleSpacing;
};

/// One entry per (road_from, maneuver): built once, read-only afterwards.
struct ManeuverPlan {
  int road_from = 0;
  int road_to = 0;
  Maneuver maneuver = Maneuver::GoStraight;
  std::shared_ptr<const StandardPath> standard;
  std::shared_ptr<const Trajectory> trajectory;
  std::shared_ptr<const CrossingMotion> crossing;
  BufferProfile buffer;  // minimal-duration run from rest
};

class ReferenceLibrary {
 public:
  explicit ReferenceLibrary(const ReferenceConfig& config);

  const ManeuverPlan& plan(int road_from, Maneuver m) const;
  const ReferenceConfig& config() const { return config_; }
  const std::vector<ManeuverPlan>& plans() const { return plans_; }

 private:
  ReferenceConfig config_;
  std::vector<ManeuverPlan> plans_;
};

}  // namespace bilevel
