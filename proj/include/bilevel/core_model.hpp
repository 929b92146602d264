#pragma once

#include <Eigen/Core>

#include <array>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace bilevel {

/// Raised when an input violates a documented precondition or invariant.
class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when a geometric construction has no solution for the given layout.
class DegenerateGeometry : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Maneuver { TurnLeft, GoStraight, TurnRight };

inline constexpr std::array<Maneuver, 3> kAllManeuvers{Maneuver::TurnLeft, Maneuver::GoStraight,
                                                       Maneuver::TurnRight};

std::string_view to_string(Maneuver m);
Maneuver maneuver_from_string(std::string_view name);

struct Pose2 {
  double x = 0.0;
  double y = 0.0;
  double heading = 0.0;
};

/// Pose plus the first-order quantities a tracking controller needs.
struct MotionSample {
  Eigen::Vector2d position = Eigen::Vector2d::Zero();
  double heading = 0.0;
  double speed = 0.0;
  double accel = 0.0;      // along-track
  double curvature = 0.0;  // signed, left positive

  Pose2 pose() const { return {position.x(), position.y(), heading}; }
};

/// Anything that can report where a vehicle is at a given time.
class MotionSampler {
 public:
  virtual ~MotionSampler() = default;
  virtual double t_begin() const = 0;
  virtual double t_end() const = 0;
  virtual MotionSample sample(double t) const = 0;
};

struct VehicleState {
  double x = 0.0;
  double y = 0.0;
  double heading = 0.0;
  double speed = 0.0;
};

struct VehicleSpec {
  double length = 4.0;
  double width = 2.0;
  double wheelbase = 2.5;
  double accel_min = -8.0;
  double accel_max = 8.0;
  double speed_max = 12.0;
  double steer_max = 1.3;
  double redundancy_long = 0.5;
  double redundancy_lat = 0.5;

  void validate() const;
  double inflated_half_length() const { return 0.5 * length + redundancy_long; }
  double inflated_half_width() const { return 0.5 * width + redundancy_lat; }
  double half_diagonal() const;
};

struct Rect {
  double x_min = 0.0;
  double y_min = 0.0;
  double x_max = 0.0;
  double y_max = 0.0;

  bool contains(const Eigen::Vector2d& p, double tol = 0.0) const {
    return p.x() >= x_min - tol && p.x() <= x_max + tol && p.y() >= y_min - tol &&
           p.y() <= y_max + tol;
  }
  double width() const { return x_max - x_min; }
  double height() const { return y_max - y_min; }
};

/// Four-arm crossing with one inbound and one outbound lane per arm and
/// right-hand traffic. Arms are indexed 1..R so that a left turn from arm r
/// exits on arm r+1 and a right turn on arm r-1 (mod R); for R = 4, arm 1 is
/// the south arm, 2 west, 3 north, 4 east.
struct IntersectionConfig {
  int road_count = 4;
  double lane_width = 4.0;
  double buffer_length = 8.0;
  double adjust_length = 8.0;
  /// Optional routing table for R != 4: routing[r-1] = {left, straight, right}.
  std::vector<std::array<int, 3>> routing;

  void validate() const;
  Rect conflict_area() const;
  double conflict_half_side() const { return 0.25 * road_count * lane_width; }

  /// Outward direction of arm r (unit vector from the centre).
  Eigen::Vector2d arm_direction(int road) const;
  /// Point where the inbound lane centreline of arm r meets the conflict area.
  Eigen::Vector2d entry_point(int road) const;
  double entry_heading(int road) const;
  /// Point where the outbound lane centreline of arm r leaves the conflict area.
  Eigen::Vector2d exit_point(int road) const;
  double exit_heading(int road) const;
};

struct MotionRequest {
  int vehicle_id = 0;
  int road_from = 1;
  Maneuver maneuver = Maneuver::GoStraight;
  int road_to = 3;
  double arrival_time = 0.0;
  VehicleState initial;
};

int road_target(int road_from, Maneuver m, const IntersectionConfig& cfg);

MotionRequest make_request(int vehicle_id, int road_from, Maneuver m, double arrival_time,
                           const IntersectionConfig& cfg);

/// Idealised line & circle path through the conflict area with
/// arc-length parameterisation and equally spaced samples.
class StandardPath {
 public:
  struct Segment {
    bool is_arc = false;
    Eigen::Vector2d start = Eigen::Vector2d::Zero();
    double heading = 0.0;  // at segment start
    double length = 0.0;
    double curvature = 0.0;  // signed; 0 for lines
  };

  StandardPath(std::vector<Segment> segments, double nominal_spacing);

  double length() const { return length_; }
  Eigen::Vector2d point_at(double s) const;
  double heading_at(double s) const;
  double curvature_at(double s) const;

  const std::vector<Segment>& segments() const { return segments_; }
  /// Effective sample spacing (<= the requested spacing; divides the length).
  double spacing() const { return spacing_; }
  const std::vector<double>& sample_s() const { return sample_s_; }
  const std::vector<Eigen::Vector2d>& samples() const { return samples_; }

  Eigen::Vector2d start() const { return point_at(0.0); }
  Eigen::Vector2d end() const { return point_at(length_); }
  double start_heading() const { return heading_at(0.0); }
  double end_heading() const { return heading_at(length_); }

 private:
  std::pair<const Segment*, double> locate(double s) const;

  std::vector<Segment> segments_;
  double length_ = 0.0;
  double spacing_ = 0.0;
  std::vector<double> sample_s_;
  std::vector<Eigen::Vector2d> samples_;
};

inline constexpr double kDefaultSampleSpacing = 0.5;

StandardPath standard_path(int road_from, int road_to, Maneuver m, const IntersectionConfig& cfg,
                           double sample_spacing = kDefaultSampleSpacing);

double wrap_angle(double a);

}  // namespace bilevel
