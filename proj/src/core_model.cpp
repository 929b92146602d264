#include "bilevel/core_model.hpp"

#include <Eigen/LU>

#include <algorithm>
#include <cmath>
#include <numbers>

namespace bilevel {

namespace {

Eigen::Vector2d unit(double heading) { return {std::cos(heading), std::sin(heading)}; }

// Right-hand normal of a heading.
Eigen::Vector2d right_of(double heading) { return {std::sin(heading), -std::cos(heading)}; }

}  // namespace

std::string_view to_string(Maneuver m) {
  switch (m) {
    case Maneuver::TurnLeft:
      return "left";
    case Maneuver::GoStraight:
      return "straight";
    case Maneuver::TurnRight:
      return "right";
  }
  return "unknown";
}

Maneuver maneuver_from_string(std::string_view name) {
  if (name == "left" || name == "TurnLeft") return Maneuver::TurnLeft;
  if (name == "straight" || name == "GoStraight") return Maneuver::GoStraight;
  if (name == "right" || name == "TurnRight") return Maneuver::TurnRight;
  throw InvalidArgument("unknown maneuver '" + std::string(name) + "'");
}

double wrap_angle(double a) {
  constexpr double two_pi = 2.0 * std::numbers::pi;
  a = std::fmod(a + std::numbers::pi, two_pi);
  if (a < 0.0) a += two_pi;
  return a - std::numbers::pi;
}

void VehicleSpec::validate() const {
  if (!(length > 0.0 && width > 0.0 && wheelbase > 0.0))
    throw InvalidArgument("vehicle length, width and wheelbase must be positive");
  if (!(accel_min < 0.0 && accel_max > 0.0))
    throw InvalidArgument("vehicle requires accel_min < 0 < accel_max");
  if (!(speed_max > 0.0)) throw InvalidArgument("vehicle speed_max must be positive");
  if (!(steer_max > 0.0 && steer_max < 0.5 * std::numbers::pi))
    throw InvalidArgument("vehicle steer_max must lie in (0, pi/2)");
  if (redundancy_long < 0.0 || redundancy_lat < 0.0)
    throw InvalidArgument("vehicle redundancy must be non-negative");
}

double VehicleSpec::half_diagonal() const { return 0.5 * std::hypot(length, width); }

void IntersectionConfig::validate() const {
  if (road_count < 2) throw InvalidArgument("intersection needs at least two roads");
  if (!(lane_width > 0.0)) throw InvalidArgument("lane width must be positive");
  if (!(adjust_length > 0.0 && adjust_length <= buffer_length))
    throw InvalidArgument("adjust length must satisfy 0 < L_A <= L_B");
  if (road_count != 4 && routing.size() != static_cast<std::size_t>(road_count))
    throw InvalidArgument("a routing table with one row per road is required when R != 4");
}

Rect IntersectionConfig::conflict_area() const {
  const double h = conflict_half_side();
  return {-h, -h, h, h};
}

Eigen::Vector2d IntersectionConfig::arm_direction(int road) const {
  const double phi = -0.5 * std::numbers::pi - (road - 1) * 2.0 * std::numbers::pi / road_count;
  return unit(phi);
}

double IntersectionConfig::entry_heading(int road) const {
  const Eigen::Vector2d d = arm_direction(road);
  return std::atan2(-d.y(), -d.x());
}

double IntersectionConfig::exit_heading(int road) const {
  const Eigen::Vector2d d = arm_direction(road);
  return std::atan2(d.y(), d.x());
}

Eigen::Vector2d IntersectionConfig::entry_point(int road) const {
  return conflict_half_side() * arm_direction(road) +
         0.5 * lane_width * right_of(entry_heading(road));
}

Eigen::Vector2d IntersectionConfig::exit_point(int road) const {
  return conflict_half_side() * arm_direction(road) +
         0.5 * lane_width * right_of(exit_heading(road));
}

int road_target(int road_from, Maneuver m, const IntersectionConfig& cfg) {
  const int r = cfg.road_count;
  if (road_from < 1 || road_from > r)
    throw InvalidArgument("road index " + std::to_string(road_from) + " out of range");
  if (!cfg.routing.empty()) {
    if (cfg.routing.size() != static_cast<std::size_t>(r))
      throw InvalidArgument("routing table must have one row per road");
    const auto& row = cfg.routing[road_from - 1];
    switch (m) {
      case Maneuver::TurnLeft:
        return row[0];
      case Maneuver::GoStraight:
        return row[1];
      case Maneuver::TurnRight:
        return row[2];
    }
  }
  if (r != 4) throw InvalidArgument("routing for R != 4 requires a user-supplied table");
  const int zero_based = road_from - 1;
  switch (m) {
    case Maneuver::TurnLeft:
      return (zero_based + 1) % 4 + 1;
    case Maneuver::GoStraight:
      return (zero_based + 2) % 4 + 1;
    case Maneuver::TurnRight:
      return (zero_based + 3) % 4 + 1;
  }
  return road_from;
}

MotionRequest make_request(int vehicle_id, int road_from, Maneuver m, double arrival_time,
                           const IntersectionConfig& cfg) {
  if (arrival_time < 0.0) throw InvalidArgument("arrival time must be non-negative");
  MotionRequest req;
  req.vehicle_id = vehicle_id;
  req.road_from = road_from;
  req.maneuver = m;
  req.road_to = road_target(road_from, m, cfg);
  req.arrival_time = arrival_time;
  const Eigen::Vector2d stop =
      cfg.entry_point(road_from) + cfg.adjust_length * cfg.arm_direction(road_from);
  req.initial = {stop.x(), stop.y(), cfg.entry_heading(road_from), 0.0};
  return req;
}

// ---------------------------------------------------------------------------

StandardPath::StandardPath(std::vector<Segment> segments, double nominal_spacing)
    : segments_(std::move(segments)) {
  if (segments_.empty()) throw DegenerateGeometry("standard path has no segments");
  if (!(nominal_spacing > 0.0)) throw InvalidArgument("sample spacing must be positive");
  for (const auto& seg : segments_) length_ += seg.length;
  if (!(length_ > 0.0)) throw DegenerateGeometry("standard path has zero length");

  const auto n = static_cast<int>(std::max(1.0, std::ceil(length_ / nominal_spacing - 1e-9)));
  spacing_ = length_ / n;
  sample_s_.reserve(n + 1);
  samples_.reserve(n + 1);
  for (int j = 0; j <= n; ++j) {
    const double s = (j == n) ? length_ : j * spacing_;
    sample_s_.push_back(s);
    samples_.push_back(point_at(s));
  }
}

std::pair<const StandardPath::Segment*, double> StandardPath::locate(double s) const {
  s = std::clamp(s, 0.0, length_);
  for (const auto& seg : segments_) {
    if (s <= seg.length || &seg == &segments_.back()) return {&seg, std::min(s, seg.length)};
    s -= seg.length;
  }
  return {&segments_.back(), segments_.back().length};
}

Eigen::Vector2d StandardPath::point_at(double s) const {
  const auto [seg, u] = locate(s);
  if (!seg->is_arc) return seg->start + u * unit(seg->heading);
  const double k = seg->curvature;
  const double h0 = seg->heading;
  const double h1 = h0 + k * u;
  return seg->start +
         Eigen::Vector2d((std::sin(h1) - std::sin(h0)) / k, -(std::cos(h1) - std::cos(h0)) / k);
}

double StandardPath::heading_at(double s) const {
  const auto [seg, u] = locate(s);
  return wrap_angle(seg->heading + seg->curvature * u);
}

double StandardPath::curvature_at(double s) const { return locate(s).first->curvature; }

StandardPath standard_path(int road_from, int road_to, Maneuver m, const IntersectionConfig& cfg,
                           double sample_spacing) {
  cfg.validate();
  if (cfg.road_count != 4)
    throw InvalidArgument("standard paths are defined for the four-arm layout only");
  if (road_target(road_from, m, cfg) != road_to)
    throw InvalidArgument("road_to does not match the maneuver's routing");

  const Eigen::Vector2d p0 = cfg.entry_point(road_from);
  const Eigen::Vector2d p1 = cfg.exit_point(road_to);
  const double psi0 = cfg.entry_heading(road_from);
  const double psi1 = cfg.exit_heading(road_to);
  const Eigen::Vector2d d0 = unit(psi0);
  const Eigen::Vector2d d1 = unit(psi1);
  const double turn = wrap_angle(psi1 - psi0);

  std::vector<StandardPath::Segment> segs;
  if (m == Maneuver::GoStraight) {
    const Eigen::Vector2d delta = p1 - p0;
    const double along = delta.dot(d0);
    const double cross = d0.x() * delta.y() - d0.y() * delta.x();
    if (std::abs(turn) > 1e-9 || std::abs(cross) > 1e-9 || along <= 0.0)
      throw DegenerateGeometry("entry and exit lanes are not collinear for a straight crossing");
    segs.push_back({false, p0, psi0, along, 0.0});
    return StandardPath(std::move(segs), sample_spacing);
  }

  if ((m == Maneuver::TurnLeft) != (turn > 0.0) || std::abs(turn) < 1e-9)
    throw DegenerateGeometry("turn direction does not match the maneuver");

  // Corner of the two lane centrelines: p0 + a d0 = p1 - b d1.
  Eigen::Matrix2d lhs;
  lhs.col(0) = d0;
  lhs.col(1) = d1;
  const Eigen::Vector2d ab = lhs.fullPivLu().solve(p1 - p0);
  const double a = ab.x();
  const double b = ab.y();
  if (!(a > 0.0 && b > 0.0))
    throw DegenerateGeometry("lane centrelines do not admit a tangent arc");

  const double tangent = std::min(a, b);
  const double radius = tangent / std::tan(0.5 * std::abs(turn));
  if (!(radius > 0.0) || !std::isfinite(radius))
    throw DegenerateGeometry("tangent arc radius is not positive");
  const double sign = turn > 0.0 ? 1.0 : -1.0;

  const double stub0 = a - tangent;
  const double stub1 = b - tangent;
  Eigen::Vector2d cursor = p0;
  if (stub0 > 1e-12) {
    segs.push_back({false, cursor, psi0, stub0, 0.0});
    cursor += stub0 * d0;
  }
  segs.push_back({true, cursor, psi0, radius * std::abs(turn), sign / radius});
  if (stub1 > 1e-12) segs.push_back({false, p1 - stub1 * d1, psi1, stub1, 0.0});
  return StandardPath(std::move(segs), sample_spacing);
}

}  // namespace bilevel
