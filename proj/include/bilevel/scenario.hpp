#pragma once

#include <json.hpp>

#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "bilevel/core_model.hpp"
#include "bilevel/high_level_planner.hpp"
#include "bilevel/kinematics.hpp"
#include "bilevel/low_level_planner.hpp"
#include "bilevel/reference_trajectory.hpp"
#include "bilevel/spacetime_grid.hpp"

namespace bilevel {

/// Fractions of left / straight / right maneuvers.
struct ManeuverMix {
  double left = 0.5;
  double straight = 0.25;
  double right = 0.25;

  void validate() const;
  static ManeuverMix flow1() { return {0.5, 0.25, 0.25}; }
  static ManeuverMix flow2() { return {0.25, 0.5, 0.25}; }
};

struct FlowSpec {
  ManeuverMix mix;
  int count = 0;
  double rate_per_road = 0.2;  // vehicles per second per road
};

/// Rectangle moving at constant velocity while it exists.
struct ObstacleBox {
  Eigen::Vector2d center = Eigen::Vector2d::Zero();
  double length = 1.0;
  double width = 1.0;
  double heading = 0.0;
  Eigen::Vector2d velocity = Eigen::Vector2d::Zero();
  double t_begin = 0.0;
  double t_end = std::numeric_limits<double>::infinity();

  Pose2 pose_at(double t) const;
};

/// Stand-alone refinement case: straight reference, obstacles and a
/// rectangular tunnel on a dedicated grid.
struct RefineCase {
  Eigen::Vector2d start = Eigen::Vector2d::Zero();
  double heading = 0.0;
  double speed = 5.0;
  double duration = 8.0;
  double knot_interval = 1.0;
  double tunnel_half_width = 8.0;
  GridSpec grid;
  VehicleSpec vehicle;
  std::vector<ObstacleBox> obstacles;
};

struct Scenario {
  std::string name = "default";
  std::uint64_t seed = 1;
  IntersectionConfig intersection;
  double dx = 0.2;
  double dy = 0.2;
  double dt = 0.2;
  VehicleSpec vehicle;
  SmoothingOptions smoothing;
  double v_ref = 8.0;
  double sample_spacing = kDefaultSampleSpacing;
  HighLevelConfig high_level;
  LowLevelOptions low_level;
  double knot_interval = 0.2;
  NoiseConfig noise;
  double sim_step = kDefaultSimStep;
  std::vector<MotionRequest> requests;
  std::optional<FlowSpec> flow;
  std::vector<ObstacleBox> obstacles;
  std::optional<RefineCase> refine;

  void validate() const;
  GridSpec grid() const { return GridSpec::for_intersection(intersection, dx, dy, dt); }
  ReferenceConfig reference_config() const;
};

/// Poisson arrivals at total rate R * rate_per_road, roads uniform, maneuvers per mix.
std::vector<MotionRequest> generate_flow(const ManeuverMix& mix, int n, double rate_per_road,
                                         std::uint64_t seed, const IntersectionConfig& cfg);

/// Explicit requests followed by the generated flow (ids continue).
std::vector<MotionRequest> scenario_requests(const Scenario& s);

/// Occupied cells of the obstacles over slabs 1..last_jt.
OccupancySet obstacle_occupancy(const std::vector<ObstacleBox>& obstacles, const GridSpec& grid,
                                int last_jt);

Scenario scenario_from_json(const nlohmann::json& j);
nlohmann::json scenario_to_json(const Scenario& s);
Scenario load_scenario(const std::string& path);

}  // namespace bilevel
