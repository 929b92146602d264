#pragma once

#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "bilevel/bspline.hpp"
#include "bilevel/high_level_planner.hpp"
#include "bilevel/kinematics.hpp"
#include "bilevel/low_level_planner.hpp"
#include "bilevel/scenario.hpp"

namespace bilevel {

enum class Strategy { Proposed, CollisionSet };

std::string_view to_string(Strategy s);
Strategy strategy_from_string(std::string_view name);

struct TraceSample {
  double t = 0.0;
  VehicleState state;  // ground truth
  ControlInput control;
  double lateral_error = 0.0;
};

struct VehicleOutcome {
  int vehicle_id = 0;
  int road_from = 0;
  int road_to = 0;
  Maneuver maneuver = Maneuver::GoStraight;
  double arrival = 0.0;
  double t_e = 0.0;
  double start_time = 0.0;
  double exit_time = 0.0;
  double wait = 0.0;  // t_e - arrival - adjust time
  bool refined = false;
  bool incident = false;
  std::string incident_reason;
  double ll_ms = 0.0;
  std::optional<ControlPointSequence> refined_path;
  std::vector<IterateRecord> ll_log;
  std::vector<TraceSample> trace;
  OccupancySet executed;  // raw footprint sweep in absolute slabs
};

struct Metrics {
  int vehicles = 0;
  int scheduled = 0;
  double total_passing_time = 0.0;
  double makespan = 0.0;  // max j_t * dt of the allocations
  double mean_wait = 0.0;
  double max_wait = 0.0;
  double max_head_wait = 0.0;
  std::vector<double> round_ms;
  double hl_total_ms = 0.0;
  double hl_max_round_ms = 0.0;
  std::vector<double> ll_ms;
  std::vector<std::pair<double, int>> queue_trace;  // (clock, vehicles queued)
  int planned_overlaps = 0;   // allocation pairs sharing a block
  int vehicle_collisions = 0; // executed footprint pairs sharing a block
  int obstacle_collisions = 0;
  int incidents = 0;

  int collisions() const { return planned_overlaps + vehicle_collisions + obstacle_collisions; }
};

struct RunOptions {
  Strategy strategy = Strategy::Proposed;
  int threads = 1;
  bool simulate = true;        // closed loop after planning
  bool keep_traces = true;     // drop per-step traces to save memory
};

struct ExperimentResult {
  std::string scenario_name;
  std::uint64_t seed = 0;
  Strategy strategy = Strategy::Proposed;
  ScheduleResult schedule;
  std::vector<VehicleOutcome> vehicles;  // in scheduling order
  OccupancySet obstacles;
  Metrics metrics;

  bool accepted() const {
    return metrics.collisions() == 0 && metrics.scheduled == metrics.vehicles;
  }
};

std::shared_ptr<const ReferenceLibrary> build_library(const Scenario& s);

ExperimentResult run_experiment(const Scenario& s, const RunOptions& opts = {});
/// Same, reusing a library built from an identical reference configuration.
ExperimentResult run_experiment(const Scenario& s, std::shared_ptr<const ReferenceLibrary> library,
                                const RunOptions& opts);

struct Comparison {
  ExperimentResult proposed;
  ExperimentResult cs;
  double improvement = 0.0;  // (cs - proposed) / cs total passing time
};

Comparison compare(const Scenario& s, std::shared_ptr<const ReferenceLibrary> library,
                   int threads = 1, bool simulate = false);

/// Allocation pairs whose cell lists share a block, by explicit set intersection.
int count_pairwise_overlaps(const std::vector<OccupancySet>& sets);

/// Linear interpolation through a closed-loop trace.
class TraceMotion : public MotionSampler {
 public:
  explicit TraceMotion(const std::vector<TraceSample>& trace);
  double t_begin() const override;
  double t_end() const override;
  MotionSample sample(double t) const override;
  double max_speed() const;

 private:
  const std::vector<TraceSample>& trace_;
};

/// Tracks `reference` (absolute time) with the kinematic bicycle model from
/// rest at its first pose.
std::vector<TraceSample> track_reference(const MotionSampler& reference, const VehicleSpec& spec,
                                         const NoiseConfig& noise, std::uint64_t stream_id,
                                         double h);

struct RefineOutcome {
  GridSpec grid;
  ControlPointSequence initial;
  LowLevelResult result;
  OccupancySet obstacles;
  OccupancySet tunnel;
};

/// Low-Level planner on the scenario's stand-alone refinement case.
RefineOutcome run_refine(const Scenario& s);

}  // namespace bilevel
