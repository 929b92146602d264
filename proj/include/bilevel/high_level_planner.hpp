#pragma once

#include <memory>
#include <vector>

#include "bilevel/core_model.hpp"
#include "bilevel/reference_trajectory.hpp"
#include "bilevel/spacetime_grid.hpp"

namespace bilevel {

struct PriorityWeights {
  double w_d = 1.0;
  double w_w = 0.5;
  double w_sta = 1.0;

  void validate() const;
};

struct HighLevelConfig {
  PriorityWeights weights;
  double arrival_rate = 0.8;  // a_r^av, same for every road
  int tunnel_margin = 0;      // extra Chebyshev rings granted around each allocation
  int threads = 1;            // candidate scoring workers; results do not depend on it
};

struct PriorityTerms {
  double p_d = 0.0;
  double p_w = 0.0;
  double p_sta = 0.0;
  double score = 0.0;
};

/// Score of one candidate. `queue_arrivals` lists the arrival times of the
/// candidate's road queue, head first.
PriorityTerms priority(int tentative_max_jt, int allocated_max_jt,
                       const std::vector<double>& queue_arrivals, double clock,
                       double arrival_rate, const PriorityWeights& w, double dt);

struct Allocation {
  int vehicle_id = 0;
  int road_from = 0;
  int road_to = 0;
  Maneuver maneuver = Maneuver::GoStraight;
  double arrival = 0.0;
  int round = 0;
  int offset = 0;        // t_e = offset * dt
  int floor_offset = 0;  // admissible floor on the dt grid
  double t_e = 0.0;
  double start_time = 0.0;  // leaves the stop line at rest
  double exit_time = 0.0;
  OccupancySet occupancy;
  std::shared_ptr<const Trajectory> trajectory;
  std::shared_ptr<const CrossingMotion> crossing;
  BufferProfile buffer;
  PriorityTerms terms;
};

struct FeasibleTunnel {
  Allocation allocation;
  OccupancySet cells;  // allocation cells plus granted dilation
  int margin = 0;
};

/// Chebyshev dilation of a slab's cell set by `rings`, clipped to the grid.
std::vector<Cell2> dilate_cells(const std::vector<Cell2>& cells, int rings, const GridSpec& spec);

/// Widen an allocation by up to `margin` rings per slab while staying
/// disjoint from `allocated`.
FeasibleTunnel feasible_tunnel(const Allocation& alloc, const OccupancySet& allocated, int margin);

struct EntrySearch {
  int offset = 0;
  double t_e = 0.0;
  OccupancySet occupancy;
};

struct Candidate {
  int vehicle_id = 0;
  int road = 0;
  double arrival = 0.0;
  int floor_offset = 0;
  EntrySearch entry;
  PriorityTerms terms;
};

struct RoundRecord {
  int round = 0;
  double clock = 0.0;
  std::vector<int> queue_lengths;  // per road, before the pop
  std::vector<Candidate> candidates;
  int chosen_vehicle = 0;
  double compute_ms = 0.0;
};

struct ScheduleResult {
  std::vector<Allocation> allocations;  // in scheduling order
  std::vector<FeasibleTunnel> tunnels;
  std::vector<RoundRecord> rounds;
  OccupancySet allocated;

  double total_passing_time() const;
  /// max j_t * dt over every allocation.
  double makespan(double dt) const;
  const Allocation* find(int vehicle_id) const;
};

class HighLevelPlanner {
 public:
  HighLevelPlanner(std::shared_ptr<const ReferenceLibrary> library, const GridSpec& grid,
                   const HighLevelConfig& config = {});

  const GridSpec& grid() const { return grid_; }
  const HighLevelConfig& config() const { return config_; }
  const ReferenceLibrary& library() const { return *library_; }

  /// Occupancy of a crossing entered at t_e = 0 (slabs may be < 1).
  const OccupancySet& base_occupancy(int road, Maneuver m) const;
  /// Minimal buffer run time from rest.
  double adjust_time(int road, Maneuver m) const;

  /// First dt-grid entry at or after `floor_offset` disjoint from `allocated`.
  EntrySearch earliest_entry(const MotionRequest& req, const OccupancySet& allocated,
                             int floor_offset) const;

  /// Sequential allocation with priority selection per round.
  ScheduleResult run(const std::vector<MotionRequest>& requests) const;

  /// Whole-area exclusion with the given vehicle order.
  ScheduleResult run_cs(const std::vector<MotionRequest>& requests,
                        const std::vector<int>& order) const;

  /// Global min-max makespan by exhaustive offset search (small instances).
  /// Returns the optimum max j_t * dt, bounded above by `upper_bound`.
  double optimal_makespan(const std::vector<MotionRequest>& requests, double upper_bound) const;

  int floor_offset(double ready_time) const;

 private:
  Allocation make_allocation(const MotionRequest& req, const EntrySearch& e, int floor,
                             int round) const;
  std::size_t plan_index(int road, Maneuver m) const;

  std::shared_ptr<const ReferenceLibrary> library_;
  GridSpec grid_;
  HighLevelConfig config_;
  std::vector<OccupancySet> base_;
};

}  // namespace bilevel
