#pragma once

#include <Eigen/Core>

#include <optional>
#include <string>
#include <vector>

#include "bilevel/bspline.hpp"
#include "bilevel/spacetime_grid.hpp"

namespace bilevel {

struct CostWeights {
  double w_acc = 5.0;
  double w_jerk = 1.0;
  double w_c = 0.1;

  void validate() const;
};

/// Clearance margin d_r, vehicle radius d_f and the breakpoint s_f (= d_r).
struct CollisionParams {
  double d_r = 0.5;
  double d_f = 2.5;
  double s_f = 0.5;

  void validate() const;
  static CollisionParams make(double d_r, double d_f) { return {d_r, d_f, d_r}; }
};

/// Piecewise penalty of d = d_r + d_f - |v| and its derivative in d.
double collision_penalty(double d, const CollisionParams& p);
double collision_penalty_slope(double d, const CollisionParams& p);

/// Obstacle cells per absolute time slab: real obstacles plus virtual
/// cells around the feasible tunnel.
class ObstacleGrid {
 public:
  explicit ObstacleGrid(const GridSpec& spec);

  const GridSpec& grid() const { return spec_; }
  void add_obstacles(const OccupancySet& cells);
  void add_virtual(const OccupancySet& cells);
  const OccupancySet& real() const { return real_; }
  const OccupancySet& virtual_cells() const { return virtual_; }
  const OccupancySet& all() const { return all_; }
  /// Cells of one slab sorted by (jx, jy); empty when none.
  const std::vector<Cell2>& slab(int jt) const;

 private:
  void reindex();

  GridSpec spec_;
  OccupancySet real_;
  OccupancySet virtual_;
  OccupancySet all_;
  int index_base_ = 0;
  std::vector<std::vector<Cell2>> index_;
};

/// One-cell ring around every slab of the tunnel, clipped to the grid.
OccupancySet ft_virtual_obstacles(const OccupancySet& tunnel);

struct CostValue {
  double value = 0.0;
  std::vector<Eigen::Vector2d> gradient;  // zero on clamped points
};

CostValue smoothness_cost(const ControlPointSequence& q, const CostWeights& w);
/// Sum over free control points of the penalties against the cells of the
/// slab at each point's peak time.
CostValue collision_cost(const ControlPointSequence& q, const ObstacleGrid& grid,
                         const CollisionParams& p, double w_c);

struct LowLevelOptions {
  CostWeights weights;
  CollisionParams collision;
  VehicleSpec vehicle;
  int max_iterations = 200;
  double gradient_tolerance = 1e-4;
  int memory = 8;
  int max_reweights = 3;
  double lateral_accel_max = 10.0;
};

struct IterateRecord {
  int attempt = 0;
  int iteration = 0;
  double smoothness = 0.0;
  double collision = 0.0;
  double total = 0.0;
  double gradient_norm = 0.0;
};

struct LowLevelResult {
  ControlPointSequence q;
  bool collision_free = false;
  bool inside_tunnel = true;
  bool kinematics_ok = false;
  int attempts = 0;
  double final_w_c = 0.0;
  double final_w_acc = 0.0;
  double compute_ms = 0.0;
  std::vector<IterateRecord> log;
  std::vector<CellIndex> residual_collisions;
  std::string message;

  bool ok() const { return collision_free && inside_tunnel; }
};

/// Footprint sweep of the spline in absolute time.
OccupancySet spline_occupancy(const ControlPointSequence& q, const VehicleSpec& vehicle,
                              const GridSpec& spec);

/// Quasi-Newton refinement with re-weighting. When `tunnel` is given its
/// virtual ring must already be in `grid`, and containment is post-checked.
LowLevelResult optimize(const ControlPointSequence& q0, const ObstacleGrid& grid,
                        const LowLevelOptions& options, const OccupancySet* tunnel = nullptr);

/// Plain L-BFGS run on the total cost; exposed for descent audits.
ControlPointSequence minimize_total(const ControlPointSequence& q0, const ObstacleGrid& grid,
                                    const CostWeights& w, const CollisionParams& p,
                                    const LowLevelOptions& options, int attempt,
                                    std::vector<IterateRecord>* log);

}  // namespace bilevel
