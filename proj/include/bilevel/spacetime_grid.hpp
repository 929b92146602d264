#pragma once

#include <Eigen/Core>

#include <compare>
#include <cstdint>
#include <optional>
#include <vector>

#include "bilevel/core_model.hpp"

namespace bilevel {

class Trajectory;
class CrossingMotion;

/// Resolution and extent of the (X, Y, T) block grid over the conflict area.
struct GridSpec {
  double dx = 0.2;
  double dy = 0.2;
  double dt = 0.2;
  double origin_x = -4.0;
  double origin_y = -4.0;
  int nx = 40;
  int ny = 40;

  void validate() const;
  Rect bounds() const { return {origin_x, origin_y, origin_x + nx * dx, origin_y + ny * dy}; }
  bool compatible(const GridSpec& o) const;
  Eigen::Vector2d cell_center(int jx, int jy) const;
  Rect cell_rect(int jx, int jy) const;
  double slab_begin(int jt) const { return (jt - 1) * dt; }

  /// Grid covering the conflict area of `cfg` at the given resolution.
  static GridSpec for_intersection(const IntersectionConfig& cfg, double dx = 0.2, double dy = 0.2,
                                   double dt = 0.2);
};

struct CellIndex {
  int jx = 1;
  int jy = 1;
  int jt = 1;
  auto operator<=>(const CellIndex&) const = default;
};

struct Cell2 {
  int jx = 1;
  int jy = 1;
  auto operator<=>(const Cell2&) const = default;
};

/// Block containing (x, y, t); nullopt when (x, y) lies outside the grid.
std::optional<CellIndex> block_of(double x, double y, double t, const GridSpec& spec);

struct FootprintBox {
  Eigen::Vector2d center = Eigen::Vector2d::Zero();
  double heading = 0.0;
  double half_length = 0.0;
  double half_width = 0.0;

  static FootprintBox inflated(const Pose2& pose, const VehicleSpec& spec);
  static FootprintBox raw(const Pose2& pose, const VehicleSpec& spec);
  std::array<Eigen::Vector2d, 4> corners() const;
  bool contains(const Eigen::Vector2d& p, double tol = 0.0) const;
};

/// Cells whose interior overlaps the rectangle, plus the cell holding its
/// centre. Cells outside the grid are dropped. Sorted by (jx, jy).
std::vector<Cell2> rasterize_footprint(const FootprintBox& box, const GridSpec& spec);

/// Set of space-time blocks with one bitmap per time slab.
class OccupancySet {
 public:
  OccupancySet() = default;
  explicit OccupancySet(const GridSpec& spec, int owner = -1);

  const GridSpec& grid() const { return spec_; }
  int owner() const { return owner_; }
  void set_owner(int id) { owner_ = id; }

  void insert(const CellIndex& c);
  void insert_slab(int jt, const std::vector<Cell2>& cells);
  bool contains(const CellIndex& c) const;
  bool empty() const { return size() == 0; }
  std::size_t size() const;
  std::size_t slab_size(int jt) const;
  /// Smallest / largest slab holding at least one cell; 0 when empty.
  int min_jt() const;
  int max_jt() const;

  std::vector<CellIndex> cells() const;
  std::vector<Cell2> slab_cells(int jt) const;

  OccupancySet translated(int k) const;
  /// Whether this set shifted by k slabs meets `other`.
  bool intersects_shifted(const OccupancySet& other, int k) const;
  bool intersects(const OccupancySet& other) const { return intersects_shifted(other, 0); }
  void merge(const OccupancySet& other);

  bool operator==(const OccupancySet& o) const;

 private:
  using Slab = std::vector<std::uint64_t>;
  const Slab* slab(int jt) const;
  Slab& slab_mut(int jt);
  std::size_t bit(int jx, int jy) const { return static_cast<std::size_t>((jy - 1) * spec_.nx + (jx - 1)); }
  void check_compatible(const OccupancySet& o) const;

  GridSpec spec_;
  int owner_ = -1;
  int base_ = 1;  // jt of slabs_[0]
  std::vector<Slab> slabs_;
  std::size_t words_ = 0;
};

/// True iff A and B share no block. Throws on grid mismatch.
bool disjoint(const OccupancySet& a, const OccupancySet& b);

/// Slab index offset floor(t_e / dt) of an entry time.
int entry_slab_offset(double t_e, const GridSpec& spec);

/// Step between pose samples inside a slab.
double sweep_step(const GridSpec& spec, const VehicleSpec& vspec);

/// Union of footprints of `motion` over the half-open window [t0, t1).
/// Relative time t is stamped into slab floor(t/dt) + 1 + offset. Every box
/// is widened by the motion to its neighbouring samples, so poses between
/// samples stay covered.
OccupancySet sweep_occupancy(const MotionSampler& motion, double t0, double t1, double half_length,
                             double half_width, const GridSpec& spec, double max_speed, int offset,
                             int owner = -1);

/// Occupancy of the conflict-area trajectory entered at t_e.
OccupancySet trajectory_occupancy(const Trajectory& traj, const VehicleSpec& vspec,
                                  const GridSpec& spec, double t_e, int owner = -1);

/// Occupancy including the approach and departure while the inflated
/// footprint still overlaps the conflict area.
OccupancySet crossing_occupancy(const CrossingMotion& motion, const VehicleSpec& vspec,
                                const GridSpec& spec, int offset, int owner = -1);

}  // namespace bilevel
