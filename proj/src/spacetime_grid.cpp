#include "bilevel/spacetime_grid.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <limits>

#include "bilevel/reference_trajectory.hpp"

namespace bilevel {

namespace {

constexpr double kOverlapEps = 1e-9;

int floor_index(double v) { return static_cast<int>(std::floor(v)); }

}  // namespace

// ---------------------------------------------------------------------------
// GridSpec

void GridSpec::validate() const {
  if (!(dx > 0.0 && dy > 0.0 && dt > 0.0)) throw InvalidArgument("grid resolutions must be positive");
  if (nx < 1 || ny < 1) throw InvalidArgument("grid extents must be positive");
}

bool GridSpec::compatible(const GridSpec& o) const {
  return dx == o.dx && dy == o.dy && dt == o.dt && origin_x == o.origin_x &&
         origin_y == o.origin_y && nx == o.nx && ny == o.ny;
}

Eigen::Vector2d GridSpec::cell_center(int jx, int jy) const {
  return {origin_x + (jx - 0.5) * dx, origin_y + (jy - 0.5) * dy};
}

Rect GridSpec::cell_rect(int jx, int jy) const {
  return {origin_x + (jx - 1) * dx, origin_y + (jy - 1) * dy, origin_x + jx * dx,
          origin_y + jy * dy};
}

GridSpec GridSpec::for_intersection(const IntersectionConfig& cfg, double dx, double dy,
                                    double dt) {
  const Rect ca = cfg.conflict_area();
  GridSpec g;
  g.dx = dx;
  g.dy = dy;
  g.dt = dt;
  g.origin_x = ca.x_min;
  g.origin_y = ca.y_min;
  g.nx = static_cast<int>(std::ceil(ca.width() / dx - 1e-9));
  g.ny = static_cast<int>(std::ceil(ca.height() / dy - 1e-9));
  g.validate();
  return g;
}

std::optional<CellIndex> block_of(double x, double y, double t, const GridSpec& spec) {
  if (t < 0.0) throw InvalidArgument("block_of needs t >= 0");
  const int jx = floor_index((x - spec.origin_x) / spec.dx) + 1;
  const int jy = floor_index((y - spec.origin_y) / spec.dy) + 1;
  if (jx < 1 || jx > spec.nx || jy < 1 || jy > spec.ny) return std::nullopt;
  return CellIndex{jx, jy, floor_index(t / spec.dt) + 1};
}

// ---------------------------------------------------------------------------
// FootprintBox and rasterisation

FootprintBox FootprintBox::inflated(const Pose2& p, const VehicleSpec& s) {
  return {{p.x, p.y}, p.heading, s.inflated_half_length(), s.inflated_half_width()};
}

FootprintBox FootprintBox::raw(const Pose2& p, const VehicleSpec& s) {
  return {{p.x, p.y}, p.heading, 0.5 * s.length, 0.5 * s.width};
}

std::array<Eigen::Vector2d, 4> FootprintBox::corners() const {
  const Eigen::Vector2d u(std::cos(heading), std::sin(heading));
  const Eigen::Vector2d n(-u.y(), u.x());
  const Eigen::Vector2d a = half_length * u;
  const Eigen::Vector2d b = half_width * n;
  return {center + a + b, center - a + b, center - a - b, center + a - b};
}

bool FootprintBox::contains(const Eigen::Vector2d& p, double tol) const {
  const Eigen::Vector2d d = p - center;
  const double c = std::cos(heading), s = std::sin(heading);
  return std::abs(c * d.x() + s * d.y()) <= half_length + tol &&
         std::abs(-s * d.x() + c * d.y()) <= half_width + tol;
}

std::vector<Cell2> rasterize_footprint(const FootprintBox& box, const GridSpec& spec) {
  if (box.half_length < 0.0 || box.half_width < 0.0)
    throw InvalidArgument("footprint half extents must be non-negative");
  const auto corners = box.corners();
  double xmin = corners[0].x(), xmax = xmin;
  for (const auto& c : corners) {
    xmin = std::min(xmin, c.x());
    xmax = std::max(xmax, c.x());
  }

  std::vector<Cell2> out;
  const int jx_lo = std::max(1, floor_index((xmin - spec.origin_x) / spec.dx) + 1);
  const int jx_hi = std::min(spec.nx, floor_index((xmax - spec.origin_x) / spec.dx) + 1);
  for (int jx = jx_lo; jx <= jx_hi; ++jx) {
    const double x0 = spec.origin_x + (jx - 1) * spec.dx;
    const double x1 = x0 + spec.dx;
    const double lo = std::max(x0, xmin);
    const double hi = std::min(x1, xmax);
    if (hi - lo <= kOverlapEps) continue;
    // y-range of the rectangle clipped to the strip [lo, hi].
    double ymin = std::numeric_limits<double>::infinity();
    double ymax = -ymin;
    for (int k = 0; k < 4; ++k) {
      const Eigen::Vector2d& p = corners[k];
      const Eigen::Vector2d& q = corners[(k + 1) % 4];
      if (p.x() >= lo && p.x() <= hi) {
        ymin = std::min(ymin, p.y());
        ymax = std::max(ymax, p.y());
      }
      const double ex = q.x() - p.x();
      if (std::abs(ex) < 1e-15) continue;
      for (double xs : {lo, hi}) {
        const double u = (xs - p.x()) / ex;
        if (u < 0.0 || u > 1.0) continue;
        const double y = p.y() + u * (q.y() - p.y());
        ymin = std::min(ymin, y);
        ymax = std::max(ymax, y);
      }
    }
    if (!(ymax - ymin > kOverlapEps)) continue;
    const int jy_lo = std::max(1, floor_index((ymin - spec.origin_y) / spec.dy) + 1);
    const int jy_hi = std::min(spec.ny, floor_index((ymax - spec.origin_y) / spec.dy) + 1);
    for (int jy = jy_lo; jy <= jy_hi; ++jy) {
      const double y0 = spec.origin_y + (jy - 1) * spec.dy;
      if (std::min(y0 + spec.dy, ymax) - std::max(y0, ymin) > kOverlapEps) out.push_back({jx, jy});
    }
  }
  if (auto c = block_of(box.center.x(), box.center.y(), 0.0, spec)) {
    const Cell2 cc{c->jx, c->jy};
    if (!std::binary_search(out.begin(), out.end(), cc))
      out.insert(std::lower_bound(out.begin(), out.end(), cc), cc);
  }
  return out;
}

// ---------------------------------------------------------------------------
// OccupancySet

OccupancySet::OccupancySet(const GridSpec& spec, int owner) : spec_(spec), owner_(owner) {
  spec_.validate();
  words_ = (static_cast<std::size_t>(spec_.nx) * spec_.ny + 63) / 64;
}

const OccupancySet::Slab* OccupancySet::slab(int jt) const {
  const int i = jt - base_;
  if (i < 0 || i >= static_cast<int>(slabs_.size())) return nullptr;
  return &slabs_[i];
}

OccupancySet::Slab& OccupancySet::slab_mut(int jt) {
  if (words_ == 0) throw InvalidArgument("occupancy set has no grid");
  if (slabs_.empty()) {
    base_ = jt;
    slabs_.emplace_back(words_, 0);
  } else if (jt < base_) {
    slabs_.insert(slabs_.begin(), static_cast<std::size_t>(base_ - jt), Slab(words_, 0));
    base_ = jt;
  } else if (jt - base_ >= static_cast<int>(slabs_.size())) {
    slabs_.resize(static_cast<std::size_t>(jt - base_ + 1), Slab(words_, 0));
  }
  return slabs_[jt - base_];
}

void OccupancySet::insert(const CellIndex& c) {
  if (c.jx < 1 || c.jx > spec_.nx || c.jy < 1 || c.jy > spec_.ny)
    throw InvalidArgument("cell outside grid extents");
  const std::size_t b = bit(c.jx, c.jy);
  slab_mut(c.jt)[b / 64] |= std::uint64_t{1} << (b % 64);
}

void OccupancySet::insert_slab(int jt, const std::vector<Cell2>& cells) {
  if (cells.empty()) return;
  Slab& s = slab_mut(jt);
  for (const auto& c : cells) {
    if (c.jx < 1 || c.jx > spec_.nx || c.jy < 1 || c.jy > spec_.ny)
      throw InvalidArgument("cell outside grid extents");
    const std::size_t b = bit(c.jx, c.jy);
    s[b / 64] |= std::uint64_t{1} << (b % 64);
  }
}

bool OccupancySet::contains(const CellIndex& c) const {
  if (c.jx < 1 || c.jx > spec_.nx || c.jy < 1 || c.jy > spec_.ny) return false;
  const Slab* s = slab(c.jt);
  if (!s) return false;
  const std::size_t b = bit(c.jx, c.jy);
  return ((*s)[b / 64] >> (b % 64)) & 1u;
}

std::size_t OccupancySet::slab_size(int jt) const {
  const Slab* s = slab(jt);
  if (!s) return 0;
  std::size_t n = 0;
  for (auto w : *s) n += static_cast<std::size_t>(std::popcount(w));
  return n;
}

std::size_t OccupancySet::size() const {
  std::size_t n = 0;
  for (const auto& s : slabs_)
    for (auto w : s) n += static_cast<std::size_t>(std::popcount(w));
  return n;
}

int OccupancySet::min_jt() const {
  for (std::size_t i = 0; i < slabs_.size(); ++i)
    if (std::any_of(slabs_[i].begin(), slabs_[i].end(), [](auto w) { return w != 0; }))
      return base_ + static_cast<int>(i);
  return 0;
}

int OccupancySet::max_jt() const {
  for (std::size_t i = slabs_.size(); i-- > 0;)
    if (std::any_of(slabs_[i].begin(), slabs_[i].end(), [](auto w) { return w != 0; }))
      return base_ + static_cast<int>(i);
  return 0;
}

std::vector<Cell2> OccupancySet::slab_cells(int jt) const {
  std::vector<Cell2> out;
  const Slab* s = slab(jt);
  if (!s) return out;
  for (std::size_t w = 0; w < s->size(); ++w) {
    std::uint64_t word = (*s)[w];
    while (word) {
      const int b = std::countr_zero(word);
      word &= word - 1;
      const auto idx = static_cast<int>(w * 64 + b);
      out.push_back({idx % spec_.nx + 1, idx / spec_.nx + 1});
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<CellIndex> OccupancySet::cells() const {
  std::vector<CellIndex> out;
  for (std::size_t i = 0; i < slabs_.size(); ++i) {
    const int jt = base_ + static_cast<int>(i);
    for (const auto& c : slab_cells(jt)) out.push_back({c.jx, c.jy, jt});
  }
  return out;
}

OccupancySet OccupancySet::translated(int k) const {
  OccupancySet out = *this;
  out.base_ += k;
  return out;
}

void OccupancySet::check_compatible(const OccupancySet& o) const {
  if (!spec_.compatible(o.spec_)) throw InvalidArgument("occupancy sets use different grids");
}

bool OccupancySet::intersects_shifted(const OccupancySet& o, int k) const {
  if (slabs_.empty() || o.slabs_.empty()) return false;
  check_compatible(o);
  const int lo = std::max(base_ + k, o.base_);
  const int hi = std::min(base_ + k + static_cast<int>(slabs_.size()),
                          o.base_ + static_cast<int>(o.slabs_.size()));
  for (int jt = lo; jt < hi; ++jt) {
    const Slab& a = slabs_[jt - k - base_];
    const Slab& b = o.slabs_[jt - o.base_];
    for (std::size_t w = 0; w < words_; ++w)
      if (a[w] & b[w]) return true;
  }
  return false;
}

void OccupancySet::merge(const OccupancySet& o) {
  if (o.slabs_.empty()) return;
  if (words_ == 0) {
    spec_ = o.spec_;
    words_ = o.words_;
  }
  check_compatible(o);
  for (std::size_t i = 0; i < o.slabs_.size(); ++i) {
    const Slab& src = o.slabs_[i];
    if (std::none_of(src.begin(), src.end(), [](auto w) { return w != 0; })) continue;
    Slab& dst = slab_mut(o.base_ + static_cast<int>(i));
    for (std::size_t w = 0; w < words_; ++w) dst[w] |= src[w];
  }
}

bool OccupancySet::operator==(const OccupancySet& o) const {
  if (!spec_.compatible(o.spec_)) return false;
  return cells() == o.cells();
}

bool disjoint(const OccupancySet& a, const OccupancySet& b) {
  if (!a.grid().compatible(b.grid())) throw InvalidArgument("occupancy sets use different grids");
  return !a.intersects(b);
}

int entry_slab_offset(double t_e, const GridSpec& spec) {
  if (t_e < 0.0) throw InvalidArgument("entry time must be non-negative");
  return floor_index(t_e / spec.dt + 1e-9);
}

double sweep_step(const GridSpec& spec, const VehicleSpec& vspec) {
  return std::min(spec.dt / 4.0, 0.5 * std::min(spec.dx, spec.dy) / vspec.speed_max);
}

// ---------------------------------------------------------------------------
// Sweeps

OccupancySet sweep_occupancy(const MotionSampler& motion, double t0, double t1, double half_length,
                             double half_width, const GridSpec& spec, double max_speed, int offset,
                             int owner) {
  if (!(t1 > t0)) throw InvalidArgument("sweep window must have positive length");
  if (!(max_speed > 0.0)) throw InvalidArgument("sweep needs a positive speed bound");
  OccupancySet out(spec, owner);
  const double step = std::min(spec.dt / 4.0, 0.5 * std::min(spec.dx, spec.dy) / max_speed);

  const int first = floor_index(t0 / spec.dt);
  for (int j = first;; ++j) {
    const double a = std::max(t0, j * spec.dt);
    if (a >= t1) break;
    const double b = std::min(t1, (j + 1) * spec.dt);
    const int n = std::max(1, static_cast<int>(std::ceil((b - a) / step - 1e-9)));
    std::vector<FootprintBox> boxes(n + 1);
    std::vector<std::array<Eigen::Vector2d, 4>> corners(n + 1);
    for (int k = 0; k <= n; ++k) {
      const double t = (k == n) ? b : a + k * (b - a) / n;
      const Pose2 p = motion.sample(t).pose();
      boxes[k] = {{p.x, p.y}, p.heading, half_length, half_width};
      corners[k] = boxes[k].corners();
    }
    std::vector<double> disp(n, 0.0);
    for (int k = 0; k < n; ++k)
      for (int c = 0; c < 4; ++c) disp[k] = std::max(disp[k], (corners[k + 1][c] - corners[k][c]).norm());

    for (int k = 0; k <= n; ++k) {
      double d = 0.0;
      if (k > 0) d = std::max(d, disp[k - 1]);
      if (k < n) d = std::max(d, disp[k]);
      FootprintBox box = boxes[k];
      box.half_length += 0.55 * d;
      box.half_width += 0.55 * d;
      out.insert_slab(j + 1 + offset, rasterize_footprint(box, spec));
    }
  }
  return out;
}

OccupancySet trajectory_occupancy(const Trajectory& traj, const VehicleSpec& vspec,
                                  const GridSpec& spec, double t_e, int owner) {
  const int offset = entry_slab_offset(t_e, spec);
  const Rect area = spec.bounds();
  const double step = sweep_step(spec, vspec);
  const int n = static_cast<int>(std::ceil(traj.duration() / step));
  for (int k = 0; k <= n; ++k) {
    const double t = std::min(traj.duration(), k * step);
    if (!area.contains(traj.sample(t).position, 1e-6))
      throw DegenerateGeometry("trajectory leaves the conflict area at t = " + std::to_string(t));
  }
  return sweep_occupancy(traj, 0.0, traj.duration(), vspec.inflated_half_length(),
                         vspec.inflated_half_width(), spec, vspec.speed_max, offset, owner);
}

OccupancySet crossing_occupancy(const CrossingMotion& motion, const VehicleSpec& vspec,
                                const GridSpec& spec, int offset, int owner) {
  return sweep_occupancy(motion, motion.occupancy_begin(), motion.occupancy_end(),
                         vspec.inflated_half_length(), vspec.inflated_half_width(), spec,
                         vspec.speed_max, offset, owner);
}

}  // namespace bilevel
