#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>
#include <set>

#include "bilevel/reference_trajectory.hpp"
#include "bilevel/spacetime_grid.hpp"

using namespace bilevel;

namespace {

using CellSet = std::set<std::pair<int, int>>;

// Cells hit by a lattice of points strictly inside the rectangle.
CellSet sampled_cells(const FootprintBox& box, const GridSpec& g, double spacing) {
  CellSet out;
  const Eigen::Vector2d u(std::cos(box.heading), std::sin(box.heading));
  const Eigen::Vector2d n(-u.y(), u.x());
  const int nl = std::max(1, static_cast<int>(std::ceil(2 * box.half_length / spacing)));
  const int nw = std::max(1, static_cast<int>(std::ceil(2 * box.half_width / spacing)));
  for (int a = 0; a < nl; ++a)
    for (int b = 0; b < nw; ++b) {
      const double l = -box.half_length + (a + 0.5) * 2 * box.half_length / nl;
      const double w = -box.half_width + (b + 0.5) * 2 * box.half_width / nw;
      const Eigen::Vector2d p = box.center + l * u + w * n;
      const double fx = (p.x() - g.origin_x) / g.dx, fy = (p.y() - g.origin_y) / g.dy;
      const int jx = static_cast<int>(std::floor(fx)) + 1, jy = static_cast<int>(std::floor(fy)) + 1;
      if (jx >= 1 && jx <= g.nx && jy >= 1 && jy <= g.ny) out.insert({jx, jy});
    }
  return out;
}

CellSet to_set(const std::vector<Cell2>& cells) {
  CellSet s;
  for (const auto& c : cells) s.insert({c.jx, c.jy});
  return s;
}

bool within_ring(const CellSet& outer, const CellSet& inner) {
  for (const auto& [x, y] : outer) {
    bool near = false;
    for (int a = -1; a <= 1 && !near; ++a)
      for (int b = -1; b <= 1 && !near; ++b) near = inner.count({x + a, y + b}) > 0;
    if (!near) return false;
  }
  return true;
}

bool subset(const CellSet& a, const CellSet& b) {
  for (const auto& c : a)
    if (!b.count(c)) return false;
  return true;
}

class StaticMotion : public MotionSampler {
 public:
  StaticMotion(Pose2 p, double duration) : p_(p), duration_(duration) {}
  double t_begin() const override { return 0.0; }
  double t_end() const override { return duration_; }
  MotionSample sample(double) const override {
    MotionSample m;
    m.position = {p_.x, p_.y};
    m.heading = p_.heading;
    return m;
  }

 private:
  Pose2 p_;
  double duration_;
};

OccupancySet random_set(const GridSpec& g, std::mt19937_64& rng, int n) {
  std::uniform_int_distribution<int> jx(1, g.nx), jy(1, g.ny), jt(1, 12);
  OccupancySet s(g);
  for (int i = 0; i < n; ++i) s.insert({jx(rng), jy(rng), jt(rng)});
  return s;
}

}  // namespace

TEST_CASE("block_of uses half-open blocks") {
  const GridSpec g;
  auto b = block_of(g.origin_x, g.origin_y, 0.0, g);
  REQUIRE(b);
  CHECK(*b == CellIndex{1, 1, 1});
  b = block_of(g.origin_x + g.dx, g.origin_y, 0.0, g);
  REQUIRE(b);
  CHECK(b->jx == 2);
  CHECK(block_of(g.origin_x + g.dt, 0.0, g.dt, g)->jt == 2);
  CHECK_FALSE(block_of(-4.01, 0.0, 0.0, g).has_value());
  CHECK_FALSE(block_of(4.0, 0.0, 0.0, g).has_value());
  CHECK_THROWS_AS(block_of(0.0, 0.0, -0.1, g), InvalidArgument);
}

TEST_CASE("block_of agrees with interval membership") {
  const GridSpec g;
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> xy(-3.999, 3.999), tt(0.0, 10.0);
  for (int i = 0; i < 5000; ++i) {
    const double x = xy(rng), y = xy(rng), t = tt(rng);
    const auto b = block_of(x, y, t, g);
    REQUIRE(b);
    CHECK(g.origin_x + (b->jx - 1) * g.dx <= x);
    CHECK(x < g.origin_x + b->jx * g.dx);
    CHECK(g.origin_y + (b->jy - 1) * g.dy <= y);
    CHECK(y < g.origin_y + b->jy * g.dy);
    CHECK((b->jt - 1) * g.dt <= t);
    CHECK(t < b->jt * g.dt);
  }
}

TEST_CASE("grid-aligned inflated vehicle covers 25 x 15 cells") {
  const GridSpec g;
  const VehicleSpec v;
  const auto box = FootprintBox::inflated({0.1, 0.1, 0.0}, v);
  const auto cells = to_set(rasterize_footprint(box, g));
  CHECK(cells.size() == 375);
  CHECK(cells == sampled_cells(box, g, 0.01));
}

TEST_CASE("zero-extent box covers its own cell") {
  const GridSpec g;
  const FootprintBox box{{0.33, -1.27}, 0.4, 0.0, 0.0};
  const auto cells = rasterize_footprint(box, g);
  REQUIRE(cells.size() == 1);
  const auto b = block_of(0.33, -1.27, 0.0, g);
  CHECK(cells[0].jx == b->jx);
  CHECK(cells[0].jy == b->jy);
}

TEST_CASE("rotated footprints are conservative within one ring") {
  const GridSpec g;
  const VehicleSpec v;
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> pos(-1.0, 1.0), ang(-std::numbers::pi, std::numbers::pi);
  for (int i = 0; i < 40; ++i) {
    const double heading = i == 0 ? std::numbers::pi / 4 : ang(rng);
    const auto box = FootprintBox::inflated({pos(rng), pos(rng), heading}, v);
    const auto cells = to_set(rasterize_footprint(box, g));
    const auto oracle = sampled_cells(box, g, 0.01);
    CHECK(subset(oracle, cells));
    CHECK(within_ring(cells, oracle));
  }
}

TEST_CASE("rasterisation clips to the grid") {
  const GridSpec g;
  const VehicleSpec v;
  const auto cells = rasterize_footprint(FootprintBox::inflated({3.9, 3.9, 0.3}, v), g);
  CHECK_FALSE(cells.empty());
  for (const auto& c : cells) {
    CHECK(c.jx >= 1);
    CHECK(c.jx <= g.nx);
    CHECK(c.jy <= g.ny);
  }
  CHECK(rasterize_footprint(FootprintBox::inflated({20.0, 0.0, 0.0}, v), g).empty());
}

TEST_CASE("stationary pose for one slab") {
  const GridSpec g;
  const VehicleSpec v;
  const StaticMotion m({0.1, 0.1, 0.0}, g.dt);
  const auto occ = sweep_occupancy(m, 0.0, g.dt, v.inflated_half_length(), v.inflated_half_width(),
                                   g, v.speed_max, 0);
  CHECK(occ.size() == 375);
  CHECK(occ.min_jt() == 1);
  CHECK(occ.max_jt() == 1);
}

TEST_CASE("entry-time shift translates the occupancy") {
  ReferenceLibrary lib(ReferenceConfig{});
  const GridSpec g;
  const VehicleSpec v;
  const auto& traj = *lib.plan(1, Maneuver::TurnLeft).trajectory;
  const auto base = trajectory_occupancy(traj, v, g, 0.0);
  CHECK_FALSE(base.empty());
  for (int k : {1, 3, 17}) {
    const auto shifted = trajectory_occupancy(traj, v, g, k * g.dt);
    CHECK(shifted == base.translated(k));
    CHECK(shifted.min_jt() == base.min_jt() + k);
  }
}

TEST_CASE("left-turn occupancy matches a dense space-time oracle") {
  ReferenceLibrary lib(ReferenceConfig{});
  const GridSpec g;
  const VehicleSpec v;
  const auto& traj = *lib.plan(3, Maneuver::TurnLeft).trajectory;
  const auto occ = trajectory_occupancy(traj, v, g, 0.0);

  std::map<int, CellSet> oracle;
  for (int k = 0; k * 1e-3 < traj.duration(); ++k) {
    const double t = k * 1e-3;
    const int jt = static_cast<int>(std::floor(t / g.dt)) + 1;
    const auto box = FootprintBox::inflated(traj.sample(t).pose(), v);
    for (const auto& c : sampled_cells(box, g, 0.025)) oracle[jt].insert(c);
  }
  REQUIRE(static_cast<int>(oracle.size()) == occ.max_jt());
  for (const auto& [jt, cells] : oracle) {
    const auto got = to_set(occ.slab_cells(jt));
    CHECK(subset(cells, got));
    CHECK(within_ring(got, cells));
  }
}

TEST_CASE("occupancy covers the footprint at any continuous time") {
  ReferenceLibrary lib(ReferenceConfig{});
  const GridSpec g;
  const VehicleSpec v;
  std::mt19937_64 rng(8);
  for (const auto& plan : lib.plans()) {
    const auto& traj = *plan.trajectory;
    const auto occ = trajectory_occupancy(traj, v, g, 0.6);
    std::uniform_real_distribution<double> tt(0.0, traj.duration());
    for (int i = 0; i < 20; ++i) {
      const double t = tt(rng);
      const int jt = static_cast<int>(std::floor(t / g.dt)) + 1 + 3;
      for (const auto& [x, y] : sampled_cells(FootprintBox::inflated(traj.sample(t).pose(), v), g, 0.02))
        CHECK(occ.contains({x, y, jt}));
    }
  }
}

TEST_CASE("coarser grids never miss a fine-grid conflict") {
  ReferenceConfig cfg;
  ReferenceLibrary lib(cfg);
  const GridSpec fine;
  const GridSpec coarse = GridSpec::for_intersection(cfg.intersection, 0.4, 0.4, 0.4);
  const VehicleSpec v;
  const auto& a = *lib.plan(1, Maneuver::TurnLeft).trajectory;
  const auto& b = *lib.plan(2, Maneuver::GoStraight).trajectory;
  int conflicts = 0;
  for (int k = 0; k < 12; ++k) {
    const double te = 0.4 * k;
    const bool fine_hit = !disjoint(trajectory_occupancy(a, v, fine, 0.0),
                                    trajectory_occupancy(b, v, fine, te));
    const bool coarse_hit = !disjoint(trajectory_occupancy(a, v, coarse, 0.0),
                                      trajectory_occupancy(b, v, coarse, te));
    if (fine_hit) {
      ++conflicts;
      CHECK(coarse_hit);
    }
  }
  CHECK(conflicts > 0);
}

TEST_CASE("disjoint matches a naive scan") {
  const GridSpec g;
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 300; ++trial) {
    const auto a = random_set(g, rng, 30);
    const auto b = random_set(g, rng, 30);
    bool naive = true;
    for (const auto& c : a.cells())
      for (const auto& d : b.cells())
        if (c == d) naive = false;
    CHECK(disjoint(a, b) == naive);
  }
  const auto a = random_set(g, rng, 50);
  CHECK_FALSE(disjoint(a, a));
  CHECK(disjoint(a, a.translated(a.max_jt())));
  CHECK(a.intersects_shifted(a, 0));
  CHECK_FALSE(a.intersects_shifted(a, a.max_jt() - a.min_jt() + 1));
}

TEST_CASE("disjoint rejects mismatched grids") {
  GridSpec g2;
  g2.dx = 0.25;
  OccupancySet a(GridSpec{}), b(g2);
  a.insert({1, 1, 1});
  b.insert({1, 1, 1});
  CHECK_THROWS_AS(disjoint(a, b), InvalidArgument);
}

TEST_CASE("occupancy set bookkeeping") {
  const GridSpec g;
  OccupancySet s(g, 7);
  CHECK(s.empty());
  CHECK(s.min_jt() == 0);
  s.insert({2, 3, 5});
  s.insert({2, 3, 5});
  s.insert({4, 4, -1});
  CHECK(s.size() == 2);
  CHECK(s.slab_size(5) == 1);
  CHECK(s.min_jt() == -1);
  CHECK(s.max_jt() == 5);
  CHECK(s.owner() == 7);
  OccupancySet t(g);
  t.insert({1, 1, 9});
  s.merge(t);
  CHECK(s.size() == 3);
  CHECK(s.contains({1, 1, 9}));
  CHECK_FALSE(s.contains({1, 1, 8}));
  CHECK(GridSpec::for_intersection(IntersectionConfig{}).nx == 40);
  CHECK(entry_slab_offset(0.6, g) == 3);
}
