#include "bilevel/low_level_planner.hpp"

#include <spdlog/spdlog.h>

#include <Eigen/Dense>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <deque>
#include <limits>

#include "bilevel/high_level_planner.hpp"

namespace bilevel {

void CostWeights::validate() const {
  if (w_acc < 0.0 || w_jerk < 0.0 || w_c < 0.0)
    throw InvalidArgument("cost weights must be non-negative");
}

void CollisionParams::validate() const {
  if (!(d_r > 0.0 && d_f > 0.0)) throw InvalidArgument("d_r and d_f must be positive");
  if (!(s_f > 0.0)) throw InvalidArgument("s_f must be positive");
}

double collision_penalty(double d, const CollisionParams& p) {
  if (d < 0.0) return 0.0;
  if (d < p.d_r) return d * d * d;
  return 3.0 * p.s_f * d * d - 3.0 * p.s_f * p.s_f * d + p.s_f * p.s_f * p.s_f;
}

double collision_penalty_slope(double d, const CollisionParams& p) {
  if (d < 0.0) return 0.0;
  if (d < p.d_r) return 3.0 * d * d;
  return 6.0 * p.s_f * d - 3.0 * p.s_f * p.s_f;
}

// ---------------------------------------------------------------------------

ObstacleGrid::ObstacleGrid(const GridSpec& spec)
    : spec_(spec), real_(spec), virtual_(spec), all_(spec) {}

void ObstacleGrid::add_obstacles(const OccupancySet& cells) {
  real_.merge(cells);
  all_.merge(cells);
  reindex();
}

void ObstacleGrid::add_virtual(const OccupancySet& cells) {
  virtual_.merge(cells);
  all_.merge(cells);
  reindex();
}

void ObstacleGrid::reindex() {
  index_.clear();
  if (all_.empty()) return;
  index_base_ = all_.min_jt();
  for (int jt = index_base_; jt <= all_.max_jt(); ++jt) index_.push_back(all_.slab_cells(jt));
}

const std::vector<Cell2>& ObstacleGrid::slab(int jt) const {
  static const std::vector<Cell2> none;
  const int i = jt - index_base_;
  if (index_.empty() || i < 0 || i >= static_cast<int>(index_.size())) return none;
  return index_[i];
}

OccupancySet ft_virtual_obstacles(const OccupancySet& tunnel) {
  OccupancySet ring(tunnel.grid(), tunnel.owner());
  if (tunnel.empty()) return ring;
  for (int jt = tunnel.min_jt(); jt <= tunnel.max_jt(); ++jt) {
    const auto core = tunnel.slab_cells(jt);
    if (core.empty()) continue;
    std::vector<Cell2> cells;
    for (const auto& c : dilate_cells(core, 1, tunnel.grid()))
      if (!std::binary_search(core.begin(), core.end(), c)) cells.push_back(c);
    ring.insert_slab(jt, cells);
  }
  return ring;
}

// ---------------------------------------------------------------------------

CostValue smoothness_cost(const ControlPointSequence& q, const CostWeights& w) {
  const int n = q.size();
  const double h = q.dt;
  CostValue out;
  out.gradient.assign(n, Eigen::Vector2d::Zero());
  const auto& p = q.points;
  const double ka = 1.0 / (h * h);
  for (int i = 0; i + 2 < n; ++i) {
    const Eigen::Vector2d a = (p[i] - 2.0 * p[i + 1] + p[i + 2]) * ka;
    out.value += w.w_acc * a.squaredNorm();
    const Eigen::Vector2d g = 2.0 * w.w_acc * ka * a;
    out.gradient[i] += g;
    out.gradient[i + 1] -= 2.0 * g;
    out.gradient[i + 2] += g;
  }
  const double kj = ka / h;
  for (int i = 0; i + 3 < n; ++i) {
    const Eigen::Vector2d j = (-p[i] + 3.0 * p[i + 1] - 3.0 * p[i + 2] + p[i + 3]) * kj;
    out.value += w.w_jerk * j.squaredNorm();
    const Eigen::Vector2d g = 2.0 * w.w_jerk * kj * j;
    out.gradient[i] -= g;
    out.gradient[i + 1] += 3.0 * g;
    out.gradient[i + 2] -= 3.0 * g;
    out.gradient[i + 3] += g;
  }
  for (int i = 0; i < n; ++i)
    if (!q.is_free(i)) out.gradient[i].setZero();
  return out;
}

CostValue collision_cost(const ControlPointSequence& q, const ObstacleGrid& grid,
                         const CollisionParams& p, double w_c) {
  const GridSpec& g = grid.grid();
  CostValue out;
  out.gradient.assign(q.size(), Eigen::Vector2d::Zero());
  const double reach = p.d_r + p.d_f;
  const double radius = reach + std::hypot(g.dx, g.dy);
  for (int i = 0; i < q.size(); ++i) {
    if (!q.is_free(i)) continue;
    const int jt = static_cast<int>(std::floor(q.peak_time(i) / g.dt)) + 1;
    const auto& cells = grid.slab(jt);
    if (cells.empty()) continue;
    const Eigen::Vector2d& qi = q.points[i];
    const int x_lo = static_cast<int>(std::floor((qi.x() - radius - g.origin_x) / g.dx)) + 1;
    const int x_hi = static_cast<int>(std::floor((qi.x() + radius - g.origin_x) / g.dx)) + 1;
    auto it = std::lower_bound(cells.begin(), cells.end(), Cell2{x_lo, std::numeric_limits<int>::min()});
    for (; it != cells.end() && it->jx <= x_hi; ++it) {
      const Eigen::Vector2d v = qi - g.cell_center(it->jx, it->jy);
      const double dist = v.norm();
      const double d = reach - dist;
      if (d < 0.0) continue;
      out.value += w_c * collision_penalty(d, p);
      Eigen::Vector2d dir(1.0, 0.0);
      if (dist > 0.0)
        dir = v / dist;
      else
        spdlog::debug("control point {} sits on a cell centre; using a fixed push direction", i);
      out.gradient[i] -= w_c * collision_penalty_slope(d, p) * dir;
    }
  }
  return out;
}

OccupancySet spline_occupancy(const ControlPointSequence& q, const VehicleSpec& vehicle,
                              const GridSpec& spec) {
  const SplineMotion motion(q);
  return sweep_occupancy(motion, q.t0, q.t_end(), vehicle.inflated_half_length(),
                         vehicle.inflated_half_width(), spec, vehicle.speed_max, 0);
}

// ---------------------------------------------------------------------------
// L-BFGS

namespace {

struct Objective {
  const ControlPointSequence& shape;
  const ObstacleGrid& grid;
  const CostWeights& w;
  const CollisionParams& p;
  int n_free;

  ControlPointSequence unpack(const Eigen::VectorXd& x) const {
    ControlPointSequence q = shape;
    for (int k = 0; k < n_free; ++k) q.points[k + 3] = x.segment<2>(2 * k);
    return q;
  }

  double operator()(const Eigen::VectorXd& x, Eigen::VectorXd& g, double* smooth = nullptr,
                    double* coll = nullptr) const {
    const ControlPointSequence q = unpack(x);
    const CostValue s = smoothness_cost(q, w);
    const CostValue c = collision_cost(q, grid, p, w.w_c);
    g.resize(2 * n_free);
    for (int k = 0; k < n_free; ++k) g.segment<2>(2 * k) = s.gradient[k + 3] + c.gradient[k + 3];
    if (smooth) *smooth = s.value;
    if (coll) *coll = c.value;
    return s.value + c.value;
  }
};

struct LineSearchResult {
  bool ok = false;
  double alpha = 0.0;
  double f = 0.0;
  Eigen::VectorXd g;
};

LineSearchResult strong_wolfe(const Objective& obj, const Eigen::VectorXd& x, double f0,
                              const Eigen::VectorXd& g0, const Eigen::VectorXd& d, double alpha0) {
  constexpr double c1 = 1e-4, c2 = 0.9;
  const double dphi0 = g0.dot(d);
  LineSearchResult best;
  Eigen::VectorXd g;

  auto zoom = [&](double lo, double f_lo, double dphi_lo, double hi, double f_hi) {
    for (int it = 0; it < 40; ++it) {
      double a = 0.5 * (lo + hi);
      const double span = hi - lo;
      const double denom = 2.0 * (f_hi - f_lo - dphi_lo * span);
      if (denom > 0.0) {
        const double cand = lo - dphi_lo * span * span / denom;
        const double l = std::min(lo, hi) + 0.1 * std::abs(span);
        const double u = std::max(lo, hi) - 0.1 * std::abs(span);
        if (cand > l && cand < u) a = cand;
      }
      const double fa = obj(x + a * d, g);
      const double dphi = g.dot(d);
      if (fa > f0 + c1 * a * dphi0 || fa >= f_lo) {
        hi = a;
        f_hi = fa;
      } else {
        if (std::abs(dphi) <= -c2 * dphi0) return LineSearchResult{true, a, fa, g};
        if (dphi * (hi - lo) >= 0.0) {
          hi = lo;
          f_hi = f_lo;
        }
        lo = a;
        f_lo = fa;
        dphi_lo = dphi;
        best = {true, a, fa, g};
      }
      if (std::abs(hi - lo) < 1e-14) break;
    }
    return best;
  };

  double a_prev = 0.0, f_prev = f0, dphi_prev = dphi0;
  double a = alpha0;
  for (int it = 0; it < 30; ++it) {
    const double fa = obj(x + a * d, g);
    const double dphi = g.dot(d);
    if (fa > f0 + c1 * a * dphi0 || (it > 0 && fa >= f_prev))
      return zoom(a_prev, f_prev, dphi_prev, a, fa);
    if (std::abs(dphi) <= -c2 * dphi0) return {true, a, fa, g};
    if (dphi >= 0.0) return zoom(a, fa, dphi, a_prev, f_prev);
    best = {true, a, fa, g};
    a_prev = a;
    f_prev = fa;
    dphi_prev = dphi;
    a *= 2.0;
  }
  return best;
}

}  // namespace

ControlPointSequence minimize_total(const ControlPointSequence& q0, const ObstacleGrid& grid,
                                    const CostWeights& w, const CollisionParams& p,
                                    const LowLevelOptions& opt, int attempt,
                                    std::vector<IterateRecord>* log) {
  q0.validate();
  const int n_free = q0.size() - 6;
  if (n_free <= 0) return q0;
  const Objective obj{q0, grid, w, p, n_free};
  Eigen::VectorXd x(2 * n_free);
  for (int k = 0; k < n_free; ++k) x.segment<2>(2 * k) = q0.points[k + 3];

  Eigen::VectorXd g;
  double smooth = 0.0, coll = 0.0;
  double f = obj(x, g, &smooth, &coll);
  auto record = [&](int it) {
    if (log) log->push_back({attempt, it, smooth, coll, f, g.norm()});
  };
  record(0);

  // Initial inverse Hessian: the smoothness Hessian on the free points, shared
  // by both coordinates.
  Eigen::MatrixXd hs = Eigen::MatrixXd::Zero(n_free, n_free);
  {
    const double h = q0.dt;
    auto add = [&](int first, const std::vector<double>& c, double scale) {
      for (std::size_t a = 0; a < c.size(); ++a)
        for (std::size_t b = 0; b < c.size(); ++b) {
          const int i = first + static_cast<int>(a) - 3, j = first + static_cast<int>(b) - 3;
          if (i >= 0 && i < n_free && j >= 0 && j < n_free) hs(i, j) += 2.0 * scale * c[a] * c[b];
        }
    };
    for (int i = 0; i + 2 < q0.size(); ++i) add(i, {1.0, -2.0, 1.0}, w.w_acc / std::pow(h, 4));
    for (int i = 0; i + 3 < q0.size(); ++i) add(i, {-1.0, 3.0, -3.0, 1.0}, w.w_jerk / std::pow(h, 6));
    hs.diagonal().array() += 1e-9 * std::max(1.0, hs.diagonal().maxCoeff());
  }
  const Eigen::LDLT<Eigen::MatrixXd> precond(hs);
  const bool use_precond = precond.info() == Eigen::Success && hs.diagonal().minCoeff() > 1e-12;
  auto apply_h0 = [&](const Eigen::VectorXd& v) {
    if (!use_precond) return Eigen::VectorXd(v);
    Eigen::Map<const Eigen::Matrix<double, 2, Eigen::Dynamic>> vm(v.data(), 2, n_free);
    Eigen::Matrix<double, 2, Eigen::Dynamic> r(2, n_free);
    r.row(0) = precond.solve(vm.row(0).transpose()).transpose();
    r.row(1) = precond.solve(vm.row(1).transpose()).transpose();
    return Eigen::VectorXd(Eigen::Map<Eigen::VectorXd>(r.data(), 2 * n_free));
  };

  std::deque<std::pair<Eigen::VectorXd, Eigen::VectorXd>> mem;
  for (int it = 1; it <= opt.max_iterations; ++it) {
    if (g.norm() < opt.gradient_tolerance) break;
    Eigen::VectorXd d = -g;
    std::vector<double> alpha(mem.size());
    for (int k = static_cast<int>(mem.size()) - 1; k >= 0; --k) {
      const auto& [s, y] = mem[k];
      alpha[k] = s.dot(d) / y.dot(s);
      d -= alpha[k] * y;
    }
    if (use_precond) {
      d = apply_h0(d);
    } else if (!mem.empty()) {
      const auto& [s, y] = mem.back();
      d *= s.dot(y) / y.dot(y);
    }
    for (std::size_t k = 0; k < mem.size(); ++k) {
      const auto& [s, y] = mem[k];
      const double beta = y.dot(d) / y.dot(s);
      d += (alpha[k] - beta) * s;
    }
    if (g.dot(d) >= 0.0) {
      d = -apply_h0(g);
      mem.clear();
    }
    const double a0 = (mem.empty() && !use_precond) ? std::min(1.0, 1.0 / g.norm()) : 1.0;
    const LineSearchResult ls = strong_wolfe(obj, x, f, g, d, a0);
    if (!ls.ok || !(ls.f <= f)) break;
    const Eigen::VectorXd x_new = x + ls.alpha * d;
    const Eigen::VectorXd s = x_new - x;
    const Eigen::VectorXd y = ls.g - g;
    if (s.dot(y) > 1e-12 * s.norm() * y.norm()) {
      mem.emplace_back(s, y);
      if (static_cast<int>(mem.size()) > opt.memory) mem.pop_front();
    }
    x = x_new;
    f = obj(x, g, &smooth, &coll);
    record(it);
  }
  return obj.unpack(x);
}

namespace {

bool kinematics_within(const ControlPointSequence& q, const LowLevelOptions& opt) {
  for (const auto& v : spline_kinematics(q).velocity)
    if (v.norm() > opt.vehicle.speed_max + 1e-9) return false;
  const int n = 10 * (q.size() - 3);
  for (int k = 0; k <= n; ++k) {
    const SplineEval e = evaluate_spline(q, q.t0 + q.span() * k / n);
    const double v = e.velocity.norm();
    if (v < 1e-9) continue;
    const double lat = std::abs(e.velocity.x() * e.accel.y() - e.velocity.y() * e.accel.x()) / v;
    if (lat > opt.lateral_accel_max) return false;
  }
  return true;
}

}  // namespace

LowLevelResult optimize(const ControlPointSequence& q0, const ObstacleGrid& grid,
                        const LowLevelOptions& opt, const OccupancySet* tunnel) {
  const auto start = std::chrono::steady_clock::now();
  q0.validate();
  opt.weights.validate();
  opt.collision.validate();
  if (tunnel && !tunnel->grid().compatible(grid.grid()))
    throw InvalidArgument("tunnel and obstacle grid differ");

  LowLevelResult best;
  bool have_best = false;
  auto rank = [](const LowLevelResult& r) { return (r.ok() ? 2 : 0) + (r.kinematics_ok ? 1 : 0); };

  CostWeights w = opt.weights;
  ControlPointSequence q = q0;
  std::vector<IterateRecord> log;
  int coll_retries = 0, kin_retries = 0;
  for (int attempt = 0;; ++attempt) {
    q = minimize_total(q, grid, w, opt.collision, opt, attempt, &log);

    LowLevelResult r;
    r.q = q;
    r.attempts = attempt + 1;
    r.final_w_c = w.w_c;
    r.final_w_acc = w.w_acc;
    const OccupancySet occ = spline_occupancy(q, opt.vehicle, grid.grid());
    for (const auto& c : occ.cells())
      if (grid.real().contains(c)) r.residual_collisions.push_back(c);
    r.collision_free = r.residual_collisions.empty();
    if (tunnel)
      for (const auto& c : occ.cells())
        if (!tunnel->contains(c)) {
          r.inside_tunnel = false;
          break;
        }
    r.kinematics_ok = kinematics_within(q, opt);
    const bool ok = r.ok();
    const bool kin = r.kinematics_ok;
    if (!have_best || rank(r) >= rank(best)) {
      best = std::move(r);
      have_best = true;
    }
    if (ok && kin) break;
    if (!ok && coll_retries < opt.max_reweights) {
      w.w_c *= 10.0;
      ++coll_retries;
      spdlog::debug("low-level attempt {} still collides; w_c -> {}", attempt, w.w_c);
      continue;
    }
    if (ok && kin_retries < opt.max_reweights) {
      w.w_acc *= 10.0;
      ++kin_retries;
      spdlog::debug("low-level attempt {} violates limits; w_acc -> {}", attempt, w.w_acc);
      continue;
    }
    break;
  }
  best.log = std::move(log);
  if (!best.collision_free)
    best.message = "no collision-free trajectory after re-weighting";
  else if (!best.inside_tunnel)
    best.message = "trajectory leaves the feasible tunnel";
  else if (!best.kinematics_ok)
    best.message = "collision-free, kinematic limits exceeded";
  else
    best.message = "ok";
  best.compute_ms =
      std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  return best;
}

}  // namespace bilevel
