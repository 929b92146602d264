#include "bilevel/simulation.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <thread>

namespace bilevel {

std::string_view to_string(Strategy s) {
  return s == Strategy::Proposed ? "proposed" : "cs";
}

Strategy strategy_from_string(std::string_view name) {
  if (name == "proposed") return Strategy::Proposed;
  if (name == "cs") return Strategy::CollisionSet;
  throw InvalidArgument("unknown strategy '" + std::string(name) + "' (expected proposed or cs)");
}

std::shared_ptr<const ReferenceLibrary> build_library(const Scenario& s) {
  return std::make_shared<ReferenceLibrary>(s.reference_config());
}

int count_pairwise_overlaps(const std::vector<OccupancySet>& sets) {
  std::vector<std::vector<CellIndex>> cells;
  cells.reserve(sets.size());
  for (const auto& s : sets) {
    auto c = s.cells();
    std::sort(c.begin(), c.end(), [](const CellIndex& a, const CellIndex& b) {
      return std::tie(a.jt, a.jx, a.jy) < std::tie(b.jt, b.jx, b.jy);
    });
    cells.push_back(std::move(c));
  }
  auto less = [](const CellIndex& a, const CellIndex& b) {
    return std::tie(a.jt, a.jx, a.jy) < std::tie(b.jt, b.jx, b.jy);
  };
  int overlaps = 0;
  for (std::size_t i = 0; i < cells.size(); ++i)
    for (std::size_t j = i + 1; j < cells.size(); ++j) {
      const auto& a = cells[i];
      const auto& b = cells[j];
      std::size_t p = 0, q = 0;
      while (p < a.size() && q < b.size()) {
        if (less(a[p], b[q]))
          ++p;
        else if (less(b[q], a[p]))
          ++q;
        else {
          ++overlaps;
          break;
        }
      }
    }
  return overlaps;
}

// ---------------------------------------------------------------------------

TraceMotion::TraceMotion(const std::vector<TraceSample>& trace) : trace_(trace) {
  if (trace_.empty()) throw InvalidArgument("trace is empty");
}

double TraceMotion::t_begin() const { return trace_.front().t; }
double TraceMotion::t_end() const { return trace_.back().t; }

double TraceMotion::max_speed() const {
  double v = 0.0;
  for (const auto& s : trace_) v = std::max(v, s.state.speed);
  return v;
}

MotionSample TraceMotion::sample(double t) const {
  MotionSample m;
  auto fill = [&](const VehicleState& s) {
    m.position = {s.x, s.y};
    m.heading = s.heading;
    m.speed = s.speed;
  };
  if (t <= trace_.front().t) {
    fill(trace_.front().state);
    return m;
  }
  if (t >= trace_.back().t) {
    fill(trace_.back().state);
    return m;
  }
  const auto it = std::upper_bound(trace_.begin(), trace_.end(), t,
                                   [](double v, const TraceSample& s) { return v < s.t; });
  const auto& b = *it;
  const auto& a = *(it - 1);
  const double u = (t - a.t) / (b.t - a.t);
  m.position = {a.state.x + u * (b.state.x - a.state.x), a.state.y + u * (b.state.y - a.state.y)};
  m.heading = a.state.heading + u * wrap_angle(b.state.heading - a.state.heading);
  m.speed = a.state.speed + u * (b.state.speed - a.state.speed);
  return m;
}

// ---------------------------------------------------------------------------

namespace {

/// Crossing motion placed at absolute time t_e.
class ShiftedMotion : public MotionSampler {
 public:
  ShiftedMotion(std::shared_ptr<const CrossingMotion> m, double t_e) : m_(std::move(m)), t_e_(t_e) {}
  double t_begin() const override { return t_e_ + m_->t_begin(); }
  double t_end() const override { return t_e_ + m_->t_end(); }
  MotionSample sample(double t) const override { return m_->sample(t - t_e_); }

 private:
  std::shared_ptr<const CrossingMotion> m_;
  double t_e_;
};

/// Reference with the refined spline substituted over its span.
class RefinedMotion : public MotionSampler {
 public:
  RefinedMotion(const MotionSampler& base, const ControlPointSequence& q) : base_(base), spline_(q) {}
  double t_begin() const override { return base_.t_begin(); }
  double t_end() const override { return base_.t_end(); }
  MotionSample sample(double t) const override {
    if (t >= spline_.t_begin() && t <= spline_.t_end()) return spline_.sample(t);
    return base_.sample(t);
  }

 private:
  const MotionSampler& base_;
  SplineMotion spline_;
};

/// Straight constant-speed motion from time 0.
class StraightMotion : public MotionSampler {
 public:
  StraightMotion(Eigen::Vector2d start, double heading, double speed, double duration)
      : start_(std::move(start)), heading_(heading), speed_(speed), duration_(duration) {}
  double t_begin() const override { return 0.0; }
  double t_end() const override { return duration_; }
  MotionSample sample(double t) const override {
    MotionSample m;
    m.position = start_ + speed_ * t * Eigen::Vector2d(std::cos(heading_), std::sin(heading_));
    m.heading = heading_;
    m.speed = speed_;
    return m;
  }

 private:
  Eigen::Vector2d start_;
  double heading_, speed_, duration_;
};

constexpr double kOmega = 4.0;
constexpr double kZeta = 0.9;
constexpr double kMinGainSpeed = 2.0;
constexpr double kPosGain = 9.0;
constexpr double kVelGain = 6.0;

ControlInput tracking_control(const VehicleState& meas, const MotionSample& ref,
                              const VehicleSpec& spec, double* lateral) {
  const Eigen::Vector2d dir(std::cos(ref.heading), std::sin(ref.heading));
  const Eigen::Vector2d nrm(-dir.y(), dir.x());
  const Eigen::Vector2d d = Eigen::Vector2d(meas.x, meas.y) - ref.position;
  const double e_s = d.dot(dir);
  const double e_l = d.dot(nrm);
  const double e_psi = wrap_angle(meas.heading - ref.heading);
  if (lateral) *lateral = e_l;
  const double v = std::max(meas.speed, kMinGainSpeed);
  const double k_l = kOmega * kOmega / (v * v);
  const double k_psi = 2.0 * kZeta * kOmega / v;
  ControlInput u;
  u.steer = std::atan(spec.wheelbase * (ref.curvature - k_l * e_l - k_psi * e_psi));
  u.accel = ref.accel - kPosGain * e_s + kVelGain * (ref.speed - meas.speed);
  u.steer = std::clamp(u.steer, -spec.steer_max, spec.steer_max);
  u.accel = std::clamp(u.accel, spec.accel_min, spec.accel_max);
  return u;
}

double peak_lateral_accel(const MotionSampler& m, double t0, double t1) {
  double peak = 0.0;
  const int n = std::max(1, static_cast<int>(std::ceil((t1 - t0) / 0.01)));
  for (int i = 0; i <= n; ++i) {
    const MotionSample s = m.sample(t0 + (t1 - t0) * i / n);
    peak = std::max(peak, s.speed * s.speed * std::abs(s.curvature));
  }
  return peak;
}

template <typename F>
void parallel_for(std::size_t n, int threads, F&& f) {
  if (threads <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) f(i);
    return;
  }
  const std::size_t nw = std::min<std::size_t>(static_cast<std::size_t>(threads), n);
  std::vector<std::thread> workers;
  for (std::size_t w = 0; w < nw; ++w)
    workers.emplace_back([&, w] {
      for (std::size_t i = w; i < n; i += nw) f(i);
    });
  for (auto& t : workers) t.join();
}

double ms_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

std::vector<TraceSample> track_reference(const MotionSampler& reference, const VehicleSpec& spec,
                                         const NoiseConfig& noise, std::uint64_t stream_id,
                                         double h) {
  if (!(h > 0.0)) throw InvalidArgument("simulation step must be positive");
  NoiseStream rng(noise.seed, stream_id);
  const double t0 = reference.t_begin();
  const double t1 = reference.t_end();
  const MotionSample start = reference.sample(t0);
  VehicleState x{start.position.x(), start.position.y(), start.heading, start.speed};
  const int n = std::max(1, static_cast<int>(std::ceil((t1 - t0) / h - 1e-9)));
  std::vector<TraceSample> out;
  out.reserve(static_cast<std::size_t>(n) + 1);
  for (int i = 0; i <= n; ++i) {
    const double t = std::min(t1, t0 + i * h);
    TraceSample rec;
    rec.t = t;
    rec.state = x;
    const VehicleState meas = perturb_pose(x, noise, rng);
    rec.control = tracking_control(meas, reference.sample(t), spec, nullptr);
    tracking_control(x, reference.sample(t), spec, &rec.lateral_error);
    out.push_back(rec);
    if (i == n) break;
    const double step_h = std::min(t1, t0 + (i + 1) * h) - t;
    x = step(x, perturb_control(rec.control, noise, rng), spec, step_h);
  }
  return out;
}

// ---------------------------------------------------------------------------

ExperimentResult run_experiment(const Scenario& s, const RunOptions& opts) {
  return run_experiment(s, build_library(s), opts);
}

ExperimentResult run_experiment(const Scenario& s, std::shared_ptr<const ReferenceLibrary> library,
                                const RunOptions& opts) {
  using Clock = std::chrono::steady_clock;
  s.validate();
  const auto requests = scenario_requests(s);
  const GridSpec grid = s.grid();
  HighLevelConfig hc = s.high_level;
  if (opts.threads > 0) hc.threads = opts.threads;
  const HighLevelPlanner hl(library, grid, hc);

  ExperimentResult out;
  out.scenario_name = s.name;
  out.seed = s.seed;
  out.strategy = opts.strategy;
  Metrics& m = out.metrics;
  m.vehicles = static_cast<int>(requests.size());

  if (opts.strategy == Strategy::Proposed) {
    const auto t0 = Clock::now();
    out.schedule = hl.run(requests);
    m.hl_total_ms = ms_since(t0);
    for (const auto& r : out.schedule.rounds) {
      m.round_ms.push_back(r.compute_ms);
      int queued = 0;
      for (int q : r.queue_lengths) queued += q;
      m.queue_trace.emplace_back(r.clock, queued);
      for (const auto& c : r.candidates) m.max_head_wait = std::max(m.max_head_wait, r.clock - c.arrival);
    }
  } else {
    std::vector<int> order;
    for (const auto& a : hl.run(requests).allocations) order.push_back(a.vehicle_id);
    const auto t0 = Clock::now();
    out.schedule = hl.run_cs(requests, order);
    m.hl_total_ms = ms_since(t0);
  }
  for (double r : m.round_ms) m.hl_max_round_ms = std::max(m.hl_max_round_ms, r);

  const auto& allocs = out.schedule.allocations;
  m.scheduled = static_cast<int>(allocs.size());
  m.total_passing_time = out.schedule.total_passing_time();
  m.makespan = out.schedule.makespan(grid.dt);
  {
    std::vector<OccupancySet> occ;
    for (const auto& a : allocs) occ.push_back(a.occupancy);
    m.planned_overlaps = count_pairwise_overlaps(occ);
  }

  int last_jt = 1;
  for (const auto& a : allocs)
    last_jt = std::max(last_jt, a.offset + static_cast<int>(std::ceil(a.crossing->t_end() / grid.dt)) + 2);
  out.obstacles = obstacle_occupancy(s.obstacles, grid, last_jt);

  out.vehicles.resize(allocs.size());
  std::vector<std::size_t> refine_jobs;
  for (std::size_t i = 0; i < allocs.size(); ++i) {
    const auto& a = allocs[i];
    auto& v = out.vehicles[i];
    v.vehicle_id = a.vehicle_id;
    v.road_from = a.road_from;
    v.road_to = a.road_to;
    v.maneuver = a.maneuver;
    v.arrival = a.arrival;
    v.t_e = a.t_e;
    v.start_time = a.start_time;
    v.exit_time = a.exit_time;
    v.wait = a.t_e - a.arrival - a.buffer.duration;
    m.max_wait = std::max(m.max_wait, v.wait);
    m.mean_wait += v.wait / static_cast<double>(allocs.size());
    if (!out.obstacles.empty() && out.obstacles.intersects(a.occupancy))
      refine_jobs.push_back(i);
  }

  parallel_for(refine_jobs.size(), opts.threads, [&](std::size_t j) {
    const std::size_t i = refine_jobs[j];
    const auto& a = allocs[i];
    const auto& tunnel = out.schedule.tunnels[i].cells;
    auto& v = out.vehicles[i];
    const auto& cm = *a.crossing;
    const double w0 = cm.occupancy_begin();
    const double w1 = cm.occupancy_end();
    const auto [n_c, dt_k] = fit_layout(w1 - w0, s.knot_interval);
    const ControlPointSequence q0 = init_control_points(cm, w0, dt_k, n_c, a.t_e);

    LowLevelOptions lo = s.low_level;
    lo.vehicle = s.vehicle;
    lo.lateral_accel_max = std::max(lo.lateral_accel_max, 1.25 * peak_lateral_accel(cm, w0, w1));

    const auto t0 = Clock::now();
    ObstacleGrid og(grid);
    og.add_obstacles(out.obstacles);
    og.add_virtual(ft_virtual_obstacles(tunnel));
    LowLevelResult r = optimize(q0, og, lo, &tunnel);
    v.ll_ms = ms_since(t0);
    v.refined = true;
    v.ll_log = std::move(r.log);
    if (r.ok()) {
      v.refined_path = r.q;
    } else {
      v.incident = true;
      v.incident_reason = r.message;
    }
  });
  for (std::size_t i : refine_jobs) {
    m.ll_ms.push_back(out.vehicles[i].ll_ms);
    if (out.vehicles[i].incident) {
      ++m.incidents;
      spdlog::warn("vehicle {} held before the conflict area: {}", out.vehicles[i].vehicle_id,
                   out.vehicles[i].incident_reason);
    }
  }

  if (!opts.simulate) return out;

  NoiseConfig noise = s.noise;
  noise.seed = s.seed;
  for (std::size_t i = 0; i < allocs.size(); ++i) {
    auto& v = out.vehicles[i];
    if (v.incident) continue;
    const ShiftedMotion base(allocs[i].crossing, allocs[i].t_e);
    if (v.refined_path) {
      const RefinedMotion ref(base, *v.refined_path);
      v.trace = track_reference(ref, s.vehicle, noise, static_cast<std::uint64_t>(v.vehicle_id),
                                s.sim_step);
    } else {
      v.trace = track_reference(base, s.vehicle, noise, static_cast<std::uint64_t>(v.vehicle_id),
                                s.sim_step);
    }
    const TraceMotion tm(v.trace);
    v.executed = sweep_occupancy(tm, tm.t_begin(), tm.t_end(), 0.5 * s.vehicle.length,
                                 0.5 * s.vehicle.width, grid, std::max(0.1, tm.max_speed()), 0,
                                 v.vehicle_id);
  }
  for (std::size_t i = 0; i < out.vehicles.size(); ++i) {
    const auto& a = out.vehicles[i];
    if (a.incident) continue;
    if (!out.obstacles.empty() && a.executed.intersects(out.obstacles)) {
      ++m.obstacle_collisions;
      spdlog::warn("vehicle {} touched an obstacle", a.vehicle_id);
    }
    for (std::size_t j = i + 1; j < out.vehicles.size(); ++j) {
      const auto& b = out.vehicles[j];
      if (b.incident) continue;
      if (a.executed.intersects(b.executed)) {
        ++m.vehicle_collisions;
        spdlog::warn("vehicles {} and {} overlap", a.vehicle_id, b.vehicle_id);
      }
    }
  }
  if (!opts.keep_traces)
    for (auto& v : out.vehicles) {
      v.trace.clear();
      v.trace.shrink_to_fit();
    }
  return out;
}

Comparison compare(const Scenario& s, std::shared_ptr<const ReferenceLibrary> library, int threads,
                   bool simulate) {
  Comparison c;
  RunOptions o;
  o.threads = threads;
  o.simulate = simulate;
  o.strategy = Strategy::Proposed;
  c.proposed = run_experiment(s, library, o);
  o.strategy = Strategy::CollisionSet;
  c.cs = run_experiment(s, library, o);
  const double cs_t = c.cs.metrics.total_passing_time;
  c.improvement = cs_t > 0.0 ? (cs_t - c.proposed.metrics.total_passing_time) / cs_t : 0.0;
  return c;
}

// ---------------------------------------------------------------------------

RefineOutcome run_refine(const Scenario& s) {
  if (!s.refine) throw InvalidArgument("scenario '" + s.name + "' has no refine case");
  const RefineCase& rc = *s.refine;
  rc.grid.validate();
  rc.vehicle.validate();
  if (!(rc.duration > 0.0 && rc.speed > 0.0)) throw InvalidArgument("refine duration and speed must be positive");

  RefineOutcome out;
  out.grid = rc.grid;
  const StraightMotion ref(rc.start, rc.heading, rc.speed, rc.duration);
  const auto [n_c, dt_k] = fit_layout(rc.duration, rc.knot_interval);
  out.initial = init_control_points(ref, 0.0, dt_k, n_c, 0.0);

  const int last_jt = static_cast<int>(std::ceil(rc.duration / rc.grid.dt)) + 1;
  out.obstacles = obstacle_occupancy(rc.obstacles, rc.grid, last_jt);

  out.tunnel = OccupancySet(rc.grid);
  const Eigen::Vector2d nrm(-std::sin(rc.heading), std::cos(rc.heading));
  std::vector<Cell2> band;
  for (int jx = 1; jx <= rc.grid.nx; ++jx)
    for (int jy = 1; jy <= rc.grid.ny; ++jy)
      if (std::abs((rc.grid.cell_center(jx, jy) - rc.start).dot(nrm)) < rc.tunnel_half_width)
        band.push_back({jx, jy});
  for (int jt = 1; jt <= last_jt; ++jt) out.tunnel.insert_slab(jt, band);

  ObstacleGrid og(rc.grid);
  og.add_obstacles(out.obstacles);
  og.add_virtual(ft_virtual_obstacles(out.tunnel));
  LowLevelOptions lo = s.low_level;
  lo.vehicle = rc.vehicle;
  out.result = optimize(out.initial, og, lo, &out.tunnel);
  return out;
}

}  // namespace bilevel
