#include "bilevel/export.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

namespace bilevel {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::ofstream open_out(const fs::path& path) {
  if (path.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
    if (ec) throw IoError("cannot create directory " + path.parent_path().string() + ": " + ec.message());
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  return out;
}

void finish(std::ofstream& out, const fs::path& path) {
  out.flush();
  if (!out) throw IoError("write failed for " + path.string());
}

std::string f6(double v) { return fmt::format("{:.6f}", v); }

}  // namespace

void write_schedule_csv(const fs::path& path, const ExperimentResult& r) {
  auto out = open_out(path);
  out << "vehicle_id,road_from,road_to,maneuver,arrival,round,offset,t_e,start_time,exit_time,"
         "max_jt,wait,p_d,p_w,p_sta,score,refined,incident\n";
  for (std::size_t i = 0; i < r.schedule.allocations.size(); ++i) {
    const auto& a = r.schedule.allocations[i];
    const bool refined = i < r.vehicles.size() && r.vehicles[i].refined;
    const bool incident = i < r.vehicles.size() && r.vehicles[i].incident;
    out << fmt::format("{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n", a.vehicle_id,
                       a.road_from, a.road_to, to_string(a.maneuver), f6(a.arrival), a.round,
                       a.offset, f6(a.t_e), f6(a.start_time), f6(a.exit_time), a.occupancy.max_jt(),
                       f6(a.t_e - a.arrival - a.buffer.duration), f6(a.terms.p_d),
                       f6(a.terms.p_w), f6(a.terms.p_sta), f6(a.terms.score), refined ? 1 : 0,
                       incident ? 1 : 0);
  }
  finish(out, path);
}

void write_trace_csv(const fs::path& path, const std::vector<TraceSample>& trace) {
  auto out = open_out(path);
  out << "t,x,y,heading,speed,accel,steer,lateral_error\n";
  for (const auto& s : trace)
    out << fmt::format("{},{},{},{},{},{},{},{}\n", f6(s.t), f6(s.state.x), f6(s.state.y),
                       f6(s.state.heading), f6(s.state.speed), f6(s.control.accel),
                       f6(s.control.steer), f6(s.lateral_error));
  finish(out, path);
}

void write_reference_csv(const fs::path& path, const Trajectory& traj, double step) {
  if (!(step > 0.0)) throw InvalidArgument("sampling step must be positive");
  auto out = open_out(path);
  out << "t,s,x,y,heading,speed\n";
  const int n = std::max(1, static_cast<int>(std::ceil(traj.duration() / step - 1e-9)));
  for (int i = 0; i <= n; ++i) {
    const double t = std::min(traj.duration(), i * step);
    const MotionSample m = traj.sample(t);
    out << fmt::format("{},{},{},{},{},{}\n", f6(t), f6(traj.speed().s(t)), f6(m.position.x()),
                       f6(m.position.y()), f6(m.heading), f6(m.speed));
  }
  finish(out, path);
}

void write_spline_csv(const fs::path& path, const ControlPointSequence& q, double step) {
  if (!(step > 0.0)) throw InvalidArgument("sampling step must be positive");
  auto out = open_out(path);
  out << "t,x,y,heading,speed,curvature\n";
  const SplineMotion motion(q);
  const int n = std::max(1, static_cast<int>(std::ceil(q.span() / step - 1e-9)));
  for (int i = 0; i <= n; ++i) {
    const double t = std::min(q.t_end(), q.t0 + i * step);
    const MotionSample m = motion.sample(t);
    out << fmt::format("{},{},{},{},{},{}\n", f6(t), f6(m.position.x()), f6(m.position.y()),
                       f6(m.heading), f6(m.speed), f6(m.curvature));
  }
  finish(out, path);
}

void write_control_points_csv(const fs::path& path, const ControlPointSequence& q) {
  auto out = open_out(path);
  out << "index,t_peak,x,y,free\n";
  for (int i = 0; i < q.size(); ++i)
    out << fmt::format("{},{},{},{},{}\n", i, f6(q.peak_time(i)), f6(q.points[i].x()),
                       f6(q.points[i].y()), q.is_free(i) ? 1 : 0);
  finish(out, path);
}

void write_iterate_log_csv(const fs::path& path, const std::vector<IterateRecord>& log) {
  auto out = open_out(path);
  out << "attempt,iteration,smoothness,collision,total,gradient_norm\n";
  for (const auto& r : log)
    out << fmt::format("{},{},{},{},{},{}\n", r.attempt, r.iteration, f6(r.smoothness),
                       f6(r.collision), f6(r.total), f6(r.gradient_norm));
  finish(out, path);
}

void write_occupancy_csv(const fs::path& path, const std::vector<OccupancySet>& sets) {
  auto out = open_out(path);
  out << "owner,j_x,j_y,j_t\n";
  for (const auto& s : sets)
    for (const auto& c : s.cells()) out << fmt::format("{},{},{},{}\n", s.owner(), c.jx, c.jy, c.jt);
  finish(out, path);
}

std::map<int, OccupancySet> read_occupancy_csv(const fs::path& path, const GridSpec& grid) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string() + " for reading");
  std::string line;
  if (!std::getline(in, line) || line != "owner,j_x,j_y,j_t")
    throw IoError("unexpected header in " + path.string());
  std::map<int, OccupancySet> out;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ss(line);
    int owner = 0;
    CellIndex c;
    char c1 = 0, c2 = 0, c3 = 0;
    if (!(ss >> owner >> c1 >> c.jx >> c2 >> c.jy >> c3 >> c.jt) || c1 != ',' || c2 != ',' || c3 != ',')
      throw IoError(fmt::format("malformed row {} in {}", lineno, path.string()));
    auto it = out.try_emplace(owner, grid, owner).first;
    it->second.insert(c);
  }
  return out;
}

json metrics_to_json(const ExperimentResult& r) {
  const Metrics& m = r.metrics;
  json waits = json::array();
  json scores = json::array();
  for (std::size_t i = 0; i < r.vehicles.size(); ++i) {
    const auto& v = r.vehicles[i];
    const auto& t = r.schedule.allocations[i].terms;
    waits.push_back({{"vehicle_id", v.vehicle_id}, {"wait", v.wait}});
    scores.push_back({{"vehicle_id", v.vehicle_id},
                      {"p_d", t.p_d},
                      {"p_w", t.p_w},
                      {"p_sta", t.p_sta},
                      {"score", t.score}});
  }
  json queue = json::array();
  for (const auto& [clock, n] : m.queue_trace) queue.push_back({clock, n});
  return {{"scenario", r.scenario_name},
          {"seed", r.seed},
          {"strategy", std::string(to_string(r.strategy))},
          {"vehicles", m.vehicles},
          {"scheduled", m.scheduled},
          {"total_passing_time", m.total_passing_time},
          {"makespan", m.makespan},
          {"mean_wait", m.mean_wait},
          {"max_wait", m.max_wait},
          {"max_head_wait", m.max_head_wait},
          {"high_level_total_ms", m.hl_total_ms},
          {"high_level_max_round_ms", m.hl_max_round_ms},
          {"high_level_round_ms", m.round_ms},
          {"low_level_ms", m.ll_ms},
          {"queue_trace", queue},
          {"planned_overlaps", m.planned_overlaps},
          {"vehicle_collisions", m.vehicle_collisions},
          {"obstacle_collisions", m.obstacle_collisions},
          {"collisions", m.collisions()},
          {"incidents", m.incidents},
          {"accepted", r.accepted()},
          {"wait_times", waits},
          {"scores", scores}};
}

void write_json(const fs::path& path, const json& j) {
  auto out = open_out(path);
  out << j.dump(2) << '\n';
  finish(out, path);
}

std::vector<fs::path> export_experiment(const ExperimentResult& r, const fs::path& dir) {
  std::vector<fs::path> written;
  auto note = [&](const fs::path& p) { written.push_back(p); };

  write_schedule_csv(dir / "schedule.csv", r);
  note(dir / "schedule.csv");

  std::vector<OccupancySet> planned;
  for (const auto& a : r.schedule.allocations) planned.push_back(a.occupancy);
  write_occupancy_csv(dir / "occupancy.csv", planned);
  note(dir / "occupancy.csv");

  std::set<std::pair<int, Maneuver>> refs;
  for (const auto& a : r.schedule.allocations)
    if (refs.insert({a.road_from, a.maneuver}).second) {
      const auto p = dir / "references" /
                     fmt::format("road{}_{}.csv", a.road_from, to_string(a.maneuver));
      write_reference_csv(p, *a.trajectory);
      note(p);
    }

  std::vector<OccupancySet> tunnels;
  for (const auto& t : r.schedule.tunnels) tunnels.push_back(t.cells);
  write_occupancy_csv(dir / "tunnels.csv", tunnels);
  note(dir / "tunnels.csv");

  std::vector<OccupancySet> executed;
  for (const auto& v : r.vehicles)
    if (!v.trace.empty()) executed.push_back(v.executed);
  if (!executed.empty()) {
    write_occupancy_csv(dir / "executed_occupancy.csv", executed);
    note(dir / "executed_occupancy.csv");
  }
  if (!r.obstacles.empty()) {
    write_occupancy_csv(dir / "obstacle_occupancy.csv", {r.obstacles});
    note(dir / "obstacle_occupancy.csv");
  }

  for (const auto& v : r.vehicles) {
    if (!v.trace.empty()) {
      const auto p = dir / "trajectories" / fmt::format("vehicle_{:04d}.csv", v.vehicle_id);
      write_trace_csv(p, v.trace);
      note(p);
    }
    if (v.refined_path) {
      const auto p = dir / "refined" / fmt::format("vehicle_{:04d}.csv", v.vehicle_id);
      write_control_points_csv(p, *v.refined_path);
      note(p);
      const auto ps = dir / "refined" / fmt::format("vehicle_{:04d}_path.csv", v.vehicle_id);
      write_spline_csv(ps, *v.refined_path);
      note(ps);
    }
  }

  write_json(dir / "metrics.json", metrics_to_json(r));
  note(dir / "metrics.json");
  return written;
}

std::vector<fs::path> export_refine(const RefineOutcome& r, const fs::path& dir) {
  std::vector<fs::path> written;
  write_control_points_csv(dir / "initial_control_points.csv", r.initial);
  written.push_back(dir / "initial_control_points.csv");
  write_control_points_csv(dir / "refined_control_points.csv", r.result.q);
  written.push_back(dir / "refined_control_points.csv");
  write_spline_csv(dir / "refined_path.csv", r.result.q);
  written.push_back(dir / "refined_path.csv");
  write_iterate_log_csv(dir / "iterates.csv", r.result.log);
  written.push_back(dir / "iterates.csv");
  write_occupancy_csv(dir / "obstacle_occupancy.csv", {r.obstacles});
  written.push_back(dir / "obstacle_occupancy.csv");

  const json j{{"collision_free", r.result.collision_free},
               {"inside_tunnel", r.result.inside_tunnel},
               {"kinematics_ok", r.result.kinematics_ok},
               {"attempts", r.result.attempts},
               {"iterations", r.result.log.size()},
               {"final_w_c", r.result.final_w_c},
               {"final_w_acc", r.result.final_w_acc},
               {"compute_ms", r.result.compute_ms},
               {"control_points", r.result.q.size()},
               {"knot_interval", r.result.q.dt},
               {"message", r.result.message}};
  write_json(dir / "refine.json", j);
  written.push_back(dir / "refine.json");
  return written;
}

void write_acceptance_report(const fs::path& path, const std::vector<CriterionResult>& results) {
  json arr = json::array();
  bool all = true;
  for (const auto& c : results) {
    arr.push_back({{"id", c.id}, {"name", c.name}, {"passed", c.passed}, {"measured", c.measured}});
    all = all && c.passed;
  }
  write_json(path, {{"all_passed", all}, {"criteria", arr}});
}

}  // namespace bilevel
