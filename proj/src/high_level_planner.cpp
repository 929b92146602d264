#include "bilevel/high_level_planner.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <deque>
#include <limits>
#include <thread>

namespace bilevel {

void PriorityWeights::validate() const {
  if (w_d < 0.0 || w_w < 0.0 || w_sta < 0.0)
    throw InvalidArgument("priority weights must be non-negative");
}

PriorityTerms priority(int tentative_max_jt, int allocated_max_jt,
                       const std::vector<double>& queue_arrivals, double clock,
                       double arrival_rate, const PriorityWeights& w, double dt) {
  PriorityTerms p;
  p.p_d = w.w_d * std::max(tentative_max_jt, allocated_max_jt) * dt;
  double waited = 0.0;
  for (std::size_t n = 0; n < queue_arrivals.size(); ++n)
    waited += std::max(0.0, clock - queue_arrivals[n]) / static_cast<double>(n + 1);
  p.p_w = w.w_w * waited;
  p.p_sta = w.w_sta * static_cast<double>(queue_arrivals.size()) * arrival_rate;
  p.score = p.p_d - p.p_w - p.p_sta;
  return p;
}

std::vector<Cell2> dilate_cells(const std::vector<Cell2>& cells, int rings, const GridSpec& spec) {
  if (rings < 0) throw InvalidArgument("dilation must be non-negative");
  if (rings == 0) return cells;
  std::vector<char> mark(static_cast<std::size_t>(spec.nx) * spec.ny, 0);
  for (const auto& c : cells)
    for (int dx = -rings; dx <= rings; ++dx)
      for (int dy = -rings; dy <= rings; ++dy) {
        const int x = c.jx + dx, y = c.jy + dy;
        if (x >= 1 && x <= spec.nx && y >= 1 && y <= spec.ny)
          mark[static_cast<std::size_t>((x - 1) * spec.ny + (y - 1))] = 1;
      }
  std::vector<Cell2> out;
  for (int x = 1; x <= spec.nx; ++x)
    for (int y = 1; y <= spec.ny; ++y)
      if (mark[static_cast<std::size_t>((x - 1) * spec.ny + (y - 1))]) out.push_back({x, y});
  return out;
}

FeasibleTunnel feasible_tunnel(const Allocation& alloc, const OccupancySet& allocated, int margin) {
  if (margin < 0) throw InvalidArgument("tunnel margin must be non-negative");
  if (!allocated.empty() && alloc.occupancy.intersects(allocated))
    throw InvalidArgument("allocation already meets the allocated set");
  FeasibleTunnel t;
  t.allocation = alloc;
  t.margin = margin;
  t.cells = OccupancySet(alloc.occupancy.grid(), alloc.vehicle_id);
  const GridSpec& g = alloc.occupancy.grid();
  for (int jt = alloc.occupancy.min_jt(); jt <= alloc.occupancy.max_jt(); ++jt) {
    const auto core = alloc.occupancy.slab_cells(jt);
    if (core.empty()) continue;
    for (int m = margin; m >= 0; --m) {
      const auto cells = dilate_cells(core, m, g);
      bool clear = true;
      if (m > 0)
        for (const auto& c : cells)
          if (allocated.contains({c.jx, c.jy, jt})) {
            clear = false;
            break;
          }
      if (clear) {
        t.cells.insert_slab(jt, cells);
        if (m < t.margin) t.margin = m;
        break;
      }
    }
  }
  return t;
}

double ScheduleResult::total_passing_time() const {
  double t = 0.0;
  for (const auto& a : allocations) t = std::max(t, a.exit_time);
  return t;
}

double ScheduleResult::makespan(double dt) const {
  int jt = 0;
  for (const auto& a : allocations) jt = std::max(jt, a.occupancy.max_jt());
  return jt * dt;
}

const Allocation* ScheduleResult::find(int vehicle_id) const {
  for (const auto& a : allocations)
    if (a.vehicle_id == vehicle_id) return &a;
  return nullptr;
}

// ---------------------------------------------------------------------------

HighLevelPlanner::HighLevelPlanner(std::shared_ptr<const ReferenceLibrary> library,
                                   const GridSpec& grid, const HighLevelConfig& config)
    : library_(std::move(library)), grid_(grid), config_(config) {
  if (!library_) throw InvalidArgument("planner needs a reference library");
  grid_.validate();
  config_.weights.validate();
  if (config_.threads < 1) throw InvalidArgument("thread count must be >= 1");
  const auto& plans = library_->plans();
  base_.reserve(plans.size());
  for (const auto& p : plans)
    base_.push_back(crossing_occupancy(*p.crossing, library_->config().vehicle, grid_, 0));
}

std::size_t HighLevelPlanner::plan_index(int road, Maneuver m) const {
  const auto& plans = library_->plans();
  for (std::size_t i = 0; i < plans.size(); ++i)
    if (plans[i].road_from == road && plans[i].maneuver == m) return i;
  throw InvalidArgument("no reference plan for road " + std::to_string(road));
}

const OccupancySet& HighLevelPlanner::base_occupancy(int road, Maneuver m) const {
  return base_[plan_index(road, m)];
}

double HighLevelPlanner::adjust_time(int road, Maneuver m) const {
  return library_->plan(road, m).buffer.duration;
}

int HighLevelPlanner::floor_offset(double ready_time) const {
  return static_cast<int>(std::ceil(ready_time / grid_.dt - 1e-9));
}

EntrySearch HighLevelPlanner::earliest_entry(const MotionRequest& req, const OccupancySet& allocated,
                                             int floor) const {
  const OccupancySet& base = base_occupancy(req.road_from, req.maneuver);
  if (floor + base.min_jt() < 1)
    throw InvalidArgument("entry floor would place occupancy before the first slab");
  int k = floor;
  while (base.intersects_shifted(allocated, k)) ++k;
  return {k, k * grid_.dt, base.translated(k)};
}

Allocation HighLevelPlanner::make_allocation(const MotionRequest& req, const EntrySearch& e,
                                             int floor, int round) const {
  const ManeuverPlan& plan = library_->plan(req.road_from, req.maneuver);
  Allocation a;
  a.vehicle_id = req.vehicle_id;
  a.road_from = req.road_from;
  a.road_to = req.road_to;
  a.maneuver = req.maneuver;
  a.arrival = req.arrival_time;
  a.round = round;
  a.offset = e.offset;
  a.floor_offset = floor;
  a.t_e = e.t_e;
  a.start_time = e.t_e - plan.buffer.duration;
  a.exit_time = e.t_e + plan.trajectory->duration();
  a.occupancy = e.occupancy;
  a.occupancy.set_owner(req.vehicle_id);
  a.trajectory = plan.trajectory;
  a.crossing = plan.crossing;
  a.buffer = plan.buffer;
  return a;
}

namespace {

std::vector<MotionRequest> sorted_by_arrival(std::vector<MotionRequest> reqs) {
  std::stable_sort(reqs.begin(), reqs.end(), [](const auto& a, const auto& b) {
    return a.arrival_time < b.arrival_time ||
           (a.arrival_time == b.arrival_time && a.vehicle_id < b.vehicle_id);
  });
  return reqs;
}

}  // namespace

ScheduleResult HighLevelPlanner::run(const std::vector<MotionRequest>& requests) const {
  using Clock = std::chrono::steady_clock;
  const int R = library_->config().intersection.road_count;
  const auto pending_all = sorted_by_arrival(requests);
  std::size_t next = 0;
  std::vector<std::deque<MotionRequest>> queues(R);
  std::vector<double> leader_te(R, -std::numeric_limits<double>::infinity());

  ScheduleResult out;
  out.allocated = OccupancySet(grid_);
  double clock = 0.0;
  int round = 0;
  while (next < pending_all.size() ||
         std::any_of(queues.begin(), queues.end(), [](const auto& q) { return !q.empty(); })) {
    while (next < pending_all.size() && pending_all[next].arrival_time <= clock + 1e-12) {
      const auto& r = pending_all[next++];
      if (r.road_from < 1 || r.road_from > R) throw InvalidArgument("request road out of range");
      queues[r.road_from - 1].push_back(r);
    }
    if (std::all_of(queues.begin(), queues.end(), [](const auto& q) { return q.empty(); })) {
      clock = std::max(clock, pending_all[next].arrival_time);
      continue;
    }

    const auto t0 = Clock::now();
    ++round;
    RoundRecord rec;
    rec.round = round;
    rec.clock = clock;
    for (const auto& q : queues) rec.queue_lengths.push_back(static_cast<int>(q.size()));

    std::vector<int> roads;
    for (int r = 0; r < R; ++r)
      if (!queues[r].empty()) roads.push_back(r);
    std::vector<Candidate> cands(roads.size());
    auto score = [&](std::size_t i) {
      const int r = roads[i];
      const MotionRequest& head = queues[r].front();
      const double ready = std::max(head.arrival_time, leader_te[r]);
      const double floor_time = std::max(clock, ready + adjust_time(head.road_from, head.maneuver));
      Candidate& c = cands[i];
      c.vehicle_id = head.vehicle_id;
      c.road = r + 1;
      c.arrival = head.arrival_time;
      c.floor_offset = floor_offset(floor_time);
      c.entry = earliest_entry(head, out.allocated, c.floor_offset);
      std::vector<double> arrivals;
      for (const auto& q : queues[r]) arrivals.push_back(q.arrival_time);
      c.terms = priority(c.entry.occupancy.max_jt(), out.allocated.max_jt(), arrivals, clock,
                         config_.arrival_rate, config_.weights, grid_.dt);
    };
    if (config_.threads > 1 && cands.size() > 1) {
      std::vector<std::thread> workers;
      const std::size_t nw = std::min<std::size_t>(config_.threads, cands.size());
      for (std::size_t w = 0; w < nw; ++w)
        workers.emplace_back([&, w] {
          for (std::size_t i = w; i < cands.size(); i += nw) score(i);
        });
      for (auto& t : workers) t.join();
    } else {
      for (std::size_t i = 0; i < cands.size(); ++i) score(i);
    }

    std::size_t best = 0;
    for (std::size_t i = 1; i < cands.size(); ++i)
      if (cands[i].terms.score < cands[best].terms.score) best = i;
    const Candidate& pick = cands[best];
    const int r = pick.road - 1;
    Allocation alloc = make_allocation(queues[r].front(), pick.entry, pick.floor_offset, round);
    alloc.terms = pick.terms;
    FeasibleTunnel tunnel = feasible_tunnel(alloc, out.allocated, config_.tunnel_margin);
    out.allocated.merge(tunnel.cells);
    leader_te[r] = alloc.t_e;
    clock = std::max(clock, alloc.t_e);
    queues[r].pop_front();

    rec.candidates = std::move(cands);
    rec.chosen_vehicle = alloc.vehicle_id;
    rec.compute_ms = std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
    spdlog::debug("round {}: vehicle {} road {} t_e {:.2f}", round, alloc.vehicle_id, pick.road,
                  alloc.t_e);
    out.allocations.push_back(alloc);
    out.tunnels.push_back(std::move(tunnel));
    out.rounds.push_back(std::move(rec));
  }
  return out;
}

ScheduleResult HighLevelPlanner::run_cs(const std::vector<MotionRequest>& requests,
                                        const std::vector<int>& order) const {
  const int R = library_->config().intersection.road_count;
  if (order.size() != requests.size())
    throw InvalidArgument("order must list every request exactly once");
  std::vector<double> leader_te(R, -std::numeric_limits<double>::infinity());
  ScheduleResult out;
  out.allocated = OccupancySet(grid_);
  double last_te = 0.0;
  int round = 0;
  std::vector<char> used(requests.size(), 0);
  for (int id : order) {
    auto it = std::find_if(requests.begin(), requests.end(),
                           [id](const auto& r) { return r.vehicle_id == id; });
    if (it == requests.end()) throw InvalidArgument("order names an unknown vehicle");
    auto& u = used[static_cast<std::size_t>(it - requests.begin())];
    if (u) throw InvalidArgument("order lists a vehicle twice");
    u = 1;
    const MotionRequest& req = *it;
    const int r = req.road_from - 1;
    const double ready = std::max(req.arrival_time, leader_te[r]);
    const double floor_time = std::max(last_te, ready + adjust_time(req.road_from, req.maneuver));
    const int floor = floor_offset(floor_time);
    const OccupancySet& base = base_occupancy(req.road_from, req.maneuver);
    int k = floor;
    if (!out.allocated.empty()) k = std::max(k, out.allocated.max_jt() - base.min_jt() + 1);
    EntrySearch e{k, k * grid_.dt, base.translated(k)};
    Allocation alloc = make_allocation(req, e, floor, ++round);
    FeasibleTunnel tunnel = feasible_tunnel(alloc, out.allocated, config_.tunnel_margin);
    out.allocated.merge(tunnel.cells);
    leader_te[r] = alloc.t_e;
    last_te = std::max(last_te, alloc.t_e);
    out.allocations.push_back(alloc);
    out.tunnels.push_back(std::move(tunnel));
  }
  return out;
}

double HighLevelPlanner::optimal_makespan(const std::vector<MotionRequest>& requests,
                                          double upper_bound) const {
  const auto reqs = sorted_by_arrival(requests);
  const int n = static_cast<int>(reqs.size());
  if (n == 0) return 0.0;
  std::vector<const OccupancySet*> base(n);
  std::vector<int> leader(n, -1);
  for (int i = 0; i < n; ++i) {
    base[i] = &base_occupancy(reqs[i].road_from, reqs[i].maneuver);
    for (int j = i - 1; j >= 0; --j)
      if (reqs[j].road_from == reqs[i].road_from) {
        leader[i] = j;
        break;
      }
  }
  int best = static_cast<int>(std::lround(upper_bound / grid_.dt));
  std::vector<int> offset(n, 0);
  std::vector<OccupancySet> placed(n);

  // Depth-first search for any assignment with makespan below `best`.
  auto search = [&](auto&& self, int i, int cur_max) -> void {
    if (i == n) {
      best = std::min(best, cur_max);
      return;
    }
    const MotionRequest& q = reqs[i];
    double ready = q.arrival_time;
    if (leader[i] >= 0) ready = std::max(ready, offset[leader[i]] * grid_.dt);
    const int lo = floor_offset(ready + adjust_time(q.road_from, q.maneuver));
    for (int k = lo; k + base[i]->max_jt() < best; ++k) {
      bool ok = true;
      for (int j = 0; j < i && ok; ++j) ok = !base[i]->intersects_shifted(placed[j], k);
      if (!ok) continue;
      offset[i] = k;
      placed[i] = base[i]->translated(k);
      self(self, i + 1, std::max(cur_max, k + base[i]->max_jt()));
    }
  };
  search(search, 0, 0);
  return best * grid_.dt;
}

}  // namespace bilevel
