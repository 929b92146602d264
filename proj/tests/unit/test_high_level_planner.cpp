#include <doctest.h>

#include <algorithm>
#include <set>

#include "bilevel/high_level_planner.hpp"
#include "bilevel/scenario.hpp"

using namespace bilevel;

namespace {

std::shared_ptr<const ReferenceLibrary> library() {
  static const auto lib = std::make_shared<const ReferenceLibrary>(ReferenceConfig{});
  return lib;
}

HighLevelPlanner planner(HighLevelConfig cfg = {}) { return HighLevelPlanner(library(), GridSpec{}, cfg); }

const IntersectionConfig kCfg;

std::set<CellIndex> cell_set(const OccupancySet& s) {
  const auto c = s.cells();
  return {c.begin(), c.end()};
}

bool naive_disjoint(const OccupancySet& a, const OccupancySet& b) {
  const auto sa = cell_set(a);
  for (const auto& c : b.cells())
    if (sa.count(c)) return false;
  return true;
}

void check_pairwise_disjoint(const ScheduleResult& r) {
  for (std::size_t i = 0; i < r.allocations.size(); ++i)
    for (std::size_t j = i + 1; j < r.allocations.size(); ++j)
      CHECK(naive_disjoint(r.allocations[i].occupancy, r.allocations[j].occupancy));
}

std::vector<int> order_of(const ScheduleResult& r) {
  std::vector<int> ids;
  for (const auto& a : r.allocations) ids.push_back(a.vehicle_id);
  return ids;
}

std::vector<MotionRequest> four_left_turns() {
  std::vector<MotionRequest> reqs;
  for (int r = 1; r <= 4; ++r) reqs.push_back(make_request(r, r, Maneuver::TurnLeft, 0.0, kCfg));
  return reqs;
}

}  // namespace

TEST_CASE("priority composition matches hand arithmetic") {
  const PriorityWeights w{1.0, 0.5, 1.0};
  const auto p = priority(30, 25, {1.0, 2.0, 4.5}, 5.0, 0.8, w, 0.2);
  const double p_d = 1.0 * 30 * 0.2;
  const double p_w = 0.5 * ((5.0 - 1.0) / 1 + (5.0 - 2.0) / 2 + (5.0 - 4.5) / 3);
  const double p_sta = 1.0 * 3 * 0.8;
  CHECK(p.p_d == doctest::Approx(p_d).epsilon(1e-12));
  CHECK(p.p_w == doctest::Approx(p_w).epsilon(1e-12));
  CHECK(p.p_sta == doctest::Approx(p_sta).epsilon(1e-12));
  CHECK(p.score == doctest::Approx(p_d - p_w - p_sta).epsilon(1e-12));

  // The allocated horizon dominates when it is later.
  CHECK(priority(10, 25, {}, 0.0, 0.8, w, 0.2).p_d == doctest::Approx(5.0));
}

TEST_CASE("longer-waiting head scores lower") {
  const PriorityWeights w{1.0, 0.5, 1.0};
  const auto a = priority(30, 0, {1.0}, 5.0, 0.8, w, 0.2);
  const auto b = priority(30, 0, {3.0}, 5.0, 0.8, w, 0.2);
  CHECK(a.score < b.score);
  PriorityWeights bad = w;
  bad.w_sta = -1.0;
  CHECK_THROWS_AS(bad.validate(), InvalidArgument);
}

TEST_CASE("earliest entry on an empty allocation is the floor") {
  const auto hl = planner();
  const auto req = make_request(1, 1, Maneuver::GoStraight, 0.0, kCfg);
  const auto e = hl.earliest_entry(req, OccupancySet(hl.grid()), 9);
  CHECK(e.offset == 9);
  CHECK(e.t_e == doctest::Approx(1.8));
  CHECK(e.occupancy == hl.base_occupancy(1, Maneuver::GoStraight).translated(9));
}

TEST_CASE("second straight on the same road takes the first free slot") {
  const auto hl = planner();
  const auto r = hl.run({make_request(1, 1, Maneuver::GoStraight, 0.0, kCfg),
                         make_request(2, 1, Maneuver::GoStraight, 0.0, kCfg)});
  REQUIRE(r.allocations.size() == 2);
  const auto& first = r.allocations[0];
  const auto& second = r.allocations[1];
  const OccupancySet& base = hl.base_occupancy(1, Maneuver::GoStraight);
  int k = second.floor_offset;
  while (!naive_disjoint(base.translated(k), first.occupancy)) ++k;
  CHECK(second.offset == k);
  CHECK(second.t_e > first.t_e);
}

TEST_CASE("four left turns enter in sequence and touch on the t-axis") {
  const auto hl = planner();
  const auto r = hl.run(four_left_turns());
  REQUIRE(r.allocations.size() == 4);
  for (std::size_t i = 1; i < 4; ++i) {
    CHECK(r.allocations[i].t_e > r.allocations[i - 1].t_e);
    const auto& a = r.allocations[i];
    const OccupancySet earlier = a.occupancy.translated(-1);
    bool meets = false;
    for (std::size_t j = 0; j < i; ++j) meets = meets || !naive_disjoint(earlier, r.allocations[j].occupancy);
    CHECK(meets);
  }
  check_pairwise_disjoint(r);
}

TEST_CASE("single vehicle is allocated at its floor") {
  const auto hl = planner();
  const auto req = make_request(5, 2, Maneuver::TurnRight, 1.3, kCfg);
  const auto r = hl.run({req});
  REQUIRE(r.allocations.size() == 1);
  const auto& a = r.allocations[0];
  CHECK(a.offset == a.floor_offset);
  CHECK(a.floor_offset == hl.floor_offset(1.3 + hl.adjust_time(2, Maneuver::TurnRight)));
  CHECK(r.allocated == a.occupancy);
  CHECK(a.start_time == doctest::Approx(a.t_e - hl.adjust_time(2, Maneuver::TurnRight)));
  CHECK(a.start_time >= req.arrival_time - 1e-12);
}

TEST_CASE("empty request list gives an empty schedule") {
  const auto r = planner().run({});
  CHECK(r.allocations.empty());
  CHECK(r.allocated.empty());
  CHECK(r.total_passing_time() == 0.0);
}

TEST_CASE("mixed flows: disjoint, greedy-tight, dominate CS") {
  const auto hl = planner();
  for (std::uint64_t seed = 1; seed <= 6; ++seed) {
    const auto mix = seed % 2 ? ManeuverMix::flow1() : ManeuverMix::flow2();
    const auto reqs = generate_flow(mix, 12, 0.2, seed, kCfg);
    const auto r = hl.run(reqs);
    REQUIRE(r.allocations.size() == reqs.size());
    check_pairwise_disjoint(r);

    for (std::size_t i = 0; i < r.allocations.size(); ++i) {
      const auto& a = r.allocations[i];
      CHECK(a.offset >= a.floor_offset);
      if (a.offset == a.floor_offset) continue;
      const OccupancySet earlier = a.occupancy.translated(-1);
      bool meets = false;
      for (std::size_t j = 0; j < i; ++j) meets = meets || !naive_disjoint(earlier, r.allocations[j].occupancy);
      CHECK(meets);
    }

    const auto cs = hl.run_cs(reqs, order_of(r));
    CHECK(order_of(cs) == order_of(r));
    check_pairwise_disjoint(cs);
    CHECK(r.total_passing_time() <= cs.total_passing_time() + 1e-9);
    for (std::size_t i = 0; i < r.allocations.size(); ++i)
      CHECK(r.allocations[i].t_e <= cs.allocations[i].t_e + 1e-9);
  }
}

TEST_CASE("CS baseline on small instances") {
  const auto hl = planner();
  const auto one = make_request(1, 3, Maneuver::GoStraight, 0.4, kCfg);
  const auto p1 = hl.run({one});
  const auto c1 = hl.run_cs({one}, {1});
  CHECK(p1.allocations[0].offset == c1.allocations[0].offset);

  const std::vector<MotionRequest> rights{make_request(1, 1, Maneuver::TurnRight, 0.0, kCfg),
                                          make_request(2, 3, Maneuver::TurnRight, 0.0, kCfg)};
  const auto p2 = hl.run(rights);
  const auto c2 = hl.run_cs(rights, order_of(p2));
  CHECK(p2.allocations[0].t_e == p2.allocations[1].t_e);
  CHECK(c2.allocations[1].t_e > c2.allocations[0].t_e);
  CHECK(c2.allocations[1].occupancy.min_jt() > c2.allocations[0].occupancy.max_jt());
  CHECK(c2.total_passing_time() >= p2.total_passing_time());

  const auto lefts = four_left_turns();
  const auto p4 = hl.run(lefts);
  const auto c4 = hl.run_cs(lefts, order_of(p4));
  for (std::size_t i = 1; i < 4; ++i)
    CHECK(c4.allocations[i].t_e - c4.allocations[i - 1].t_e >=
          p4.allocations[i].t_e - p4.allocations[i - 1].t_e - 1e-9);

  CHECK_THROWS_AS(hl.run_cs(lefts, {1, 2, 3}), InvalidArgument);
  CHECK_THROWS_AS(hl.run_cs(lefts, {1, 2, 3, 3}), InvalidArgument);
}

TEST_CASE("feasible tunnel dilation") {
  const auto hl = planner();
  const auto req = make_request(1, 1, Maneuver::GoStraight, 0.0, kCfg);
  const auto r = hl.run({req});
  const Allocation& a = r.allocations[0];

  const auto t0 = feasible_tunnel(a, OccupancySet(hl.grid()), 0);
  CHECK(t0.cells == a.occupancy);

  const auto t1 = feasible_tunnel(a, OccupancySet(hl.grid()), 1);
  CHECK(t1.margin == 1);
  for (int jt = a.occupancy.min_jt(); jt <= a.occupancy.max_jt(); ++jt) {
    std::set<std::pair<int, int>> oracle;
    for (const auto& c : a.occupancy.slab_cells(jt))
      for (int dx = -1; dx <= 1; ++dx)
        for (int dy = -1; dy <= 1; ++dy) {
          const int x = c.jx + dx, y = c.jy + dy;
          if (x >= 1 && x <= hl.grid().nx && y >= 1 && y <= hl.grid().ny) oracle.insert({x, y});
        }
    CHECK(t1.cells.slab_size(jt) == oracle.size());
  }

  // A neighbour allocation one ring away forces the dilation back.
  OccupancySet neighbour(hl.grid());
  const int jt = a.occupancy.min_jt() + 3;
  const auto core = a.occupancy.slab_cells(jt);
  for (const auto& c : dilate_cells(core, 1, hl.grid()))
    if (!a.occupancy.contains({c.jx, c.jy, jt})) {
      neighbour.insert({c.jx, c.jy, jt});
      break;
    }
  REQUIRE_FALSE(neighbour.empty());
  const auto t2 = feasible_tunnel(a, neighbour, 2);
  CHECK(disjoint(t2.cells, neighbour));
  CHECK(t2.margin == 0);
  CHECK(t2.cells.slab_size(jt) == core.size());
  CHECK(t2.cells.slab_size(jt + 1) > a.occupancy.slab_size(jt + 1));
  for (const auto& c : a.occupancy.cells()) CHECK(t2.cells.contains(c));
}

TEST_CASE("tunnels with a margin stay disjoint across a run") {
  HighLevelConfig cfg;
  cfg.tunnel_margin = 3;
  const auto hl = planner(cfg);
  const auto r = hl.run(generate_flow(ManeuverMix::flow2(), 16, 0.25, 12, kCfg));
  for (std::size_t i = 0; i < r.tunnels.size(); ++i) {
    for (const auto& c : r.allocations[i].occupancy.cells()) CHECK(r.tunnels[i].cells.contains(c));
    for (std::size_t j = i + 1; j < r.tunnels.size(); ++j)
      CHECK(disjoint(r.tunnels[i].cells, r.tunnels[j].cells));
  }
}

TEST_CASE("threads and reruns do not change the schedule") {
  const auto reqs = generate_flow(ManeuverMix::flow1(), 20, 0.2, 5, kCfg);
  const auto a = planner().run(reqs);
  HighLevelConfig cfg;
  cfg.threads = 4;
  const auto b = planner(cfg).run(reqs);
  const auto c = planner().run(reqs);
  REQUIRE(a.allocations.size() == b.allocations.size());
  for (std::size_t i = 0; i < a.allocations.size(); ++i) {
    CHECK(a.allocations[i].vehicle_id == b.allocations[i].vehicle_id);
    CHECK(a.allocations[i].offset == b.allocations[i].offset);
    CHECK(a.allocations[i].terms.score == b.allocations[i].terms.score);
    CHECK(a.allocations[i].occupancy == c.allocations[i].occupancy);
  }
}

TEST_CASE("head waiting time drops with the fairness term") {
  std::vector<MotionRequest> reqs;
  int id = 1;
  for (int k = 0; k < 6; ++k)
    for (int road : {1, 3}) reqs.push_back(make_request(id++, road, Maneuver::GoStraight, 2.0 * k, kCfg));
  for (int k = 0; k < 3; ++k)
    for (int road : {2, 4}) reqs.push_back(make_request(id++, road, Maneuver::TurnLeft, 0.0, kCfg));
  // Straight stream on roads 1 and 3, a batch of left turns waiting on 2 and 4.
  auto max_head_wait = [&](double w_w) {
    HighLevelConfig cfg;
    cfg.weights.w_w = w_w;
    const auto r = planner(cfg).run(reqs);
    double worst = 0.0;
    for (const auto& round : r.rounds)
      for (const auto& c : round.candidates) worst = std::max(worst, round.clock - c.arrival);
    return worst;
  };
  const double fair = max_head_wait(0.5);
  const double greedy = max_head_wait(0.0);
  MESSAGE("max head wait: w_w 0.5 -> " << fair << " s, w_w 0 -> " << greedy << " s");
  CHECK(fair < greedy);
}

TEST_CASE("sequential makespan against the exhaustive optimum") {
  const auto hl = planner();
  const auto lefts = four_left_turns();
  const auto r = hl.run(lefts);
  const double seq = r.makespan(hl.grid().dt);
  const double opt = hl.optimal_makespan(lefts, seq + 1e-9);
  CHECK(opt <= seq + 1e-9);
  MESSAGE("four left turns: sequential " << seq << " s, optimum " << opt << " s");

  const std::vector<MotionRequest> mixed{make_request(1, 1, Maneuver::TurnLeft, 0.0, kCfg),
                                         make_request(2, 2, Maneuver::GoStraight, 0.0, kCfg),
                                         make_request(3, 3, Maneuver::TurnRight, 0.2, kCfg)};
  const auto rm = hl.run(mixed);
  CHECK(hl.optimal_makespan(mixed, rm.makespan(hl.grid().dt) + 1e-9) <=
        rm.makespan(hl.grid().dt) + 1e-9);
}
