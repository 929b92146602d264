#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "bilevel/export.hpp"

namespace fs = std::filesystem;
using namespace bilevel;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

int lines(const fs::path& p) {
  std::ifstream in(p);
  std::string l;
  int n = 0;
  while (std::getline(in, l)) ++n;
  return n;
}

fs::path fresh_dir(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / ("bilevel_export_" + name);
  fs::remove_all(d);
  return d;
}

Scenario small_flow() {
  Scenario s;
  s.seed = 13;
  s.noise.seed = 13;
  s.flow = FlowSpec{ManeuverMix::flow1(), 8, 0.2};
  return s;
}

}  // namespace

TEST_CASE("experiment export is byte-identical on rerun") {
  const auto s = small_flow();
  const auto a = fresh_dir("a"), b = fresh_dir("b");
  const auto fa = export_experiment(run_experiment(s), a);
  const auto fb = export_experiment(run_experiment(s), b);
  REQUIRE(fa.size() == fb.size());
  for (std::size_t i = 0; i < fa.size(); ++i) {
    CAPTURE(fa[i].string());
    REQUIRE(fs::exists(fa[i]));
    CHECK(fs::relative(fa[i], a) == fs::relative(fb[i], b));
    if (fa[i].extension() == ".csv") {
      CHECK(slurp(fa[i]) == slurp(fb[i]));
    } else {
      auto ja = nlohmann::json::parse(slurp(fa[i])), jb = nlohmann::json::parse(slurp(fb[i]));
      for (const char* k : {"high_level_total_ms", "high_level_max_round_ms", "high_level_round_ms",
                            "low_level_ms"}) {
        ja.erase(k);
        jb.erase(k);
      }
      CHECK(ja == jb);
    }
  }
}

TEST_CASE("schedule and occupancy files") {
  const auto s = small_flow();
  const auto r = run_experiment(s);
  const auto dir = fresh_dir("occ");
  export_experiment(r, dir);
  CHECK(lines(dir / "schedule.csv") == 1 + static_cast<int>(r.schedule.allocations.size()));
  CHECK(fs::exists(dir / "metrics.json"));
  CHECK(fs::exists(dir / "trajectories" / "vehicle_0001.csv"));

  const auto back = read_occupancy_csv(dir / "occupancy.csv", s.grid());
  REQUIRE(back.size() == r.schedule.allocations.size());
  for (const auto& a : r.schedule.allocations) {
    REQUIRE(back.count(a.vehicle_id) == 1);
    CHECK(back.at(a.vehicle_id) == a.occupancy);
  }
  for (auto i = back.begin(); i != back.end(); ++i)
    for (auto j = std::next(i); j != back.end(); ++j) CHECK_FALSE(i->second.intersects(j->second));
}

TEST_CASE("metrics JSON round trip") {
  const auto r = run_experiment(small_flow());
  const auto dir = fresh_dir("json");
  fs::create_directories(dir);
  write_json(dir / "m.json", metrics_to_json(r));
  std::ifstream in(dir / "m.json");
  nlohmann::json j;
  in >> j;
  CHECK(j == metrics_to_json(r));
  CHECK(j.at("vehicles").get<int>() == r.metrics.vehicles);
  CHECK(j.at("total_passing_time").get<double>() == r.metrics.total_passing_time);
  CHECK(j.at("accepted").get<bool>() == r.accepted());
  CHECK(j.at("wait_times").size() == r.vehicles.size());
}

TEST_CASE("occupancy reader rejects bad input") {
  const auto dir = fresh_dir("bad");
  fs::create_directories(dir);
  const GridSpec g;
  std::ofstream(dir / "hdr.csv") << "a,b,c\n";
  CHECK_THROWS_AS(read_occupancy_csv(dir / "hdr.csv", g), IoError);
  std::ofstream(dir / "row.csv") << "owner,j_x,j_y,j_t\n1,2;3,4\n";
  CHECK_THROWS_AS(read_occupancy_csv(dir / "row.csv", g), IoError);
  CHECK_THROWS_AS(read_occupancy_csv(dir / "missing.csv", g), IoError);
}

TEST_CASE("refine export and acceptance report") {
  const auto s = load_scenario(std::string(BILEVEL_SOURCE_DIR) + "/scenarios/refine.json");
  const auto out = run_refine(s);
  const auto dir = fresh_dir("refine");
  const auto files = export_refine(out, dir);
  for (const auto& f : files) CHECK(fs::exists(f));
  CHECK(lines(dir / "iterates.csv") == 1 + static_cast<int>(out.result.log.size()));
  CHECK(lines(dir / "refined_control_points.csv") == 1 + out.result.q.size());

  write_acceptance_report(dir / "acc.json", {{1, "one", true, "x"}, {2, "two", false, "y"}});
  std::ifstream in(dir / "acc.json");
  nlohmann::json j;
  in >> j;
  CHECK(j.at("all_passed") == false);
  CHECK(j.at("criteria").size() == 2);
}
