#include <CLI11.hpp>
#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <numeric>

#include "bilevel/export.hpp"
#include "bilevel/simulation.hpp"

namespace fs = std::filesystem;
using namespace bilevel;

namespace {

struct Common {
  std::string scenario;
  std::string strategy = "proposed";
  std::optional<std::uint64_t> seed;
  std::string out;
  int threads = 1;
};

Scenario load(const Common& c) {
  Scenario s = load_scenario(c.scenario);
  if (c.seed) {
    s.seed = *c.seed;
    s.noise.seed = *c.seed;
  }
  return s;
}

void add_common(CLI::App* app, Common& c, bool with_strategy) {
  app->add_option("--scenario", c.scenario, "Scenario JSON file")->required()->check(CLI::ExistingFile);
  if (with_strategy)
    app->add_option("--strategy", c.strategy, "proposed or cs")
        ->check(CLI::IsMember({"proposed", "cs"}));
  app->add_option("--seed", c.seed, "Override the scenario seed");
  app->add_option("--out", c.out, "Output directory");
  app->add_option("--threads", c.threads, "Planner worker threads")->check(CLI::PositiveNumber);
}

void print_summary(const ExperimentResult& r) {
  const Metrics& m = r.metrics;
  fmt::print("strategy {}: {}/{} scheduled, total passing time {:.3f} s, makespan {:.3f} s\n",
             to_string(r.strategy), m.scheduled, m.vehicles, m.total_passing_time, m.makespan);
  fmt::print("  wait mean {:.3f} s max {:.3f} s, head wait max {:.3f} s\n", m.mean_wait, m.max_wait,
             m.max_head_wait);
  fmt::print("  high-level {:.2f} ms total, {:.2f} ms worst round\n", m.hl_total_ms,
             m.hl_max_round_ms);
  if (!m.ll_ms.empty())
    fmt::print("  low-level {} runs, {:.2f} ms total\n", m.ll_ms.size(),
               std::accumulate(m.ll_ms.begin(), m.ll_ms.end(), 0.0));
  fmt::print("  collisions {} (planned {}, executed {}, obstacle {}), incidents {}\n",
             m.collisions(), m.planned_overlaps, m.vehicle_collisions, m.obstacle_collisions,
             m.incidents);
}

void maybe_export(const ExperimentResult& r, const std::string& out) {
  if (out.empty()) return;
  const auto files = export_experiment(r, out);
  fmt::print("  wrote {} files under {}\n", files.size(), out);
}

int cmd_run(const Common& c, bool simulate) {
  const Scenario s = load(c);
  RunOptions o;
  o.strategy = strategy_from_string(c.strategy);
  o.threads = c.threads;
  o.simulate = simulate;
  const auto r = run_experiment(s, o);
  print_summary(r);
  maybe_export(r, c.out);
  return r.accepted() ? 0 : 1;
}

int cmd_refine(const Common& c) {
  const Scenario s = load(c);
  const auto r = run_refine(s);
  fmt::print("refine: {} control points at {:.3f} s, {} attempts, {} iterations, {:.2f} ms: {}\n",
             r.result.q.size(), r.result.q.dt, r.result.attempts, r.result.log.size(),
             r.result.compute_ms, r.result.message);
  if (!c.out.empty()) {
    const auto files = export_refine(r, c.out);
    fmt::print("  wrote {} files under {}\n", files.size(), c.out);
  }
  return r.result.ok() ? 0 : 1;
}

int cmd_compare(const Common& c, bool simulate) {
  const Scenario s = load(c);
  const auto cmp = compare(s, build_library(s), c.threads, simulate);
  print_summary(cmp.proposed);
  print_summary(cmp.cs);
  fmt::print("improvement over cs: {:.2f}%\n", 100.0 * cmp.improvement);
  if (!c.out.empty()) {
    maybe_export(cmp.proposed, (fs::path(c.out) / "proposed").string());
    maybe_export(cmp.cs, (fs::path(c.out) / "cs").string());
  }
  const bool dominates =
      cmp.proposed.metrics.total_passing_time <= cmp.cs.metrics.total_passing_time + 1e-9;
  return cmp.proposed.accepted() && cmp.cs.accepted() && dominates ? 0 : 1;
}

int cmd_bench(const Common& c, const std::vector<int>& counts, int reps) {
  Scenario s = load(c);
  const auto lib = build_library(s);
  nlohmann::json rows = nlohmann::json::array();
  bool ok = true;
  for (int n : counts)
    for (const auto& [name, mix] : {std::pair{"flow1", ManeuverMix::flow1()},
                                    std::pair{"flow2", ManeuverMix::flow2()}}) {
      double worst_round = 0.0, worst_total = 0.0, sum_round = 0.0;
      int rounds = 0;
      for (int k = 0; k < reps; ++k) {
        Scenario run = s;
        run.requests.clear();
        run.obstacles.clear();
        run.seed = s.seed + static_cast<std::uint64_t>(k);
        run.flow = FlowSpec{mix, n, run.flow ? run.flow->rate_per_road : 0.2};
        RunOptions o;
        o.strategy = strategy_from_string(c.strategy);
        o.threads = c.threads;
        o.simulate = false;
        const auto r = run_experiment(run, lib, o);
        ok = ok && r.accepted();
        worst_total = std::max(worst_total, r.metrics.hl_total_ms);
        worst_round = std::max(worst_round, r.metrics.hl_max_round_ms);
        for (double ms : r.metrics.round_ms) sum_round += ms;
        rounds += static_cast<int>(r.metrics.round_ms.size());
      }
      const double mean_round = rounds ? sum_round / rounds : 0.0;
      fmt::print("{:>3} vehicles {}: round mean {:.2f} ms, worst {:.2f} ms; schedule worst {:.2f} ms\n",
                 n, name, mean_round, worst_round, worst_total);
      rows.push_back({{"vehicles", n},
                      {"flow", name},
                      {"reps", reps},
                      {"round_mean_ms", mean_round},
                      {"round_max_ms", worst_round},
                      {"schedule_max_ms", worst_total}});
    }
  nlohmann::json report{{"high_level", rows}};
  if (s.refine) {
    const auto r = run_refine(s);
    fmt::print("low-level: {} control points, {:.2f} ms, {}\n", r.result.q.size(),
               r.result.compute_ms, r.result.message);
    report["low_level"] = {{"control_points", r.result.q.size()},
                           {"compute_ms", r.result.compute_ms},
                           {"ok", r.result.ok()}};
  }
  if (!c.out.empty()) write_json(fs::path(c.out) / "bench.json", report);
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bi-level intersection scheduling and trajectory refinement"};
  app.require_subcommand(1);
  bool verbose = false;
  app.add_flag("-v,--verbose", verbose, "Debug logging");

  Common plan_c, refine_c, sim_c, bench_c, cmp_c;
  auto* plan = app.add_subcommand("plan", "High-Level schedule only");
  add_common(plan, plan_c, true);
  auto* refine = app.add_subcommand("refine", "Low-Level refinement of the scenario's refine case");
  add_common(refine, refine_c, false);
  auto* sim = app.add_subcommand("simulate", "Closed-loop simulation");
  add_common(sim, sim_c, true);
  auto* bench = app.add_subcommand("bench", "Planner timing sweep over generated flows");
  add_common(bench, bench_c, true);
  std::vector<int> counts{10, 20, 30, 40};
  int reps = 3;
  bench->add_option("--counts", counts, "Vehicle counts")->delimiter(',');
  bench->add_option("--reps", reps, "Runs per count and flow")->check(CLI::PositiveNumber);
  auto* cmp = app.add_subcommand("compare", "Proposed vs whole-area exclusion baseline");
  add_common(cmp, cmp_c, false);
  bool cmp_sim = false;
  cmp->add_flag("--simulate", cmp_sim, "Also run the closed loop");

  CLI11_PARSE(app, argc, argv);
  spdlog::set_level(verbose ? spdlog::level::debug : spdlog::level::warn);

  try {
    if (*plan) return cmd_run(plan_c, false);
    if (*refine) return cmd_refine(refine_c);
    if (*sim) return cmd_run(sim_c, true);
    if (*bench) return cmd_bench(bench_c, counts, reps);
    if (*cmp) return cmd_compare(cmp_c, cmp_sim);
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return 2;
  }
  return 0;
}
