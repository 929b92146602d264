#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <filesystem>

#include "bilevel/export.hpp"
#include "bilevel/simulation.hpp"

namespace py = pybind11;
using namespace bilevel;

namespace {

py::object to_python(const nlohmann::json& j) {
  return py::module_::import("json").attr("loads")(j.dump());
}

nlohmann::json from_python(const py::object& o) {
  return nlohmann::json::parse(py::module_::import("json").attr("dumps")(o).cast<std::string>());
}

py::array_t<double> points_array(const std::vector<Eigen::Vector2d>& pts) {
  py::array_t<double> a({static_cast<py::ssize_t>(pts.size()), py::ssize_t{2}});
  auto m = a.mutable_unchecked<2>();
  for (std::size_t i = 0; i < pts.size(); ++i) {
    m(i, 0) = pts[i].x();
    m(i, 1) = pts[i].y();
  }
  return a;
}

py::dict experiment_dict(const ExperimentResult& r) {
  py::dict out;
  out["metrics"] = to_python(metrics_to_json(r));
  py::list schedule;
  for (std::size_t i = 0; i < r.schedule.allocations.size(); ++i) {
    const auto& a = r.schedule.allocations[i];
    py::dict row;
    row["vehicle_id"] = a.vehicle_id;
    row["road_from"] = a.road_from;
    row["road_to"] = a.road_to;
    row["maneuver"] = std::string(to_string(a.maneuver));
    row["arrival"] = a.arrival;
    row["t_e"] = a.t_e;
    row["start_time"] = a.start_time;
    row["exit_time"] = a.exit_time;
    row["max_jt"] = a.occupancy.max_jt();
    row["cells"] = a.occupancy.size();
    row["score"] = a.terms.score;
    if (i < r.vehicles.size()) {
      row["refined"] = r.vehicles[i].refined;
      row["incident"] = r.vehicles[i].incident;
    }
    schedule.append(row);
  }
  out["schedule"] = schedule;
  out["accepted"] = r.accepted();
  return out;
}

RunOptions options(const std::string& strategy, int threads, bool simulate) {
  RunOptions o;
  o.strategy = strategy_from_string(strategy);
  o.threads = threads;
  o.simulate = simulate;
  return o;
}

}  // namespace

PYBIND11_MODULE(_bilevel, m) {
  m.doc() = "Bindings for the bilevel intersection planner";

  py::register_exception<InvalidArgument>(m, "InvalidArgument", PyExc_ValueError);

  py::class_<Scenario>(m, "Scenario")
      .def(py::init<>())
      .def_static("load", &load_scenario, py::arg("path"))
      .def_static("from_dict", [](const py::object& o) { return scenario_from_json(from_python(o)); })
      .def("to_dict", [](const Scenario& s) { return to_python(scenario_to_json(s)); })
      .def_readwrite("name", &Scenario::name)
      .def_readwrite("seed", &Scenario::seed)
      .def_property_readonly("vehicle_count",
                             [](const Scenario& s) { return scenario_requests(s).size(); })
      .def("__repr__", [](const Scenario& s) {
        return "<Scenario '" + s.name + "' seed=" + std::to_string(s.seed) + ">";
      });

  m.def(
      "plan",
      [](const Scenario& s, const std::string& strategy, int threads) {
        py::gil_scoped_release release;
        auto r = run_experiment(s, options(strategy, threads, false));
        py::gil_scoped_acquire acquire;
        return experiment_dict(r);
      },
      py::arg("scenario"), py::arg("strategy") = "proposed", py::arg("threads") = 1,
      "High-Level schedule only.");

  m.def(
      "simulate",
      [](const Scenario& s, const std::string& strategy, int threads) {
        py::gil_scoped_release release;
        auto r = run_experiment(s, options(strategy, threads, true));
        py::gil_scoped_acquire acquire;
        return experiment_dict(r);
      },
      py::arg("scenario"), py::arg("strategy") = "proposed", py::arg("threads") = 1,
      "Schedule, refinement and closed-loop simulation.");

  m.def(
      "compare",
      [](const Scenario& s, int threads) {
        Comparison c;
        {
          py::gil_scoped_release release;
          c = compare(s, build_library(s), threads, false);
        }
        py::dict out;
        out["proposed"] = experiment_dict(c.proposed);
        out["cs"] = experiment_dict(c.cs);
        out["improvement"] = c.improvement;
        return out;
      },
      py::arg("scenario"), py::arg("threads") = 1);

  m.def(
      "refine",
      [](const Scenario& s) {
        RefineOutcome r;
        {
          py::gil_scoped_release release;
          r = run_refine(s);
        }
        py::dict out;
        out["initial"] = points_array(r.initial.points);
        out["refined"] = points_array(r.result.q.points);
        out["knot_interval"] = r.result.q.dt;
        out["collision_free"] = r.result.collision_free;
        out["inside_tunnel"] = r.result.inside_tunnel;
        out["kinematics_ok"] = r.result.kinematics_ok;
        out["attempts"] = r.result.attempts;
        out["compute_ms"] = r.result.compute_ms;
        out["message"] = r.result.message;
        py::list log;
        for (const auto& it : r.result.log)
          log.append(py::make_tuple(it.attempt, it.iteration, it.smoothness, it.collision, it.total));
        out["log"] = log;
        return out;
      },
      py::arg("scenario"), "Low-Level refinement of the scenario's refine case.");

  m.def(
      "export_experiment",
      [](const Scenario& s, const std::string& dir, const std::string& strategy, bool sim) {
        const auto r = run_experiment(s, options(strategy, 1, sim));
        std::vector<std::string> files;
        for (const auto& p : export_experiment(r, dir)) files.push_back(p.string());
        return files;
      },
      py::arg("scenario"), py::arg("out"), py::arg("strategy") = "proposed",
      py::arg("simulate") = true);

  m.def(
      "generate_flow",
      [](const std::string& mix, int n, double rate, std::uint64_t seed) {
        const ManeuverMix mm = mix == "flow1"   ? ManeuverMix::flow1()
                               : mix == "flow2" ? ManeuverMix::flow2()
                                                : throw InvalidArgument("mix must be flow1 or flow2");
        py::list out;
        for (const auto& r : generate_flow(mm, n, rate, seed, IntersectionConfig{})) {
          py::dict d;
          d["id"] = r.vehicle_id;
          d["road"] = r.road_from;
          d["road_to"] = r.road_to;
          d["maneuver"] = std::string(to_string(r.maneuver));
          d["time"] = r.arrival_time;
          out.append(d);
        }
        return out;
      },
      py::arg("mix"), py::arg("n"), py::arg("rate_per_road") = 0.2, py::arg("seed") = 1);

  m.def(
      "reference_trajectory",
      [](int road, const std::string& maneuver, double v_ref, double step) {
        ReferenceConfig cfg;
        cfg.v_ref = v_ref;
        const ReferenceLibrary lib(cfg);
        const auto& traj = *lib.plan(road, maneuver_from_string(maneuver)).trajectory;
        std::vector<Eigen::Vector2d> pts;
        std::vector<double> t;
        for (double tt = 0.0; tt < traj.duration(); tt += step) {
          t.push_back(tt);
          pts.push_back(traj.sample(tt).position);
        }
        t.push_back(traj.duration());
        pts.push_back(traj.sample(traj.duration()).position);
        return py::make_tuple(py::array_t<double>(t.size(), t.data()), points_array(pts));
      },
      py::arg("road"), py::arg("maneuver"), py::arg("v_ref") = 8.0, py::arg("step") = 0.05,
      "Sampled (t, xy) of the smoothed conflict-area reference.");

  m.def(
      "collision_penalty",
      [](double d, double d_r, double d_f) {
        return collision_penalty(d, CollisionParams::make(d_r, d_f));
      },
      py::arg("d"), py::arg("d_r") = 0.5, py::arg("d_f") = 2.5);
}
