#pragma once

#include <json.hpp>

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "bilevel/simulation.hpp"

namespace bilevel {

/// Raised when an output file cannot be written or read back.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void write_schedule_csv(const std::filesystem::path& path, const ExperimentResult& r);
void write_trace_csv(const std::filesystem::path& path, const std::vector<TraceSample>& trace);
/// Reference through the conflict area sampled every `step` seconds: t, s, x, y, heading, speed.
void write_reference_csv(const std::filesystem::path& path, const Trajectory& traj, double step = 0.02);
/// Spline sampled every `step` seconds: t, x, y, heading, speed, curvature.
void write_spline_csv(const std::filesystem::path& path, const ControlPointSequence& q,
                      double step = 0.02);
void write_control_points_csv(const std::filesystem::path& path, const ControlPointSequence& q);
void write_iterate_log_csv(const std::filesystem::path& path, const std::vector<IterateRecord>& log);

/// One row per block: owner, j_x, j_y, j_t.
void write_occupancy_csv(const std::filesystem::path& path, const std::vector<OccupancySet>& sets);
std::map<int, OccupancySet> read_occupancy_csv(const std::filesystem::path& path,
                                               const GridSpec& grid);

nlohmann::json metrics_to_json(const ExperimentResult& r);
void write_json(const std::filesystem::path& path, const nlohmann::json& j);

/// schedule.csv, occupancy.csv, metrics.json and per-vehicle traces.
/// Returns the written paths.
std::vector<std::filesystem::path> export_experiment(const ExperimentResult& r,
                                                     const std::filesystem::path& dir);
std::vector<std::filesystem::path> export_refine(const RefineOutcome& r,
                                                 const std::filesystem::path& dir);

struct CriterionResult {
  int id = 0;
  std::string name;
  bool passed = false;
  std::string measured;
};

void write_acceptance_report(const std::filesystem::path& path,
                             const std::vector<CriterionResult>& results);

}  // namespace bilevel
