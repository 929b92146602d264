#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "bilevel/core_model.hpp"

namespace bilevel {

struct ControlInput {
  double accel = 0.0;
  double steer = 0.0;
};

/// Standard deviations of the localisation and actuation noise models.
struct NoiseConfig {
  double sigma_x = 0.05;
  double sigma_y = 0.05;
  double sigma_heading = 0.01;
  double sigma_accel = 0.1;
  double sigma_steer = 0.01;
  std::uint64_t seed = 1;

  void validate() const;
  static NoiseConfig none() { return {0.0, 0.0, 0.0, 0.0, 0.0, 1}; }
};

inline constexpr double kDefaultSimStep = 0.02;

/// One fixed-step RK4 update of the kinematic bicycle model with the input
/// held constant over the step. Speed is clamped to [0, speed_max] afterwards.
VehicleState step(const VehicleState& state, const ControlInput& u, const VehicleSpec& spec,
                  double h);

enum class LimitViolation : unsigned {
  None = 0,
  AccelLow = 1u << 0,
  AccelHigh = 1u << 1,
  SpeedLow = 1u << 2,
  SpeedHigh = 1u << 3,
  Steer = 1u << 4,
};

struct LimitReport {
  unsigned violations = 0;

  bool ok() const { return violations == 0; }
  bool has(LimitViolation v) const { return (violations & static_cast<unsigned>(v)) != 0; }
  std::string describe() const;
};

LimitReport check_limits(const ControlInput& u, const VehicleState& state, const VehicleSpec& spec);

/// Per-vehicle random stream; never shared between vehicles.
class NoiseStream {
 public:
  explicit NoiseStream(std::uint64_t seed, std::uint64_t stream_id = 0);
  double gaussian();

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

VehicleState perturb_pose(const VehicleState& state, const NoiseConfig& noise, NoiseStream& rng);
ControlInput perturb_control(const ControlInput& u, const NoiseConfig& noise, NoiseStream& rng);

}  // namespace bilevel
