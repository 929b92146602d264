#include "bilevel/kinematics.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>

namespace bilevel {

namespace {

struct Deriv {
  double x, y, heading, speed;
};

Deriv rates(const VehicleState& s, const ControlInput& u, double wheelbase) {
  return {s.speed * std::cos(s.heading), s.speed * std::sin(s.heading),
          s.speed * std::tan(u.steer) / wheelbase, u.accel};
}

VehicleState advance(const VehicleState& s, const Deriv& d, double h) {
  return {s.x + h * d.x, s.y + h * d.y, s.heading + h * d.heading, s.speed + h * d.speed};
}

}  // namespace

void NoiseConfig::validate() const {
  if (sigma_x < 0.0 || sigma_y < 0.0 || sigma_heading < 0.0 || sigma_accel < 0.0 ||
      sigma_steer < 0.0)
    throw InvalidArgument("noise standard deviations must be non-negative");
}

VehicleState step(const VehicleState& state, const ControlInput& u, const VehicleSpec& spec,
                  double h) {
  if (!(h > 0.0)) throw InvalidArgument("integration step must be positive");
  const double lw = spec.wheelbase;
  const Deriv k1 = rates(state, u, lw);
  const Deriv k2 = rates(advance(state, k1, 0.5 * h), u, lw);
  const Deriv k3 = rates(advance(state, k2, 0.5 * h), u, lw);
  const Deriv k4 = rates(advance(state, k3, h), u, lw);
  VehicleState next{
      state.x + h / 6.0 * (k1.x + 2.0 * k2.x + 2.0 * k3.x + k4.x),
      state.y + h / 6.0 * (k1.y + 2.0 * k2.y + 2.0 * k3.y + k4.y),
      state.heading + h / 6.0 * (k1.heading + 2.0 * k2.heading + 2.0 * k3.heading + k4.heading),
      state.speed + h / 6.0 * (k1.speed + 2.0 * k2.speed + 2.0 * k3.speed + k4.speed),
  };
  if (next.speed < 0.0 || next.speed > spec.speed_max) {
    const double clamped = std::clamp(next.speed, 0.0, spec.speed_max);
    if (std::abs(clamped - next.speed) > 1e-9)
      spdlog::debug("speed {:.4f} clamped to {:.4f}", next.speed, clamped);
    next.speed = clamped;
  }
  return next;
}

std::string LimitReport::describe() const {
  if (ok()) return "ok";
  std::string out;
  auto add = [&](LimitViolation v, const char* text) {
    if (!has(v)) return;
    if (!out.empty()) out += ", ";
    out += text;
  };
  add(LimitViolation::AccelLow, "acceleration below a_min");
  add(LimitViolation::AccelHigh, "acceleration above a_max");
  add(LimitViolation::SpeedLow, "negative speed");
  add(LimitViolation::SpeedHigh, "speed above v_max");
  add(LimitViolation::Steer, "steering beyond delta_max");
  return out;
}

LimitReport check_limits(const ControlInput& u, const VehicleState& state,
                         const VehicleSpec& spec) {
  LimitReport r;
  auto flag = [&](LimitViolation v) { r.violations |= static_cast<unsigned>(v); };
  if (u.accel < spec.accel_min) flag(LimitViolation::AccelLow);
  if (u.accel > spec.accel_max) flag(LimitViolation::AccelHigh);
  if (state.speed < 0.0) flag(LimitViolation::SpeedLow);
  if (state.speed > spec.speed_max) flag(LimitViolation::SpeedHigh);
  if (std::abs(u.steer) > spec.steer_max) flag(LimitViolation::Steer);
  return r;
}

NoiseStream::NoiseStream(std::uint64_t seed, std::uint64_t stream_id) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream_id),
                    static_cast<std::uint32_t>(stream_id >> 32), 0x6a09e667u};
  engine_.seed(seq);
}

double NoiseStream::gaussian() { return normal_(engine_); }

VehicleState perturb_pose(const VehicleState& state, const NoiseConfig& noise, NoiseStream& rng) {
  VehicleState m = state;
  m.x += noise.sigma_x * rng.gaussian();
  m.y += noise.sigma_y * rng.gaussian();
  m.heading += noise.sigma_heading * rng.gaussian();
  return m;
}

ControlInput perturb_control(const ControlInput& u, const NoiseConfig& noise, NoiseStream& rng) {
  return {u.accel + noise.sigma_accel * rng.gaussian(), u.steer + noise.sigma_steer * rng.gaussian()};
}

}  // namespace bilevel
