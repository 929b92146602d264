#include "bilevel/scenario.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>

namespace bilevel {

using nlohmann::json;

void ManeuverMix::validate() const {
  if (left < 0.0 || straight < 0.0 || right < 0.0)
    throw InvalidArgument("maneuver fractions must be non-negative");
  if (std::abs(left + straight + right - 1.0) > 1e-9)
    throw InvalidArgument("maneuver fractions must sum to 1");
}

Pose2 ObstacleBox::pose_at(double t) const {
  const Eigen::Vector2d p = center + velocity * (t - t_begin);
  return {p.x(), p.y(), heading};
}

void Scenario::validate() const {
  intersection.validate();
  vehicle.validate();
  grid().validate();
  high_level.weights.validate();
  low_level.weights.validate();
  low_level.collision.validate();
  noise.validate();
  if (!(v_ref > 0.0)) throw InvalidArgument("v_ref must be positive");
  if (!(knot_interval > 0.0)) throw InvalidArgument("knot interval must be positive");
  if (!(sim_step > 0.0)) throw InvalidArgument("simulation step must be positive");
  if (flow) {
    flow->mix.validate();
    if (flow->count < 0) throw InvalidArgument("flow count must be non-negative");
    if (flow->count > 0 && !(flow->rate_per_road > 0.0))
      throw InvalidArgument("flow rate must be positive");
  }
  for (const auto& r : requests) {
    if (r.arrival_time < 0.0) throw InvalidArgument("arrival time must be non-negative");
    if (r.road_to != road_target(r.road_from, r.maneuver, intersection))
      throw InvalidArgument("request road_to does not match its maneuver");
  }
}

ReferenceConfig Scenario::reference_config() const {
  ReferenceConfig c;
  c.intersection = intersection;
  c.vehicle = vehicle;
  c.smoothing = smoothing;
  c.v_ref = v_ref;
  c.sample_spacing = sample_spacing;
  return c;
}

std::vector<MotionRequest> generate_flow(const ManeuverMix& mix, int n, double rate_per_road,
                                         std::uint64_t seed, const IntersectionConfig& cfg) {
  mix.validate();
  if (n < 0) throw InvalidArgument("flow size must be non-negative");
  if (!(rate_per_road > 0.0)) throw InvalidArgument("flow rate must be positive");
  std::mt19937_64 rng(seed);
  std::exponential_distribution<double> gap(cfg.road_count * rate_per_road);
  std::uniform_int_distribution<int> road(1, cfg.road_count);
  std::discrete_distribution<int> man({mix.left, mix.straight, mix.right});
  std::vector<MotionRequest> out;
  out.reserve(n);
  double t = 0.0;
  for (int i = 0; i < n; ++i) {
    if (i > 0) t += gap(rng);
    const int r = road(rng);
    const Maneuver m = kAllManeuvers[static_cast<std::size_t>(man(rng))];
    out.push_back(make_request(i + 1, r, m, t, cfg));
  }
  return out;
}

std::vector<MotionRequest> scenario_requests(const Scenario& s) {
  std::vector<MotionRequest> out = s.requests;
  if (s.flow && s.flow->count > 0) {
    int next_id = 1;
    for (const auto& r : out) next_id = std::max(next_id, r.vehicle_id + 1);
    for (auto r : generate_flow(s.flow->mix, s.flow->count, s.flow->rate_per_road, s.seed,
                                s.intersection)) {
      r.vehicle_id += next_id - 1;
      out.push_back(r);
    }
  }
  return out;
}

namespace {

class ObstacleMotion : public MotionSampler {
 public:
  explicit ObstacleMotion(const ObstacleBox& b) : box_(b) {}
  double t_begin() const override { return box_.t_begin; }
  double t_end() const override { return box_.t_end; }
  MotionSample sample(double t) const override {
    MotionSample m;
    const Pose2 p = box_.pose_at(t);
    m.position = {p.x, p.y};
    m.heading = p.heading;
    m.speed = box_.velocity.norm();
    return m;
  }

 private:
  ObstacleBox box_;
};

}  // namespace

OccupancySet obstacle_occupancy(const std::vector<ObstacleBox>& obstacles, const GridSpec& grid,
                                int last_jt) {
  OccupancySet out(grid);
  for (const auto& b : obstacles) {
    if (!(b.length > 0.0 && b.width > 0.0)) throw InvalidArgument("obstacle size must be positive");
    const double t0 = std::max(0.0, b.t_begin);
    const double t1 = std::min(b.t_end, last_jt * grid.dt);
    if (!(t1 > t0)) continue;
    const ObstacleMotion m(b);
    out.merge(sweep_occupancy(m, t0, t1, 0.5 * b.length, 0.5 * b.width, grid,
                              std::max(0.1, b.velocity.norm()), 0));
  }
  return out;
}

// ---------------------------------------------------------------------------
// JSON

namespace {

template <typename T>
void read(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

ObstacleBox obstacle_from_json(const json& j) {
  ObstacleBox b;
  b.center = {j.value("x", 0.0), j.value("y", 0.0)};
  read(j, "length", b.length);
  read(j, "width", b.width);
  read(j, "heading", b.heading);
  b.velocity = {j.value("vx", 0.0), j.value("vy", 0.0)};
  read(j, "t_begin", b.t_begin);
  if (j.contains("t_end") && !j.at("t_end").is_null()) b.t_end = j.at("t_end").get<double>();
  return b;
}

json obstacle_to_json(const ObstacleBox& b) {
  json j{{"x", b.center.x()},   {"y", b.center.y()},   {"length", b.length},
         {"width", b.width},    {"heading", b.heading}, {"vx", b.velocity.x()},
         {"vy", b.velocity.y()}, {"t_begin", b.t_begin}};
  if (std::isfinite(b.t_end)) j["t_end"] = b.t_end;
  return j;
}

VehicleSpec vehicle_from_json(const json& j, VehicleSpec v) {
  read(j, "length", v.length);
  read(j, "width", v.width);
  read(j, "wheelbase", v.wheelbase);
  read(j, "accel_min", v.accel_min);
  read(j, "accel_max", v.accel_max);
  read(j, "speed_max", v.speed_max);
  read(j, "steer_max", v.steer_max);
  read(j, "redundancy_long", v.redundancy_long);
  read(j, "redundancy_lat", v.redundancy_lat);
  return v;
}

json vehicle_to_json(const VehicleSpec& v) {
  return {{"length", v.length},       {"width", v.width},
          {"wheelbase", v.wheelbase}, {"accel_min", v.accel_min},
          {"accel_max", v.accel_max}, {"speed_max", v.speed_max},
          {"steer_max", v.steer_max}, {"redundancy_long", v.redundancy_long},
          {"redundancy_lat", v.redundancy_lat}};
}

GridSpec grid_from_json(const json& j) {
  GridSpec g;
  read(j, "dx", g.dx);
  read(j, "dy", g.dy);
  read(j, "dt", g.dt);
  read(j, "origin_x", g.origin_x);
  read(j, "origin_y", g.origin_y);
  read(j, "nx", g.nx);
  read(j, "ny", g.ny);
  g.validate();
  return g;
}

json grid_to_json(const GridSpec& g) {
  return {{"dx", g.dx},           {"dy", g.dy}, {"dt", g.dt}, {"origin_x", g.origin_x},
          {"origin_y", g.origin_y}, {"nx", g.nx}, {"ny", g.ny}};
}

ManeuverMix mix_from_json(const json& j) {
  if (j.is_string()) {
    const auto name = j.get<std::string>();
    if (name == "flow1") return ManeuverMix::flow1();
    if (name == "flow2") return ManeuverMix::flow2();
    throw InvalidArgument("unknown flow mix '" + name + "'");
  }
  ManeuverMix m{j.value("left", 0.0), j.value("straight", 0.0), j.value("right", 0.0)};
  m.validate();
  return m;
}

}  // namespace

Scenario scenario_from_json(const json& j) {
  Scenario s;
  read(j, "name", s.name);
  read(j, "seed", s.seed);
  if (j.contains("intersection")) {
    const auto& i = j.at("intersection");
    read(i, "road_count", s.intersection.road_count);
    read(i, "lane_width", s.intersection.lane_width);
    read(i, "buffer_length", s.intersection.buffer_length);
    s.intersection.adjust_length = s.intersection.buffer_length;
    read(i, "adjust_length", s.intersection.adjust_length);
    if (i.contains("routing"))
      for (const auto& row : i.at("routing"))
        s.intersection.routing.push_back({row.at(0).get<int>(), row.at(1).get<int>(),
                                          row.at(2).get<int>()});
  }
  if (j.contains("grid")) {
    const auto& g = j.at("grid");
    read(g, "dx", s.dx);
    read(g, "dy", s.dy);
    read(g, "dt", s.dt);
  }
  if (j.contains("vehicle")) s.vehicle = vehicle_from_json(j.at("vehicle"), s.vehicle);
  if (j.contains("reference")) {
    const auto& r = j.at("reference");
    read(r, "v_ref", s.v_ref);
    read(r, "deviation_bound", s.smoothing.bound);
    if (r.contains("weights")) s.smoothing.weights = r.at("weights").get<std::array<double, 3>>();
    read(r, "piece_length", s.smoothing.piece_length);
    read(r, "pin_end_tangents", s.smoothing.pin_end_tangents);
    read(r, "sample_spacing", s.sample_spacing);
  }
  if (j.contains("high_level")) {
    const auto& h = j.at("high_level");
    read(h, "w_d", s.high_level.weights.w_d);
    read(h, "w_w", s.high_level.weights.w_w);
    read(h, "w_sta", s.high_level.weights.w_sta);
    read(h, "arrival_rate", s.high_level.arrival_rate);
    read(h, "tunnel_margin", s.high_level.tunnel_margin);
    read(h, "threads", s.high_level.threads);
  }
  if (j.contains("low_level")) {
    const auto& l = j.at("low_level");
    read(l, "w_acc", s.low_level.weights.w_acc);
    read(l, "w_jerk", s.low_level.weights.w_jerk);
    read(l, "w_c", s.low_level.weights.w_c);
    read(l, "d_r", s.low_level.collision.d_r);
    read(l, "d_f", s.low_level.collision.d_f);
    s.low_level.collision.s_f = s.low_level.collision.d_r;
    read(l, "knot_interval", s.knot_interval);
    read(l, "max_iterations", s.low_level.max_iterations);
    read(l, "gradient_tolerance", s.low_level.gradient_tolerance);
    read(l, "memory", s.low_level.memory);
    read(l, "max_reweights", s.low_level.max_reweights);
    read(l, "lateral_accel_max", s.low_level.lateral_accel_max);
  }
  if (j.contains("noise")) {
    const auto& n = j.at("noise");
    read(n, "sigma_x", s.noise.sigma_x);
    read(n, "sigma_y", s.noise.sigma_y);
    read(n, "sigma_heading", s.noise.sigma_heading);
    read(n, "sigma_accel", s.noise.sigma_accel);
    read(n, "sigma_steer", s.noise.sigma_steer);
  }
  s.noise.seed = s.seed;
  if (j.contains("simulation")) read(j.at("simulation"), "step", s.sim_step);
  if (j.contains("arrivals"))
    for (const auto& a : j.at("arrivals"))
      s.requests.push_back(make_request(a.at("id").get<int>(), a.at("road").get<int>(),
                                        maneuver_from_string(a.at("maneuver").get<std::string>()),
                                        a.at("time").get<double>(), s.intersection));
  if (j.contains("flow")) {
    const auto& f = j.at("flow");
    FlowSpec fs;
    if (f.contains("mix")) fs.mix = mix_from_json(f.at("mix"));
    read(f, "count", fs.count);
    read(f, "rate_per_road", fs.rate_per_road);
    s.flow = fs;
  }
  if (j.contains("obstacles"))
    for (const auto& o : j.at("obstacles")) s.obstacles.push_back(obstacle_from_json(o));
  if (j.contains("refine")) {
    const auto& r = j.at("refine");
    RefineCase rc;
    rc.start = {r.value("x", 0.0), r.value("y", 0.0)};
    read(r, "heading", rc.heading);
    read(r, "speed", rc.speed);
    read(r, "duration", rc.duration);
    read(r, "knot_interval", rc.knot_interval);
    read(r, "tunnel_half_width", rc.tunnel_half_width);
    if (r.contains("grid")) rc.grid = grid_from_json(r.at("grid"));
    rc.vehicle = r.contains("vehicle") ? vehicle_from_json(r.at("vehicle"), s.vehicle) : s.vehicle;
    if (r.contains("obstacles"))
      for (const auto& o : r.at("obstacles")) rc.obstacles.push_back(obstacle_from_json(o));
    s.refine = rc;
  }
  s.low_level.vehicle = s.vehicle;
  s.validate();
  return s;
}

json scenario_to_json(const Scenario& s) {
  json j;
  j["name"] = s.name;
  j["seed"] = s.seed;
  j["intersection"] = {{"road_count", s.intersection.road_count},
                       {"lane_width", s.intersection.lane_width},
                       {"buffer_length", s.intersection.buffer_length},
                       {"adjust_length", s.intersection.adjust_length}};
  if (!s.intersection.routing.empty()) j["intersection"]["routing"] = s.intersection.routing;
  j["grid"] = {{"dx", s.dx}, {"dy", s.dy}, {"dt", s.dt}};
  j["vehicle"] = vehicle_to_json(s.vehicle);
  j["reference"] = {{"v_ref", s.v_ref},
                    {"deviation_bound", s.smoothing.bound},
                    {"weights", s.smoothing.weights},
                    {"piece_length", s.smoothing.piece_length},
                    {"pin_end_tangents", s.smoothing.pin_end_tangents},
                    {"sample_spacing", s.sample_spacing}};
  j["high_level"] = {{"w_d", s.high_level.weights.w_d},
                     {"w_w", s.high_level.weights.w_w},
                     {"w_sta", s.high_level.weights.w_sta},
                     {"arrival_rate", s.high_level.arrival_rate},
                     {"tunnel_margin", s.high_level.tunnel_margin},
                     {"threads", s.high_level.threads}};
  j["low_level"] = {{"w_acc", s.low_level.weights.w_acc},
                    {"w_jerk", s.low_level.weights.w_jerk},
                    {"w_c", s.low_level.weights.w_c},
                    {"d_r", s.low_level.collision.d_r},
                    {"d_f", s.low_level.collision.d_f},
                    {"knot_interval", s.knot_interval},
                    {"max_iterations", s.low_level.max_iterations},
                    {"gradient_tolerance", s.low_level.gradient_tolerance},
                    {"memory", s.low_level.memory},
                    {"max_reweights", s.low_level.max_reweights},
                    {"lateral_accel_max", s.low_level.lateral_accel_max}};
  j["noise"] = {{"sigma_x", s.noise.sigma_x},
                {"sigma_y", s.noise.sigma_y},
                {"sigma_heading", s.noise.sigma_heading},
                {"sigma_accel", s.noise.sigma_accel},
                {"sigma_steer", s.noise.sigma_steer}};
  j["simulation"] = {{"step", s.sim_step}};
  j["arrivals"] = json::array();
  for (const auto& r : s.requests)
    j["arrivals"].push_back({{"id", r.vehicle_id},
                             {"road", r.road_from},
                             {"maneuver", std::string(to_string(r.maneuver))},
                             {"time", r.arrival_time}});
  if (s.flow)
    j["flow"] = {{"mix",
                  {{"left", s.flow->mix.left},
                   {"straight", s.flow->mix.straight},
                   {"right", s.flow->mix.right}}},
                 {"count", s.flow->count},
                 {"rate_per_road", s.flow->rate_per_road}};
  j["obstacles"] = json::array();
  for (const auto& o : s.obstacles) j["obstacles"].push_back(obstacle_to_json(o));
  if (s.refine) {
    const auto& r = *s.refine;
    json rj{{"x", r.start.x()},
            {"y", r.start.y()},
            {"heading", r.heading},
            {"speed", r.speed},
            {"duration", r.duration},
            {"knot_interval", r.knot_interval},
            {"tunnel_half_width", r.tunnel_half_width},
            {"grid", grid_to_json(r.grid)},
            {"vehicle", vehicle_to_json(r.vehicle)},
            {"obstacles", json::array()}};
    for (const auto& o : r.obstacles) rj["obstacles"].push_back(obstacle_to_json(o));
    j["refine"] = rj;
  }
  return j;
}

Scenario load_scenario(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open scenario file " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw InvalidArgument("malformed scenario " + path + ": " + e.what());
  }
  return scenario_from_json(j);
}

}  // namespace bilevel
