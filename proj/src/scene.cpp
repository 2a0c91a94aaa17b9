#include "rg/scene.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace rg::scene {

using geom::Point2;
using nlohmann::json;

std::string kind_name(SceneKind kind) {
  switch (kind) {
    case SceneKind::StraightRoad: return "straight_road";
    case SceneKind::Intersection: return "intersection";
    case SceneKind::Roundabout: return "roundabout";
  }
  return "unknown";
}

SceneKind kind_from_name(const std::string& name) {
  if (name == "straight_road") return SceneKind::StraightRoad;
  if (name == "intersection") return SceneKind::Intersection;
  if (name == "roundabout") return SceneKind::Roundabout;
  throw std::invalid_argument("unknown scene kind: " + name);
}

std::string case_name(Case c) {
  switch (c) {
    case Case::I: return "I";
    case Case::II: return "II";
    case Case::III: return "III";
  }
  return "?";
}

Case case_from_name(const std::string& name) {
  if (name == "I") return Case::I;
  if (name == "II") return Case::II;
  if (name == "III") return Case::III;
  throw std::invalid_argument("unknown case: " + name);
}

double Scene::drivable_fraction() const {
  std::size_t n = 0;
  for (auto v : drivable) n += (v != 0);
  return static_cast<double>(n) / drivable.size();
}

namespace {

bool cell_drivable(SceneKind kind, const SceneParams& p, Point2 c) {
  switch (kind) {
    case SceneKind::StraightRoad:
      return std::abs(c.y - p.band_center) <= p.band_half_width;
    case SceneKind::Intersection:
      return std::abs(c.y) <= p.band_half_width || std::abs(c.x) <= p.band_half_width;
    case SceneKind::Roundabout: {
      double rho = geom::norm(c);
      if (rho >= p.ring_inner && rho <= p.ring_outer) return true;
      // Axis-aligned entry arms, outward from the ring. Order: E, S, W, N.
      struct Arm { double ax, ay; };
      static constexpr Arm arms[4] = {{1, 0}, {0, 1}, {-1, 0}, {0, -1}};
      for (int i = 0; i < std::min(p.entry_arms, 4); ++i) {
        double along = c.x * arms[i].ax + c.y * arms[i].ay;
        double across = std::abs(c.x * arms[i].ay - c.y * arms[i].ax);
        if (along >= p.ring_inner && across <= p.arm_half_width) return true;
      }
      return false;
    }
  }
  return false;
}

}  // namespace

Scene make_scene(SceneKind kind, int width_px, int height_px, const SceneParams& params) {
  if (width_px < 32 || height_px < 32)
    throw std::invalid_argument("make_scene: grid must be at least 32x32");
  if (params.band_half_width <= 0.0 || params.ring_outer <= 0.0 || params.arm_half_width <= 0.0)
    throw std::invalid_argument("make_scene: widths and radii must be positive");

  Scene scene;
  scene.id = kind_name(kind);
  scene.kind = kind;
  scene.width_px = width_px;
  scene.height_px = height_px;
  scene.frame = geom::Frame{width_px, height_px};
  scene.params = params;
  scene.drivable.assign(static_cast<size_t>(width_px) * height_px, 0);

  std::size_t count = 0;
  for (int r = 0; r < height_px; ++r) {
    for (int c = 0; c < width_px; ++c) {
      if (cell_drivable(kind, params, scene.frame.cell_center(r, c))) {
        scene.drivable[r * width_px + c] = 1;
        ++count;
      }
    }
  }
  if (count == 0) throw std::invalid_argument("make_scene: parameters leave no drivable cells");
  return scene;
}

bool is_on_road(const Scene& scene, Point2 p) {
  if (!scene.frame.contains(p)) return false;
  return scene.drivable_at(scene.frame.row_of(p.y), scene.frame.col_of(p.x));
}

bool trajectory_on_road(const Scene& scene, const geom::Trajectory& traj) {
  for (const auto& p : traj.positions)
    if (!is_on_road(scene, p)) return false;
  return true;
}

double point_road_loss(const Scene& scene, Point2 p, double sigma, Point2* grad) {
  if (sigma <= 0.0) throw std::invalid_argument("point_road_loss: sigma must be positive");
  const double inv = 1.0 / (2.0 * sigma * sigma);
  const double inv_sq = 1.0 / (sigma * sigma);
  double sum = 0.0, gx = 0.0, gy = 0.0;
  for (int r = 0; r < scene.height_px; ++r) {
    for (int c = 0; c < scene.width_px; ++c) {
      if (scene.drivable[r * scene.width_px + c]) continue;
      Point2 cell = scene.frame.cell_center(r, c);
      double dx = cell.x - p.x, dy = cell.y - p.y;
      double e = std::exp(-(dx * dx + dy * dy) * inv);
      sum += e;
      if (grad) {
        gx += e * dx * inv_sq;
        gy += e * dy * inv_sq;
      }
    }
  }
  const double scale = 1.0 / (static_cast<double>(scene.width_px) * scene.height_px);
  if (grad) *grad = {gx * scale, gy * scale};
  return sum * scale;
}

double road_loss(const geom::KeyWaypoints& kw, const Scene& scene, double sigma) {
  if (kw.points.empty()) return 0.0;
  double sum = 0.0;
  for (const auto& p : kw.points) sum += point_road_loss(scene, p, sigma);
  return sum / kw.points.size();
}

RoadLossGrad road_loss_with_grad(const geom::KeyWaypoints& kw, const Scene& scene, double sigma) {
  RoadLossGrad out;
  if (kw.points.empty()) return out;
  const double scale = 1.0 / kw.points.size();
  out.d_points.resize(kw.points.size());
  for (size_t i = 0; i < kw.points.size(); ++i) {
    Point2 g;
    out.loss += point_road_loss(scene, kw.points[i], sigma, &g) * scale;
    out.d_points[i] = scale * g;
  }
  return out;
}

double lane_offset(const Scene& scene) { return scene.params.band_half_width * 0.5; }

namespace {

constexpr double kRouteEdge = 0.92;  // straight routes hold position here

double ring_radius(const Scene& s) {
  return 0.5 * (s.params.ring_inner + s.params.ring_outer);
}

// Arm axis unit vectors in arm order E, S, W, N (junction at R * axis).
constexpr int kArmCount = 4;
const Point2 kArmAxis[kArmCount] = {{1, 0}, {0, 1}, {-1, 0}, {0, -1}};

int arm_of(const Scene& s, Point2 p) {
  for (int i = 0; i < std::min(s.params.entry_arms, kArmCount); ++i) {
    double along = dot(p, kArmAxis[i]);
    double across = std::abs(cross(kArmAxis[i], p));
    if (along >= s.params.ring_inner - 1e-9 && across <= 1e-6) return i;
  }
  return -1;
}

std::vector<Point2> straight_route(Point2 start, Point2 dir, double speed, int steps, double dt) {
  std::vector<Point2> out;
  out.reserve(steps + 1);
  for (int i = 0; i <= steps; ++i) {
    double d = speed * dt * i;
    Point2 p = start + d * dir;
    p.x = std::clamp(p.x, -kRouteEdge, kRouteEdge);
    p.y = std::clamp(p.y, -kRouteEdge, kRouteEdge);
    out.push_back(p);
  }
  return out;
}

std::vector<Point2> ring_route(const Scene& s, double theta0, double speed, int steps, double dt) {
  const double radius = ring_radius(s);
  std::vector<Point2> out;
  out.reserve(steps + 1);
  for (int i = 0; i <= steps; ++i) {
    double theta = theta0 + speed * dt * i / radius;  // counterclockwise
    out.push_back({radius * std::cos(theta), radius * std::sin(theta)});
  }
  return out;
}

// Straight along the arm to the ring junction, then counterclockwise.
std::vector<Point2> arm_route(const Scene& s, int arm, double start_along, double speed,
                              int steps, double dt) {
  const double radius = ring_radius(s);
  const Point2 axis = kArmAxis[arm];
  const double junction_theta = std::atan2(axis.y, axis.x);
  std::vector<Point2> out;
  out.reserve(steps + 1);
  for (int i = 0; i <= steps; ++i) {
    double travelled = speed * dt * i;
    double along = start_along - travelled;
    if (along >= radius) {
      out.push_back(along * axis);
    } else {
      double theta = junction_theta + (radius - along) / radius;
      out.push_back({radius * std::cos(theta), radius * std::sin(theta)});
    }
  }
  return out;
}

}  // namespace

std::vector<Point2> route_from(const Scene& scene, Point2 start, double speed, int steps,
                               double dt) {
  if (speed < 0.0) throw std::invalid_argument("route_from: speed must be non-negative");
  switch (scene.kind) {
    case SceneKind::StraightRoad: {
      Point2 dir = start.y >= scene.params.band_center ? Point2{1, 0} : Point2{-1, 0};
      return straight_route(start, dir, speed, steps, dt);
    }
    case SceneKind::Intersection: {
      const double off = lane_offset(scene);
      // Lanes: east y=+off, west y=-off, south x=-off (+y), north x=+off (-y).
      struct Lane { double dist; Point2 dir; };
      Lane lanes[4] = {
          {std::abs(start.y - off), {1, 0}},
          {std::abs(start.y + off), {-1, 0}},
          {std::abs(start.x + off), {0, 1}},
          {std::abs(start.x - off), {0, -1}},
      };
      int best = 0;
      for (int i = 1; i < 4; ++i)
        if (lanes[i].dist < lanes[best].dist) best = i;
      return straight_route(start, lanes[best].dir, speed, steps, dt);
    }
    case SceneKind::Roundabout: {
      int arm = arm_of(scene, start);
      if (arm >= 0 && geom::norm(start) > scene.params.ring_outer)
        return arm_route(scene, arm, dot(start, kArmAxis[arm]), speed, steps, dt);
      return ring_route(scene, std::atan2(start.y, start.x), speed, steps, dt);
    }
  }
  throw std::logic_error("route_from: unhandled scene kind");
}

ScenarioSpec sample_scenario(const Scene& scene, Case c, std::mt19937_64& rng,
                             const ScenarioOptions& opts) {
  std::uniform_real_distribution<double> uspeed(opts.min_speed, opts.max_speed);
  std::uniform_real_distribution<double> ugap(0.18, 0.35);
  std::uniform_real_distribution<double> u01(0.0, 1.0);

  for (int attempt = 0; attempt < 1000; ++attempt) {
    ScenarioSpec spec;
    spec.interaction_case = c;
    spec.kind = scene.kind;
    spec.scene_id = scene.id;
    spec.seed = rng();

    const double speed = uspeed(rng);
    const double gap = ugap(rng);
    const double off = lane_offset(scene);
    const double radius = ring_radius(scene);

    if (c == Case::I || c == Case::II) {
      const double sign = (c == Case::I) ? -1.0 : 1.0;  // V1 behind or ahead
      switch (scene.kind) {
        case SceneKind::StraightRoad:
        case SceneKind::Intersection: {
          bool east = u01(rng) < 0.5;
          double u = -0.45 + 0.35 * u01(rng);
          double yc = scene.kind == SceneKind::StraightRoad ? scene.params.band_center : 0.0;
          if (east) {
            spec.v2_start = {u, yc + off};
            spec.v1_start = {u + sign * gap, yc + off};
          } else {
            spec.v2_start = {-u, yc - off};
            spec.v1_start = {-u - sign * gap, yc - off};
          }
          break;
        }
        case SceneKind::Roundabout: {
          double theta2 = 2.0 * M_PI * u01(rng);
          double theta1 = theta2 + sign * gap / radius;
          spec.v2_start = {radius * std::cos(theta2), radius * std::sin(theta2)};
          spec.v1_start = {radius * std::cos(theta1), radius * std::sin(theta1)};
          break;
        }
      }
    } else {
      switch (scene.kind) {
        case SceneKind::StraightRoad: {
          // Opposite lanes, approaching head-on.
          double u2 = -0.60 + 0.40 * u01(rng);
          double u1 = 0.20 + 0.40 * u01(rng);
          double yc = scene.params.band_center;
          spec.v2_start = {u2, yc + off};
          spec.v1_start = {u1, yc - off};
          break;
        }
        case SceneKind::Intersection: {
          // V2 horizontal, V1 on a crossing vertical lane. Starts are close
          // enough that both polylines reach the junction within an episode.
          bool east = u01(rng) < 0.5;
          bool south = u01(rng) < 0.5;
          double u2 = -0.55 + 0.25 * u01(rng);
          double u1 = -0.55 + 0.25 * u01(rng);
          spec.v2_start = east ? Point2{u2, off} : Point2{-u2, -off};
          spec.v1_start = south ? Point2{-off, u1} : Point2{off, -u1};
          break;
        }
        case SceneKind::Roundabout: {
          // Crossing entries: V2 circulates toward the east junction while
          // V1 enters along the east arm.
          if (scene.params.entry_arms < 1)
            throw std::invalid_argument("sample_scenario: Case III needs entry arms");
          double theta2 = -M_PI * (0.25 + 0.35 * u01(rng));
          double d1 = 0.65 + 0.25 * u01(rng);
          spec.v2_start = {radius * std::cos(theta2), radius * std::sin(theta2)};
          spec.v1_start = {d1, 0.0};
          break;
        }
      }
    }

    auto route = route_from(scene, spec.v2_start, speed, opts.reference_steps, opts.dt);
    spec.v2_reference.positions = std::move(route);
    spec.v2_reference.dt = opts.dt;
    int goal_idx = std::min<int>(opts.goal_horizon, opts.reference_steps);
    spec.v2_goal = spec.v2_reference.positions[goal_idx];

    if (!is_on_road(scene, spec.v1_start)) continue;
    if (!is_on_road(scene, spec.v2_start)) continue;
    if (!trajectory_on_road(scene, spec.v2_reference)) continue;
    return spec;
  }
  throw std::runtime_error("sample_scenario: no valid scenario after 1000 attempts");
}

void save_scene(const Scene& scene, const std::string& pgm_path, const std::string& json_path) {
  {
    std::ofstream out(pgm_path);
    if (!out) throw std::runtime_error("save_scene: cannot write " + pgm_path);
    out << "P2\n" << scene.width_px << " " << scene.height_px << "\n255\n";
    for (int r = 0; r < scene.height_px; ++r) {
      for (int c = 0; c < scene.width_px; ++c) {
        if (c) out << ' ';
        out << (scene.drivable_at(r, c) ? 255 : 0);
      }
      out << '\n';
    }
  }
  json j;
  j["id"] = scene.id;
  j["kind"] = kind_name(scene.kind);
  j["width_px"] = scene.width_px;
  j["height_px"] = scene.height_px;
  j["frame"] = {{"min", {-1.0, -1.0}}, {"max", {1.0, 1.0}}};
  j["params"] = {{"band_center", scene.params.band_center},
                 {"band_half_width", scene.params.band_half_width},
                 {"ring_inner", scene.params.ring_inner},
                 {"ring_outer", scene.params.ring_outer},
                 {"entry_arms", scene.params.entry_arms},
                 {"arm_half_width", scene.params.arm_half_width}};
  std::ofstream out(json_path);
  if (!out) throw std::runtime_error("save_scene: cannot write " + json_path);
  out << j.dump(2) << '\n';
}

Scene load_scene(const std::string& pgm_path, const std::string& json_path) {
  std::ifstream jin(json_path);
  if (!jin) throw std::runtime_error("load_scene: cannot read " + json_path);
  json j = json::parse(jin);

  Scene scene;
  scene.id = j.at("id").get<std::string>();
  scene.kind = kind_from_name(j.at("kind").get<std::string>());
  scene.width_px = j.at("width_px").get<int>();
  scene.height_px = j.at("height_px").get<int>();
  scene.frame = geom::Frame{scene.width_px, scene.height_px};
  const auto& p = j.at("params");
  scene.params.band_center = p.at("band_center").get<double>();
  scene.params.band_half_width = p.at("band_half_width").get<double>();
  scene.params.ring_inner = p.at("ring_inner").get<double>();
  scene.params.ring_outer = p.at("ring_outer").get<double>();
  scene.params.entry_arms = p.at("entry_arms").get<int>();
  scene.params.arm_half_width = p.at("arm_half_width").get<double>();

  std::ifstream in(pgm_path);
  if (!in) throw std::runtime_error("load_scene: cannot read " + pgm_path);
  std::string magic;
  in >> magic;
  if (magic != "P2") throw std::runtime_error("load_scene: expected P2 PGM");
  int w, h, maxval;
  in >> w >> h >> maxval;
  if (w != scene.width_px || h != scene.height_px)
    throw std::runtime_error("load_scene: PGM size does not match sidecar");
  scene.drivable.resize(static_cast<size_t>(w) * h);
  for (auto& cell : scene.drivable) {
    int v;
    in >> v;
    cell = v > 127 ? 1 : 0;
  }
  if (!in) throw std::runtime_error("load_scene: truncated PGM");
  return scene;
}

std::string scenario_to_json(const ScenarioSpec& spec) {
  json j;
  j["case"] = case_name(spec.interaction_case);
  j["kind"] = kind_name(spec.kind);
  j["scene_id"] = spec.scene_id;
  j["v1_start"] = {spec.v1_start.x, spec.v1_start.y};
  j["v2_start"] = {spec.v2_start.x, spec.v2_start.y};
  j["v2_goal"] = {spec.v2_goal.x, spec.v2_goal.y};
  j["dt"] = spec.v2_reference.dt;
  j["seed"] = spec.seed;
  json ref = json::array();
  for (const auto& p : spec.v2_reference.positions) ref.push_back({p.x, p.y});
  j["v2_reference"] = std::move(ref);
  return j.dump();
}

ScenarioSpec scenario_from_json(const std::string& text) {
  json j = json::parse(text);
  ScenarioSpec spec;
  spec.interaction_case = case_from_name(j.at("case").get<std::string>());
  spec.kind = kind_from_name(j.at("kind").get<std::string>());
  spec.scene_id = j.at("scene_id").get<std::string>();
  spec.v1_start = {j.at("v1_start")[0].get<double>(), j.at("v1_start")[1].get<double>()};
  spec.v2_start = {j.at("v2_start")[0].get<double>(), j.at("v2_start")[1].get<double>()};
  spec.v2_goal = {j.at("v2_goal")[0].get<double>(), j.at("v2_goal")[1].get<double>()};
  spec.v2_reference.dt = j.at("dt").get<double>();
  spec.seed = j.at("seed").get<std::uint64_t>();
  for (const auto& p : j.at("v2_reference"))
    spec.v2_reference.positions.push_back({p[0].get<double>(), p[1].get<double>()});
  return spec;
}

}  // namespace rg::scene
