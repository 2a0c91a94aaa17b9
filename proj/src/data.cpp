#include "rg/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace rg::data {

using geom::Point2;
using nlohmann::json;

namespace fs = std::filesystem;

std::string label_name(Label l) { return l == Label::SAFE ? "SAFE" : "CRITICAL"; }

Label label_from_name(const std::string& name) {
  if (name == "SAFE") return Label::SAFE;
  if (name == "CRITICAL") return Label::CRITICAL;
  throw std::invalid_argument("unknown label: " + name);
}

double min_pair_distance(const geom::Trajectory& a, const geom::Trajectory& b) {
  const size_t n = std::min(a.positions.size(), b.positions.size());
  double best = std::numeric_limits<double>::infinity();
  for (size_t t = 0; t < n; ++t)
    best = std::min(best, geom::distance(a.positions[t], b.positions[t]));
  return best;
}

Label label_episode(const InteractionEpisode& ep, double collision_radius,
                    double critical_margin) {
  if (ep.x1.positions.empty() || ep.x2.positions.empty())
    throw std::invalid_argument("label_episode: empty trajectory");
  const double threshold = 2.0 * collision_radius + critical_margin;
  return min_pair_distance(ep.x1, ep.x2) < threshold ? Label::CRITICAL : Label::SAFE;
}

namespace {

struct SegmentClosest {
  double t = 0.0;  // parameter on segment a
  double u = 0.0;  // parameter on segment b
  double dist = 0.0;
};

double clamp01(double v) { return std::clamp(v, 0.0, 1.0); }

// Closest pair of points between segments a0a1 and b0b1.
SegmentClosest closest_between_segments(Point2 a0, Point2 a1, Point2 b0, Point2 b1) {
  Point2 d1 = a1 - a0, d2 = b1 - b0, r = a0 - b0;
  double a = dot(d1, d1), e = dot(d2, d2), f = dot(d2, r);
  double t = 0.0, u = 0.0;
  if (a <= 1e-18 && e <= 1e-18) {
    // both degenerate
  } else if (a <= 1e-18) {
    u = clamp01(f / e);
  } else {
    double c = dot(d1, r);
    if (e <= 1e-18) {
      t = clamp01(-c / a);
    } else {
      double b = dot(d1, d2);
      double denom = a * e - b * b;
      t = denom > 1e-18 ? clamp01((b * f - c * e) / denom) : 0.0;
      u = (b * t + f) / e;
      if (u < 0.0) {
        u = 0.0;
        t = clamp01(-c / a);
      } else if (u > 1.0) {
        u = 1.0;
        t = clamp01((b - c) / a);
      }
    }
  }
  Point2 pa = a0 + t * d1, pb = b0 + u * d2;
  return {t, u, geom::distance(pa, pb)};
}

// Continuous (time_on_a, time_on_b, distance) of the spatial closest approach
// between the two polylines, ignoring timing.
SegmentClosest closest_polyline_approach(const geom::Trajectory& a, const geom::Trajectory& b,
                                         double* time_a, double* time_b) {
  SegmentClosest best;
  best.dist = std::numeric_limits<double>::infinity();
  size_t bi = 0, bj = 0;
  for (size_t i = 0; i + 1 < a.positions.size(); ++i) {
    for (size_t j = 0; j + 1 < b.positions.size(); ++j) {
      SegmentClosest sc = closest_between_segments(a.positions[i], a.positions[i + 1],
                                                   b.positions[j], b.positions[j + 1]);
      if (sc.dist < best.dist) {
        best = sc;
        bi = i;
        bj = j;
      }
    }
  }
  *time_a = bi + best.t;
  *time_b = bj + best.u;
  return best;
}

geom::Trajectory shift_time(const geom::Trajectory& traj, int shift) {
  geom::Trajectory out;
  out.dt = traj.dt;
  const int last = static_cast<int>(traj.positions.size()) - 1;
  out.positions.reserve(traj.positions.size());
  for (int t = 0; t <= last; ++t)
    out.positions.push_back(traj.positions[std::clamp(t - shift, 0, last)]);
  return out;
}

}  // namespace

InteractionEpisode temporal_realignment(const InteractionEpisode& ep, std::mt19937_64& rng,
                                        const CriticalThreshold& thr) {
  double time1 = 0.0, time2 = 0.0;
  SegmentClosest cross = closest_polyline_approach(ep.x1, ep.x2, &time1, &time2);
  if (cross.dist > 1e-3)
    throw std::invalid_argument("temporal_realignment: paths never cross spatially");

  const int base_shift = static_cast<int>(std::lround(time2 - time1));
  std::uniform_int_distribution<int> jitter(-1, 1);
  const int first = jitter(rng);

  // Try the jittered shift first, then neighbours of the exact alignment.
  for (int delta : {first, 0, -1, 1, 2, -2}) {
    InteractionEpisode out = ep;
    out.x1 = shift_time(ep.x1, base_shift + delta);
    if (label_episode(out, thr.collision_radius, thr.critical_margin) == Label::CRITICAL) {
      out.label = Label::CRITICAL;
      return out;
    }
  }
  throw std::runtime_error("temporal_realignment: could not reach critical distance");
}

InteractionEpisode local_deformation(const InteractionEpisode& ep, std::mt19937_64& rng,
                                     const CriticalThreshold& thr, const DeformParams& params) {
  const auto& p1 = ep.x1.positions;
  const auto& p2 = ep.x2.positions;
  if (p1.size() != p2.size() || p1.size() < 3)
    throw std::invalid_argument("local_deformation: need aligned trajectories of length >= 3");

  // Aligned-time closest approach; ties break toward the middle so the bump
  // support stays clear of the fixed endpoints.
  size_t t_star = 0;
  double d = std::numeric_limits<double>::infinity();
  const double mid = 0.5 * (p1.size() - 1);
  for (size_t t = 0; t < p1.size(); ++t) {
    double dist = geom::distance(p1[t], p2[t]);
    bool closer = dist < d - 1e-12;
    bool tie_better = dist < d + 1e-12 && std::abs(t - mid) < std::abs(t_star - mid);
    if (closer || tie_better) {
      d = dist;
      t_star = t;
    }
  }

  double target = params.target_separation;
  if (target < 0.0) {
    std::uniform_real_distribution<double> u(0.2, 0.8);
    target = u(rng) * thr.value();
  }
  double amplitude = std::max(0.0, d - target);
  if (amplitude > params.max_deform)
    throw std::runtime_error("local_deformation: required deformation exceeds max_deform");

  InteractionEpisode out = ep;
  if (amplitude == 0.0) return out;

  // Cumulative arc length of x1.
  std::vector<double> arc(p1.size(), 0.0);
  for (size_t t = 1; t < p1.size(); ++t)
    arc[t] = arc[t - 1] + geom::distance(p1[t], p1[t - 1]);

  const double center = arc[t_star];
  double half_width = std::min({params.bump_half_width, center, arc.back() - center});
  if (half_width < 1e-9)
    throw std::runtime_error("local_deformation: closest approach at an endpoint");

  Point2 toward = p2[t_star] - p1[t_star];
  double toward_norm = geom::norm(toward);
  Point2 w = toward_norm > 1e-12 ? (1.0 / toward_norm) * toward : Point2{0.0, 0.0};

  for (size_t t = 0; t < p1.size(); ++t) {
    double rel = std::abs(arc[t] - center);
    if (rel >= half_width) continue;
    double bump = 0.5 * (1.0 + std::cos(M_PI * rel / half_width));
    out.x1.positions[t] = p1[t] + (amplitude * bump) * w;
  }
  out.label = label_episode(out, thr.collision_radius, thr.critical_margin);
  if (out.label != Label::CRITICAL)
    throw std::runtime_error("local_deformation: deformation did not reach critical distance");
  return out;
}

KeypointPair gamma_augment(const KeypointPair& pair, double theta) {
  const auto& a = pair.k1.points;
  const auto& b = pair.k2.points;
  if (a.size() != b.size() || pair.k1.stride_s != pair.k2.stride_s)
    throw std::invalid_argument("gamma_augment: mismatched keypoint sequences");

  Point2 mu{0.0, 0.0};
  for (const auto& p : a) mu = mu + p;
  for (const auto& p : b) mu = mu + p;
  mu = (1.0 / (a.size() + b.size())) * mu;

  const double c = std::cos(theta), s = std::sin(theta);
  auto apply = [&](const geom::KeyWaypoints& kw) {
    geom::KeyWaypoints out;
    out.stride_s = kw.stride_s;
    out.points.reserve(kw.points.size());
    for (const auto& p : kw.points) {
      Point2 q = p - mu;
      out.points.push_back({c * q.x - s * q.y, s * q.x + c * q.y});
    }
    return out;
  };
  return {apply(pair.k1), apply(pair.k2)};
}

const scene::Scene& Dataset::scene_by_id(const std::string& id) const {
  for (const auto& s : scenes)
    if (s.id == id) return s;
  throw std::invalid_argument("unknown scene id: " + id);
}

int Dataset::count(Label l) const {
  int n = 0;
  for (const auto& ep : episodes) n += (ep.label == l);
  return n;
}

namespace {

geom::Trajectory route_trajectory(const scene::Scene& sc, Point2 start, double speed, int steps,
                                  double dt) {
  geom::Trajectory traj;
  traj.dt = dt;
  traj.positions = scene::route_from(sc, start, speed, steps, dt);
  return traj;
}

double ref_speed(const scene::ScenarioSpec& spec) {
  const auto& ref = spec.v2_reference.positions;
  if (ref.size() < 2) return 0.0;
  return geom::distance(ref[1], ref[0]) / spec.v2_reference.dt;
}

}  // namespace

Dataset dataset_build(const std::vector<scene::Scene>& scenes, int n_safe, int n_critical,
                      std::mt19937_64& rng, const DatasetConfig& config) {
  if (scenes.empty()) throw std::invalid_argument("dataset_build: no scenes");
  if (n_safe < 0 || n_critical < 0)
    throw std::invalid_argument("dataset_build: negative episode count");

  Dataset ds;
  ds.scenes = scenes;
  ds.config = config;

  scene::ScenarioOptions opts;
  opts.reference_steps = config.episode_steps;
  opts.goal_horizon = config.episode_steps;
  opts.dt = config.dt;
  opts.min_speed = config.min_speed;
  opts.max_speed = config.max_speed;

  const CriticalThreshold thr = config.threshold();
  const double horizon_s = config.episode_steps * config.dt;
  constexpr scene::Case kCases[3] = {scene::Case::I, scene::Case::II, scene::Case::III};
  std::uniform_real_distribution<double> u01(0.0, 1.0);

  auto make_episode = [&](Label want, int index) -> InteractionEpisode {
    for (int attempt = 0; attempt < 200; ++attempt) {
      const auto& sc = scenes[index % scenes.size()];
      scene::Case c = kCases[(index / scenes.size()) % 3];
      scene::ScenarioSpec spec = scene::sample_scenario(sc, c, rng, opts);
      const double v2_speed = ref_speed(spec);

      InteractionEpisode ep;
      ep.scene_id = sc.id;
      ep.x2 = spec.v2_reference;
      ep.goal = ep.x2.positions.back();

      const bool crossing_case =
          c == scene::Case::III && sc.kind != scene::SceneKind::StraightRoad;

      try {
        if (want == Label::SAFE) {
          double v1_speed;
          switch (c) {
            case scene::Case::I: v1_speed = v2_speed * (0.65 + 0.30 * u01(rng)); break;
            case scene::Case::II: v1_speed = v2_speed * (1.05 + 0.30 * u01(rng)); break;
            case scene::Case::III: v1_speed = config.min_speed +
                (config.max_speed - config.min_speed) * u01(rng); break;
            default: v1_speed = v2_speed;
          }
          ep.x1 = route_trajectory(sc, spec.v1_start, v1_speed, config.episode_steps, config.dt);
          ep.label = Label::SAFE;
          if (label_episode(ep, thr.collision_radius, thr.critical_margin) != Label::SAFE)
            continue;
          if (!scene::trajectory_on_road(sc, ep.x1)) continue;
          return ep;
        }

        // CRITICAL construction, strategy depending on the case.
        if (c == scene::Case::I) {
          // Rear-end: close the full gap within the episode.
          double gap = geom::distance(spec.v1_start, spec.v2_start);
          double v1_speed = v2_speed + (gap / horizon_s) * (1.05 + 0.35 * u01(rng));
          ep.x1 = route_trajectory(sc, spec.v1_start, v1_speed, config.episode_steps, config.dt);
        } else if (c == scene::Case::II) {
          // V1 nearly stops ahead while V2 keeps going.
          double v1_speed = v2_speed * 0.25 * u01(rng);
          ep.x1 = route_trajectory(sc, spec.v1_start, v1_speed, config.episode_steps, config.dt);
        } else if (crossing_case) {
          // Build a crossing pair, then realign the timings.
          double v1_speed = config.min_speed + (config.max_speed - config.min_speed) * u01(rng);
          ep.x1 = route_trajectory(sc, spec.v1_start, v1_speed, config.episode_steps, config.dt);
          ep.label = label_episode(ep, thr.collision_radius, thr.critical_margin);
          if (ep.label != Label::CRITICAL) ep = temporal_realignment(ep, rng, thr);
          ep.label = Label::CRITICAL;
          return ep;
        } else {
          // Opposite straight lanes: bend V1 into V2's lane.
          double v1_speed = config.min_speed + (config.max_speed - config.min_speed) * u01(rng);
          ep.x1 = route_trajectory(sc, spec.v1_start, v1_speed, config.episode_steps, config.dt);
          ep.label = Label::SAFE;
          ep = local_deformation(ep, rng, thr);
          return ep;
        }
        if (label_episode(ep, thr.collision_radius, thr.critical_margin) != Label::CRITICAL)
          continue;
        ep.label = Label::CRITICAL;
        return ep;
      } catch (const std::exception&) {
        continue;  // augmentation not applicable here, resample
      }
    }
    throw std::runtime_error("dataset_build: no valid episode after 200 attempts");
  };

  for (int i = 0; i < n_safe; ++i) ds.episodes.push_back(make_episode(Label::SAFE, i));
  for (int i = 0; i < n_critical; ++i) ds.episodes.push_back(make_episode(Label::CRITICAL, i));
  return ds;
}

std::string episode_to_json(const InteractionEpisode& ep) {
  json j;
  j["scene_id"] = ep.scene_id;
  j["label"] = label_name(ep.label);
  j["dt"] = ep.x1.dt;
  json x1 = json::array(), x2 = json::array();
  for (const auto& p : ep.x1.positions) x1.push_back({p.x, p.y});
  for (const auto& p : ep.x2.positions) x2.push_back({p.x, p.y});
  j["x1"] = std::move(x1);
  j["x2"] = std::move(x2);
  j["goal"] = {ep.goal.x, ep.goal.y};
  return j.dump();
}

InteractionEpisode episode_from_json(const std::string& line) {
  json j = json::parse(line);
  InteractionEpisode ep;
  ep.scene_id = j.at("scene_id").get<std::string>();
  ep.label = label_from_name(j.at("label").get<std::string>());
  ep.x1.dt = ep.x2.dt = j.at("dt").get<double>();
  for (const auto& p : j.at("x1")) ep.x1.positions.push_back({p[0].get<double>(), p[1].get<double>()});
  for (const auto& p : j.at("x2")) ep.x2.positions.push_back({p[0].get<double>(), p[1].get<double>()});
  ep.goal = {j.at("goal")[0].get<double>(), j.at("goal")[1].get<double>()};
  if (ep.x1.positions.size() != ep.x2.positions.size())
    throw std::invalid_argument("episode_from_json: mismatched trajectory lengths");
  return ep;
}

void save_dataset(const Dataset& ds, const std::string& dir) {
  fs::create_directories(fs::path(dir) / "scenes");
  json scene_files = json::array();
  for (const auto& sc : ds.scenes) {
    std::string pgm = "scenes/" + sc.id + ".pgm";
    std::string meta = "scenes/" + sc.id + ".json";
    scene::save_scene(sc, (fs::path(dir) / pgm).string(), (fs::path(dir) / meta).string());
    scene_files.push_back({{"id", sc.id}, {"pgm", pgm}, {"meta", meta}});
  }

  {
    std::ofstream out(fs::path(dir) / "episodes.jsonl");
    if (!out) throw std::runtime_error("save_dataset: cannot write episodes.jsonl");
    for (const auto& ep : ds.episodes) out << episode_to_json(ep) << '\n';
  }

  json manifest;
  manifest["version"] = 1;
  manifest["scenes"] = std::move(scene_files);
  manifest["episodes"] = "episodes.jsonl";
  manifest["config"] = {{"stride", ds.config.stride},
                        {"episode_steps", ds.config.episode_steps},
                        {"dt", ds.config.dt},
                        {"collision_radius", ds.config.collision_radius},
                        {"critical_margin", ds.config.critical_margin},
                        {"min_speed", ds.config.min_speed},
                        {"max_speed", ds.config.max_speed}};
  manifest["counts"] = {{"safe", ds.count(Label::SAFE)}, {"critical", ds.count(Label::CRITICAL)}};
  std::ofstream out(fs::path(dir) / "manifest.json");
  if (!out) throw std::runtime_error("save_dataset: cannot write manifest.json");
  out << manifest.dump(2) << '\n';
}

Dataset load_dataset(const std::string& dir) {
  std::ifstream min(fs::path(dir) / "manifest.json");
  if (!min) throw std::runtime_error("load_dataset: cannot read manifest.json in " + dir);
  json manifest = json::parse(min);

  Dataset ds;
  const auto& cfg = manifest.at("config");
  ds.config.stride = cfg.at("stride").get<int>();
  ds.config.episode_steps = cfg.at("episode_steps").get<int>();
  ds.config.dt = cfg.at("dt").get<double>();
  ds.config.collision_radius = cfg.at("collision_radius").get<double>();
  ds.config.critical_margin = cfg.at("critical_margin").get<double>();
  ds.config.min_speed = cfg.at("min_speed").get<double>();
  ds.config.max_speed = cfg.at("max_speed").get<double>();

  for (const auto& sf : manifest.at("scenes")) {
    ds.scenes.push_back(scene::load_scene((fs::path(dir) / sf.at("pgm").get<std::string>()).string(),
                                          (fs::path(dir) / sf.at("meta").get<std::string>()).string()));
  }

  std::ifstream ein(fs::path(dir) / manifest.at("episodes").get<std::string>());
  if (!ein) throw std::runtime_error("load_dataset: cannot read episodes file");
  std::string line;
  while (std::getline(ein, line)) {
    if (!line.empty()) ds.episodes.push_back(episode_from_json(line));
  }
  return ds;
}

}  // namespace rg::data
