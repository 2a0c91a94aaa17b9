#include "rg/sim.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>
#include <thread>

#include <json.hpp>

#include "rg/config.hpp"

namespace rg::sim {

using geom::Point2;
using nlohmann::json;

namespace {

geom::Heading motion_heading(const geom::Trajectory& traj, geom::Heading fallback) {
  const auto& p = traj.positions;
  if (p.size() < 2) return fallback;
  Point2 d = p.back() - p[p.size() - 2];
  if (d.x == 0.0 && d.y == 0.0) return fallback;
  return geom::Heading(std::atan2(d.y, d.x));
}

}  // namespace

RolloutResult rollout_pair(const scene::Scene& sc, Point2 start1, Point2 start2,
                           planners::Planner& v1, planners::Planner& v2,
                           const SimParams& params) {
  if (params.stride < 1) throw std::invalid_argument("rollout_pair: stride must be positive");
  RolloutResult res;
  res.traj1.dt = res.traj2.dt = params.dt;
  res.traj1.positions.push_back(start1);
  res.traj2.positions.push_back(start2);

  const double threshold = 2.0 * params.collision_radius;
  res.min_distance = geom::distance(start1, start2);
  res.offroad1 = !scene::is_on_road(sc, start1);
  res.offroad2 = !scene::is_on_road(sc, start2);
  if (res.min_distance < threshold) {
    res.collided = true;
    res.first_collision_t = 0;
    return res;
  }

  int t = 0;
  while (t < params.t_max && !res.collided) {
    planners::PlannerInput in1;
    in1.own_position = res.traj1.positions.back();
    in1.own_heading = motion_heading(res.traj1, geom::Heading(0.0));
    in1.opponent_history = res.traj2.positions;
    in1.reference = params.v1_reference;
    in1.t_now = t;
    in1.dt = params.dt;

    planners::PlannerInput in2;
    in2.own_position = res.traj2.positions.back();
    in2.own_heading = motion_heading(res.traj2, geom::Heading(0.0));
    in2.opponent_history = res.traj1.positions;
    in2.reference = nullptr;  // set by caller-provided planner construction
    in2.t_now = t;
    in2.dt = params.dt;

    planners::PlannerOutput out1, out2;
    try {
      out1 = v1.plan(in1);
      out2 = v2.plan(in2);
    } catch (const std::exception&) {
      res.valid = false;
      return res;
    }
    if (static_cast<int>(out1.positions.size()) < params.stride ||
        static_cast<int>(out2.positions.size()) < params.stride) {
      res.valid = false;
      return res;
    }

    for (int k = 0; k < params.stride && t < params.t_max; ++k) {
      Point2 p1 = out1.positions[k];
      Point2 p2 = out2.positions[k];
      res.traj1.positions.push_back(p1);
      res.traj2.positions.push_back(p2);
      ++t;
      double d = geom::distance(p1, p2);
      res.min_distance = std::min(res.min_distance, d);
      res.offroad1 = res.offroad1 || !scene::is_on_road(sc, p1);
      res.offroad2 = res.offroad2 || !scene::is_on_road(sc, p2);
      if (d < threshold) {
        res.collided = true;
        res.first_collision_t = t;
        break;
      }
    }
  }
  return res;
}

namespace {

/// Hands each planner its own reference through the PlannerInput. Planners
/// that ignore the reference are unaffected.
class WithReference : public planners::Planner {
 public:
  WithReference(planners::Planner& inner, const geom::Trajectory* ref)
      : inner_(&inner), ref_(ref) {}
  planners::PlannerOutput plan(const planners::PlannerInput& input) override {
    planners::PlannerInput in = input;
    in.reference = ref_;
    return inner_->plan(in);
  }

 private:
  planners::Planner* inner_;
  const geom::Trajectory* ref_;
};

}  // namespace

RolloutResult rollout_pair(const scene::Scene& sc, const scene::ScenarioSpec& spec,
                           planners::Planner& v1, planners::Planner& v2,
                           const SimParams& params) {
  WithReference v2_ref(v2, &spec.v2_reference);
  return rollout_pair(sc, spec.v1_start, spec.v2_start, v1, v2_ref, params);
}

const CellStats& EvaluationReport::cell(const std::string& planner, double q) const {
  for (std::size_t p = 0; p < planners.size(); ++p) {
    if (planners[p] != planner) continue;
    for (std::size_t i = 0; i < q_values.size(); ++i)
      if (q_values[i] == q) return cells[p][i];
  }
  throw std::invalid_argument("EvaluationReport: no such cell");
}

std::unique_ptr<planners::Planner> make_tested_planner(const std::string& kind, int stride,
                                                       const EvalConfig& cfg) {
  if (kind == "data") return std::make_unique<planners::DataPlanner>(stride);
  if (kind == "idm") return std::make_unique<planners::IdmPlanner>(stride, cfg.idm);
  if (kind == "astar") return std::make_unique<planners::AstarPlanner>(stride, cfg.astar);
  throw std::invalid_argument("unknown planner kind: " + kind);
}

EvaluationReport evaluate_table_with(const std::vector<std::string>& tested_planners,
                                     const EvalConfig& cfg, const RolloutFn& fn) {
  if (tested_planners.empty())
    throw std::invalid_argument("evaluate_table: need at least one tested planner");
  EvaluationReport report;
  report.q_values = cfg.q_values;
  report.planners = tested_planners;
  report.episodes_per_cell = cfg.n_episodes;
  report.seed = cfg.seed;
  report.cells.assign(tested_planners.size(),
                      std::vector<CellStats>(cfg.q_values.size()));

  const int workers = std::max(1, cfg.workers);
  for (std::size_t p = 0; p < tested_planners.size(); ++p) {
    for (std::size_t qi = 0; qi < cfg.q_values.size(); ++qi) {
      std::vector<RolloutResult> results(cfg.n_episodes);
      auto run_range = [&](int begin, int end) {
        for (int e = begin; e < end; ++e)
          results[e] = fn(static_cast<int>(p), static_cast<int>(qi), e);
      };
      if (workers == 1 || cfg.n_episodes < 2) {
        run_range(0, cfg.n_episodes);
      } else {
        std::vector<std::thread> pool;
        int chunk = (cfg.n_episodes + workers - 1) / workers;
        for (int w = 0; w < workers; ++w) {
          int begin = w * chunk;
          int end = std::min(cfg.n_episodes, begin + chunk);
          if (begin >= end) break;
          pool.emplace_back(run_range, begin, end);
        }
        for (auto& th : pool) th.join();
      }
      CellStats& cell = report.cells[p][qi];
      for (const auto& r : results) {
        if (!r.valid) {
          ++cell.n_invalid;
          continue;
        }
        ++cell.n_valid;
        cell.n_collisions += r.collided;
      }
      if (cell.n_valid == 0) {
        cell.missing = true;
      } else {
        cell.rate = static_cast<double>(cell.n_collisions) / cell.n_valid;
      }
    }
  }
  return report;
}

EvaluationReport evaluate_table(const routegan::RouteGanModel& model,
                                const std::vector<std::string>& tested_planners,
                                const EvalConfig& cfg) {
  const int stride = model.cfg.stride;
  const int goal_horizon = model.cfg.keypoint_count * model.cfg.stride;

  std::vector<scene::Scene> scenes;
  scenes.push_back(scene::make_scene(scene::SceneKind::StraightRoad, cfg.scene_px, cfg.scene_px));
  scenes.push_back(scene::make_scene(scene::SceneKind::Intersection, cfg.scene_px, cfg.scene_px));
  scenes.push_back(scene::make_scene(scene::SceneKind::Roundabout, cfg.scene_px, cfg.scene_px));
  constexpr scene::Case kCases[3] = {scene::Case::I, scene::Case::II, scene::Case::III};

  RolloutFn fn = [&](int planner_idx, int q_idx, int episode_idx) -> RolloutResult {
    std::mt19937_64 rng(cfg::mix_seed(cfg.seed, {static_cast<std::uint64_t>(planner_idx),
                                                 static_cast<std::uint64_t>(q_idx),
                                                 static_cast<std::uint64_t>(episode_idx)}));
    const scene::Scene& sc = scenes[episode_idx % scenes.size()];
    scene::Case c = kCases[(episode_idx / scenes.size()) % 3];
    scene::ScenarioOptions opts;
    opts.reference_steps = cfg.t_max;
    opts.goal_horizon = goal_horizon;
    opts.dt = model.cfg.dt;
    scene::ScenarioSpec spec = scene::sample_scenario(sc, c, rng, opts);

    routegan::StyleCode q = routegan::style_zero(model.cfg.style_dim);
    q.q[0] = cfg.q_values[q_idx];
    routegan::NoiseCode z = routegan::sample_noise(model.cfg.noise_dim, rng);

    planners::RouteGanPlanner v1(model, sc, spec.v1_start, spec.v2_goal, q, z);
    auto v2 = make_tested_planner(tested_planners[planner_idx], stride, cfg);

    SimParams params;
    params.t_max = cfg.t_max;
    params.stride = stride;
    params.collision_radius = cfg.collision_radius;
    params.dt = model.cfg.dt;
    return rollout_pair(sc, spec, v1, *v2, params);
  };
  return evaluate_table_with(tested_planners, cfg, fn);
}

RolloutResult joint_generation(const routegan::RouteGanModel& model, const scene::Scene& sc,
                               Point2 start1, Point2 goal1, const routegan::StyleCode& q1,
                               const routegan::NoiseCode& z1, Point2 start2, Point2 goal2,
                               const routegan::StyleCode& q2, const routegan::NoiseCode& z2,
                               const SimParams& params) {
  planners::RouteGanPlanner v1(model, sc, start1, goal1, q1, z1);
  planners::RouteGanPlanner v2(model, sc, start2, goal2, q2, z2);
  return rollout_pair(sc, start1, start2, v1, v2, params);
}

namespace {

double reference_speed(const scene::ScenarioSpec& spec) {
  const auto& ref = spec.v2_reference.positions;
  if (ref.size() < 2) return 0.0;
  return geom::distance(ref[1], ref[0]) / spec.v2_reference.dt;
}

}  // namespace

RolloutResult joint_generation(const routegan::RouteGanModel& model, const scene::Scene& sc,
                               const scene::ScenarioSpec& spec, const routegan::StyleCode& q1,
                               const routegan::StyleCode& q2, const routegan::NoiseCode& z1,
                               const routegan::NoiseCode& z2, const SimParams& params) {
  const int horizon = model.cfg.keypoint_count * model.cfg.stride;
  // Each vehicle's goal is its opponent's expected position one generator
  // horizon ahead; V1's nominal route comes from its lane centerline.
  auto v1_route = scene::route_from(sc, spec.v1_start, reference_speed(spec), horizon,
                                    spec.v2_reference.dt);
  Point2 goal1 = spec.v2_goal;
  Point2 goal2 = v1_route.back();
  return joint_generation(model, sc, spec.v1_start, goal1, q1, z1, spec.v2_start, goal2, q2, z2,
                          params);
}

SweepGrid latent_sweep(const routegan::RouteGanModel& model, const scene::Scene& sc,
                       const scene::ScenarioSpec& spec, int dim_i, int dim_j,
                       const std::vector<double>& values, const routegan::NoiseCode& z,
                       const SimParams& params) {
  if (dim_i == dim_j || dim_i < 0 || dim_j < 0 || dim_i >= model.cfg.style_dim ||
      dim_j >= model.cfg.style_dim)
    throw std::invalid_argument("latent_sweep: bad style dimensions");

  SweepGrid grid;
  grid.values = values;
  grid.dim_i = dim_i;
  grid.dim_j = dim_j;
  grid.cells.reserve(values.size() * values.size());
  for (double vi : values) {
    for (double vj : values) {
      routegan::StyleCode q = routegan::style_zero(model.cfg.style_dim);
      q.q[dim_i] = vi;
      q.q[dim_j] = vj;
      planners::RouteGanPlanner v1(model, sc, spec.v1_start, spec.v2_goal, q, z);
      planners::DataPlanner v2(params.stride);
      grid.cells.push_back(rollout_pair(sc, spec, v1, v2, params));
    }
  }
  return grid;
}

void write_report_csv(const EvaluationReport& report, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_report_csv: cannot write " + path);
  out << std::setprecision(17);
  out << "planner";
  for (double q : report.q_values) out << ",rate_q=" << q;
  for (double q : report.q_values) out << ",n_q=" << q;
  for (double q : report.q_values) out << ",invalid_q=" << q;
  out << "\n";
  for (std::size_t p = 0; p < report.planners.size(); ++p) {
    out << report.planners[p];
    for (const auto& cell : report.cells[p]) {
      out << ',';
      if (cell.missing)
        out << "missing";
      else
        out << cell.rate;
    }
    for (const auto& cell : report.cells[p]) out << ',' << cell.n_valid;
    for (const auto& cell : report.cells[p]) out << ',' << cell.n_invalid;
    out << "\n";
  }
}

void write_report_json(const EvaluationReport& report, const std::string& path) {
  json j;
  j["q_values"] = report.q_values;
  j["planners"] = report.planners;
  j["episodes_per_cell"] = report.episodes_per_cell;
  j["seed"] = report.seed;
  json cells = json::object();
  for (std::size_t p = 0; p < report.planners.size(); ++p) {
    json row = json::array();
    for (const auto& cell : report.cells[p]) {
      row.push_back({{"rate", cell.rate},
                     {"n", cell.n_valid},
                     {"invalid", cell.n_invalid},
                     {"collisions", cell.n_collisions},
                     {"missing", cell.missing}});
    }
    cells[report.planners[p]] = std::move(row);
  }
  j["cells"] = std::move(cells);
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_report_json: cannot write " + path);
  out << j.dump(2) << '\n';
}

data::InteractionEpisode rollout_to_episode(const RolloutResult& result,
                                            const std::string& scene_id, double collision_radius,
                                            double critical_margin) {
  data::InteractionEpisode ep;
  ep.x1 = result.traj1;
  ep.x2 = result.traj2;
  ep.scene_id = scene_id;
  ep.goal = result.traj2.positions.back();
  ep.label = data::label_episode(ep, collision_radius, critical_margin);
  return ep;
}

}  // namespace rg::sim
