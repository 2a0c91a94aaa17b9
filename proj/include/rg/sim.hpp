#ifndef RG_SIM_HPP_
#define RG_SIM_HPP_

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "rg/data.hpp"
#include "rg/geometry.hpp"
#include "rg/planners.hpp"
#include "rg/routegan.hpp"
#include "rg/scene.hpp"

namespace rg::sim {

struct SimParams {
  int t_max = 100;
  int stride = 5;                  // planning cadence, positions per plan call
  double collision_radius = 0.03;  // per-vehicle disc radius
  double dt = 0.1;
  const geom::Trajectory* v1_reference = nullptr;  // for reference-following V1 planners
};

struct RolloutResult {
  geom::Trajectory traj1;
  geom::Trajectory traj2;
  bool collided = false;
  int first_collision_t = -1;  // timestep index, -1 if none
  double min_distance = 0.0;
  bool offroad1 = false;
  bool offroad2 = false;
  bool valid = true;  // false if a planner failed; excluded from rates
};

/// Lock-step two-vehicle simulation: every `stride` steps both planners emit
/// their next positions from the same observations; vehicles advance one dt
/// at a time with a disc-disc collision check at every step. V1 is the
/// adversary slot, V2 the tested slot.
RolloutResult rollout_pair(const scene::Scene& sc, geom::Point2 start1, geom::Point2 start2,
                           planners::Planner& v1, planners::Planner& v2,
                           const SimParams& params);

RolloutResult rollout_pair(const scene::Scene& sc, const scene::ScenarioSpec& spec,
                           planners::Planner& v1, planners::Planner& v2,
                           const SimParams& params);

struct CellStats {
  double rate = 0.0;
  int n_valid = 0;
  int n_invalid = 0;
  int n_collisions = 0;
  bool missing = false;
};

struct EvaluationReport {
  std::vector<double> q_values;
  std::vector<std::string> planners;
  std::vector<std::vector<CellStats>> cells;  // [planner][q]
  int episodes_per_cell = 0;
  std::uint64_t seed = 0;

  const CellStats& cell(const std::string& planner, double q) const;
};

struct EvalConfig {
  std::vector<double> q_values = {-2.0, -1.0, 0.0, 1.0, 2.0};
  int n_episodes = 200;
  std::uint64_t seed = 0;
  int t_max = 100;
  double collision_radius = 0.03;
  int workers = 1;
  int scene_px = 64;
  planners::IdmParams idm;
  planners::AstarParams astar;
};

std::unique_ptr<planners::Planner> make_tested_planner(const std::string& kind, int stride,
                                                       const EvalConfig& cfg);

/// Collision-rate table over (q^(1) value x tested planner). Each episode
/// runs RouteGAN(q) in the V1 slot on a freshly sampled scenario; episodes
/// are seeded independently so the report is identical for any worker count.
EvaluationReport evaluate_table(const routegan::RouteGanModel& model,
                                const std::vector<std::string>& tested_planners,
                                const EvalConfig& cfg);

/// Same aggregation driven by an arbitrary rollout function (test seam).
using RolloutFn = std::function<RolloutResult(int planner_idx, int q_idx, int episode_idx)>;
EvaluationReport evaluate_table_with(const std::vector<std::string>& tested_planners,
                                     const EvalConfig& cfg, const RolloutFn& fn);

/// Both vehicles on RouteGAN, each conditioning on the other's up-to-date
/// positions. goal1/goal2 are the expected end positions of the respective
/// opponents.
RolloutResult joint_generation(const routegan::RouteGanModel& model, const scene::Scene& sc,
                               geom::Point2 start1, geom::Point2 goal1,
                               const routegan::StyleCode& q1, const routegan::NoiseCode& z1,
                               geom::Point2 start2, geom::Point2 goal2,
                               const routegan::StyleCode& q2, const routegan::NoiseCode& z2,
                               const SimParams& params);

RolloutResult joint_generation(const routegan::RouteGanModel& model, const scene::Scene& sc,
                               const scene::ScenarioSpec& spec, const routegan::StyleCode& q1,
                               const routegan::StyleCode& q2, const routegan::NoiseCode& z1,
                               const routegan::NoiseCode& z2, const SimParams& params);

struct SweepGrid {
  std::vector<double> values;          // the swept axis values
  std::vector<RolloutResult> cells;    // row-major [value_i x value_j]
  int dim_i = 0;
  int dim_j = 1;
};

/// 5x5-style latent sweep: q^(dim_i) and q^(dim_j) vary over `values`, all
/// other dimensions and z held fixed; V2 follows the scenario reference.
SweepGrid latent_sweep(const routegan::RouteGanModel& model, const scene::Scene& sc,
                       const scene::ScenarioSpec& spec, int dim_i, int dim_j,
                       const std::vector<double>& values, const routegan::NoiseCode& z,
                       const SimParams& params);

void write_report_csv(const EvaluationReport& report, const std::string& path);
void write_report_json(const EvaluationReport& report, const std::string& path);

/// Rollout as a dataset-style episode record (for JSONL dumps / rendering).
data::InteractionEpisode rollout_to_episode(const RolloutResult& result, const std::string& scene_id,
                                            double collision_radius, double critical_margin);

}  // namespace rg::sim

#endif  // RG_SIM_HPP_
