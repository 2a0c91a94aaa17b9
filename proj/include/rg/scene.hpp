#ifndef RG_SCENE_HPP_
#define RG_SCENE_HPP_

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "rg/geometry.hpp"

namespace rg::scene {

enum class SceneKind { StraightRoad, Intersection, Roundabout };

std::string kind_name(SceneKind kind);
SceneKind kind_from_name(const std::string& name);

/// Geometry parameters for the synthetic road layouts, all in normalized
/// units. Bands are centered on the axes; the roundabout is an annulus with
/// axis-aligned entry arms.
struct SceneParams {
  double band_center = 0.0;      // StraightRoad only
  double band_half_width = 0.12;
  double ring_inner = 0.30;
  double ring_outer = 0.60;
  int entry_arms = 4;            // 0..4 axis-aligned arms (Roundabout)
  double arm_half_width = 0.12;
};

/// Bird-eye drivable-area grid. drivable is row-major H*W, 1 = road.
struct Scene {
  std::string id;
  SceneKind kind = SceneKind::StraightRoad;
  int width_px = 0;
  int height_px = 0;
  std::vector<std::uint8_t> drivable;
  geom::Frame frame;
  SceneParams params;

  bool drivable_at(int row, int col) const { return drivable[row * width_px + col] != 0; }
  double drivable_fraction() const;
};

Scene make_scene(SceneKind kind, int width_px, int height_px, const SceneParams& params = {});

/// True iff the pixel containing p is drivable; anything outside [-1,1]^2 is
/// off-road.
bool is_on_road(const Scene& scene, geom::Point2 p);

bool trajectory_on_road(const Scene& scene, const geom::Trajectory& traj);

/// Mean over the grid of (1 - drivable) * Heatmap(p): the off-road Gaussian
/// mass of a single keypoint. If grad is non-null it receives d(loss)/dp.
double point_road_loss(const Scene& scene, geom::Point2 p, double sigma,
                       geom::Point2* grad = nullptr);

/// Average point_road_loss over every keypoint in kw. Callers that follow
/// the generator convention pass only the generated keypoints (the fixed
/// initial position excluded).
double road_loss(const geom::KeyWaypoints& kw, const Scene& scene, double sigma);

struct RoadLossGrad {
  double loss = 0.0;
  std::vector<geom::Point2> d_points;
};
RoadLossGrad road_loss_with_grad(const geom::KeyWaypoints& kw, const Scene& scene, double sigma);

enum class Case { I, II, III };

std::string case_name(Case c);
Case case_from_name(const std::string& name);

/// One sampled two-vehicle setup: V2 follows v2_reference, V1 starts at
/// v1_start. v2_goal is V2's expected position at the end of the planning
/// horizon used for generator conditioning.
struct ScenarioSpec {
  Case interaction_case = Case::I;
  SceneKind kind = SceneKind::StraightRoad;
  std::string scene_id;
  geom::Point2 v1_start;
  geom::Point2 v2_start;
  geom::Trajectory v2_reference;
  geom::Point2 v2_goal;
  std::uint64_t seed = 0;
};

struct ScenarioOptions {
  int reference_steps = 100;   // v2_reference has reference_steps + 1 positions
  int goal_horizon = 30;       // v2_goal = reference position this many steps in
  double dt = 0.1;
  double min_speed = 0.15;
  double max_speed = 0.25;
};

/// Centerline route starting at `start`, advancing `speed * dt` per step for
/// `steps` steps. The lane (band, lane side, ring or entry arm) is inferred
/// from the start position, which must lie on a lane centerline.
std::vector<geom::Point2> route_from(const Scene& scene, geom::Point2 start, double speed,
                                     int steps, double dt);

ScenarioSpec sample_scenario(const Scene& scene, Case c, std::mt19937_64& rng,
                             const ScenarioOptions& opts = {});

/// Travel-direction lane offset from the band centerline (normalized units).
double lane_offset(const Scene& scene);

void save_scene(const Scene& scene, const std::string& pgm_path, const std::string& json_path);
Scene load_scene(const std::string& pgm_path, const std::string& json_path);

std::string scenario_to_json(const ScenarioSpec& spec);
ScenarioSpec scenario_from_json(const std::string& text);

}  // namespace rg::scene

#endif  // RG_SCENE_HPP_
