#ifndef RG_PLANNERS_HPP_
#define RG_PLANNERS_HPP_

#include <array>
#include <memory>
#include <vector>

#include "rg/geometry.hpp"
#include "rg/routegan.hpp"
#include "rg/scene.hpp"

namespace rg::planners {

struct PlannerInput {
  geom::Point2 own_position;
  geom::Heading own_heading;
  std::vector<geom::Point2> opponent_history;  // positions up to and including now
  const geom::Trajectory* reference = nullptr; // own reference, if the planner uses one
  int t_now = 0;
  double dt = 0.1;
};

struct PlannerOutput {
  std::vector<geom::Point2> positions;  // the next s positions
  bool collision_risk = false;
};

/// Receding-horizon planner: called every s timesteps, returns the next s
/// positions. Instances are episode-scoped; concurrent episodes each own one.
class Planner {
 public:
  virtual ~Planner() = default;
  virtual PlannerOutput plan(const PlannerInput& input) = 0;
};

/// Classical 4-stage Runge-Kutta step for a fixed-size ODE state.
template <std::size_t N, class F>
std::array<double, N> rk4_step(F&& f, double t, const std::array<double, N>& y, double h) {
  auto axpy = [](const std::array<double, N>& a, const std::array<double, N>& b, double s) {
    std::array<double, N> r;
    for (std::size_t i = 0; i < N; ++i) r[i] = a[i] + s * b[i];
    return r;
  };
  std::array<double, N> k1 = f(t, y);
  std::array<double, N> k2 = f(t + 0.5 * h, axpy(y, k1, 0.5 * h));
  std::array<double, N> k3 = f(t + 0.5 * h, axpy(y, k2, 0.5 * h));
  std::array<double, N> k4 = f(t + h, axpy(y, k3, h));
  std::array<double, N> out;
  for (std::size_t i = 0; i < N; ++i)
    out[i] = y[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
  return out;
}

/// Polyline with a cumulative arc-length parameterization.
struct ArcPath {
  std::vector<geom::Point2> pts;
  std::vector<double> cum;

  static ArcPath from(const geom::Trajectory& traj);
  double length() const { return cum.empty() ? 0.0 : cum.back(); }
  geom::Point2 at(double s) const;            // clamped to [0, length]
  double project(geom::Point2 p) const;       // nearest point, ties -> smaller arc length
};

/// Follows the reference verbatim, ignoring the opponent. Holds the final
/// position once the reference is exhausted.
class DataPlanner : public Planner {
 public:
  explicit DataPlanner(int horizon_s) : s_(horizon_s) {}
  PlannerOutput plan(const PlannerInput& input) override;

 private:
  int s_;
};

/// Intelligent-driver-model parameters in normalized scene units.
struct IdmParams {
  double v0 = 0.25;        // desired speed (units/s)
  double T = 1.0;          // time headway (s)
  double a = 0.15;         // max acceleration (units/s^2)
  double b = 0.2;          // comfortable deceleration (units/s^2)
  double s0 = 0.06;        // minimum gap (units)
  double delta = 4.0;      // acceleration exponent
  double emergency_gap = 0.02;  // hold position below this euclidean gap
};

/// Longitudinal IDM along the own reference. The opponent is projected onto
/// the reference; if it projects ahead it acts as the lead vehicle. The
/// acceleration law is integrated with classical RK4 at step dt.
class IdmPlanner : public Planner {
 public:
  IdmPlanner(int horizon_s, const IdmParams& params = {}) : s_(horizon_s), params_(params) {}
  PlannerOutput plan(const PlannerInput& input) override;

 private:
  int s_;
  IdmParams params_;
  bool speed_init_ = false;
  double speed_ = 0.0;  // episode-local integrated speed
};

struct AstarParams {
  int accel_levels = 5;     // odd, symmetric around zero
  double a_max = 0.15;
  double v_max = 0.35;
  int horizon_steps = 15;   // search depth H in dt steps
  double w_progress = 1.0;
  double w_collision = 10.0;
  double w_accel = 0.01;
  double clearance = 0.08;  // collision penalty below this distance
  std::size_t max_expansions = 400000;
};

/// Best-first search over constant-acceleration primitives along the own
/// reference; the opponent is predicted at constant velocity. Returns the
/// first s steps of the minimum-cost plan, flagged if it crosses the
/// clearance distance anywhere.
class AstarPlanner : public Planner {
 public:
  AstarPlanner(int horizon_s, const AstarParams& params = {}) : s_(horizon_s), params_(params) {}
  PlannerOutput plan(const PlannerInput& input) override;

 private:
  int s_;
  AstarParams params_;
  bool speed_init_ = false;
  double speed_ = 0.0;  // episode-local speed carried between plans
};

/// Styled generator as a planner: one generator step per call, interpolated
/// to the keypoint with the shared linear-then-Bezier policy.
class RouteGanPlanner : public Planner {
 public:
  RouteGanPlanner(const routegan::RouteGanModel& model, const scene::Scene& sc,
                  geom::Point2 x1_init, geom::Point2 goal, routegan::StyleCode q,
                  routegan::NoiseCode z);
  PlannerOutput plan(const PlannerInput& input) override;

 private:
  const routegan::RouteGanModel* model_;
  routegan::GeneratorState state_;
  routegan::StyleCode q_;
  routegan::NoiseCode z_;
  geom::Heading heading_;
  bool first_segment_ = true;
};

}  // namespace rg::planners

#endif  // RG_PLANNERS_HPP_
