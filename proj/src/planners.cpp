#include "rg/planners.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <queue>
#include <stdexcept>
#include <tuple>

namespace rg::planners {

using geom::Point2;

ArcPath ArcPath::from(const geom::Trajectory& traj) {
  if (traj.positions.empty()) throw std::invalid_argument("ArcPath: empty trajectory");
  ArcPath path;
  path.pts = traj.positions;
  path.cum.resize(path.pts.size(), 0.0);
  for (std::size_t i = 1; i < path.pts.size(); ++i)
    path.cum[i] = path.cum[i - 1] + geom::distance(path.pts[i], path.pts[i - 1]);
  return path;
}

Point2 ArcPath::at(double s) const {
  if (s <= 0.0) return pts.front();
  if (s >= length()) return pts.back();
  auto it = std::upper_bound(cum.begin(), cum.end(), s);
  std::size_t i = static_cast<std::size_t>(it - cum.begin());  // cum[i-1] <= s < cum[i]
  double seg = cum[i] - cum[i - 1];
  double t = seg > 0.0 ? (s - cum[i - 1]) / seg : 0.0;
  return pts[i - 1] + t * (pts[i] - pts[i - 1]);
}

double ArcPath::project(Point2 p) const {
  double best_d = std::numeric_limits<double>::infinity();
  double best_s = 0.0;
  for (std::size_t i = 0; i + 1 < pts.size(); ++i) {
    Point2 d = pts[i + 1] - pts[i];
    double len2 = dot(d, d);
    double t = len2 > 0.0 ? std::clamp(dot(p - pts[i], d) / len2, 0.0, 1.0) : 0.0;
    Point2 proj = pts[i] + t * d;
    double dist = geom::distance(p, proj);
    double s = cum[i] + t * (cum[i + 1] - cum[i]);
    if (dist < best_d - 1e-12 || (std::abs(dist - best_d) <= 1e-12 && s < best_s)) {
      best_d = dist;
      best_s = s;
    }
  }
  if (pts.size() == 1) return 0.0;
  return best_s;
}

PlannerOutput DataPlanner::plan(const PlannerInput& input) {
  if (!input.reference) throw std::invalid_argument("DataPlanner: reference required");
  const auto& ref = input.reference->positions;
  if (ref.empty()) throw std::invalid_argument("DataPlanner: empty reference");
  PlannerOutput out;
  out.positions.reserve(s_);
  for (int k = 0; k < s_; ++k) {
    std::size_t idx = std::min<std::size_t>(input.t_now + k + 1, ref.size() - 1);
    out.positions.push_back(ref[idx]);
  }
  return out;
}

PlannerOutput IdmPlanner::plan(const PlannerInput& input) {
  if (!input.reference) throw std::invalid_argument("IdmPlanner: reference required");
  ArcPath path = ArcPath::from(*input.reference);
  const double dt = input.dt;

  if (!speed_init_) {
    // Start from the reference's own initial speed.
    speed_ = path.pts.size() > 1 ? geom::distance(path.pts[1], path.pts[0]) / dt : 0.0;
    speed_init_ = true;
  }

  const double ell0 = path.project(input.own_position);

  bool have_leader = false;
  double lead_pos = 0.0, lead_speed = 0.0;
  if (!input.opponent_history.empty()) {
    Point2 opp = input.opponent_history.back();
    if (geom::distance(opp, input.own_position) < params_.emergency_gap) {
      // Contact: hold position with zero speed.
      speed_ = 0.0;
      PlannerOutput out;
      out.positions.assign(s_, input.own_position);
      out.collision_risk = true;
      return out;
    }
    double opp_s = path.project(opp);
    if (opp_s > ell0 + 1e-6) {
      have_leader = true;
      lead_pos = opp_s;
      lead_speed = 0.0;
      if (input.opponent_history.size() >= 2) {
        const Point2 prev = input.opponent_history[input.opponent_history.size() - 2];
        lead_speed = std::max(0.0, (opp_s - path.project(prev)) / dt);
      }
    }
  }

  const IdmParams& p = params_;
  auto accel = [&](double t, const std::array<double, 2>& y) -> std::array<double, 2> {
    double ell = y[0], v = y[1];
    double dv = p.a * (1.0 - std::pow(v / p.v0, p.delta));
    if (have_leader) {
      double gap = std::max(lead_pos + lead_speed * t - ell, 1e-4);
      double closing = v - lead_speed;
      double s_star = p.s0 + v * p.T + v * closing / (2.0 * std::sqrt(p.a * p.b));
      dv -= p.a * (s_star / gap) * (s_star / gap);
    }
    return {v, dv};
  };

  PlannerOutput out;
  out.positions.reserve(s_);
  std::array<double, 2> state{ell0, speed_};
  for (int k = 0; k < s_; ++k) {
    state = rk4_step<2>(accel, k * dt, state, dt);
    state[1] = std::max(state[1], 0.0);
    out.positions.push_back(path.at(state[0]));
  }
  speed_ = state[1];
  return out;
}

namespace {

struct SearchNode {
  double ell;
  double v;
  int tau;
  double g;
  double jerk;  // cumulative |accel|, used only for deterministic ties
  int parent;
  bool collided;
};

std::int64_t quantize(double x) { return std::llround(x * 1e9); }

}  // namespace

PlannerOutput AstarPlanner::plan(const PlannerInput& input) {
  if (!input.reference) throw std::invalid_argument("AstarPlanner: reference required");
  const AstarParams& p = params_;
  if (p.accel_levels < 1 || p.accel_levels % 2 == 0)
    throw std::invalid_argument("AstarPlanner: accel_levels must be odd and positive");
  ArcPath path = ArcPath::from(*input.reference);
  const double dt = input.dt;
  const int H = p.horizon_steps;

  if (!speed_init_) {
    speed_ = path.pts.size() > 1 ? geom::distance(path.pts[1], path.pts[0]) / dt : 0.0;
    speed_init_ = true;
  }

  // Opponent predicted at constant velocity from its last two observations.
  Point2 opp_now{1e9, 1e9};
  Point2 opp_vel{0.0, 0.0};
  if (!input.opponent_history.empty()) {
    opp_now = input.opponent_history.back();
    if (input.opponent_history.size() >= 2) {
      const Point2 prev = input.opponent_history[input.opponent_history.size() - 2];
      opp_vel = (1.0 / dt) * (opp_now - prev);
    }
  }
  auto opp_at = [&](int tau) { return opp_now + (tau * dt) * opp_vel; };

  // Acceleration grid ordered by magnitude, positive first.
  std::vector<double> accels;
  const int half = p.accel_levels / 2;
  accels.push_back(0.0);
  for (int i = 1; i <= half; ++i) {
    double a = p.a_max * i / half;
    accels.push_back(a);
    accels.push_back(-a);
  }

  auto heuristic = [&](int tau) { return -p.w_progress * p.v_max * dt * (H - tau); };

  std::vector<SearchNode> arena;
  arena.push_back({path.project(input.own_position), speed_, 0, 0.0, 0.0, -1, false});

  struct QueueEntry {
    double f;
    double jerk;
    std::uint64_t seq;
    int idx;
    bool operator>(const QueueEntry& o) const {
      if (f != o.f) return f > o.f;
      if (jerk != o.jerk) return jerk > o.jerk;
      return seq > o.seq;
    }
  };
  std::priority_queue<QueueEntry, std::vector<QueueEntry>, std::greater<QueueEntry>> open;
  std::map<std::tuple<std::int64_t, std::int64_t, int>, double> best_g;

  std::uint64_t seq = 0;
  open.push({heuristic(0), 0.0, seq++, 0});
  best_g[{quantize(arena[0].ell), quantize(arena[0].v), 0}] = 0.0;

  int goal = -1;
  std::size_t expanded = 0;
  while (!open.empty() && expanded < p.max_expansions) {
    QueueEntry top = open.top();
    open.pop();
    const SearchNode node = arena[top.idx];
    auto key = std::make_tuple(quantize(node.ell), quantize(node.v), node.tau);
    if (best_g.at(key) < node.g - 1e-15) continue;  // stale entry
    if (node.tau == H) {
      goal = top.idx;
      break;
    }
    ++expanded;
    for (double a : accels) {
      double v2 = std::clamp(node.v + a * dt, 0.0, p.v_max);
      double progress = 0.5 * (node.v + v2) * dt;
      double ell2 = node.ell + progress;
      int tau2 = node.tau + 1;
      bool hit = geom::distance(path.at(ell2), opp_at(tau2)) < p.clearance;
      double cost = -p.w_progress * progress + (hit ? p.w_collision : 0.0) +
                    p.w_accel * std::abs(a) * dt;
      double g2 = node.g + cost;
      auto key2 = std::make_tuple(quantize(ell2), quantize(v2), tau2);
      auto it = best_g.find(key2);
      if (it != best_g.end() && it->second <= g2 + 1e-15) continue;
      best_g[key2] = g2;
      arena.push_back({ell2, v2, tau2, g2, node.jerk + std::abs(a), top.idx,
                       node.collided || hit});
      open.push({g2 + heuristic(tau2), arena.back().jerk, seq++,
                 static_cast<int>(arena.size()) - 1});
    }
  }

  PlannerOutput out;
  if (goal < 0) {
    // Search exhausted without reaching the horizon; hold position.
    out.positions.assign(s_, input.own_position);
    out.collision_risk = true;
    return out;
  }

  std::vector<const SearchNode*> chain;
  for (int idx = goal; idx >= 0; idx = arena[idx].parent) chain.push_back(&arena[idx]);
  std::reverse(chain.begin(), chain.end());

  out.collision_risk = arena[goal].collided;
  for (int k = 1; k <= s_ && k < static_cast<int>(chain.size()); ++k)
    out.positions.push_back(path.at(chain[k]->ell));
  while (static_cast<int>(out.positions.size()) < s_)
    out.positions.push_back(out.positions.empty() ? input.own_position : out.positions.back());
  if (s_ < static_cast<int>(chain.size())) speed_ = chain[s_]->v;
  return out;
}

RouteGanPlanner::RouteGanPlanner(const routegan::RouteGanModel& model, const scene::Scene& sc,
                                 Point2 x1_init, Point2 goal, routegan::StyleCode q,
                                 routegan::NoiseCode z)
    : model_(&model), q_(std::move(q)), z_(std::move(z)) {
  auto [ctx, state] = routegan::encode_context(model, sc, goal, x1_init, q_, z_);
  state_ = state;
}

PlannerOutput RouteGanPlanner::plan(const PlannerInput& input) {
  if (input.opponent_history.empty())
    throw std::invalid_argument("RouteGanPlanner: opponent observation required");
  const int s = model_->cfg.stride;

  auto [next, kp] = routegan::generator_step(*model_, state_, q_, z_,
                                             input.opponent_history.back());
  state_ = next;

  const Point2 from = input.own_position;
  PlannerOutput out;
  if (kp.x == from.x && kp.y == from.y) {
    out.positions.assign(s, from);
    return out;
  }
  std::vector<Point2> seg;
  if (first_segment_) {
    seg = geom::linear_interpolate(from, kp, s + 1);
    Point2 chord = kp - from;
    heading_ = geom::Heading(std::atan2(chord.y, chord.x));
    first_segment_ = false;
  } else {
    geom::ControlPoint cp = geom::bezier_control_point(from, heading_, kp, model_->cfg.bezier_k);
    seg = geom::quadratic_bezier(from, cp.c, kp, s + 1);
    heading_ = cp.d1;
  }
  out.positions.assign(seg.begin() + 1, seg.end());
  return out;
}

}  // namespace rg::planners
