#include <cmath>
#include <filesystem>
#include <random>
#include <stdexcept>

#include <doctest.h>

#include "rg/config.hpp"
#include "rg/data.hpp"

using namespace rg;
using geom::Point2;

namespace {

geom::Trajectory line_traj(Point2 start, Point2 step, int n, double dt = 0.1) {
  geom::Trajectory t;
  t.dt = dt;
  for (int i = 0; i < n; ++i) t.positions.push_back(start + static_cast<double>(i) * step);
  return t;
}

data::InteractionEpisode make_ep(geom::Trajectory x1, geom::Trajectory x2) {
  data::InteractionEpisode ep;
  ep.goal = x2.positions.back();
  ep.x1 = std::move(x1);
  ep.x2 = std::move(x2);
  ep.scene_id = "straight_road";
  return ep;
}

}  // namespace

TEST_CASE("label_episode") {
  auto a = line_traj({0, 0}, {0.02, 0}, 31);
  CHECK(data::label_episode(make_ep(a, a), 0.03, 0.02) == data::Label::CRITICAL);

  // Parallel lanes separated by 10 * (2r).
  auto b = line_traj({0, 0.6}, {0.02, 0}, 31);
  CHECK(data::label_episode(make_ep(a, b), 0.03, 0.02) == data::Label::SAFE);

  // Exactly at the threshold: strict inequality means SAFE.
  auto c = line_traj({0, 0.08}, {0.02, 0}, 31);
  CHECK(data::label_episode(make_ep(a, c), 0.03, 0.02) == data::Label::SAFE);
  auto d = line_traj({0, 0.08 - 1e-9}, {0.02, 0}, 31);
  CHECK(data::label_episode(make_ep(a, d), 0.03, 0.02) == data::Label::CRITICAL);
}

TEST_CASE("temporal_realignment aligns a perpendicular crossing") {
  // Paths cross at the origin; x1 passes 20 steps earlier than x2.
  auto x1 = line_traj({-0.1, 0}, {0.02, 0}, 31);   // at origin at t = 5
  auto x2 = line_traj({0, -0.5}, {0, 0.02}, 31);   // at origin at t = 25
  auto ep = make_ep(x1, x2);
  REQUIRE(data::label_episode(ep, 0.03, 0.02) == data::Label::SAFE);

  std::mt19937_64 rng(1);
  auto out = data::temporal_realignment(ep, rng);
  CHECK(out.label == data::Label::CRITICAL);
  CHECK(data::min_pair_distance(out.x1, out.x2) < 0.08);
  // The path shape is unchanged: every shifted position appears on the
  // original polyline.
  for (const auto& p : out.x1.positions) {
    bool found = false;
    for (const auto& q : ep.x1.positions)
      if (geom::distance(p, q) < 1e-12) found = true;
    CHECK(found);
  }
}

TEST_CASE("temporal_realignment rejects non-crossing paths") {
  auto x1 = line_traj({0, 0}, {0.02, 0}, 31);
  auto x2 = line_traj({0, 0.5}, {0.02, 0}, 31);
  std::mt19937_64 rng(2);
  CHECK_THROWS_AS(data::temporal_realignment(make_ep(x1, x2), rng), std::invalid_argument);
}

TEST_CASE("temporal_realignment with already coincident timing is critical") {
  auto x1 = line_traj({-0.3, 0}, {0.02, 0}, 31);
  auto x2 = line_traj({0, -0.3}, {0, 0.02}, 31);  // both reach origin at t = 15
  std::mt19937_64 rng(3);
  auto out = data::temporal_realignment(make_ep(x1, x2), rng);
  CHECK(out.label == data::Label::CRITICAL);
}

TEST_CASE("local_deformation reaches the opponent at full amplitude") {
  auto x1 = line_traj({-0.3, -0.06}, {0.02, 0}, 31);
  auto x2 = line_traj({-0.3, 0.06}, {0.02, 0}, 31);
  auto ep = make_ep(x1, x2);
  std::mt19937_64 rng(4);
  data::DeformParams params;
  params.target_separation = 0.0;  // amplitude d: bend all the way
  auto out = data::local_deformation(ep, rng, {}, params);
  CHECK(out.label == data::Label::CRITICAL);
  CHECK(data::min_pair_distance(out.x1, out.x2) < 1e-6);
  // Endpoints preserved exactly.
  CHECK(out.x1.positions.front().x == ep.x1.positions.front().x);
  CHECK(out.x1.positions.front().y == ep.x1.positions.front().y);
  CHECK(out.x1.positions.back().x == ep.x1.positions.back().x);
  CHECK(out.x1.positions.back().y == ep.x1.positions.back().y);
}

TEST_CASE("local_deformation amplitude zero is the identity") {
  auto x1 = line_traj({-0.3, -0.06}, {0.02, 0}, 31);
  auto x2 = line_traj({-0.3, 0.06}, {0.02, 0}, 31);
  auto ep = make_ep(x1, x2);
  std::mt19937_64 rng(5);
  data::DeformParams params;
  params.target_separation = 0.12;  // current distance: nothing to do
  auto out = data::local_deformation(ep, rng, {}, params);
  CHECK(out.label == data::Label::SAFE);
  for (std::size_t i = 0; i < out.x1.positions.size(); ++i) {
    CHECK(out.x1.positions[i].x == ep.x1.positions[i].x);
    CHECK(out.x1.positions[i].y == ep.x1.positions[i].y);
  }
}

TEST_CASE("local_deformation respects max_deform") {
  auto x1 = line_traj({-0.3, -0.4}, {0.02, 0}, 31);
  auto x2 = line_traj({-0.3, 0.4}, {0.02, 0}, 31);
  std::mt19937_64 rng(6);
  data::DeformParams params;
  params.target_separation = 0.0;
  params.max_deform = 0.1;  // needs 0.8
  CHECK_THROWS_AS(data::local_deformation(make_ep(x1, x2), rng, {}, params), std::runtime_error);
}

TEST_CASE("gamma_augment zero-means and preserves distances") {
  data::KeypointPair pair;
  pair.k1.stride_s = pair.k2.stride_s = 5;
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int i = 0; i < 7; ++i) {
    pair.k1.points.push_back({u(rng), u(rng)});
    pair.k2.points.push_back({u(rng), u(rng)});
  }

  auto out = data::gamma_augment(pair, 1.234);
  Point2 mean{0, 0};
  for (const auto& p : out.k1.points) mean = mean + p;
  for (const auto& p : out.k2.points) mean = mean + p;
  mean = (1.0 / 14.0) * mean;
  CHECK(std::abs(mean.x) < 1e-12);
  CHECK(std::abs(mean.y) < 1e-12);

  // Pairwise distances preserved under the isometry.
  for (int i = 0; i < 7; ++i) {
    for (int j = 0; j < 7; ++j) {
      CHECK(geom::distance(out.k1.points[i], out.k2.points[j]) ==
            doctest::Approx(geom::distance(pair.k1.points[i], pair.k2.points[j]))
                .epsilon(1e-12));
    }
  }

  // theta = 0 on an already zero-mean pair is the identity.
  auto centered = data::gamma_augment(pair, 0.0);
  auto again = data::gamma_augment(centered, 0.0);
  for (int i = 0; i < 7; ++i) {
    CHECK(again.k1.points[i].x == doctest::Approx(centered.k1.points[i].x).epsilon(1e-12));
    CHECK(again.k1.points[i].y == doctest::Approx(centered.k1.points[i].y).epsilon(1e-12));
  }

  // Composition of rotations on a zero-mean pair.
  auto two_step = data::gamma_augment(data::gamma_augment(centered, 0.4), 0.5);
  auto one_step = data::gamma_augment(centered, 0.9);
  for (int i = 0; i < 7; ++i) {
    CHECK(two_step.k2.points[i].x == doctest::Approx(one_step.k2.points[i].x).epsilon(1e-10));
    CHECK(two_step.k2.points[i].y == doctest::Approx(one_step.k2.points[i].y).epsilon(1e-10));
  }
}

TEST_CASE("dataset_build produces consistent labeled episodes") {
  std::vector<scene::Scene> scenes = {
      scene::make_scene(scene::SceneKind::StraightRoad, 64, 64),
      scene::make_scene(scene::SceneKind::Intersection, 64, 64),
      scene::make_scene(scene::SceneKind::Roundabout, 64, 64)};
  std::mt19937_64 rng(11);
  auto ds = data::dataset_build(scenes, 30, 30, rng);

  CHECK(ds.episodes.size() == 60u);
  CHECK(ds.count(data::Label::SAFE) == 30);
  CHECK(ds.count(data::Label::CRITICAL) == 30);

  for (const auto& ep : ds.episodes) {
    REQUIRE(ep.x1.positions.size() == ep.x2.positions.size());
    CHECK(ep.x1.positions.size() == 31u);
    // Declared label matches the labeling rule.
    CHECK(data::label_episode(ep, ds.config.collision_radius, ds.config.critical_margin) ==
          ep.label);
    // Goal is V2's final position.
    CHECK(ep.goal.x == ep.x2.positions.back().x);
    CHECK(ep.goal.y == ep.x2.positions.back().y);
    // SAFE episodes stay on-road for both vehicles.
    if (ep.label == data::Label::SAFE) {
      const auto& sc = ds.scene_by_id(ep.scene_id);
      CHECK(scene::trajectory_on_road(sc, ep.x1));
      CHECK(scene::trajectory_on_road(sc, ep.x2));
    }
  }
}

TEST_CASE("dataset serialization round-trips bit-exactly") {
  namespace fs = std::filesystem;
  std::vector<scene::Scene> scenes = {
      scene::make_scene(scene::SceneKind::StraightRoad, 64, 64)};
  std::mt19937_64 rng(13);
  auto ds = data::dataset_build(scenes, 8, 8, rng);

  auto dir = fs::temp_directory_path() / "rg_data_test";
  fs::remove_all(dir);
  data::save_dataset(ds, dir.string());
  auto back = data::load_dataset(dir.string());

  REQUIRE(back.episodes.size() == ds.episodes.size());
  for (std::size_t i = 0; i < ds.episodes.size(); ++i) {
    const auto& a = ds.episodes[i];
    const auto& b = back.episodes[i];
    CHECK(a.label == b.label);
    CHECK(a.scene_id == b.scene_id);
    REQUIRE(a.x1.positions.size() == b.x1.positions.size());
    for (std::size_t t = 0; t < a.x1.positions.size(); ++t) {
      CHECK(a.x1.positions[t].x == b.x1.positions[t].x);  // bit-exact
      CHECK(a.x1.positions[t].y == b.x1.positions[t].y);
      CHECK(a.x2.positions[t].x == b.x2.positions[t].x);
      CHECK(a.x2.positions[t].y == b.x2.positions[t].y);
    }
    CHECK(a.goal.x == b.goal.x);
  }
  CHECK(back.config.stride == ds.config.stride);
  CHECK(back.config.collision_radius == ds.config.collision_radius);

  // A second save of the loaded dataset is byte-identical.
  auto dir2 = fs::temp_directory_path() / "rg_data_test2";
  fs::remove_all(dir2);
  data::save_dataset(back, dir2.string());
  CHECK(cfg::file_hash_hex((dir / "episodes.jsonl").string()) ==
        cfg::file_hash_hex((dir2 / "episodes.jsonl").string()));
  fs::remove_all(dir);
  fs::remove_all(dir2);
}

TEST_CASE("dataset_build accepts a zero count for one label") {
  std::vector<scene::Scene> scenes = {
      scene::make_scene(scene::SceneKind::StraightRoad, 64, 64)};
  std::mt19937_64 rng(17);
  auto ds = data::dataset_build(scenes, 5, 0, rng);
  CHECK(ds.count(data::Label::SAFE) == 5);
  CHECK(ds.count(data::Label::CRITICAL) == 0);
}
