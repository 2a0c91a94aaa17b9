#include <cmath>
#include <random>
#include <stdexcept>

#include <doctest.h>

#include "rg/geometry.hpp"

using namespace rg;
using geom::Point2;

namespace {

// Independent oracle: solve p0 + t*d0 = p1 + u*d1 as a 2x2 linear system by
// Cramer's rule, no shared code with the implementation.
bool line_intersection(Point2 p0, Point2 d0, Point2 p1, Point2 d1, Point2* out) {
  double a11 = d0.x, a12 = -d1.x;
  double a21 = d0.y, a22 = -d1.y;
  double b1 = p1.x - p0.x, b2 = p1.y - p0.y;
  double d = a11 * a22 - a12 * a21;
  if (std::abs(d) < 1e-12) return false;
  double t = (b1 * a22 - a12 * b2) / d;
  *out = {p0.x + t * d0.x, p0.y + t * d0.y};
  return true;
}

double point_line_distance(Point2 p, Point2 origin, Point2 dir) {
  double len = std::sqrt(dir.x * dir.x + dir.y * dir.y);
  return std::abs((p.x - origin.x) * dir.y - (p.y - origin.y) * dir.x) / len;
}

}  // namespace

TEST_CASE("extract_keypoints picks stride multiples") {
  geom::Trajectory traj;
  traj.dt = 0.1;
  for (int i = 0; i < 11; ++i) traj.positions.push_back({0.1 * i, 0.0});
  auto kw = geom::extract_keypoints(traj, 5);
  REQUIRE(kw.points.size() == 3);
  CHECK(kw.points[0].x == doctest::Approx(0.0));
  CHECK(kw.points[1].x == doctest::Approx(0.5));
  CHECK(kw.points[2].x == doctest::Approx(1.0));
  CHECK(kw.stride_s == 5);
}

TEST_CASE("extract_keypoints count is m+1 for 1+ms points") {
  const int s = 4, m = 7;
  geom::Trajectory traj;
  for (int i = 0; i <= m * s; ++i) traj.positions.push_back({0.01 * i, 0.02 * i});
  auto kw = geom::extract_keypoints(traj, s);
  CHECK(kw.points.size() == static_cast<size_t>(m + 1));
}

TEST_CASE("extract_keypoints on a constant trajectory") {
  geom::Trajectory traj;
  for (int i = 0; i < 16; ++i) traj.positions.push_back({0.3, -0.2});
  auto kw = geom::extract_keypoints(traj, 5);
  for (const auto& p : kw.points) {
    CHECK(p.x == 0.3);
    CHECK(p.y == -0.2);
  }
}

TEST_CASE("extract_keypoints rejects bad input") {
  geom::Trajectory traj;
  for (int i = 0; i < 4; ++i) traj.positions.push_back({0.0, 0.0});
  CHECK_THROWS_AS(geom::extract_keypoints(traj, 0), std::invalid_argument);
  CHECK_THROWS_AS(geom::extract_keypoints(traj, -2), std::invalid_argument);
  CHECK_THROWS_AS(geom::extract_keypoints(traj, 5), std::invalid_argument);
  CHECK_THROWS_AS(geom::extract_keypoints(traj, 4), std::invalid_argument);
}

TEST_CASE("linear_interpolate midpoint and spacing") {
  auto seg = geom::linear_interpolate({0, 0}, {1, 0}, 3);
  REQUIRE(seg.size() == 3);
  CHECK(seg[0].x == 0.0);
  CHECK(seg[1].x == doctest::Approx(0.5));
  CHECK(seg[2].x == 1.0);

  auto vert = geom::linear_interpolate({0, 0}, {0, 2}, 5);
  for (int i = 0; i + 1 < 5; ++i)
    CHECK(vert[i + 1].y - vert[i].y == doctest::Approx(0.5));

  auto deg = geom::linear_interpolate({0.2, 0.4}, {0.2, 0.4}, 4);
  for (const auto& p : deg) {
    CHECK(p.x == 0.2);
    CHECK(p.y == 0.4);
  }
  CHECK_THROWS_AS(geom::linear_interpolate({0, 0}, {1, 1}, 1), std::invalid_argument);
}

TEST_CASE("bezier_control_point collinear fallback takes the midpoint") {
  auto cp = geom::bezier_control_point({0, 0}, geom::Heading(0.0), {1, 0}, 0.25);
  CHECK(cp.parallel_fallback);
  CHECK(cp.c.x == doctest::Approx(0.5));
  CHECK(cp.c.y == doctest::Approx(0.0));
  CHECK(cp.d1.angle == doctest::Approx(0.0));
}

TEST_CASE("bezier_control_point matches the independent 2x2 solve") {
  // p0 at origin heading +x, p1 = (1,1): alpha = pi/4, beta = pi/16.
  auto cp = geom::bezier_control_point({0, 0}, geom::Heading(0.0), {1, 1}, 0.25);
  REQUIRE(!cp.parallel_fallback);
  CHECK(cp.d1.angle == doctest::Approx(M_PI / 4 + M_PI / 16).epsilon(1e-12));

  Point2 expect;
  REQUIRE(line_intersection({0, 0}, {1, 0}, {1, 1},
                            {std::cos(cp.d1.angle), std::sin(cp.d1.angle)}, &expect));
  CHECK(std::abs(cp.c.x - expect.x) < 1e-9);
  CHECK(std::abs(cp.c.y - expect.y) < 1e-9);
}

TEST_CASE("bezier_control_point over random inputs: on both lines, equivariant") {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::uniform_real_distribution<double> ua(-M_PI, M_PI);
  int checked = 0;
  for (int trial = 0; trial < 2000; ++trial) {
    Point2 p0{u(rng), u(rng)};
    Point2 p1{u(rng), u(rng)};
    if (geom::distance(p0, p1) < 1e-3) continue;
    geom::Heading d0(ua(rng));
    auto cp = geom::bezier_control_point(p0, d0, p1, 0.25);
    if (cp.parallel_fallback) continue;
    ++checked;

    CHECK(point_line_distance(cp.c, p0, d0.dir()) < 1e-9);
    CHECK(point_line_distance(cp.c, p1, cp.d1.dir()) < 1e-9);

    // Rotation equivariance.
    double theta = ua(rng);
    double ct = std::cos(theta), st = std::sin(theta);
    auto rot = [&](Point2 p) { return Point2{ct * p.x - st * p.y, st * p.x + ct * p.y}; };
    auto cp2 = geom::bezier_control_point(rot(p0), geom::Heading(d0.angle + theta), rot(p1), 0.25);
    Point2 expect = rot(cp.c);
    CHECK(std::abs(cp2.c.x - expect.x) < 1e-9);
    CHECK(std::abs(cp2.c.y - expect.y) < 1e-9);
  }
  CHECK(checked > 1000);
}

TEST_CASE("bezier_control_point mirrors across the x axis") {
  auto up = geom::bezier_control_point({0.1, 0.2}, geom::Heading(0.3), {0.8, 0.6}, 0.25);
  auto down = geom::bezier_control_point({0.1, -0.2}, geom::Heading(-0.3), {0.8, -0.6}, 0.25);
  CHECK(up.c.x == doctest::Approx(down.c.x).epsilon(1e-12));
  CHECK(up.c.y == doctest::Approx(-down.c.y).epsilon(1e-12));
  CHECK_THROWS_AS(geom::bezier_control_point({0.5, 0.5}, geom::Heading(0), {0.5, 0.5}, 0.25),
                  std::invalid_argument);
}

TEST_CASE("quadratic_bezier degenerate and direct evaluation") {
  // Control point at the midpoint reduces to linear interpolation.
  Point2 p0{-0.4, 0.1}, p1{0.6, -0.3};
  Point2 mid{0.5 * (p0.x + p1.x), 0.5 * (p0.y + p1.y)};
  auto curve = geom::quadratic_bezier(p0, mid, p1, 7);
  auto line = geom::linear_interpolate(p0, p1, 7);
  for (size_t i = 0; i < curve.size(); ++i) {
    CHECK(curve[i].x == doctest::Approx(line[i].x).epsilon(1e-12));
    CHECK(curve[i].y == doctest::Approx(line[i].y).epsilon(1e-12));
  }

  // gamma(0.5) for p0=(0,0), c=(1,0), p1=(1,1).
  auto g = geom::quadratic_bezier({0, 0}, {1, 0}, {1, 1}, 3);
  CHECK(g[1].x == doctest::Approx(0.75));
  CHECK(g[1].y == doctest::Approx(0.25));
}

TEST_CASE("quadratic_bezier endpoints and initial tangent") {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int trial = 0; trial < 200; ++trial) {
    Point2 p0{u(rng), u(rng)}, c{u(rng), u(rng)}, p1{u(rng), u(rng)};
    auto curve = geom::quadratic_bezier(p0, c, p1, 9);
    CHECK(curve.front().x == p0.x);
    CHECK(curve.front().y == p0.y);
    CHECK(curve.back().x == p1.x);
    CHECK(curve.back().y == p1.y);
    // Initial tangent parallel to c - p0: for the quadratic curve the first
    // sample chord is 2h(c - p0) + h^2(p0 - 2c + p1) exactly.
    const double h = 1.0 / 8.0;
    Point2 a2 = p0 - 2.0 * c + p1;
    Point2 t0 = curve[1] - curve[0] - (h * h) * a2;
    Point2 cd = c - p0;
    CHECK(std::abs(geom::cross(t0, cd)) < 1e-9);
  }
}

TEST_CASE("interpolate_trajectory with two keypoints is linear") {
  geom::KeyWaypoints kw;
  kw.stride_s = 5;
  kw.points = {{0, 0}, {0.5, 0.5}};
  auto traj = geom::interpolate_trajectory(kw, geom::Heading(0), 5);
  REQUIRE(traj.positions.size() == 6);
  auto line = geom::linear_interpolate({0, 0}, {0.5, 0.5}, 6);
  for (size_t i = 0; i < 6; ++i) {
    CHECK(traj.positions[i].x == doctest::Approx(line[i].x).epsilon(1e-12));
    CHECK(traj.positions[i].y == doctest::Approx(line[i].y).epsilon(1e-12));
  }
}

TEST_CASE("interpolate_trajectory through collinear keypoints stays straight") {
  geom::KeyWaypoints kw;
  kw.stride_s = 4;
  kw.points = {{-0.8, 0.1}, {-0.4, 0.1}, {0.0, 0.1}, {0.4, 0.1}};
  auto traj = geom::interpolate_trajectory(kw, geom::Heading(0), 4);
  for (const auto& p : traj.positions) CHECK(p.y == doctest::Approx(0.1).epsilon(1e-12));
  for (size_t i = 1; i < traj.positions.size(); ++i)
    CHECK(traj.positions[i].x > traj.positions[i - 1].x);
}

TEST_CASE("interpolate_trajectory passes through every keypoint") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-0.8, 0.8);
  for (int trial = 0; trial < 100; ++trial) {
    geom::KeyWaypoints kw;
    kw.stride_s = 5;
    for (int k = 0; k < 4; ++k) kw.points.push_back({u(rng), u(rng)});
    auto traj = geom::interpolate_trajectory(kw, geom::Heading(0), 5);
    REQUIRE(traj.positions.size() == 16);
    for (int k = 0; k < 4; ++k) {
      CHECK(std::abs(traj.positions[5 * k].x - kw.points[k].x) < 1e-12);
      CHECK(std::abs(traj.positions[5 * k].y - kw.points[k].y) < 1e-12);
    }
    // Keypoint recovery through extraction.
    auto rec = geom::extract_keypoints(traj, 5);
    REQUIRE(rec.points.size() == 4);
    for (int k = 0; k < 4; ++k) {
      CHECK(rec.points[k].x == traj.positions[5 * k].x);
      CHECK(rec.points[k].y == traj.positions[5 * k].y);
    }
  }
}

TEST_CASE("interpolate_trajectory chains tangents continuously") {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> u(-0.8, 0.8);
  for (int trial = 0; trial < 50; ++trial) {
    geom::KeyWaypoints kw;
    kw.stride_s = 5;
    for (int k = 0; k < 5; ++k) kw.points.push_back({u(rng), u(rng)});

    // Walk the same construction as interpolate_trajectory: at each interior
    // keypoint the incoming curve's end tangent line (p1 - c_k) must be
    // collinear with the outgoing curve's start tangent line (c_{k+1} - p1).
    geom::Heading heading(0);
    {
      Point2 chord = kw.points[1] - kw.points[0];
      heading = geom::Heading(std::atan2(chord.y, chord.x));
    }
    geom::ControlPoint prev;
    bool have_prev = false;
    for (size_t i = 1; i + 1 < kw.points.size(); ++i) {
      auto cp = geom::bezier_control_point(kw.points[i], heading, kw.points[i + 1], 0.25);
      if (have_prev && !prev.parallel_fallback && !cp.parallel_fallback) {
        Point2 in_tangent = kw.points[i] - prev.c;
        Point2 out_tangent = cp.c - kw.points[i];
        double denom = geom::norm(in_tangent) * geom::norm(out_tangent);
        if (denom > 1e-12)
          CHECK(std::abs(geom::cross(in_tangent, out_tangent)) / denom < 1e-9);
      }
      prev = cp;
      have_prev = true;
      heading = cp.d1;
    }
  }
}

TEST_CASE("interpolate_trajectory holds position on repeated keypoints") {
  geom::KeyWaypoints kw;
  kw.stride_s = 3;
  kw.points = {{0, 0}, {0.3, 0.0}, {0.3, 0.0}, {0.6, 0.2}};
  auto traj = geom::interpolate_trajectory(kw, geom::Heading(0), 3);
  REQUIRE(traj.positions.size() == 10);
  CHECK(traj.positions[3].x == doctest::Approx(0.3));
  CHECK(traj.positions[4].x == doctest::Approx(0.3));
  CHECK(traj.positions[5].x == doctest::Approx(0.3));
  CHECK(traj.positions[6].x == doctest::Approx(0.3));
  CHECK(traj.positions[9].x == doctest::Approx(0.6));
}

TEST_CASE("heatmap peak, falloff and bounds") {
  geom::Frame frame{64, 64};
  // Cell (20, 31) center.
  Point2 p = frame.cell_center(20, 31);
  auto grid = geom::heatmap(p, 0.05, frame);
  CHECK(grid.at(20, 31) == doctest::Approx(1.0));

  // A point at distance sigma: value exp(-1/2).
  double sigma = 2.0 / 64.0 * 3.0;  // three cells
  auto g2 = geom::heatmap(p, sigma, frame);
  CHECK(g2.at(20, 34) == doctest::Approx(std::exp(-0.5)).epsilon(1e-9));

  for (double v : grid.values) {
    CHECK(v > 0.0);
    CHECK(v <= 1.0);
  }
  // Monotone decrease along a row away from the peak.
  for (int c = 31; c + 1 < 64; ++c) CHECK(grid.at(20, c + 1) < grid.at(20, c));
  CHECK_THROWS_AS(geom::heatmap(p, 0.0, frame), std::invalid_argument);
  CHECK_THROWS_AS(geom::heatmap(p, -1.0, frame), std::invalid_argument);
}

TEST_CASE("heatmap mass approximates the Gaussian integral") {
  geom::Frame frame{128, 128};
  Point2 p{0.013, -0.021};
  const double sigma = 0.05;
  auto grid = geom::heatmap(p, sigma, frame);
  double sum = 0.0;
  for (double v : grid.values) sum += v;
  const double cell_area = (2.0 / 128) * (2.0 / 128);
  // Away from borders the discrete mass matches 2*pi*sigma^2 / cell area.
  CHECK(sum == doctest::Approx(2.0 * M_PI * sigma * sigma / cell_area).epsilon(1e-3));
}

TEST_CASE("frame round-trip is identity within half a pixel") {
  geom::Frame frame{64, 48};
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int i = 0; i < 1000; ++i) {
    double x = u(rng), y = u(rng);
    Point2 c = frame.cell_center(frame.row_of(y), frame.col_of(x));
    CHECK(std::abs(c.x - x) <= 1.0 / 64 + 1e-12);
    CHECK(std::abs(c.y - y) <= 1.0 / 48 + 1e-12);
  }
}

TEST_CASE("wrap_angle stays in (-pi, pi]") {
  CHECK(geom::wrap_angle(M_PI) == doctest::Approx(M_PI));
  CHECK(geom::wrap_angle(-M_PI) == doctest::Approx(M_PI));
  CHECK(geom::wrap_angle(3 * M_PI) == doctest::Approx(M_PI));
  CHECK(geom::wrap_angle(0.0) == 0.0);
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(-50.0, 50.0);
  for (int i = 0; i < 1000; ++i) {
    double w = geom::wrap_angle(u(rng));
    CHECK(w > -M_PI);
    CHECK(w <= M_PI);
  }
}
