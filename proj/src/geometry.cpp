#include "rg/geometry.hpp"

#include <algorithm>
#include <stdexcept>

namespace rg::geom {

namespace {
constexpr double kParallelEps = 1e-8;
}

double wrap_angle(double a) {
  double r = std::remainder(a, 2.0 * M_PI);
  if (r <= -M_PI) r += 2.0 * M_PI;
  return r;
}

int Frame::col_of(double x) const {
  int c = static_cast<int>(std::floor((x + 1.0) * 0.5 * width_px));
  return std::clamp(c, 0, width_px - 1);
}

int Frame::row_of(double y) const {
  int r = static_cast<int>(std::floor((y + 1.0) * 0.5 * height_px));
  return std::clamp(r, 0, height_px - 1);
}

Point2 Frame::cell_center(int row, int col) const {
  return {-1.0 + 2.0 * (col + 0.5) / width_px, -1.0 + 2.0 * (row + 0.5) / height_px};
}

KeyWaypoints extract_keypoints(const Trajectory& traj, int stride) {
  if (stride <= 0) throw std::invalid_argument("extract_keypoints: stride must be positive");
  const int len = static_cast<int>(traj.positions.size());
  if (len <= stride) throw std::invalid_argument("extract_keypoints: trajectory shorter than one stride");
  KeyWaypoints kw;
  kw.stride_s = stride;
  for (int i = 0; i < len; i += stride) kw.points.push_back(traj.positions[i]);
  return kw;
}

std::vector<Point2> linear_interpolate(Point2 p0, Point2 p1, int n) {
  if (n < 2) throw std::invalid_argument("linear_interpolate: need at least 2 samples");
  std::vector<Point2> out;
  out.reserve(n);
  for (int i = 0; i < n; ++i) {
    double t = static_cast<double>(i) / (n - 1);
    out.push_back(p0 + t * (p1 - p0));
  }
  return out;
}

ControlPoint bezier_control_point(Point2 p0, Heading d0, Point2 p1, double k) {
  Point2 chord = p1 - p0;
  if (chord.x == 0.0 && chord.y == 0.0)
    throw std::invalid_argument("bezier_control_point: coincident endpoints");

  const double phi = std::atan2(chord.y, chord.x);
  const double alpha = wrap_angle(phi - d0.angle);  // signed, ccw-positive
  const double beta = k * alpha;
  Heading d1(phi + beta);

  Point2 v0 = d0.dir();
  Point2 v1 = d1.dir();
  const double det = v0.x * v1.y - v0.y * v1.x;

  ControlPoint cp;
  cp.d1 = d1;
  if (std::abs(det) < kParallelEps) {
    cp.c = p0 + 0.5 * chord;  // degenerate straight segment
    cp.parallel_fallback = true;
  } else {
    const double t = (chord.x * v1.y - chord.y * v1.x) / det;
    cp.c = p0 + t * v0;
    cp.parallel_fallback = false;
  }
  return cp;
}

std::vector<Point2> quadratic_bezier(Point2 p0, Point2 c, Point2 p1, int n) {
  if (n < 2) throw std::invalid_argument("quadratic_bezier: need at least 2 samples");
  std::vector<Point2> out;
  out.reserve(n);
  for (int i = 0; i < n; ++i) {
    double t = static_cast<double>(i) / (n - 1);
    double u = 1.0 - t;
    out.push_back((u * u) * p0 + (2.0 * t * u) * c + (t * t) * p1);
  }
  return out;
}

Trajectory interpolate_trajectory(const KeyWaypoints& kw, Heading initial_heading,
                                  int samples_per_segment, double dt, double bezier_k) {
  if (kw.points.size() < 2)
    throw std::invalid_argument("interpolate_trajectory: need at least 2 keypoints");
  if (samples_per_segment < 1)
    throw std::invalid_argument("interpolate_trajectory: samples_per_segment must be positive");

  const int n = samples_per_segment;
  Trajectory traj;
  traj.dt = dt;
  traj.positions.push_back(kw.points[0]);

  // First segment is linear; its outgoing heading is the chord direction.
  Heading heading = initial_heading;
  {
    Point2 p0 = kw.points[0], p1 = kw.points[1];
    auto seg = linear_interpolate(p0, p1, n + 1);
    traj.positions.insert(traj.positions.end(), seg.begin() + 1, seg.end());
    Point2 chord = p1 - p0;
    if (chord.x != 0.0 || chord.y != 0.0) heading = Heading(std::atan2(chord.y, chord.x));
  }

  for (size_t i = 1; i + 1 < kw.points.size(); ++i) {
    Point2 p0 = kw.points[i], p1 = kw.points[i + 1];
    if (p0.x == p1.x && p0.y == p1.y) {
      // Stationary segment: hold position, keep the incoming heading.
      traj.positions.insert(traj.positions.end(), n, p0);
      continue;
    }
    ControlPoint cp = bezier_control_point(p0, heading, p1, bezier_k);
    auto seg = quadratic_bezier(p0, cp.c, p1, n + 1);
    traj.positions.insert(traj.positions.end(), seg.begin() + 1, seg.end());
    heading = cp.d1;
  }
  return traj;
}

HeatmapGrid heatmap(Point2 p, double sigma, const Frame& frame) {
  if (sigma <= 0.0) throw std::invalid_argument("heatmap: sigma must be positive");
  HeatmapGrid grid;
  grid.width = frame.width_px;
  grid.height = frame.height_px;
  grid.values.resize(static_cast<size_t>(grid.width) * grid.height);
  const double inv = 1.0 / (2.0 * sigma * sigma);
  for (int r = 0; r < grid.height; ++r) {
    for (int c = 0; c < grid.width; ++c) {
      Point2 cell = frame.cell_center(r, c);
      double dx = cell.x - p.x, dy = cell.y - p.y;
      grid.values[r * grid.width + c] = std::exp(-(dx * dx + dy * dy) * inv);
    }
  }
  return grid;
}

}  // namespace rg::geom
