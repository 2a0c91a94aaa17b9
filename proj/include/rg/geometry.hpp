#ifndef RG_GEOMETRY_HPP_
#define RG_GEOMETRY_HPP_

#include <cmath>
#include <vector>

namespace rg::geom {

/// 2-D point in the scene-normalized frame. (-1,-1) is the up-left corner
/// of the bird-eye grid, (1,1) the bottom-right; y grows downward.
struct Point2 {
  double x = 0.0;
  double y = 0.0;
};

inline Point2 operator+(Point2 a, Point2 b) { return {a.x + b.x, a.y + b.y}; }
inline Point2 operator-(Point2 a, Point2 b) { return {a.x - b.x, a.y - b.y}; }
inline Point2 operator*(double s, Point2 p) { return {s * p.x, s * p.y}; }
inline double dot(Point2 a, Point2 b) { return a.x * b.x + a.y * b.y; }
inline double cross(Point2 a, Point2 b) { return a.x * b.y - a.y * b.x; }
inline double norm(Point2 p) { return std::sqrt(p.x * p.x + p.y * p.y); }
inline double distance(Point2 a, Point2 b) { return norm(a - b); }

/// Wrap an angle to the principal range (-pi, pi].
double wrap_angle(double a);

/// Heading angle in radians, normalized to (-pi, pi]. Zero points along +x,
/// positive angles rotate counterclockwise in (x, y) coordinates.
struct Heading {
  double angle = 0.0;
  explicit Heading(double a = 0.0) : angle(wrap_angle(a)) {}
  Point2 dir() const { return {std::cos(angle), std::sin(angle)}; }
};

/// Positions sampled once per simulation timestep dt.
struct Trajectory {
  std::vector<Point2> positions;
  double dt = 0.1;
};

/// Positions at timesteps 0, s, 2s, ..., ms.
struct KeyWaypoints {
  std::vector<Point2> points;
  int stride_s = 1;
};

/// Affine map between the normalized [-1,1]^2 frame and a WxH pixel grid.
/// Row 0 / col 0 is the up-left corner.
struct Frame {
  int width_px = 0;
  int height_px = 0;

  int col_of(double x) const;
  int row_of(double y) const;
  Point2 cell_center(int row, int col) const;
  bool contains(Point2 p) const {
    return p.x >= -1.0 && p.x <= 1.0 && p.y >= -1.0 && p.y <= 1.0;
  }
};

struct HeatmapGrid {
  int width = 0;
  int height = 0;
  std::vector<double> values;  // row-major, H*W entries in [0,1]

  double at(int row, int col) const { return values[row * width + col]; }
};

/// Keypoints of traj at indices 0, s, 2s, ... up to the last full multiple.
KeyWaypoints extract_keypoints(const Trajectory& traj, int stride);

/// n equally spaced samples from p0 to p1, endpoints included.
std::vector<Point2> linear_interpolate(Point2 p0, Point2 p1, int n);

struct ControlPoint {
  Point2 c;
  Heading d1;
  bool parallel_fallback = false;  // midpoint substituted for the intersection
};

/// Control point of the quadratic Bezier segment from p0 (heading d0) to p1.
/// The end heading d1 is the chord direction rotated by k times the signed
/// angle between d0 and the chord; c is the intersection of the two heading
/// lines, or the segment midpoint when they are near-parallel.
ControlPoint bezier_control_point(Point2 p0, Heading d0, Point2 p1, double k);

/// n samples of P0(1-t)^2 + 2Ct(1-t) + P1 t^2 at uniform t in [0,1].
std::vector<Point2> quadratic_bezier(Point2 p0, Point2 c, Point2 p1, int n);

/// Full trajectory through the keypoints: linear first segment, then
/// quadratic Bezier segments with headings chained forward. Each segment
/// contributes samples_per_segment points, so keypoint k sits at index
/// k * samples_per_segment.
Trajectory interpolate_trajectory(const KeyWaypoints& kw, Heading initial_heading,
                                  int samples_per_segment, double dt = 0.1,
                                  double bezier_k = 0.25);

/// Gaussian bump exp(-|cell - p|^2 / (2 sigma^2)) rasterized over the grid,
/// all coordinates in the normalized frame.
HeatmapGrid heatmap(Point2 p, double sigma, const Frame& frame);

}  // namespace rg::geom

#endif  // RG_GEOMETRY_HPP_
