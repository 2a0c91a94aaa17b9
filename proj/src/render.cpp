#include "rg/render.hpp"

#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>

namespace rg::render {

using geom::Point2;

namespace {

std::string fmt(double v) {
  std::ostringstream ss;
  ss << std::fixed << std::setprecision(2) << v;
  return ss.str();
}

// Normalized coordinates to svg units.
double sx(const scene::Scene& sc, double x, double scale) {
  return (x + 1.0) * 0.5 * sc.width_px * scale;
}
double sy(const scene::Scene& sc, double y, double scale) {
  return (y + 1.0) * 0.5 * sc.height_px * scale;
}

void scene_underlay(std::ostringstream& out, const scene::Scene& sc, double scale) {
  out << "<rect x=\"0\" y=\"0\" width=\"" << fmt(sc.width_px * scale) << "\" height=\""
      << fmt(sc.height_px * scale) << "\" fill=\"#2b2b2b\"/>\n";
  // Drivable cells as per-row run-length rectangles.
  for (int r = 0; r < sc.height_px; ++r) {
    int c = 0;
    while (c < sc.width_px) {
      if (!sc.drivable_at(r, c)) {
        ++c;
        continue;
      }
      int start = c;
      while (c < sc.width_px && sc.drivable_at(r, c)) ++c;
      out << "<rect x=\"" << fmt(start * scale) << "\" y=\"" << fmt(r * scale) << "\" width=\""
          << fmt((c - start) * scale) << "\" height=\"" << fmt(scale)
          << "\" fill=\"#d8d8d8\"/>\n";
    }
  }
}

void polyline(std::ostringstream& out, const scene::Scene& sc, const geom::Trajectory& traj,
              const std::string& color, const RenderOptions& opts) {
  out << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
  for (const auto& p : traj.positions)
    out << fmt(sx(sc, p.x, opts.scale)) << ',' << fmt(sy(sc, p.y, opts.scale)) << ' ';
  out << "\"/>\n";
  for (std::size_t i = 0; i < traj.positions.size(); ++i) {
    const auto& p = traj.positions[i];
    double r = opts.marker_radius;
    if (i == 0)
      r = opts.start_radius;
    else if (opts.keypoint_stride > 0 && i % opts.keypoint_stride == 0)
      r = opts.keypoint_radius;
    out << "<circle cx=\"" << fmt(sx(sc, p.x, opts.scale)) << "\" cy=\""
        << fmt(sy(sc, p.y, opts.scale)) << "\" r=\"" << fmt(r) << "\" fill=\"" << color
        << "\"/>\n";
  }
}

}  // namespace

std::string episode_group(const scene::Scene& sc, const data::InteractionEpisode& ep,
                          const RenderOptions& opts) {
  std::ostringstream out;
  out << "<g>\n";
  scene_underlay(out, sc, opts.scale);
  polyline(out, sc, ep.x1, "#d62728", opts);  // V1 red
  polyline(out, sc, ep.x2, "#1f77b4", opts);  // V2 blue
  out << "</g>\n";
  return out.str();
}

std::string episode_svg(const scene::Scene& sc, const data::InteractionEpisode& ep,
                        const RenderOptions& opts) {
  const double w = sc.width_px * opts.scale;
  const double h = sc.height_px * opts.scale;
  std::ostringstream out;
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << fmt(w) << "\" height=\""
      << fmt(h) << "\" viewBox=\"0 0 " << fmt(w) << ' ' << fmt(h) << "\">\n";
  out << episode_group(sc, ep, opts);
  out << "</svg>\n";
  return out.str();
}

std::string grid_svg(const std::vector<GridCell>& cells, int rows, int cols,
                     const RenderOptions& opts) {
  if (cells.empty() || rows * cols < static_cast<int>(cells.size()))
    throw std::invalid_argument("grid_svg: grid smaller than cell count");
  const double pad = 16.0;
  double cw = 0.0, ch = 0.0;
  for (const auto& cell : cells) {
    cw = std::max(cw, cell.sc->width_px * opts.scale);
    ch = std::max(ch, cell.sc->height_px * opts.scale);
  }
  const double w = cols * (cw + pad) + pad;
  const double h = rows * (ch + pad + 14.0) + pad;

  std::ostringstream out;
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << fmt(w) << "\" height=\""
      << fmt(h) << "\" viewBox=\"0 0 " << fmt(w) << ' ' << fmt(h) << "\">\n";
  for (std::size_t i = 0; i < cells.size(); ++i) {
    int r = static_cast<int>(i) / cols;
    int c = static_cast<int>(i) % cols;
    double ox = pad + c * (cw + pad);
    double oy = pad + r * (ch + pad + 14.0);
    out << "<g transform=\"translate(" << fmt(ox) << ',' << fmt(oy) << ")\">\n";
    out << episode_group(*cells[i].sc, *cells[i].ep, opts);
    out << "<text x=\"2\" y=\"" << fmt(ch + 12.0)
        << "\" font-family=\"monospace\" font-size=\"11\" fill=\"#202020\">" << cells[i].label
        << "</text>\n";
    out << "</g>\n";
  }
  out << "</svg>\n";
  return out.str();
}

void write_text_file(const std::string& text, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << text;
}

}  // namespace rg::render
