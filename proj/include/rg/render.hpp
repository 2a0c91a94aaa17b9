#ifndef RG_RENDER_HPP_
#define RG_RENDER_HPP_

#include <string>
#include <vector>

#include "rg/data.hpp"
#include "rg/scene.hpp"

namespace rg::render {

struct RenderOptions {
  double scale = 8.0;        // svg units per scene pixel
  int keypoint_stride = 5;   // emphasize every stride-th position
  double start_radius = 7.0;
  double keypoint_radius = 3.5;
  double marker_radius = 1.5;
};

/// Inner SVG group: scene underlay plus the episode's trajectories. V1 is
/// red, V2 blue; start points get the largest circles, keypoints are
/// emphasized over plain path markers.
std::string episode_group(const scene::Scene& sc, const data::InteractionEpisode& ep,
                          const RenderOptions& opts);

/// Standalone SVG document for one episode.
std::string episode_svg(const scene::Scene& sc, const data::InteractionEpisode& ep,
                        const RenderOptions& opts = {});

struct GridCell {
  const scene::Scene* sc = nullptr;
  const data::InteractionEpisode* ep = nullptr;
  std::string label;
};

/// rows x cols composite of episode groups with per-cell labels.
std::string grid_svg(const std::vector<GridCell>& cells, int rows, int cols,
                     const RenderOptions& opts = {});

void write_text_file(const std::string& text, const std::string& path);

}  // namespace rg::render

#endif  // RG_RENDER_HPP_
