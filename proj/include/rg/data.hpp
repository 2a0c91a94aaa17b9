#ifndef RG_DATA_HPP_
#define RG_DATA_HPP_

#include <random>
#include <string>
#include <vector>

#include "rg/geometry.hpp"
#include "rg/scene.hpp"

namespace rg::data {

enum class Label { SAFE, CRITICAL };

std::string label_name(Label l);
Label label_from_name(const std::string& name);

/// Paired V1/V2 trajectories of equal length and timestep. goal is V2's
/// final position.
struct InteractionEpisode {
  geom::Trajectory x1;
  geom::Trajectory x2;
  std::string scene_id;
  Label label = Label::SAFE;
  geom::Point2 goal;
};

/// Keypoint sequences of an interacting pair, shared stride and count.
struct KeypointPair {
  geom::KeyWaypoints k1;
  geom::KeyWaypoints k2;
};

/// CRITICAL iff the vehicles ever come within 2r + critical_margin of each
/// other at an aligned timestep (strict inequality).
Label label_episode(const InteractionEpisode& ep, double collision_radius,
                    double critical_margin);

double min_pair_distance(const geom::Trajectory& a, const geom::Trajectory& b);

struct CriticalThreshold {
  double collision_radius = 0.03;
  double critical_margin = 0.02;
  double value() const { return 2.0 * collision_radius + critical_margin; }
};

/// Time-shift x1 so both vehicles reach the spatial crossing of their paths
/// at the same timestep. Shapes are unchanged; the result relabels CRITICAL.
/// Throws if the two polylines never cross spatially.
InteractionEpisode temporal_realignment(const InteractionEpisode& ep, std::mt19937_64& rng,
                                        const CriticalThreshold& thr = {});

struct DeformParams {
  double target_separation = -1.0;  // < 0: sample in [0.2, 0.8] * threshold
  double max_deform = 0.5;
  double bump_half_width = 0.35;    // in arc-length units
};

/// Bend x1 with a raised-cosine bump (in arc length, peaked toward x2's
/// nearest point) until the pair comes within critical distance. Endpoints
/// of x1 are preserved exactly.
InteractionEpisode local_deformation(const InteractionEpisode& ep, std::mt19937_64& rng,
                                     const CriticalThreshold& thr = {},
                                     const DeformParams& params = {});

/// Gamma augmentation: subtract the joint mean of both sequences, then rotate
/// both by the same rotation matrix U(theta).
KeypointPair gamma_augment(const KeypointPair& pair, double theta);

struct DatasetConfig {
  int stride = 5;
  int episode_steps = 30;  // episodes have episode_steps + 1 positions
  double dt = 0.1;
  double collision_radius = 0.03;
  double critical_margin = 0.02;
  double min_speed = 0.15;
  double max_speed = 0.25;
  CriticalThreshold threshold() const { return {collision_radius, critical_margin}; }
};

struct Dataset {
  std::vector<scene::Scene> scenes;
  std::vector<InteractionEpisode> episodes;
  DatasetConfig config;

  const scene::Scene& scene_by_id(const std::string& id) const;
  int count(Label l) const;
};

/// Build n_safe + n_critical episodes over the given scenes, cycling scene
/// kinds and Cases I-III. SAFE episodes follow non-conflicting lanes and
/// timings; CRITICAL episodes come from direct conflicts plus the two
/// augmentation tricks. Every episode is consistent with label_episode.
Dataset dataset_build(const std::vector<scene::Scene>& scenes, int n_safe, int n_critical,
                      std::mt19937_64& rng, const DatasetConfig& config = {});

void save_dataset(const Dataset& ds, const std::string& dir);
Dataset load_dataset(const std::string& dir);

std::string episode_to_json(const InteractionEpisode& ep);
InteractionEpisode episode_from_json(const std::string& line);

}  // namespace rg::data

#endif  // RG_DATA_HPP_
