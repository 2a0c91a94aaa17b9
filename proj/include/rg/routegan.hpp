#ifndef RG_ROUTEGAN_HPP_
#define RG_ROUTEGAN_HPP_

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "rg/data.hpp"
#include "rg/geometry.hpp"
#include "rg/nn.hpp"
#include "rg/scene.hpp"

namespace rg::routegan {

struct ModelConfig {
  int scene_px = 64;
  int style_dim = 2;    // c, >= 2
  int noise_dim = 8;
  int hidden_dim = 64;  // d_h
  int goal_emb = 16;
  int init_emb = 16;
  int obs_emb = 16;
  int scene_emb = 32;
  int mlp_width = 64;
  int mlp_depth = 2;
  int keypoint_count = 6;  // m generated keypoints per rollout
  int stride = 5;          // s timesteps between keypoints
  double dt = 0.1;
  double bezier_k = 0.25;
  double road_sigma = 0.05;
  double alpha = 0.5;    // weight of the validity term in the generator loss
  double lambda1 = 1.0;  // info-loss weight
  double lambda2 = 10.0; // road-loss weight
};

std::string config_hash(const ModelConfig& cfg);

/// Style control vector in [-2, 2]^c; the first entry is the criticality
/// coefficient q^(1).
struct StyleCode {
  std::vector<double> q;
  double q1() const { return q.empty() ? 0.0 : q[0]; }
};

StyleCode style_zero(int c);
StyleCode style_with_q1(int c, double q1);

struct NoiseCode {
  std::vector<double> z;
};

StyleCode sample_style(int c, std::mt19937_64& rng);
NoiseCode sample_noise(int dim, std::mt19937_64& rng);

/// Recurrent hidden vector; t is the timestep of the newest consumed
/// observation minus s (so a fresh context has t = -s).
struct GeneratorState {
  nn::Tensor h;
  int t = 0;
};

struct GeneratorContext {
  nn::Tensor z_scene;
  nn::Tensor z_g;
  nn::Tensor z_init;
  StyleCode q;
  NoiseCode z;
};

struct RouteGanModel {
  ModelConfig cfg;
  nn::ParameterSet gen;   // F_scene, F_g, F_init, H_init, H_2, F_update, F_trajectory
  nn::ParameterSet disc;  // D_valid (encoder + head), D_safe, D_critical
  nn::ParameterSet aux;   // Q (encoder + head)

  nn::NetworkSpec f_scene, f_g, f_init, h_init, h_2, f_update, f_trajectory;
  nn::NetworkSpec dv_enc, dv_head, ds_head, dc_head;
  nn::NetworkSpec q_enc, q_head;
};

RouteGanModel init_model(const ModelConfig& cfg, std::uint64_t seed);

void save_checkpoint(const RouteGanModel& model, const std::string& path);
RouteGanModel load_checkpoint(const std::string& path);

/// Drivable mask as a {1, H, W} tensor.
nn::Tensor scene_tensor(const scene::Scene& sc);

std::pair<GeneratorContext, GeneratorState> encode_context(const RouteGanModel& model,
                                                           const scene::Scene& sc,
                                                           geom::Point2 goal,
                                                           geom::Point2 x1_init,
                                                           const StyleCode& q,
                                                           const NoiseCode& z);

/// One recurrence step: consume V2's newest position (at time state.t + s)
/// and emit the next keypoint for time state.t + 2s.
std::pair<GeneratorState, geom::Point2> generator_step(const RouteGanModel& model,
                                                       const GeneratorState& state,
                                                       const StyleCode& q, const NoiseCode& z,
                                                       geom::Point2 x2_obs);

/// m keypoints generated against V2 observations taken from obs(k) for
/// k = 0..m-1 (V2's position at time k*s), prefixed with x1_init.
geom::KeyWaypoints rollout(const RouteGanModel& model, const scene::Scene& sc,
                           geom::Point2 x1_init, geom::Point2 goal, const StyleCode& q,
                           const NoiseCode& z, int m,
                           const std::function<geom::Point2(int)>& obs);

/// Convenience overload following the scenario's V2 reference.
geom::KeyWaypoints rollout(const RouteGanModel& model, const scene::Scene& sc,
                           const scene::ScenarioSpec& spec, const StyleCode& q,
                           const NoiseCode& z, int m);

enum class Branch { VALID, SAFE, CRITICAL };

/// Raw logit of the validity branch on a (keypoints, scene) pair.
double discriminate(const RouteGanModel& model, Branch branch, const geom::KeyWaypoints& kp,
                    const scene::Scene& sc);

/// Raw logit of the safe/critical branch on a Gamma-augmented pair.
double discriminate(const RouteGanModel& model, Branch branch, const data::KeypointPair& pair);

/// Q's style reconstruction from generated keypoints and their scene.
std::vector<double> reconstruct_style(const RouteGanModel& model, const geom::KeyWaypoints& kp,
                                      const scene::Scene& sc);

/// One generated-rollout slot in a training batch: the inputs that fully
/// determine the rollout plus the opponent keypoints and Gamma angle.
struct GenItem {
  const scene::Scene* sc = nullptr;
  geom::Point2 x1_init;
  geom::Point2 goal;
  std::vector<geom::Point2> v2_obs;  // m observations at t = 0, s, ..., (m-1)s
  nn::Tensor x2_kp;                  // {m+1, 2} opponent keypoints
  StyleCode q;
  NoiseCode z;
  double theta = 0.0;                // Gamma rotation for pair terms
};

struct RealPairItem {
  nn::Tensor k1, k2;  // {m+1, 2}
  double theta = 0.0;
};

struct ValidRealItem {
  const scene::Scene* sc = nullptr;
  nn::Tensor kp;  // {m+1, 2}
};

struct DBatch {
  std::vector<ValidRealItem> valid_real;
  std::vector<RealPairItem> safe_real;
  std::vector<RealPairItem> critical_real;
  std::vector<GenItem> generated;
};

struct GBatch {
  std::vector<GenItem> items;
};

struct DLossBreakdown {
  double valid = 0.0;
  double safe = 0.0;
  double critical = 0.0;
  double total = 0.0;
  double accuracy = 0.0;  // real-vs-fake accuracy of the validity branch
};

struct GLossBreakdown {
  double valid = 0.0;
  double safe = 0.0;
  double critical = 0.0;
  double g_total = 0.0;    // alpha * valid + safe + critical (negated log form)
  double q_loss = 0.0;
  double road_loss = 0.0;
  double total = 0.0;      // g_total + lambda1 * q_loss + lambda2 * road_loss
  int n_negative = 0;      // rollouts routed to the safe term (q1 < 0)
  int n_positive = 0;      // rollouts routed to the critical term (q1 > 0)
  int n_zero = 0;          // q1 == 0, validity term only
  double onroad_rate = 0.0;
};

/// Discriminator loss under the minimized (negated log-likelihood) sign
/// convention. Generated rollouts are evaluated with frozen generator
/// parameters. With accumulate_grads, gradients land in model.disc.
DLossBreakdown loss_discriminator(RouteGanModel& model, const DBatch& batch,
                                  bool accumulate_grads = false);

/// Combined generator-side objective: negated non-saturating adversarial
/// terms (rollouts with q1 < 0 feed D_safe, q1 > 0 feed D_critical), the
/// L2 style-reconstruction loss and the road loss. With accumulate_grads,
/// gradients land in model.gen and model.aux; model.disc stays untouched.
GLossBreakdown loss_generator(RouteGanModel& model, const GBatch& batch,
                              bool accumulate_grads = false);

/// The L2 style-reconstruction term alone: 0.5 * mean ||q - Q(kp, scene)||^2.
double loss_info(RouteGanModel& model, const GBatch& batch);

struct TrainConfig {
  int steps = 2000;
  int batch = 32;
  double lr = 2e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double eps = 1e-8;
  int d_steps = 4;  // discriminator updates per outer step
  std::uint64_t seed = 0;
};

struct MetricsRow {
  int step = 0;
  DLossBreakdown d;  // from the last discriminator substep
  GLossBreakdown g;
};

struct TrainAbort : std::runtime_error {
  int step;
  explicit TrainAbort(int s, const std::string& what) : std::runtime_error(what), step(s) {}
};

/// Adversarial training: per outer step, d_steps discriminator updates with
/// G and Q frozen, then one joint G+Q update with D frozen. Deterministic
/// given seed; throws TrainAbort on a non-finite loss, leaving the model at
/// the last finite state. on_step, when set, runs after every outer step.
std::vector<MetricsRow> train(RouteGanModel& model, const data::Dataset& dataset,
                              const TrainConfig& config,
                              const std::function<void(int, const RouteGanModel&)>& on_step = {});

void write_metrics_csv(const std::vector<MetricsRow>& rows, const std::string& path);

/// Batch assembly used by train(), exposed for tests.
DBatch assemble_d_batch(const RouteGanModel& model, const data::Dataset& dataset, int n,
                        std::mt19937_64& rng);
GBatch assemble_g_batch(const RouteGanModel& model, const data::Dataset& dataset, int n,
                        std::mt19937_64& rng);

}  // namespace rg::routegan

#endif  // RG_ROUTEGAN_HPP_
