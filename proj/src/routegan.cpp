#include "rg/routegan.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "rg/config.hpp"

namespace rg::routegan {

using geom::Point2;
using nlohmann::json;
using nn::Binder;
using nn::Tape;
using nn::Tensor;
using nn::ValueRef;

std::string config_hash(const ModelConfig& c) {
  std::ostringstream ss;
  ss << c.scene_px << ';' << c.style_dim << ';' << c.noise_dim << ';' << c.hidden_dim << ';'
     << c.goal_emb << ';' << c.init_emb << ';' << c.obs_emb << ';' << c.scene_emb << ';'
     << c.mlp_width << ';' << c.mlp_depth << ';' << c.keypoint_count << ';' << c.stride << ';'
     << c.dt << ';' << c.bezier_k << ';' << c.road_sigma << ';' << c.alpha << ';' << c.lambda1
     << ';' << c.lambda2;
  return cfg::fnv1a_hex(ss.str());
}

StyleCode style_zero(int c) { return {std::vector<double>(c, 0.0)}; }

StyleCode style_with_q1(int c, double q1) {
  StyleCode s = style_zero(c);
  s.q[0] = q1;
  return s;
}

StyleCode sample_style(int c, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  StyleCode s;
  s.q.resize(c);
  for (auto& v : s.q) v = u(rng);
  return s;
}

NoiseCode sample_noise(int dim, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  NoiseCode z;
  z.z.resize(dim);
  for (auto& v : z.z) v = n(rng);
  return z;
}

namespace {

void validate_style(const ModelConfig& cfg, const StyleCode& q) {
  if (static_cast<int>(q.q.size()) != cfg.style_dim)
    throw std::invalid_argument("style code has wrong dimension");
  for (double v : q.q)
    if (!(v >= -2.0 && v <= 2.0))
      throw std::invalid_argument("style code entry outside [-2, 2]");
}

void validate_noise(const ModelConfig& cfg, const NoiseCode& z) {
  if (static_cast<int>(z.z.size()) != cfg.noise_dim)
    throw std::invalid_argument("noise code has wrong dimension");
  for (double v : z.z)
    if (!std::isfinite(v)) throw std::invalid_argument("noise code must be finite");
}

Tensor point_tensor(Point2 p) { return Tensor({2}, {p.x, p.y}); }

nn::NetworkSpec conv_encoder_spec(int px, int emb) {
  nn::NetworkSpec spec;
  spec.input_shape = {1, px, px};
  spec.layers.push_back(nn::Conv2dLayer{1, 8, 3, 2, nn::Act::LeakyRelu});
  spec.layers.push_back(nn::Conv2dLayer{8, 16, 3, 2, nn::Act::LeakyRelu});
  spec.layers.push_back(nn::Conv2dLayer{16, 32, 3, 2, nn::Act::LeakyRelu});
  spec.layers.push_back(nn::FlattenLayer{});
  std::vector<int> conv_out = spec.output_shape();
  spec.layers.push_back(nn::DenseLayer{conv_out[0], emb, nn::Act::LeakyRelu});
  return spec;
}

std::vector<int> hidden_widths(const ModelConfig& cfg) {
  return std::vector<int>(cfg.mlp_depth, cfg.mlp_width);
}

}  // namespace

RouteGanModel init_model(const ModelConfig& cfg, std::uint64_t seed) {
  if (cfg.style_dim < 2) throw std::invalid_argument("init_model: style_dim must be >= 2");
  RouteGanModel m;
  m.cfg = cfg;

  const auto hid = hidden_widths(cfg);
  const int kp_flat = 2 * (cfg.keypoint_count + 1);

  m.f_scene = conv_encoder_spec(cfg.scene_px, cfg.scene_emb);
  m.f_g = nn::mlp_spec(2, hid, cfg.goal_emb, nn::Act::LeakyRelu, nn::Act::LeakyRelu);
  m.f_init = nn::mlp_spec(2, hid, cfg.init_emb, nn::Act::LeakyRelu, nn::Act::LeakyRelu);
  m.h_init = nn::mlp_spec(cfg.scene_emb + cfg.goal_emb + cfg.init_emb + cfg.style_dim +
                              cfg.noise_dim,
                          hid, cfg.hidden_dim, nn::Act::LeakyRelu, nn::Act::Tanh);
  m.h_2 = nn::mlp_spec(2, hid, cfg.obs_emb, nn::Act::LeakyRelu, nn::Act::LeakyRelu);
  m.f_update = nn::mlp_spec(cfg.obs_emb + cfg.hidden_dim, hid, cfg.hidden_dim,
                            nn::Act::LeakyRelu, nn::Act::Tanh);
  m.f_trajectory = nn::mlp_spec(cfg.hidden_dim + cfg.style_dim + cfg.noise_dim, hid, 2,
                                nn::Act::LeakyRelu, nn::Act::Tanh);

  m.dv_enc = conv_encoder_spec(cfg.scene_px, cfg.scene_emb);
  m.dv_head = nn::mlp_spec(kp_flat + cfg.scene_emb, hid, 1, nn::Act::LeakyRelu, nn::Act::None);
  m.ds_head = nn::mlp_spec(2 * kp_flat, hid, 1, nn::Act::LeakyRelu, nn::Act::None);
  m.dc_head = nn::mlp_spec(2 * kp_flat, hid, 1, nn::Act::LeakyRelu, nn::Act::None);

  m.q_enc = conv_encoder_spec(cfg.scene_px, cfg.scene_emb);
  m.q_head = nn::mlp_spec(kp_flat + cfg.scene_emb, hid, cfg.style_dim, nn::Act::LeakyRelu,
                          nn::Act::None);

  std::mt19937_64 rng(seed);
  nn::init_params(m.f_scene, "f_scene", rng, m.gen);
  nn::init_params(m.f_g, "f_g", rng, m.gen);
  nn::init_params(m.f_init, "f_init", rng, m.gen);
  nn::init_params(m.h_init, "h_init", rng, m.gen);
  nn::init_params(m.h_2, "h_2", rng, m.gen);
  nn::init_params(m.f_update, "f_update", rng, m.gen);
  nn::init_params(m.f_trajectory, "f_trajectory", rng, m.gen);

  nn::init_params(m.dv_enc, "dv_enc", rng, m.disc);
  nn::init_params(m.dv_head, "dv_head", rng, m.disc);
  nn::init_params(m.ds_head, "ds_head", rng, m.disc);
  nn::init_params(m.dc_head, "dc_head", rng, m.disc);

  nn::init_params(m.q_enc, "q_enc", rng, m.aux);
  nn::init_params(m.q_head, "q_head", rng, m.aux);
  return m;
}

Tensor scene_tensor(const scene::Scene& sc) {
  Tensor t = Tensor::zeros({1, sc.height_px, sc.width_px});
  for (std::size_t i = 0; i < sc.drivable.size(); ++i) t.data[i] = sc.drivable[i] ? 1.0 : 0.0;
  return t;
}

namespace {

struct TapeCaches {
  std::map<const scene::Scene*, ValueRef> raster;
  std::map<std::pair<const nn::ParameterSet*, const scene::Scene*>, ValueRef> emb;
};

ValueRef scene_embedding(Tape& tape, Binder& binder, nn::ParameterSet& ps,
                         const std::string& prefix, const nn::NetworkSpec& spec,
                         const scene::Scene& sc, TapeCaches& caches) {
  auto key = std::make_pair(static_cast<const nn::ParameterSet*>(&ps), &sc);
  auto it = caches.emb.find(key);
  if (it != caches.emb.end()) return it->second;

  ValueRef raster;
  auto rit = caches.raster.find(&sc);
  if (rit != caches.raster.end()) {
    raster = rit->second;
  } else {
    raster = tape.constant(scene_tensor(sc));
    caches.raster.emplace(&sc, raster);
  }
  ValueRef emb = nn::run_network(tape, binder, ps, prefix, spec, raster);
  caches.emb.emplace(key, emb);
  return emb;
}

struct TapeRollout {
  std::vector<ValueRef> gen_kps;  // m generated keypoints, each {2}
  ValueRef kp_matrix;             // {m+1, 2}, row 0 is the fixed start
};

TapeRollout rollout_on_tape(Tape& tape, Binder& gbind, RouteGanModel& model, ValueRef scene_emb,
                            Point2 x1_init, Point2 goal, const StyleCode& q, const NoiseCode& z,
                            const std::vector<Point2>& v2_obs) {
  const ModelConfig& cfg = model.cfg;
  validate_style(cfg, q);
  validate_noise(cfg, z);
  const int m = cfg.keypoint_count;
  if (static_cast<int>(v2_obs.size()) < m)
    throw std::invalid_argument("rollout: need one V2 observation per planning step");

  ValueRef qref = tape.constant(Tensor::vec(q.q));
  ValueRef zref = tape.constant(Tensor::vec(z.z));
  ValueRef z_g = nn::run_network(tape, gbind, model.gen, "f_g", model.f_g,
                                 tape.constant(point_tensor(goal)));
  ValueRef z_init = nn::run_network(tape, gbind, model.gen, "f_init", model.f_init,
                                    tape.constant(point_tensor(x1_init)));
  ValueRef h = nn::run_network(tape, gbind, model.gen, "h_init", model.h_init,
                               tape.concat({scene_emb, z_g, z_init, qref, zref}));

  TapeRollout ro;
  std::vector<ValueRef> rows;
  rows.push_back(tape.constant(point_tensor(x1_init)));
  for (int k = 0; k < m; ++k) {
    ValueRef z2 = nn::run_network(tape, gbind, model.gen, "h_2", model.h_2,
                                  tape.constant(point_tensor(v2_obs[k])));
    h = nn::run_network(tape, gbind, model.gen, "f_update", model.f_update,
                        tape.concat({z2, h}));
    ValueRef kp = nn::run_network(tape, gbind, model.gen, "f_trajectory", model.f_trajectory,
                                  tape.concat({h, qref, zref}));
    ro.gen_kps.push_back(kp);
    rows.push_back(kp);
  }
  ro.kp_matrix = tape.stack_rows(rows);
  return ro;
}

// Joint mean-centering plus shared rotation, differentiable on tape.
std::pair<ValueRef, ValueRef> gamma_on_tape(Tape& tape, ValueRef k1, ValueRef k2, double theta) {
  ValueRef mu = tape.scale(tape.add(tape.mean_rows(k1), tape.mean_rows(k2)), 0.5);
  ValueRef c1 = tape.rotate_rows(tape.sub_row_broadcast(k1, mu), theta);
  ValueRef c2 = tape.rotate_rows(tape.sub_row_broadcast(k2, mu), theta);
  return {c1, c2};
}

ValueRef pair_logit(Tape& tape, Binder& dbind, RouteGanModel& model, bool safe_branch,
                    ValueRef k1, ValueRef k2, double theta) {
  auto [c1, c2] = gamma_on_tape(tape, k1, k2, theta);
  ValueRef input = tape.concat({tape.flatten(c1), tape.flatten(c2)});
  if (safe_branch)
    return nn::run_network(tape, dbind, model.disc, "ds_head", model.ds_head, input);
  return nn::run_network(tape, dbind, model.disc, "dc_head", model.dc_head, input);
}

ValueRef valid_logit(Tape& tape, Binder& dbind, RouteGanModel& model, ValueRef kp_matrix,
                     ValueRef dv_emb) {
  ValueRef input = tape.concat({tape.flatten(kp_matrix), dv_emb});
  return nn::run_network(tape, dbind, model.disc, "dv_head", model.dv_head, input);
}

// Off-road Gaussian mass of one generated keypoint, gradient baked into the
// backward closure.
ValueRef road_penalty(Tape& tape, ValueRef kp, const scene::Scene& sc, double sigma) {
  Point2 p{tape.value(kp).data[0], tape.value(kp).data[1]};
  Point2 g;
  double loss = scene::point_road_loss(sc, p, sigma, &g);
  int kid = kp.id;
  bool req = tape.requires_grad(kp);
  return tape.custom(Tensor::scalar(loss), req, [kid, g](Tape& t, int self) {
    if (!t.requires_at(kid)) return;
    double gs = t.grad_at(self).data[0];
    t.grad_at(kid).data[0] += gs * g.x;
    t.grad_at(kid).data[1] += gs * g.y;
  });
}

Tensor kp_matrix_tensor(const geom::KeyWaypoints& kw) {
  Tensor t = Tensor::zeros({static_cast<int>(kw.points.size()), 2});
  for (std::size_t i = 0; i < kw.points.size(); ++i) {
    t.data[2 * i] = kw.points[i].x;
    t.data[2 * i + 1] = kw.points[i].y;
  }
  return t;
}

}  // namespace

std::pair<GeneratorContext, GeneratorState> encode_context(const RouteGanModel& model,
                                                           const scene::Scene& sc, Point2 goal,
                                                           Point2 x1_init, const StyleCode& q,
                                                           const NoiseCode& z) {
  validate_style(model.cfg, q);
  validate_noise(model.cfg, z);
  if (!scene::is_on_road(sc, x1_init))
    throw std::invalid_argument("encode_context: x1_init is off-road");

  // Read-only parameter binding.
  RouteGanModel& m = const_cast<RouteGanModel&>(model);
  Tape tape;
  Binder bind(tape, false);
  TapeCaches caches;
  ValueRef z_scene = scene_embedding(tape, bind, m.gen, "f_scene", m.f_scene, sc, caches);
  ValueRef z_g = nn::run_network(tape, bind, m.gen, "f_g", m.f_g,
                                 tape.constant(point_tensor(goal)));
  ValueRef z_init = nn::run_network(tape, bind, m.gen, "f_init", m.f_init,
                                    tape.constant(point_tensor(x1_init)));
  ValueRef h = nn::run_network(tape, bind, m.gen, "h_init", m.h_init,
                               tape.concat({z_scene, z_g, z_init, tape.constant(Tensor::vec(q.q)),
                                            tape.constant(Tensor::vec(z.z))}));
  GeneratorContext ctx{tape.value(z_scene), tape.value(z_g), tape.value(z_init), q, z};
  GeneratorState state{tape.value(h), -model.cfg.stride};
  return {ctx, state};
}

std::pair<GeneratorState, Point2> generator_step(const RouteGanModel& model,
                                                 const GeneratorState& state, const StyleCode& q,
                                                 const NoiseCode& z, Point2 x2_obs) {
  validate_style(model.cfg, q);
  validate_noise(model.cfg, z);
  if (state.h.numel() != model.cfg.hidden_dim)
    throw std::invalid_argument("generator_step: bad hidden state");

  RouteGanModel& m = const_cast<RouteGanModel&>(model);
  Tape tape;
  Binder bind(tape, false);
  ValueRef h_leaf = tape.constant(state.h);
  ValueRef z2 = nn::run_network(tape, bind, m.gen, "h_2", m.h_2,
                                tape.constant(point_tensor(x2_obs)));
  ValueRef h = nn::run_network(tape, bind, m.gen, "f_update", m.f_update,
                               tape.concat({z2, h_leaf}));
  ValueRef kp = nn::run_network(tape, bind, m.gen, "f_trajectory", m.f_trajectory,
                                tape.concat({h, tape.constant(Tensor::vec(q.q)),
                                             tape.constant(Tensor::vec(z.z))}));
  GeneratorState next{tape.value(h), state.t + model.cfg.stride};
  const Tensor& kv = tape.value(kp);
  return {next, Point2{kv.data[0], kv.data[1]}};
}

geom::KeyWaypoints rollout(const RouteGanModel& model, const scene::Scene& sc, Point2 x1_init,
                           Point2 goal, const StyleCode& q, const NoiseCode& z, int m,
                           const std::function<Point2(int)>& obs) {
  if (m < 0) throw std::invalid_argument("rollout: negative keypoint count");
  geom::KeyWaypoints kw;
  kw.stride_s = model.cfg.stride;
  kw.points.push_back(x1_init);
  auto [ctx, state] = encode_context(model, sc, goal, x1_init, q, z);
  for (int k = 0; k < m; ++k) {
    auto [next, kp] = generator_step(model, state, q, z, obs(k));
    state = next;
    kw.points.push_back(kp);
  }
  return kw;
}

geom::KeyWaypoints rollout(const RouteGanModel& model, const scene::Scene& sc,
                           const scene::ScenarioSpec& spec, const StyleCode& q,
                           const NoiseCode& z, int m) {
  const auto& ref = spec.v2_reference.positions;
  const int s = model.cfg.stride;
  return rollout(model, sc, spec.v1_start, spec.v2_goal, q, z, m, [&](int k) {
    std::size_t idx = std::min<std::size_t>(static_cast<std::size_t>(k) * s, ref.size() - 1);
    return ref[idx];
  });
}

double discriminate(const RouteGanModel& model, Branch branch, const geom::KeyWaypoints& kp,
                    const scene::Scene& sc) {
  if (branch != Branch::VALID)
    throw std::invalid_argument("discriminate: pair branches take a KeypointPair");
  if (static_cast<int>(kp.points.size()) != model.cfg.keypoint_count + 1)
    throw std::invalid_argument("discriminate: wrong keypoint count");

  RouteGanModel& m = const_cast<RouteGanModel&>(model);
  Tape tape;
  Binder bind(tape, false);
  TapeCaches caches;
  ValueRef emb = scene_embedding(tape, bind, m.disc, "dv_enc", m.dv_enc, sc, caches);
  ValueRef logit = valid_logit(tape, bind, m, tape.constant(kp_matrix_tensor(kp)), emb);
  return tape.value(logit).data[0];
}

double discriminate(const RouteGanModel& model, Branch branch, const data::KeypointPair& pair) {
  if (branch == Branch::VALID)
    throw std::invalid_argument("discriminate: the validity branch takes (keypoints, scene)");
  const int want = model.cfg.keypoint_count + 1;
  if (static_cast<int>(pair.k1.points.size()) != want ||
      static_cast<int>(pair.k2.points.size()) != want)
    throw std::invalid_argument("discriminate: wrong keypoint count");

  RouteGanModel& m = const_cast<RouteGanModel&>(model);
  Tape tape;
  Binder bind(tape, false);
  ValueRef input = tape.concat({tape.flatten(tape.constant(kp_matrix_tensor(pair.k1))),
                                tape.flatten(tape.constant(kp_matrix_tensor(pair.k2)))});
  const char* prefix = branch == Branch::SAFE ? "ds_head" : "dc_head";
  const nn::NetworkSpec& spec = branch == Branch::SAFE ? m.ds_head : m.dc_head;
  ValueRef logit = nn::run_network(tape, bind, m.disc, prefix, spec, input);
  return tape.value(logit).data[0];
}

std::vector<double> reconstruct_style(const RouteGanModel& model, const geom::KeyWaypoints& kp,
                                      const scene::Scene& sc) {
  if (static_cast<int>(kp.points.size()) != model.cfg.keypoint_count + 1)
    throw std::invalid_argument("reconstruct_style: wrong keypoint count");
  RouteGanModel& m = const_cast<RouteGanModel&>(model);
  Tape tape;
  Binder bind(tape, false);
  TapeCaches caches;
  ValueRef emb = scene_embedding(tape, bind, m.aux, "q_enc", m.q_enc, sc, caches);
  ValueRef input = tape.concat({tape.flatten(tape.constant(kp_matrix_tensor(kp))), emb});
  ValueRef out = nn::run_network(tape, bind, m.aux, "q_head", m.q_head, input);
  return tape.value(out).data;
}

DLossBreakdown loss_discriminator(RouteGanModel& model, const DBatch& batch,
                                  bool accumulate_grads) {
  if (batch.valid_real.empty() || batch.safe_real.empty() || batch.critical_real.empty() ||
      batch.generated.empty())
    throw std::invalid_argument("loss_discriminator: empty batch category");

  Tape tape;
  Binder dbind(tape, accumulate_grads);
  Binder gfrozen(tape, false);
  TapeCaches caches;

  // Fake rollouts with the generator frozen, sharing scene encodings.
  std::vector<TapeRollout> fakes;
  fakes.reserve(batch.generated.size());
  for (const auto& item : batch.generated) {
    ValueRef emb = scene_embedding(tape, gfrozen, model.gen, "f_scene", model.f_scene,
                                   *item.sc, caches);
    fakes.push_back(rollout_on_tape(tape, gfrozen, model, emb, item.x1_init, item.goal, item.q,
                                    item.z, item.v2_obs));
  }

  std::vector<ValueRef> v_real, v_fake;
  int correct = 0, total = 0;
  for (const auto& item : batch.valid_real) {
    ValueRef emb = scene_embedding(tape, dbind, model.disc, "dv_enc", model.dv_enc, *item.sc,
                                   caches);
    ValueRef logit = valid_logit(tape, dbind, model, tape.constant(item.kp), emb);
    v_real.push_back(tape.log_sigmoid(logit));
    correct += tape.value(logit).data[0] > 0.0;
    ++total;
  }
  for (std::size_t i = 0; i < batch.generated.size(); ++i) {
    const auto& item = batch.generated[i];
    ValueRef emb = scene_embedding(tape, dbind, model.disc, "dv_enc", model.dv_enc, *item.sc,
                                   caches);
    ValueRef logit = valid_logit(tape, dbind, model, fakes[i].kp_matrix, emb);
    v_fake.push_back(tape.log_sigmoid(tape.neg(logit)));
    correct += tape.value(logit).data[0] < 0.0;
    ++total;
  }

  // D_safe: positives are real safe pairs; negatives are generated pairs and
  // real critical pairs. D_critical mirrors it.
  std::vector<ValueRef> s_terms, c_terms;
  std::vector<ValueRef> s_real, s_fake, s_crit;
  std::vector<ValueRef> c_real, c_fake, c_safe;
  for (const auto& p : batch.safe_real) {
    ValueRef k1 = tape.constant(p.k1), k2 = tape.constant(p.k2);
    s_real.push_back(tape.log_sigmoid(pair_logit(tape, dbind, model, true, k1, k2, p.theta)));
    c_safe.push_back(
        tape.log_sigmoid(tape.neg(pair_logit(tape, dbind, model, false, k1, k2, p.theta))));
  }
  for (const auto& p : batch.critical_real) {
    ValueRef k1 = tape.constant(p.k1), k2 = tape.constant(p.k2);
    c_real.push_back(tape.log_sigmoid(pair_logit(tape, dbind, model, false, k1, k2, p.theta)));
    s_crit.push_back(
        tape.log_sigmoid(tape.neg(pair_logit(tape, dbind, model, true, k1, k2, p.theta))));
  }
  for (std::size_t i = 0; i < batch.generated.size(); ++i) {
    const auto& item = batch.generated[i];
    ValueRef k1 = fakes[i].kp_matrix;
    ValueRef k2 = tape.constant(item.x2_kp);
    s_fake.push_back(
        tape.log_sigmoid(tape.neg(pair_logit(tape, dbind, model, true, k1, k2, item.theta))));
    c_fake.push_back(
        tape.log_sigmoid(tape.neg(pair_logit(tape, dbind, model, false, k1, k2, item.theta))));
  }

  ValueRef valid_term =
      tape.neg(tape.add(tape.mean_refs(v_real), tape.mean_refs(v_fake)));
  ValueRef safe_term = tape.neg(tape.add(
      tape.mean_refs(s_real), tape.add(tape.mean_refs(s_fake), tape.mean_refs(s_crit))));
  ValueRef critical_term = tape.neg(tape.add(
      tape.mean_refs(c_real), tape.add(tape.mean_refs(c_fake), tape.mean_refs(c_safe))));
  ValueRef total_ref = tape.add(valid_term, tape.add(safe_term, critical_term));

  DLossBreakdown out;
  out.valid = tape.value(valid_term).data[0];
  out.safe = tape.value(safe_term).data[0];
  out.critical = tape.value(critical_term).data[0];
  out.total = tape.value(total_ref).data[0];
  out.accuracy = total > 0 ? static_cast<double>(correct) / total : 0.0;

  if (accumulate_grads) {
    model.disc.zero_grads();
    tape.backward(total_ref);
    dbind.accumulate_grads();
  }
  return out;
}

GLossBreakdown loss_generator(RouteGanModel& model, const GBatch& batch, bool accumulate_grads) {
  if (batch.items.empty()) throw std::invalid_argument("loss_generator: empty batch");

  const ModelConfig& cfg = model.cfg;
  Tape tape;
  Binder gbind(tape, accumulate_grads);
  Binder dfrozen(tape, false);
  TapeCaches caches;

  std::vector<ValueRef> v_refs, s_refs, c_refs, q_refs, road_refs;
  GLossBreakdown out;
  int onroad = 0, kp_total = 0;

  for (const auto& item : batch.items) {
    ValueRef gen_emb = scene_embedding(tape, gbind, model.gen, "f_scene", model.f_scene,
                                       *item.sc, caches);
    TapeRollout ro = rollout_on_tape(tape, gbind, model, gen_emb, item.x1_init, item.goal,
                                     item.q, item.z, item.v2_obs);

    ValueRef dv_emb = scene_embedding(tape, dfrozen, model.disc, "dv_enc", model.dv_enc,
                                      *item.sc, caches);
    v_refs.push_back(tape.log_sigmoid(valid_logit(tape, dfrozen, model, ro.kp_matrix, dv_emb)));

    ValueRef x2 = tape.constant(item.x2_kp);
    const double q1 = item.q.q1();
    if (q1 < 0.0) {
      s_refs.push_back(tape.log_sigmoid(
          pair_logit(tape, dfrozen, model, true, ro.kp_matrix, x2, item.theta)));
      ++out.n_negative;
    } else if (q1 > 0.0) {
      c_refs.push_back(tape.log_sigmoid(
          pair_logit(tape, dfrozen, model, false, ro.kp_matrix, x2, item.theta)));
      ++out.n_positive;
    } else {
      ++out.n_zero;
    }

    ValueRef q_emb = scene_embedding(tape, gbind, model.aux, "q_enc", model.q_enc, *item.sc,
                                     caches);
    ValueRef q_hat = nn::run_network(tape, gbind, model.aux, "q_head", model.q_head,
                                     tape.concat({tape.flatten(ro.kp_matrix), q_emb}));
    ValueRef err = tape.sub(q_hat, tape.constant(Tensor::vec(item.q.q)));
    q_refs.push_back(tape.scale(tape.sum_all(tape.square(err)), 0.5));

    std::vector<ValueRef> pen;
    pen.reserve(ro.gen_kps.size());
    for (ValueRef kp : ro.gen_kps) {
      pen.push_back(road_penalty(tape, kp, *item.sc, cfg.road_sigma));
      const Tensor& kv = tape.value(kp);
      onroad += scene::is_on_road(*item.sc, {kv.data[0], kv.data[1]});
      ++kp_total;
    }
    road_refs.push_back(tape.mean_refs(pen));
  }

  ValueRef v_mean = tape.mean_refs(v_refs);
  ValueRef s_mean = tape.mean_refs(s_refs);
  ValueRef c_mean = tape.mean_refs(c_refs);
  ValueRef g_total = tape.neg(
      tape.add(tape.scale(v_mean, cfg.alpha), tape.add(s_mean, c_mean)));
  ValueRef q_ref = tape.mean_refs(q_refs);
  ValueRef road_ref = tape.mean_refs(road_refs);
  ValueRef total_ref = tape.add(
      g_total, tape.add(tape.scale(q_ref, cfg.lambda1), tape.scale(road_ref, cfg.lambda2)));

  out.valid = -tape.value(v_mean).data[0];
  out.safe = -tape.value(s_mean).data[0];
  out.critical = -tape.value(c_mean).data[0];
  out.g_total = tape.value(g_total).data[0];
  out.q_loss = tape.value(q_ref).data[0];
  out.road_loss = tape.value(road_ref).data[0];
  out.total = tape.value(total_ref).data[0];
  out.onroad_rate = kp_total > 0 ? static_cast<double>(onroad) / kp_total : 0.0;

  if (accumulate_grads) {
    model.gen.zero_grads();
    model.aux.zero_grads();
    tape.backward(total_ref);
    gbind.accumulate_grads();
  }
  return out;
}

double loss_info(RouteGanModel& model, const GBatch& batch) {
  if (batch.items.empty()) throw std::invalid_argument("loss_info: empty batch");
  Tape tape;
  Binder bind(tape, false);
  TapeCaches caches;
  std::vector<ValueRef> q_refs;
  for (const auto& item : batch.items) {
    ValueRef gen_emb = scene_embedding(tape, bind, model.gen, "f_scene", model.f_scene,
                                       *item.sc, caches);
    TapeRollout ro = rollout_on_tape(tape, bind, model, gen_emb, item.x1_init, item.goal,
                                     item.q, item.z, item.v2_obs);
    ValueRef q_emb = scene_embedding(tape, bind, model.aux, "q_enc", model.q_enc, *item.sc,
                                     caches);
    ValueRef q_hat = nn::run_network(tape, bind, model.aux, "q_head", model.q_head,
                                     tape.concat({tape.flatten(ro.kp_matrix), q_emb}));
    ValueRef err = tape.sub(q_hat, tape.constant(Tensor::vec(item.q.q)));
    q_refs.push_back(tape.scale(tape.sum_all(tape.square(err)), 0.5));
  }
  return tape.value(tape.mean_refs(q_refs)).data[0];
}

namespace {

Tensor keypoints_tensor(const geom::Trajectory& traj, int stride, int count) {
  geom::KeyWaypoints kw = geom::extract_keypoints(traj, stride);
  if (static_cast<int>(kw.points.size()) < count)
    throw std::invalid_argument("episode too short for the configured keypoint count");
  kw.points.resize(count);
  return kp_matrix_tensor(kw);
}

std::vector<Point2> obs_from_trajectory(const geom::Trajectory& traj, int stride, int m) {
  std::vector<Point2> obs;
  obs.reserve(m);
  for (int k = 0; k < m; ++k) {
    std::size_t idx = std::min<std::size_t>(static_cast<std::size_t>(k) * stride,
                                            traj.positions.size() - 1);
    obs.push_back(traj.positions[idx]);
  }
  return obs;
}

GenItem gen_item_from_episode(const RouteGanModel& model, const data::Dataset& ds,
                              const data::InteractionEpisode& ep, std::mt19937_64& rng) {
  const ModelConfig& cfg = model.cfg;
  GenItem item;
  item.sc = &ds.scene_by_id(ep.scene_id);
  item.x1_init = ep.x1.positions.front();
  item.goal = ep.goal;
  item.v2_obs = obs_from_trajectory(ep.x2, cfg.stride, cfg.keypoint_count);
  item.x2_kp = keypoints_tensor(ep.x2, cfg.stride, cfg.keypoint_count + 1);
  item.q = sample_style(cfg.style_dim, rng);
  item.z = sample_noise(cfg.noise_dim, rng);
  std::uniform_real_distribution<double> uth(0.0, 2.0 * M_PI);
  item.theta = uth(rng);
  return item;
}

}  // namespace

DBatch assemble_d_batch(const RouteGanModel& model, const data::Dataset& dataset, int n,
                        std::mt19937_64& rng) {
  const ModelConfig& cfg = model.cfg;
  std::vector<int> safe_idx, critical_idx;
  for (std::size_t i = 0; i < dataset.episodes.size(); ++i) {
    (dataset.episodes[i].label == data::Label::SAFE ? safe_idx : critical_idx).push_back(i);
  }
  if (safe_idx.empty() || critical_idx.empty())
    throw std::invalid_argument("assemble_d_batch: dataset needs both SAFE and CRITICAL episodes");

  std::uniform_int_distribution<int> uall(0, static_cast<int>(dataset.episodes.size()) - 1);
  std::uniform_int_distribution<int> usafe(0, static_cast<int>(safe_idx.size()) - 1);
  std::uniform_int_distribution<int> ucrit(0, static_cast<int>(critical_idx.size()) - 1);
  std::uniform_real_distribution<double> uth(0.0, 2.0 * M_PI);
  std::uniform_int_distribution<int> ucoin(0, 1);

  DBatch batch;
  for (int i = 0; i < n; ++i) {
    const auto& ep = dataset.episodes[uall(rng)];
    const geom::Trajectory& traj = ucoin(rng) ? ep.x1 : ep.x2;
    batch.valid_real.push_back(
        {&dataset.scene_by_id(ep.scene_id),
         keypoints_tensor(traj, cfg.stride, cfg.keypoint_count + 1)});
  }
  for (int i = 0; i < n; ++i) {
    const auto& ep = dataset.episodes[safe_idx[usafe(rng)]];
    batch.safe_real.push_back({keypoints_tensor(ep.x1, cfg.stride, cfg.keypoint_count + 1),
                               keypoints_tensor(ep.x2, cfg.stride, cfg.keypoint_count + 1),
                               uth(rng)});
  }
  for (int i = 0; i < n; ++i) {
    const auto& ep = dataset.episodes[critical_idx[ucrit(rng)]];
    batch.critical_real.push_back({keypoints_tensor(ep.x1, cfg.stride, cfg.keypoint_count + 1),
                                   keypoints_tensor(ep.x2, cfg.stride, cfg.keypoint_count + 1),
                                   uth(rng)});
  }
  for (int i = 0; i < n; ++i) {
    const auto& ep = dataset.episodes[uall(rng)];
    batch.generated.push_back(gen_item_from_episode(model, dataset, ep, rng));
  }
  return batch;
}

GBatch assemble_g_batch(const RouteGanModel& model, const data::Dataset& dataset, int n,
                        std::mt19937_64& rng) {
  std::uniform_int_distribution<int> uall(0, static_cast<int>(dataset.episodes.size()) - 1);
  GBatch batch;
  for (int i = 0; i < n; ++i) {
    const auto& ep = dataset.episodes[uall(rng)];
    batch.items.push_back(gen_item_from_episode(model, dataset, ep, rng));
  }
  return batch;
}

std::vector<MetricsRow> train(RouteGanModel& model, const data::Dataset& dataset,
                              const TrainConfig& config,
                              const std::function<void(int, const RouteGanModel&)>& on_step) {
  if (dataset.count(data::Label::SAFE) == 0 || dataset.count(data::Label::CRITICAL) == 0)
    throw std::invalid_argument("train: dataset must contain both SAFE and CRITICAL episodes");
  if (dataset.config.stride != model.cfg.stride)
    throw std::invalid_argument("train: dataset stride does not match the model config");
  if (dataset.config.episode_steps < model.cfg.keypoint_count * model.cfg.stride)
    throw std::invalid_argument("train: episodes shorter than the generator horizon");

  std::mt19937_64 rng(config.seed);
  nn::AdamConfig adam{config.lr, config.beta1, config.beta2, config.eps};
  std::vector<MetricsRow> rows;
  rows.reserve(config.steps);

  for (int step = 0; step < config.steps; ++step) {
    MetricsRow row;
    row.step = step;
    for (int d = 0; d < config.d_steps; ++d) {
      DBatch db = assemble_d_batch(model, dataset, config.batch, rng);
      row.d = loss_discriminator(model, db, true);
      if (!std::isfinite(row.d.total))
        throw TrainAbort(step, "train: non-finite discriminator loss at step " +
                                   std::to_string(step));
      nn::adam_step(model.disc, adam);
    }
    GBatch gb = assemble_g_batch(model, dataset, config.batch, rng);
    row.g = loss_generator(model, gb, true);
    if (!std::isfinite(row.g.total))
      throw TrainAbort(step, "train: non-finite generator loss at step " + std::to_string(step));
    nn::adam_step(model.gen, adam);
    nn::adam_step(model.aux, adam);
    rows.push_back(row);
    if (on_step) on_step(step, model);
  }
  return rows;
}

void write_metrics_csv(const std::vector<MetricsRow>& rows, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_metrics_csv: cannot write " + path);
  out << "step,d_valid,d_safe,d_critical,d_total,d_acc,"
         "g_valid,g_safe,g_critical,g_total,q_loss,road_loss,gq_total,onroad_rate\n";
  out << std::setprecision(17);
  for (const auto& r : rows) {
    out << r.step << ',' << r.d.valid << ',' << r.d.safe << ',' << r.d.critical << ','
        << r.d.total << ',' << r.d.accuracy << ',' << r.g.valid << ',' << r.g.safe << ','
        << r.g.critical << ',' << r.g.g_total << ',' << r.g.q_loss << ',' << r.g.road_loss << ','
        << r.g.total << ',' << r.g.onroad_rate << '\n';
  }
}

void save_checkpoint(const RouteGanModel& model, const std::string& path) {
  const ModelConfig& c = model.cfg;
  json j;
  j["version"] = 1;
  j["config"] = {{"scene_px", c.scene_px},       {"style_dim", c.style_dim},
                 {"noise_dim", c.noise_dim},     {"hidden_dim", c.hidden_dim},
                 {"goal_emb", c.goal_emb},       {"init_emb", c.init_emb},
                 {"obs_emb", c.obs_emb},         {"scene_emb", c.scene_emb},
                 {"mlp_width", c.mlp_width},     {"mlp_depth", c.mlp_depth},
                 {"keypoint_count", c.keypoint_count}, {"stride", c.stride},
                 {"dt", c.dt},                   {"bezier_k", c.bezier_k},
                 {"road_sigma", c.road_sigma},   {"alpha", c.alpha},
                 {"lambda1", c.lambda1},         {"lambda2", c.lambda2}};
  j["config_hash"] = config_hash(c);
  j["sets"] = {{"gen", nn::parameter_set_to_json(model.gen)},
               {"disc", nn::parameter_set_to_json(model.disc)},
               {"aux", nn::parameter_set_to_json(model.aux)}};
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_checkpoint: cannot write " + path);
  out << j.dump() << '\n';
}

RouteGanModel load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_checkpoint: cannot read " + path);
  json j = json::parse(in);
  if (j.at("version").get<int>() != 1)
    throw std::runtime_error("load_checkpoint: unsupported version");

  const auto& cj = j.at("config");
  ModelConfig c;
  c.scene_px = cj.at("scene_px").get<int>();
  c.style_dim = cj.at("style_dim").get<int>();
  c.noise_dim = cj.at("noise_dim").get<int>();
  c.hidden_dim = cj.at("hidden_dim").get<int>();
  c.goal_emb = cj.at("goal_emb").get<int>();
  c.init_emb = cj.at("init_emb").get<int>();
  c.obs_emb = cj.at("obs_emb").get<int>();
  c.scene_emb = cj.at("scene_emb").get<int>();
  c.mlp_width = cj.at("mlp_width").get<int>();
  c.mlp_depth = cj.at("mlp_depth").get<int>();
  c.keypoint_count = cj.at("keypoint_count").get<int>();
  c.stride = cj.at("stride").get<int>();
  c.dt = cj.at("dt").get<double>();
  c.bezier_k = cj.at("bezier_k").get<double>();
  c.road_sigma = cj.at("road_sigma").get<double>();
  c.alpha = cj.at("alpha").get<double>();
  c.lambda1 = cj.at("lambda1").get<double>();
  c.lambda2 = cj.at("lambda2").get<double>();
  if (j.at("config_hash").get<std::string>() != config_hash(c))
    throw std::runtime_error("load_checkpoint: config hash mismatch");

  RouteGanModel model = init_model(c, 0);
  auto restore = [](nn::ParameterSet& dst, const json& src) {
    nn::ParameterSet loaded = nn::parameter_set_from_json(src);
    if (loaded.params.size() != dst.params.size())
      throw std::runtime_error("load_checkpoint: parameter inventory mismatch");
    for (const auto& [name, p] : dst.params) {
      if (loaded.at(name).value.shape != p.value.shape)
        throw std::runtime_error("load_checkpoint: shape mismatch for " + name);
    }
    dst = std::move(loaded);
  };
  restore(model.gen, j.at("sets").at("gen"));
  restore(model.disc, j.at("sets").at("disc"));
  restore(model.aux, j.at("sets").at("aux"));
  return model;
}

}  // namespace rg::routegan
