#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "rg/config.hpp"
#include "rg/data.hpp"
#include "rg/geometry.hpp"
#include "rg/planners.hpp"
#include "rg/render.hpp"
#include "rg/routegan.hpp"
#include "rg/scene.hpp"
#include "rg/sim.hpp"

namespace fs = std::filesystem;
using namespace rg;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitNumeric = 3;

std::string resolve_out_dir(std::string out, const std::string& command) {
  if (!out.empty()) return out;
  if (const char* root = std::getenv("ROUTEGAN_OUT"))
    return (fs::path(root) / command).string();
  throw std::invalid_argument("no output directory: pass --out or set ROUTEGAN_OUT");
}

std::string num(double v) {
  std::ostringstream ss;
  ss << std::setprecision(17) << v;
  return ss.str();
}

void write_resolved_config(const std::map<std::string, std::string>& kv, const std::string& dir) {
  cfg::write_kv_file(kv, (fs::path(dir) / "resolved_config.txt").string());
}

std::vector<scene::Scene> standard_scenes(int px) {
  return {scene::make_scene(scene::SceneKind::StraightRoad, px, px),
          scene::make_scene(scene::SceneKind::Intersection, px, px),
          scene::make_scene(scene::SceneKind::Roundabout, px, px)};
}

struct GenDataArgs {
  std::string out;
  int safe = 500;
  int critical = 500;
  std::uint64_t seed = 0;
  int stride = 5;
  int episode_steps = 30;
  double dt = 0.1;
  int scene_px = 64;
};

int cmd_gen_data(const GenDataArgs& a) {
  std::string out = resolve_out_dir(a.out, "gen-data");
  fs::create_directories(out);

  data::DatasetConfig dc;
  dc.stride = a.stride;
  dc.episode_steps = a.episode_steps;
  dc.dt = a.dt;

  std::mt19937_64 rng(a.seed);
  data::Dataset ds = data::dataset_build(standard_scenes(a.scene_px), a.safe, a.critical, rng, dc);
  data::save_dataset(ds, out);

  write_resolved_config({{"command", "gen-data"},
                         {"out", out},
                         {"safe", std::to_string(a.safe)},
                         {"critical", std::to_string(a.critical)},
                         {"seed", std::to_string(a.seed)},
                         {"stride", std::to_string(a.stride)},
                         {"episode_steps", std::to_string(a.episode_steps)},
                         {"dt", num(a.dt)},
                         {"scene_px", std::to_string(a.scene_px)}},
                        out);

  std::cout << "episodes: " << ds.episodes.size() << " (safe "
            << ds.count(data::Label::SAFE) << ", critical " << ds.count(data::Label::CRITICAL)
            << ")\n";
  std::cout << "dataset written to " << out << "\n";
  return kExitOk;
}

struct TrainArgs {
  std::string data;
  std::string out;
  int steps = 2000;
  std::uint64_t seed = 0;
  int batch = 32;
  double lr = 2e-4;
  double beta1 = 0.5;
  double alpha = 0.5;
  double lambda1 = 1.0;
  double lambda2 = 10.0;
  int d_steps = 4;
  int keypoints = 6;
  int hidden_dim = 64;
  int noise_dim = 8;
  int style_dim = 2;
  int sample_svg_every = 0;
};

int cmd_train(const TrainArgs& a) {
  std::string out = resolve_out_dir(a.out, "train");
  fs::create_directories(out);
  data::Dataset ds = data::load_dataset(a.data);

  routegan::ModelConfig mc;
  mc.stride = ds.config.stride;
  mc.dt = ds.config.dt;
  mc.scene_px = ds.scenes.empty() ? 64 : ds.scenes.front().width_px;
  mc.keypoint_count = a.keypoints;
  mc.hidden_dim = a.hidden_dim;
  mc.noise_dim = a.noise_dim;
  mc.style_dim = a.style_dim;
  mc.alpha = a.alpha;
  mc.lambda1 = a.lambda1;
  mc.lambda2 = a.lambda2;

  routegan::RouteGanModel model = routegan::init_model(mc, a.seed);
  routegan::TrainConfig tc;
  tc.steps = a.steps;
  tc.batch = a.batch;
  tc.lr = a.lr;
  tc.beta1 = a.beta1;
  tc.d_steps = a.d_steps;
  tc.seed = a.seed;

  std::map<std::string, std::string> resolved = {
      {"command", "train"},         {"data", a.data},
      {"out", out},                 {"steps", std::to_string(a.steps)},
      {"seed", std::to_string(a.seed)}, {"batch", std::to_string(a.batch)},
      {"lr", num(a.lr)},            {"beta1", num(a.beta1)},
      {"alpha", num(a.alpha)},      {"lambda1", num(a.lambda1)},
      {"lambda2", num(a.lambda2)},  {"d_steps", std::to_string(a.d_steps)},
      {"keypoints", std::to_string(a.keypoints)}, {"hidden_dim", std::to_string(a.hidden_dim)},
      {"noise_dim", std::to_string(a.noise_dim)}, {"style_dim", std::to_string(a.style_dim)},
      {"stride", std::to_string(mc.stride)},      {"dt", num(mc.dt)},
      {"scene_px", std::to_string(mc.scene_px)}};

  std::function<void(int, const routegan::RouteGanModel&)> on_step;
  if (a.sample_svg_every > 0) {
    fs::create_directories(fs::path(out) / "samples");
    on_step = [&](int step, const routegan::RouteGanModel& m) {
      if ((step + 1) % a.sample_svg_every != 0) return;
      const auto& ep = ds.episodes.front();
      const auto& sc = ds.scene_by_id(ep.scene_id);
      routegan::StyleCode q = routegan::style_with_q1(m.cfg.style_dim, 2.0);
      std::mt19937_64 srng(cfg::mix_seed(a.seed, {static_cast<std::uint64_t>(step)}));
      routegan::NoiseCode z = routegan::sample_noise(m.cfg.noise_dim, srng);
      geom::KeyWaypoints kw =
          routegan::rollout(m, sc, ep.x1.positions.front(), ep.goal, q, z, m.cfg.keypoint_count,
                            [&](int k) {
                              std::size_t idx = std::min<std::size_t>(
                                  static_cast<std::size_t>(k) * m.cfg.stride,
                                  ep.x2.positions.size() - 1);
                              return ep.x2.positions[idx];
                            });
      data::InteractionEpisode sample;
      sample.x1 = geom::interpolate_trajectory(kw, geom::Heading(0.0), m.cfg.stride, m.cfg.dt,
                                               m.cfg.bezier_k);
      sample.x2 = ep.x2;
      sample.scene_id = ep.scene_id;
      sample.goal = ep.goal;
      std::ostringstream name;
      name << "step_" << std::setw(6) << std::setfill('0') << (step + 1) << ".svg";
      render::write_text_file(render::episode_svg(sc, sample),
                              (fs::path(out) / "samples" / name.str()).string());
    };
  }

  try {
    std::vector<routegan::MetricsRow> rows = routegan::train(model, ds, tc, on_step);
    routegan::write_metrics_csv(rows, (fs::path(out) / "metrics.csv").string());
  } catch (const routegan::TrainAbort& abort) {
    // Keep the last finite parameters on disk before reporting the failure.
    routegan::save_checkpoint(model, (fs::path(out) / "checkpoint.json").string());
    write_resolved_config(resolved, out);
    std::cerr << "error: " << abort.what() << "\n";
    return kExitNumeric;
  }
  routegan::save_checkpoint(model, (fs::path(out) / "checkpoint.json").string());
  write_resolved_config(resolved, out);
  std::cout << "checkpoint written to " << (fs::path(out) / "checkpoint.json").string() << "\n";
  return kExitOk;
}

struct EvalArgs {
  std::string checkpoint;
  std::string out;
  int episodes = 200;
  std::uint64_t seed = 0;
  std::string planners = "data,idm,astar";
  int workers = 1;
  int t_max = 100;
  std::vector<double> q_values;
};

int cmd_eval(const EvalArgs& a) {
  std::string out = resolve_out_dir(a.out, "eval");
  fs::create_directories(out);
  routegan::RouteGanModel model = routegan::load_checkpoint(a.checkpoint);

  std::vector<std::string> tested;
  std::stringstream ss(a.planners);
  std::string token;
  while (std::getline(ss, token, ','))
    if (!token.empty()) tested.push_back(token);

  sim::EvalConfig ec;
  if (!a.q_values.empty()) ec.q_values = a.q_values;
  ec.n_episodes = a.episodes;
  ec.seed = a.seed;
  ec.t_max = a.t_max;
  ec.workers = a.workers;
  ec.scene_px = model.cfg.scene_px;

  sim::EvaluationReport report = sim::evaluate_table(model, tested, ec);
  sim::write_report_csv(report, (fs::path(out) / "report.csv").string());
  sim::write_report_json(report, (fs::path(out) / "report.json").string());

  std::ostringstream qcsv;
  for (std::size_t i = 0; i < ec.q_values.size(); ++i)
    qcsv << (i ? "," : "") << ec.q_values[i];
  write_resolved_config({{"command", "eval"},
                         {"checkpoint", a.checkpoint},
                         {"out", out},
                         {"episodes", std::to_string(a.episodes)},
                         {"seed", std::to_string(a.seed)},
                         {"planners", a.planners},
                         {"workers", std::to_string(a.workers)},
                         {"t_max", std::to_string(a.t_max)},
                         {"q_values", qcsv.str()}},
                        out);

  std::cout << "collision rates (rows: tested planner, columns: q1)\n";
  std::cout << std::left << std::setw(8) << "planner";
  for (double q : report.q_values) std::cout << std::setw(9) << q;
  std::cout << "\n";
  for (std::size_t p = 0; p < report.planners.size(); ++p) {
    std::cout << std::left << std::setw(8) << report.planners[p];
    for (const auto& cell : report.cells[p]) {
      std::ostringstream v;
      if (cell.missing)
        v << "n/a";
      else
        v << std::fixed << std::setprecision(1) << cell.rate * 100.0 << "%";
      std::cout << std::setw(9) << v.str();
    }
    std::cout << "\n";
  }
  return kExitOk;
}

struct SweepArgs {
  std::string checkpoint;
  std::string out;
  std::uint64_t seed = 0;
  std::vector<int> dims = {0, 1};
  bool joint = false;
  std::string kind = "straight_road";
  std::string interaction_case = "I";
  int t_max = 100;
};

int cmd_sweep(const SweepArgs& a) {
  std::string out = resolve_out_dir(a.out, "sweep");
  fs::create_directories(out);
  routegan::RouteGanModel model = routegan::load_checkpoint(a.checkpoint);
  if (a.dims.size() != 2) throw std::invalid_argument("--dims needs exactly two entries");

  scene::Scene sc = scene::make_scene(scene::kind_from_name(a.kind), model.cfg.scene_px,
                                      model.cfg.scene_px);
  std::mt19937_64 rng(a.seed);
  scene::ScenarioOptions opts;
  opts.reference_steps = a.t_max;
  opts.goal_horizon = model.cfg.keypoint_count * model.cfg.stride;
  opts.dt = model.cfg.dt;
  scene::ScenarioSpec spec =
      scene::sample_scenario(sc, scene::case_from_name(a.interaction_case), rng, opts);
  routegan::NoiseCode z1 = routegan::sample_noise(model.cfg.noise_dim, rng);
  routegan::NoiseCode z2 = routegan::sample_noise(model.cfg.noise_dim, rng);

  sim::SimParams params;
  params.t_max = a.t_max;
  params.stride = model.cfg.stride;
  params.dt = model.cfg.dt;

  const std::vector<double> values = {-2.0, -1.0, 0.0, 1.0, 2.0};
  std::vector<data::InteractionEpisode> episodes;
  std::vector<std::string> labels;
  episodes.reserve(25);

  std::ofstream dump(fs::path(out) / "rollouts.jsonl");
  if (!dump) throw std::runtime_error("cannot write rollouts.jsonl");

  if (!a.joint) {
    sim::SweepGrid grid =
        sim::latent_sweep(model, sc, spec, a.dims[0], a.dims[1], values, z1, params);
    for (std::size_t i = 0; i < grid.cells.size(); ++i) {
      double vi = values[i / values.size()];
      double vj = values[i % values.size()];
      episodes.push_back(sim::rollout_to_episode(grid.cells[i], sc.id, 0.03, 0.02));
      std::ostringstream label;
      label << "q" << (a.dims[0] + 1) << "=" << vi << " q" << (a.dims[1] + 1) << "=" << vj;
      labels.push_back(label.str());
      std::ostringstream name;
      name << "cell_q" << (a.dims[0] + 1) << "_" << vi << "_q" << (a.dims[1] + 1) << "_" << vj
           << ".svg";
      render::write_text_file(render::episode_svg(sc, episodes.back()),
                              (fs::path(out) / name.str()).string());
      dump << data::episode_to_json(episodes.back()) << "\n";
    }
  } else {
    for (double vi : values) {
      for (double vj : values) {
        routegan::StyleCode q1 = routegan::style_with_q1(model.cfg.style_dim, vi);
        routegan::StyleCode q2 = routegan::style_zero(model.cfg.style_dim);
        q2.q[1] = vj;
        sim::RolloutResult res =
            sim::joint_generation(model, sc, spec, q1, q2, z1, z2, params);
        episodes.push_back(sim::rollout_to_episode(res, sc.id, 0.03, 0.02));
        std::ostringstream label;
        label << "q1(1)=" << vi << " q2(2)=" << vj;
        labels.push_back(label.str());
        std::ostringstream name;
        name << "cell_q1_" << vi << "_q2_" << vj << ".svg";
        render::write_text_file(render::episode_svg(sc, episodes.back()),
                                (fs::path(out) / name.str()).string());
        dump << data::episode_to_json(episodes.back()) << "\n";
      }
    }
  }

  std::vector<render::GridCell> cells;
  for (std::size_t i = 0; i < episodes.size(); ++i)
    cells.push_back({&sc, &episodes[i], labels[i]});
  render::write_text_file(render::grid_svg(cells, 5, 5), (fs::path(out) / "grid.svg").string());

  write_resolved_config({{"command", "sweep"},
                         {"checkpoint", a.checkpoint},
                         {"out", out},
                         {"seed", std::to_string(a.seed)},
                         {"dims", std::to_string(a.dims[0]) + "," + std::to_string(a.dims[1])},
                         {"joint", a.joint ? "1" : "0"},
                         {"kind", a.kind},
                         {"case", a.interaction_case},
                         {"t_max", std::to_string(a.t_max)}},
                        out);
  std::cout << "sweep written to " << out << " (" << episodes.size() << " cells)\n";
  return kExitOk;
}

struct RenderArgs {
  std::string episodes;
  int line = 1;
  std::string scenes;
  std::string out;
};

int cmd_render(const RenderArgs& a) {
  std::ifstream in(a.episodes);
  if (!in) throw std::invalid_argument("cannot read " + a.episodes);
  std::string line;
  int n = 0;
  while (n < a.line && std::getline(in, line)) ++n;
  if (n != a.line || line.empty())
    throw std::invalid_argument("no episode at line " + std::to_string(a.line));

  data::InteractionEpisode ep;
  try {
    ep = data::episode_from_json(line);
  } catch (const std::exception& e) {
    throw std::invalid_argument("malformed episode at line " + std::to_string(a.line) + ": " +
                                e.what());
  }
  scene::Scene sc = scene::load_scene((fs::path(a.scenes) / (ep.scene_id + ".pgm")).string(),
                                      (fs::path(a.scenes) / (ep.scene_id + ".json")).string());
  fs::create_directories(fs::path(a.out).parent_path().empty()
                             ? fs::path(".")
                             : fs::path(a.out).parent_path());
  render::write_text_file(render::episode_svg(sc, ep), a.out);
  std::cout << "rendered " << a.out << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"RouteGAN-style interaction generation and planner evaluation"};
  app.require_subcommand(1);

  GenDataArgs gd;
  auto* gen = app.add_subcommand("gen-data", "Generate the synthetic interaction dataset");
  gen->set_config("--config");
  gen->add_option("--out", gd.out, "output directory");
  gen->add_option("--safe", gd.safe, "number of SAFE episodes");
  gen->add_option("--critical", gd.critical, "number of CRITICAL episodes");
  gen->add_option("--seed", gd.seed, "master seed");
  gen->add_option("--stride", gd.stride, "keypoint stride s");
  gen->add_option("--episode-steps", gd.episode_steps, "episode length in timesteps");
  gen->add_option("--dt", gd.dt, "timestep seconds");
  gen->add_option("--scene-px", gd.scene_px, "scene grid resolution");

  TrainArgs tr;
  auto* train = app.add_subcommand("train", "Train the generator on a dataset");
  train->set_config("--config");
  train->add_option("--data", tr.data, "dataset directory")->required();
  train->add_option("--out", tr.out, "output directory");
  train->add_option("--steps", tr.steps, "outer training steps");
  train->add_option("--seed", tr.seed, "master seed");
  train->add_option("--batch", tr.batch, "batch size");
  train->add_option("--lr", tr.lr, "Adam learning rate");
  train->add_option("--beta1", tr.beta1, "Adam beta1");
  train->add_option("--alpha", tr.alpha, "validity-term weight in the generator loss");
  train->add_option("--lambda1", tr.lambda1, "info-loss weight");
  train->add_option("--lambda2", tr.lambda2, "road-loss weight");
  train->add_option("--d-steps", tr.d_steps, "discriminator updates per outer step");
  train->add_option("--keypoints", tr.keypoints, "generated keypoints per rollout (m)");
  train->add_option("--hidden-dim", tr.hidden_dim, "recurrent hidden size");
  train->add_option("--noise-dim", tr.noise_dim, "noise vector size");
  train->add_option("--style-dim", tr.style_dim, "style vector size (c)");
  train->add_option("--sample-svg-every", tr.sample_svg_every,
                    "write a sample rollout SVG every N steps (0 = off)");

  EvalArgs ev;
  auto* eval = app.add_subcommand("eval", "Collision-rate table against tested planners");
  eval->set_config("--config");
  eval->add_option("--checkpoint", ev.checkpoint, "trained checkpoint")->required();
  eval->add_option("--out", ev.out, "output directory");
  eval->add_option("--episodes", ev.episodes, "episodes per (planner, q) cell");
  eval->add_option("--seed", ev.seed, "master seed");
  eval->add_option("--planners", ev.planners, "comma list: data,idm,astar");
  eval->add_option("--workers", ev.workers, "worker threads (outputs unchanged)");
  eval->add_option("--t-max", ev.t_max, "episode horizon in timesteps");
  eval->add_option("--q", ev.q_values, "q1 values to sweep");

  SweepArgs sw;
  auto* sweep = app.add_subcommand("sweep", "5x5 latent-space sweep grid");
  sweep->set_config("--config");
  sweep->add_option("--checkpoint", sw.checkpoint, "trained checkpoint")->required();
  sweep->add_option("--out", sw.out, "output directory");
  sweep->add_option("--seed", sw.seed, "master seed");
  sweep->add_option("--dims", sw.dims, "two style dimensions to sweep (0-based)");
  sweep->add_flag("--joint", sw.joint, "both vehicles on RouteGAN");
  sweep->add_option("--kind", sw.kind, "scene kind");
  sweep->add_option("--case", sw.interaction_case, "interaction case (I, II, III)");
  sweep->add_option("--t-max", sw.t_max, "episode horizon in timesteps");

  RenderArgs rd;
  auto* render_cmd = app.add_subcommand("render", "Render one episode JSONL line to SVG");
  render_cmd->set_config("--config");
  render_cmd->add_option("--episodes", rd.episodes, "episodes.jsonl path")->required();
  render_cmd->add_option("--line", rd.line, "1-based line number");
  render_cmd->add_option("--scenes", rd.scenes, "scene directory")->required();
  render_cmd->add_option("--out", rd.out, "output SVG path")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (gen->parsed()) return cmd_gen_data(gd);
    if (train->parsed()) return cmd_train(tr);
    if (eval->parsed()) return cmd_eval(ev);
    if (sweep->parsed()) return cmd_sweep(sw);
    if (render_cmd->parsed()) return cmd_render(rd);
  } catch (const routegan::TrainAbort& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  return kExitUsage;
}
