// lsdf: precompute link SDFs, benchmark the distance checkers, replay point
// cloud sequences and train the transform approximator.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <random>
#include <string>

#include "lsdf/lsdf.hpp"

namespace fs = std::filesystem;
using namespace lsdf;

namespace {

constexpr int kExitValidation = 2;
constexpr int kExitRuntime = 3;

struct Scenario {
  std::string robot;
  double grid_extent = 1.0;
  double grid_res = 0.04;
  double link_extent = 0.6;
  double link_res = 0.01;
  std::string trajectory;
  std::string clouds;
  std::string provider = "exact";
  std::string model;
  std::uint64_t seed = 0;
  double d_prot = 0.03;
  double v_obs = 1.6;
  bool strict_extent = false;
  bool unmasked = false;
};

void add_grid_flags(CLI::App* cmd, Scenario& s) {
  cmd->add_option("--grid-extent", s.grid_extent, "environment half-extent e_e [m]")->capture_default_str();
  cmd->add_option("--grid-res", s.grid_res, "environment resolution r_e [m]")->capture_default_str();
  cmd->add_option("--link-extent", s.link_extent, "link grid half-extent e_r [m]")->capture_default_str();
}

void add_scenario_flags(CLI::App* cmd, Scenario& s) {
  cmd->add_option("--robot", s.robot, "robot model JSON")->required();
  add_grid_flags(cmd, s);
  cmd->add_option("--link-res", s.link_res, "link grid resolution r_r [m]")->capture_default_str();
  cmd->add_option("--trajectory", s.trajectory, "configuration CSV");
  cmd->add_option("--clouds", s.clouds, "point cloud manifest");
  cmd->add_option("--provider", s.provider, "grid transform provider")
      ->check(CLI::IsMember({"exact", "neural"}))
      ->capture_default_str();
  cmd->add_option("--model", s.model, "approximator model file (neural provider)");
  cmd->add_option("--seed", s.seed, "random seed")->capture_default_str();
  cmd->add_option("--d-prot", s.d_prot, "protective distance [m]")->capture_default_str();
  cmd->add_option("--v-obs", s.v_obs, "obstacle speed [m/s]")->capture_default_str();
  cmd->add_flag("--strict-extent", s.strict_extent, "fail instead of warn when e_r is below the required extent");
  cmd->add_flag("--unmasked", s.unmasked, "resample the full window instead of the sphere mask");
}

void check_extent(const Scenario& s, const RobotModel& model) {
  const double need = required_extent(s.v_obs, max_braking_time(model), s.d_prot, model.link_reach());
  if (s.link_extent + 1e-12 >= need) return;
  char buf[200];
  std::snprintf(buf, sizeof buf, "link extent %.3f m is below the required %.3f m", s.link_extent, need);
  if (s.strict_extent) throw ValidationError(buf);
  warn_to_stderr(buf);
}

struct Prepared {
  RobotModel model;
  EnvGrid grid;
  CanonicalWindow window;
  std::vector<LinkSdf> sdfs;
  std::optional<TinyMlp> mlp;
  std::optional<NeuralGridTransform> neural;
};

std::unique_ptr<Prepared> prepare(const Scenario& s) {
  auto p = std::unique_ptr<Prepared>(new Prepared{load_robot_model(s.robot), EnvGrid::cubic(s.grid_extent, s.grid_res),
                                                  {}, {}, {}, {}});
  check_extent(s, p->model);
  p->window = make_canonical_window(s.link_extent, p->grid, !s.unmasked);
  p->sdfs = build_robot_link_sdfs(p->model, static_cast<float>(s.link_extent), static_cast<float>(s.link_res));
  if (s.provider == "neural") {
    if (s.model.empty()) throw ValidationError("--provider neural requires --model");
    p->mlp = load_tiny_mlp(s.model);
    p->neural.emplace(*p->mlp, p->window);
  }
  return p;
}

ConfigBatch trajectory_or_random(const Scenario& s, const RobotModel& model, std::size_t configs, std::mt19937_64& rng) {
  if (!s.trajectory.empty()) {
    ConfigBatch b = load_config_csv(s.trajectory);
    check_limits(model, b);
    return b;
  }
  return random_configs(model, configs, rng);
}

RobotSdfBatch build_batch(const Prepared& p, const ConfigBatch& configs) {
  const LinkPoseBatch poses = forward_kinematics_batch(p.model, configs);
  if (p.neural) return build_robot_sdfs(p.sdfs, poses, p.grid, *p.neural);
  return build_robot_sdfs(p.sdfs, poses, p.grid, ExactGridTransform(p.window));
}

// ---------------------------------------------------------------------------

struct PrecomputeArgs {
  std::string robot;
  double link_extent = 0.6;
  double link_res = 0.01;
  std::string out;
  bool force = false;
};

int cmd_precompute(const PrecomputeArgs& a) {
  const RobotModel model = load_robot_model(a.robot);
  fs::create_directories(a.out);
  std::vector<fs::path> targets;
  for (std::size_t i = 0; i < model.link_count(); ++i) {
    if (!model.links()[i].geometry) continue;
    targets.push_back(fs::path(a.out) / ("link_" + std::to_string(i) + "_" + model.links()[i].name + ".lsdf"));
    if (!a.force && fs::exists(targets.back())) {
      throw ValidationError(targets.back().string() + " exists; pass --force to overwrite");
    }
  }
  const auto sdfs = build_robot_link_sdfs(model, static_cast<float>(a.link_extent), static_cast<float>(a.link_res));
  for (std::size_t k = 0; k < sdfs.size(); ++k) {
    save_link_sdf(targets[k], sdfs[k]);
    std::cout << targets[k].string() << '\n';
  }
  return 0;
}

struct BenchArgs {
  Scenario s;
  std::size_t configs = 500;
  std::size_t obstacles = 3000;
  std::size_t reps = 20;
  std::size_t prepare_reps = 5;
  bool no_oracle = false;
  std::string out;
};

int cmd_bench(const BenchArgs& a) {
  const Scenario& s = a.s;
  if (a.reps < 5 || a.prepare_reps < 5) throw ValidationError("at least 5 repetitions are required");
  std::mt19937_64 rng(s.seed);
  const auto p = prepare(s);
  const ConfigBatch configs = trajectory_or_random(s, p->model, a.configs, rng);
  ObstacleVoxelSet obstacles;
  if (!s.clouds.empty()) {
    const auto manifest = load_manifest(s.clouds);
    if (manifest.empty()) throw ValidationError("manifest has no frames");
    obstacles = voxelize_pointcloud(load_cloud_frame(manifest.front().frame), p->grid);
  } else {
    obstacles = random_obstacles(p->grid, std::min(a.obstacles, p->grid.voxel_count()), rng);
  }
  const SphereRobotModel spheres = make_sphere_model(p->model);

  BenchInputs in;
  in.model = &p->model;
  in.sdfs = p->sdfs;
  in.spheres = &spheres;
  in.configs = &configs;
  in.grid = &p->grid;
  in.obstacles = &obstacles;
  in.precompute = [&] {
    return build_robot_link_sdfs(p->model, static_cast<float>(s.link_extent), static_cast<float>(s.link_res), nullptr);
  };
  BenchOptions opt;
  opt.repetitions = a.reps;
  opt.prepare_repetitions = a.prepare_reps;
  opt.oracle = !a.no_oracle;
  const Vec3& r_e = p->grid.resolution();
  opt.budget = 0.5 * r_e.norm() + 0.5 * std::sqrt(3.0) * s.link_res;
  opt.trusted_range = s.link_extent - p->model.link_reach() - r_e.norm();
  const BenchReport report = run_bench(in, p->window, opt, p->neural ? &*p->neural : nullptr);

  write_bench_summary(std::cout, report);
  if (!a.out.empty()) {
    std::ofstream os(a.out);
    if (!os) throw Error("cannot open " + a.out);
    write_bench_csv(os, report);
  }
  return 0;
}

struct ReplayArgs {
  Scenario s;
  std::string out;
  std::string summary;
};

int cmd_replay(const ReplayArgs& a) {
  const Scenario& s = a.s;
  if (s.trajectory.empty() || s.clouds.empty()) throw ValidationError("replay needs --trajectory and --clouds");
  const auto manifest = load_manifest(s.clouds);
  const auto p = prepare(s);
  std::mt19937_64 rng(s.seed);
  const ConfigBatch configs = trajectory_or_random(s, p->model, 0, rng);
  const RobotSdfBatch batch = build_batch(*p, configs);

  std::ofstream file;
  std::ostream* os = &std::cout;
  if (!a.out.empty()) {
    file.open(a.out);
    if (!file) throw Error("cannot open " + a.out);
    os = &file;
  }
  std::ofstream summary;
  if (!a.summary.empty()) {
    summary.open(a.summary);
    if (!summary) throw Error("cannot open " + a.summary);
    summary << "timestamp,min_distance,waypoint\n";
  }
  write_distance_csv_header(*os, batch.configs());
  std::size_t next = 0;
  std::size_t cycles = 0;
  float overall = static_cast<float>(batch.d_far());
  distances_along_trajectory(
      batch,
      [&]() -> std::optional<CloudFrame> {
        if (next >= manifest.size()) return std::nullopt;
        const ManifestEntry& e = manifest[next++];
        return CloudFrame{e.timestamp_ms, load_cloud_frame(e.frame)};
      },
      [&](const CycleDistances& d) {
        write_distance_csv_row(*os, d);
        const auto it = std::min_element(d.distances.begin(), d.distances.end());
        if (summary.is_open() && it != d.distances.end()) {
          char buf[96];
          std::snprintf(buf, sizeof buf, "%lld,%.6f,%td\n", static_cast<long long>(d.timestamp_ms),
                        static_cast<double>(*it), it - d.distances.begin());
          summary << buf;
        }
        if (it != d.distances.end()) overall = std::min(overall, *it);
        ++cycles;
      });
  std::cerr << "replayed " << cycles << " frames over " << batch.configs() << " waypoints; minimum distance "
            << overall << " m\n";
  return 0;
}

struct TrainArgs {
  Scenario s;
  TrainingConfig cfg;
  std::size_t eval_samples = 100000;
  std::string out;
  bool allow_unconverged = false;
};

int cmd_train(TrainArgs a) {
  const EnvGrid grid = EnvGrid::cubic(a.s.grid_extent, a.s.grid_res);
  const CanonicalWindow window = make_canonical_window(a.s.link_extent, grid, !a.s.unmasked);
  a.cfg.seed = a.s.seed;
  a.cfg.require_convergence = !a.allow_unconverged;
  std::cerr << "training on " << window.active_count() << " window cells (W=" << window.dims.x() << ")\n";
  TrainingResult result;
  try {
    result = train_approximator(window.points, a.cfg, [](const TrainingCheckpoint& cp) {
      std::fprintf(stderr, "step %zu loss %.6f validation mae %.6f max %.6f\n", cp.step, cp.train_loss,
                   cp.validation_mae, cp.validation_max);
    });
  } catch (const NotConverged& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  save_tiny_mlp(a.out, result.model);
  std::mt19937_64 rng(a.s.seed + 1);
  const ApproximationError e = evaluate_approximator(result.model, window, a.eval_samples, rng);
  std::printf("model %s\nsamples %zu\nmax_abs_error %.6g\nmean_abs_error %.6g\nmetric_max_error_m %.6g\n",
              a.out.c_str(), a.eval_samples, e.max_abs_error, e.mean_abs_error, e.max_abs_error * a.s.link_extent);
  return 0;
}

struct EvalArgs {
  Scenario s;
  std::size_t samples = 100000;
};

int cmd_eval(const EvalArgs& a) {
  const EnvGrid grid = EnvGrid::cubic(a.s.grid_extent, a.s.grid_res);
  const CanonicalWindow window = make_canonical_window(a.s.link_extent, grid, !a.s.unmasked);
  std::mt19937_64 rng(a.s.seed);
  ApproximationError e;
  if (a.s.provider == "exact") {
    e = evaluate_exact_provider(window, a.samples, rng);
  } else {
    if (a.s.model.empty()) throw ValidationError("--provider neural requires --model");
    e = evaluate_approximator(load_tiny_mlp(a.s.model), window, a.samples, rng);
  }
  std::printf("provider %s\nsamples %zu\nmax_abs_error %.6g\nmean_abs_error %.6g\n", a.s.provider.c_str(), a.samples,
              e.max_abs_error, e.mean_abs_error);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Link-SDF distance checker"};
  app.require_subcommand(1);

  PrecomputeArgs pre;
  auto* c_pre = app.add_subcommand("precompute", "build one LSDF cache file per link");
  c_pre->add_option("--robot", pre.robot, "robot model JSON")->required();
  c_pre->add_option("--link-extent", pre.link_extent, "link grid half-extent e_r [m]")->capture_default_str();
  c_pre->add_option("--link-res", pre.link_res, "link grid resolution r_r [m]")->capture_default_str();
  c_pre->add_option("--out", pre.out, "output directory")->required();
  c_pre->add_flag("--force", pre.force, "overwrite existing cache files");

  BenchArgs bench;
  auto* c_bench = app.add_subcommand("bench", "time SDF and sphere distance checkers on one trajectory");
  add_scenario_flags(c_bench, bench.s);
  c_bench->add_option("--configs", bench.configs, "random configurations when no trajectory is given")->capture_default_str();
  c_bench->add_option("--obstacles", bench.obstacles, "random occupied voxels when no clouds are given")->capture_default_str();
  c_bench->add_option("--reps", bench.reps, "timed query repetitions")->capture_default_str();
  c_bench->add_option("--prepare-reps", bench.prepare_reps, "timed preparation repetitions")->capture_default_str();
  c_bench->add_flag("--no-oracle", bench.no_oracle, "skip the brute-force distance reference");
  c_bench->add_option("--out", bench.out, "report CSV");

  ReplayArgs replay;
  auto* c_replay = app.add_subcommand("replay", "distances for every frame of a point cloud sequence");
  add_scenario_flags(c_replay, replay.s);
  c_replay->add_option("--out", replay.out, "distance CSV (default stdout)");
  c_replay->add_option("--summary", replay.summary, "per-frame minimum distance CSV");

  TrainArgs train;
  auto* c_train = app.add_subcommand("train", "train the grid transform approximator");
  train.s.grid_res = 0.1;
  train.s.link_extent = 1.2;
  add_grid_flags(c_train, train.s);
  c_train->add_flag("--unmasked", train.s.unmasked, "train on the full window");
  c_train->add_option("--seed", train.s.seed, "random seed")->capture_default_str();
  c_train->add_option("--hidden", train.cfg.hidden, "hidden width")->capture_default_str();
  c_train->add_option("--lr", train.cfg.learning_rate, "learning rate")->capture_default_str();
  c_train->add_option("--steps", train.cfg.steps, "maximum optimisation steps")->capture_default_str();
  c_train->add_option("--batch", train.cfg.batch_size, "rotations per step")->capture_default_str();
  c_train->add_option("--validation", train.cfg.validation_size, "validation rotations")->capture_default_str();
  c_train->add_option("--eval-every", train.cfg.eval_every, "steps between validations")->capture_default_str();
  c_train->add_option("--target", train.cfg.target_max_error, "max error target")->capture_default_str();
  c_train->add_option("--eval-samples", train.eval_samples, "rotations for the final evaluation")->capture_default_str();
  c_train->add_flag("--allow-unconverged", train.allow_unconverged, "save the model even if the target is missed");
  c_train->add_option("--out", train.out, "model file")->required();

  EvalArgs eval;
  auto* c_eval = app.add_subcommand("eval", "measure a transform provider against the exact transform");
  eval.s.grid_res = 0.1;
  eval.s.link_extent = 1.2;
  add_grid_flags(c_eval, eval.s);
  c_eval->add_flag("--unmasked", eval.s.unmasked, "use the full window");
  c_eval->add_option("--provider", eval.s.provider, "grid transform provider")
      ->check(CLI::IsMember({"exact", "neural"}))
      ->capture_default_str();
  c_eval->add_option("--model", eval.s.model, "approximator model file");
  c_eval->add_option("--seed", eval.s.seed, "random seed")->capture_default_str();
  c_eval->add_option("--samples", eval.samples, "rotations")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitValidation;
  }

  try {
    train.cfg.stop_max_error = train.cfg.target_max_error;
    if (c_pre->parsed()) return cmd_precompute(pre);
    if (c_bench->parsed()) return cmd_bench(bench);
    if (c_replay->parsed()) return cmd_replay(replay);
    if (c_train->parsed()) return cmd_train(train);
    if (c_eval->parsed()) return cmd_eval(eval);
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitValidation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return 0;
}
