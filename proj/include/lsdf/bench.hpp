#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>
#include <optional>
#include <ostream>
#include <random>
#include <string>
#include <unordered_set>
#include <vector>

#include "lsdf/assembly_query.hpp"
#include "lsdf/core_grids.hpp"
#include "lsdf/errors.hpp"
#include "lsdf/neural_approx.hpp"
#include "lsdf/placement.hpp"
#include "lsdf/robot_model.hpp"
#include "lsdf/sdf_precompute.hpp"

namespace lsdf {

/// Figures from the reference GPU implementation, printed next to local
/// measurements for comparison only.
struct ReferenceFigures {
  static constexpr double sphere_prepare_s = 0.15;
  static constexpr double sdf_prepare_s = 2.34;
  static constexpr double sphere_query_ms = 5.47;
  static constexpr double sdf_query_ms = 0.391;
  static constexpr double query_budget_ms = 1.0;  // 500 waypoints
  static constexpr double neural_transform_speedup = 3.2;
  static constexpr double neural_total_speedup = 2.0;
};

struct TimingStats {
  double mean_ms = 0.0;
  double std_ms = 0.0;
  std::size_t repetitions = 0;
};

/// Runs `fn` `warmup` times untimed, then `reps` times on the monotonic
/// clock. std is the sample standard deviation.
template <typename Fn>
TimingStats time_repeated(Fn&& fn, std::size_t warmup, std::size_t reps) {
  if (reps == 0) throw ValidationError("at least one timed repetition is required");
  for (std::size_t i = 0; i < warmup; ++i) fn();
  std::vector<double> ms(reps);
  for (auto& t : ms) {
    const auto t0 = std::chrono::steady_clock::now();
    fn();
    t = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  }
  TimingStats s;
  s.repetitions = reps;
  for (double t : ms) s.mean_ms += t;
  s.mean_ms /= static_cast<double>(reps);
  if (reps > 1) {
    double var = 0.0;
    for (double t : ms) var += (t - s.mean_ms) * (t - s.mean_ms);
    s.std_ms = std::sqrt(var / static_cast<double>(reps - 1));
  }
  return s;
}

/// Uniform random configurations inside the joint position limits.
template <typename Rng>
ConfigBatch random_configs(const RobotModel& model, std::size_t count, Rng& rng) {
  ConfigBatch b;
  b.q.resize(static_cast<Eigen::Index>(count), model.dof());
  for (int d = 0; d < model.dof(); ++d) {
    const JointLimits& lim = model.dof_joint(d).limits;
    std::uniform_real_distribution<double> u(lim.lower, lim.upper);
    for (std::size_t c = 0; c < count; ++c) b.q(static_cast<Eigen::Index>(c), d) = u(rng);
  }
  return b;
}

/// `count` distinct occupied voxels chosen uniformly from the grid.
template <typename Rng>
ObstacleVoxelSet random_obstacles(const EnvGrid& grid, std::size_t count, Rng& rng) {
  if (count > grid.voxel_count()) throw ValidationError("more obstacle voxels requested than the grid holds");
  std::uniform_int_distribution<std::uint32_t> u(0, static_cast<std::uint32_t>(grid.voxel_count() - 1));
  std::unordered_set<std::uint32_t> seen;
  ObstacleVoxelSet out{grid, {}, 0, 0};
  while (out.occupied.size() < count) {
    const std::uint32_t v = u(rng);
    if (seen.insert(v).second) out.occupied.push_back(v);
  }
  std::sort(out.occupied.begin(), out.occupied.end());
  out.source_points = count;
  return out;
}

/// Brute-force reference: min over (link, occupied voxel center) of the exact
/// geometry distance, clamped to `d_far`. No grids involved.
inline std::vector<double> oracle_min_distances(const RobotModel& model, const LinkPoseBatch& poses,
                                                const ObstacleVoxelSet& obstacles, double d_far) {
  std::vector<LinkDistanceFunction> fns;
  std::vector<std::size_t> ids;
  for (std::size_t i = 0; i < model.link_count(); ++i) {
    const Link& l = model.links()[i];
    if (!l.geometry) continue;
    fns.emplace_back(*l.geometry, l.geometry_origin, true);
    ids.push_back(i);
  }
  std::vector<Vec3> centers;
  centers.reserve(obstacles.size());
  for (std::uint32_t v : obstacles.occupied) centers.push_back(obstacles.grid.center(obstacles.grid.index_from_linear(v)));
  std::vector<double> out(poses.configs, d_far);
  parallel_for(poses.configs, [&](std::size_t c) {
    double best = d_far;
    for (std::size_t k = 0; k < fns.size(); ++k) {
      const Pose inv = poses.at(c, ids[k]).inverse();
      for (const Vec3& o : centers) best = std::min(best, fns[k](inv * o));
    }
    out[c] = best;
  });
  return out;
}

struct BenchOptions {
  std::size_t warmup = 3;
  std::size_t repetitions = 20;        // per-query timings
  std::size_t prepare_repetitions = 5;  // preparation and precompute timings
  bool oracle = true;
  double budget = 0.0;                 // allowed SDF error for the conservativeness check
  // Distances are compared as min(d, trusted_range): beyond it the window
  // no longer covers every obstacle voxel and the field reads D_FAR.
  double trusted_range = std::numeric_limits<double>::infinity();
};

struct BenchReport {
  std::size_t configs = 0;
  std::size_t links = 0;
  std::size_t occupied = 0;
  std::size_t spheres = 0;
  std::size_t window_cells = 0;
  std::string provider = "exact";

  TimingStats precompute;
  TimingStats placement_exact;
  std::optional<TimingStats> placement_neural;
  TimingStats assembly;
  TimingStats sdf_prepare;
  TimingStats sdf_query;
  TimingStats sphere_prepare;
  TimingStats sphere_query;

  std::size_t sdf_gathers = 0;
  std::size_t sdf_pose_arithmetic = 0;
  std::size_t sphere_pose_arithmetic = 0;

  double budget = 0.0;
  double max_sdf_oracle_error = std::numeric_limits<double>::quiet_NaN();
  double mean_sphere_minus_sdf = 0.0;
  double max_sphere_minus_sdf = 0.0;
  std::size_t conservativeness_violations = 0;

  bool prepare_order_holds() const { return sdf_prepare.mean_ms > sphere_prepare.mean_ms; }
  bool query_order_holds() const { return sdf_query.mean_ms < sphere_query.mean_ms; }
  bool gather_count_exact() const { return sdf_gathers == configs * occupied; }
};

struct BenchInputs {
  const RobotModel* model = nullptr;
  std::span<const LinkSdf> sdfs;
  const SphereRobotModel* spheres = nullptr;
  const ConfigBatch* configs = nullptr;
  const EnvGrid* grid = nullptr;
  const ObstacleVoxelSet* obstacles = nullptr;
  std::function<std::vector<LinkSdf>()> precompute;  // optional
};

/// Times both distance checkers on one trajectory and compares their
/// outputs. `neural`, when given, becomes the preparation provider.
inline BenchReport run_bench(const BenchInputs& in, const CanonicalWindow& window, const BenchOptions& opt,
                             const NeuralGridTransform* neural = nullptr) {
  if (!in.model || !in.spheres || !in.configs || !in.grid || !in.obstacles) {
    throw ValidationError("bench inputs incomplete");
  }
  const EnvGrid& grid = *in.grid;
  const ExactGridTransform exact(window);
  BenchReport r;
  r.configs = static_cast<std::size_t>(in.configs->size());
  r.links = in.sdfs.size();
  r.occupied = in.obstacles->size();
  r.spheres = in.spheres->sphere_count();
  r.window_cells = window.active_count();
  r.provider = neural ? "neural" : "exact";
  r.budget = opt.budget;

  if (in.precompute) r.precompute = time_repeated(in.precompute, 0, opt.prepare_repetitions);

  const LinkPoseBatch poses = forward_kinematics_batch(*in.model, *in.configs);
  const double d_far = global_d_far(in.sdfs);

  std::vector<std::vector<SdfSampleField>> fields;
  r.placement_exact = time_repeated([&] { fields = place_links_batch(in.sdfs, poses, grid, exact); }, 1,
                                    opt.prepare_repetitions);
  if (neural) {
    r.placement_neural = time_repeated([&] { fields = place_links_batch(in.sdfs, poses, grid, *neural); }, 1,
                                       opt.prepare_repetitions);
  }
  r.assembly = time_repeated([&] { (void)assemble_robot_sdfs(fields, grid, d_far); }, 1, opt.prepare_repetitions);

  std::optional<RobotSdfBatch> batch;
  auto prepare = [&] {
    const LinkPoseBatch p = forward_kinematics_batch(*in.model, *in.configs);
    batch.reset();
    batch.emplace(neural ? build_robot_sdfs(in.sdfs, p, grid, *neural) : build_robot_sdfs(in.sdfs, p, grid, exact));
  };
  r.sdf_prepare = time_repeated(prepare, 1, opt.prepare_repetitions);

  std::vector<float> sdf_d;
  r.sdf_query = time_repeated([&] { sdf_d = query_min_distances(*batch, *in.obstacles); }, opt.warmup, opt.repetitions);
  QueryStats sdf_stats;
  sdf_d = query_min_distances(*batch, *in.obstacles, &sdf_stats);
  r.sdf_gathers = sdf_stats.gathers;
  r.sdf_pose_arithmetic = sdf_stats.pose_arithmetic;

  r.sphere_prepare = time_repeated([&] { (void)forward_kinematics_batch(*in.model, *in.configs); }, 1,
                                   opt.prepare_repetitions);
  std::vector<float> sphere_d;
  r.sphere_query = time_repeated([&] { sphere_d = sphere_baseline_distances(*in.spheres, poses, *in.obstacles, grid, d_far); },
                                 opt.warmup, opt.repetitions);
  QueryStats sphere_stats;
  sphere_d = sphere_baseline_distances(*in.spheres, poses, *in.obstacles, grid, d_far, &sphere_stats);
  r.sphere_pose_arithmetic = sphere_stats.pose_arithmetic;

  double sum = 0.0;
  r.max_sphere_minus_sdf = r.configs ? -std::numeric_limits<double>::infinity() : 0.0;
  for (std::size_t c = 0; c < r.configs; ++c) {
    const double delta = static_cast<double>(sphere_d[c]) - static_cast<double>(sdf_d[c]);
    sum += delta;
    r.max_sphere_minus_sdf = std::max(r.max_sphere_minus_sdf, delta);
    if (delta > opt.budget) ++r.conservativeness_violations;
  }
  r.mean_sphere_minus_sdf = r.configs ? sum / static_cast<double>(r.configs) : 0.0;

  if (opt.oracle) {
    const std::vector<double> truth = oracle_min_distances(*in.model, poses, *in.obstacles, d_far);
    r.max_sdf_oracle_error = 0.0;
    for (std::size_t c = 0; c < r.configs; ++c) {
      const double a = std::min(static_cast<double>(sdf_d[c]), opt.trusted_range);
      const double b = std::min(truth[c], opt.trusted_range);
      r.max_sdf_oracle_error = std::max(r.max_sdf_oracle_error, std::abs(a - b));
    }
  }
  return r;
}

namespace detail {

inline void csv_row(std::ostream& os, const char* metric, double value, double stddev, const char* unit) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "%s,%.6g,%.6g,%s\n", metric, value, stddev, unit);
  os << buf;
}

inline void csv_timing(std::ostream& os, const char* metric, const TimingStats& t) {
  csv_row(os, metric, t.mean_ms, t.std_ms, "ms");
}

}  // namespace detail

/// Machine-readable report. The metric column and its order are fixed;
/// values that were not measured are written as nan.
inline void write_bench_csv(std::ostream& os, const BenchReport& r) {
  const double nan = std::numeric_limits<double>::quiet_NaN();
  os << "metric,value,std,unit\n";
  detail::csv_row(os, "configs", static_cast<double>(r.configs), 0, "count");
  detail::csv_row(os, "links", static_cast<double>(r.links), 0, "count");
  detail::csv_row(os, "occupied_voxels", static_cast<double>(r.occupied), 0, "count");
  detail::csv_row(os, "spheres", static_cast<double>(r.spheres), 0, "count");
  detail::csv_row(os, "window_cells", static_cast<double>(r.window_cells), 0, "count");
  detail::csv_timing(os, "precompute", r.precompute);
  detail::csv_timing(os, "placement_exact", r.placement_exact);
  detail::csv_timing(os, "placement_neural", r.placement_neural.value_or(TimingStats{nan, nan, 0}));
  detail::csv_timing(os, "assembly", r.assembly);
  detail::csv_timing(os, "sdf_prepare", r.sdf_prepare);
  detail::csv_timing(os, "sdf_query", r.sdf_query);
  detail::csv_timing(os, "sphere_prepare", r.sphere_prepare);
  detail::csv_timing(os, "sphere_query", r.sphere_query);
  detail::csv_row(os, "sdf_gathers", static_cast<double>(r.sdf_gathers), 0, "count");
  detail::csv_row(os, "sdf_pose_arithmetic", static_cast<double>(r.sdf_pose_arithmetic), 0, "count");
  detail::csv_row(os, "sphere_pose_arithmetic", static_cast<double>(r.sphere_pose_arithmetic), 0, "count");
  detail::csv_row(os, "max_sdf_oracle_error", r.max_sdf_oracle_error, 0, "m");
  detail::csv_row(os, "mean_sphere_minus_sdf", r.mean_sphere_minus_sdf, 0, "m");
  detail::csv_row(os, "max_sphere_minus_sdf", r.max_sphere_minus_sdf, 0, "m");
  detail::csv_row(os, "conservativeness_violations", static_cast<double>(r.conservativeness_violations), 0, "count");
  detail::csv_row(os, "prepare_order_holds", r.prepare_order_holds() ? 1 : 0, 0, "bool");
  detail::csv_row(os, "query_order_holds", r.query_order_holds() ? 1 : 0, 0, "bool");
  detail::csv_row(os, "reference_sphere_prepare", ReferenceFigures::sphere_prepare_s * 1e3, 0, "ms");
  detail::csv_row(os, "reference_sdf_prepare", ReferenceFigures::sdf_prepare_s * 1e3, 0, "ms");
  detail::csv_row(os, "reference_sphere_query", ReferenceFigures::sphere_query_ms, 0, "ms");
  detail::csv_row(os, "reference_sdf_query", ReferenceFigures::sdf_query_ms, 0, "ms");
}

inline void write_bench_summary(std::ostream& os, const BenchReport& r) {
  char buf[256];
  auto line = [&](const char* name, const TimingStats& t) {
    std::snprintf(buf, sizeof buf, "  %-18s %10.3f ms +- %.3f (n=%zu)\n", name, t.mean_ms, t.std_ms, t.repetitions);
    os << buf;
  };
  std::snprintf(buf, sizeof buf, "scene: C=%zu links=%zu occupied=%zu spheres=%zu window cells=%zu provider=%s\n",
                r.configs, r.links, r.occupied, r.spheres, r.window_cells, r.provider.c_str());
  os << buf;
  line("precompute", r.precompute);
  line("placement (exact)", r.placement_exact);
  if (r.placement_neural) {
    line("placement (neural)", *r.placement_neural);
    std::snprintf(buf, sizeof buf, "  neural/exact placement speedup %.2fx (reference %.1fx)\n",
                  r.placement_exact.mean_ms / r.placement_neural->mean_ms, ReferenceFigures::neural_transform_speedup);
    os << buf;
  }
  line("assembly", r.assembly);
  line("sdf prepare", r.sdf_prepare);
  line("sdf query", r.sdf_query);
  line("sphere prepare", r.sphere_prepare);
  line("sphere query", r.sphere_query);
  std::snprintf(buf, sizeof buf, "reference: prepare %.2f s (sphere) / %.2f s (sdf); query %.2f ms (sphere) / %.3f ms (sdf)\n",
                ReferenceFigures::sphere_prepare_s, ReferenceFigures::sdf_prepare_s, ReferenceFigures::sphere_query_ms,
                ReferenceFigures::sdf_query_ms);
  os << buf;
  std::snprintf(buf, sizeof buf, "gathers %zu (C*|occupied| = %zu), sdf pose arithmetic %zu, sphere pose arithmetic %zu\n",
                r.sdf_gathers, r.configs * r.occupied, r.sdf_pose_arithmetic, r.sphere_pose_arithmetic);
  os << buf;
  std::snprintf(buf, sizeof buf, "sphere - sdf distance: mean %.4f m, max %.4f m; violations beyond %.4f m: %zu\n",
                r.mean_sphere_minus_sdf, r.max_sphere_minus_sdf, r.budget, r.conservativeness_violations);
  os << buf;
  if (!std::isnan(r.max_sdf_oracle_error)) {
    std::snprintf(buf, sizeof buf, "max |sdf - exact| %.4f m\n", r.max_sdf_oracle_error);
    os << buf;
  }
  if (!r.prepare_order_holds()) os << "WARNING: sdf preparation is not slower than sphere preparation\n";
  if (!r.query_order_holds()) os << "WARNING: sdf query is not faster than sphere query\n";
}

}  // namespace lsdf
