#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "lsdf/binary_io.hpp"
#include "lsdf/core_grids.hpp"
#include "lsdf/errors.hpp"
#include "lsdf/parallel.hpp"
#include "lsdf/placement.hpp"
#include "lsdf/primitives.hpp"
#include "lsdf/robot_model.hpp"

namespace lsdf {

// Upper bound on C * V_e * 4 bytes for a dense batch.
inline constexpr std::size_t kMaxRobotSdfBytes = std::size_t{1} << 30;

/// Dense per-configuration distance fields over the environment grid.
class RobotSdfBatch {
 public:
  RobotSdfBatch() = default;

  RobotSdfBatch(const EnvGrid& grid, std::size_t configs, double d_far) : grid_(grid), configs_(configs), d_far_(d_far) {
    if (configs == 0) throw ValidationError("robot SDF batch needs at least one configuration");
    const std::size_t v = grid.voxel_count();
    if (v > kMaxRobotSdfBytes / sizeof(float) / configs) {
      std::ostringstream msg;
      msg << "robot SDF batch of " << configs << " x " << v << " voxels exceeds the " << (kMaxRobotSdfBytes >> 20)
          << " MiB limit";
      throw ValidationError(msg.str());
    }
    values_.assign(configs * v, static_cast<float>(d_far));
  }

  const EnvGrid& grid() const { return grid_; }
  std::size_t configs() const { return configs_; }
  double d_far() const { return d_far_; }

  std::span<const float> field(std::size_t c) const {
    return {values_.data() + c * grid_.voxel_count(), grid_.voxel_count()};
  }
  std::span<float> field(std::size_t c) { return {values_.data() + c * grid_.voxel_count(), grid_.voxel_count()}; }

  float at(std::size_t c, const Index3& v) const { return field(c)[grid_.linear_index(v)]; }

 private:
  EnvGrid grid_;
  std::size_t configs_ = 0;
  double d_far_ = 0.0;
  std::vector<float> values_;
};

/// Far sentinel shared by every configuration: the smallest link sentinel.
inline double global_d_far(std::span<const LinkSdf> sdfs) {
  if (sdfs.empty()) throw ValidationError("no link grids");
  double d = std::numeric_limits<double>::infinity();
  for (const auto& s : sdfs) d = std::min(d, s.d_far());
  return d;
}

/// Lowers `dest` (one configuration's field) by `field` at its anchor; window
/// cells outside the grid are discarded.
inline void merge_field(const SdfSampleField& field, const EnvGrid& grid, std::span<float> dest) {
  const Index3& dims = grid.dims();
  const Index3& w = field.window;
  if (w.minCoeff() <= 0) return;
  const int x0 = std::max(0, -field.anchor.x()), x1 = std::min(w.x(), dims.x() - field.anchor.x());
  const int y0 = std::max(0, -field.anchor.y()), y1 = std::min(w.y(), dims.y() - field.anchor.y());
  const int z0 = std::max(0, -field.anchor.z()), z1 = std::min(w.z(), dims.z() - field.anchor.z());
  for (int z = z0; z < z1; ++z) {
    for (int y = y0; y < y1; ++y) {
      const std::size_t src = field.linear_index({x0, y, z});
      const std::size_t dst = grid.linear_index({field.anchor.x() + x0, field.anchor.y() + y, field.anchor.z() + z});
      for (int x = 0; x < x1 - x0; ++x) dest[dst + x] = std::min(dest[dst + x], field.values[src + x]);
    }
  }
}

/// Min-merge of per-(config, link) windows. Work is partitioned by
/// configuration, so no two workers write the same field.
inline RobotSdfBatch assemble_robot_sdfs(const std::vector<std::vector<SdfSampleField>>& fields, const EnvGrid& grid,
                                         double d_far_global) {
  RobotSdfBatch batch(grid, fields.size(), d_far_global);
  parallel_for(fields.size(), [&](std::size_t c) {
    for (const auto& f : fields[c]) merge_field(f, grid, batch.field(c));
  });
  return batch;
}

/// Placement fused with assembly: each configuration's windows are merged as
/// soon as they are sampled, so the C x L windows never coexist in memory.
template <typename Provider>
RobotSdfBatch build_robot_sdfs(std::span<const LinkSdf> sdfs, const LinkPoseBatch& poses, const EnvGrid& grid,
                               const Provider& provider) {
  RobotSdfBatch batch(grid, poses.configs, global_d_far(sdfs));
  // Chunks of configurations keep the batched provider call large while
  // bounding the number of live windows.
  const std::size_t chunk = 64;
  for (std::size_t c0 = 0; c0 < poses.configs; c0 += chunk) {
    LinkPoseBatch part;
    part.links = poses.links;
    part.configs = std::min(chunk, poses.configs - c0);
    part.transforms.assign(poses.transforms.begin() + static_cast<std::ptrdiff_t>(c0 * poses.links),
                           poses.transforms.begin() + static_cast<std::ptrdiff_t>((c0 + part.configs) * poses.links));
    const auto fields = place_links_batch(sdfs, part, grid, provider);
    parallel_for(part.configs, [&](std::size_t c) {
      for (const auto& f : fields[c]) merge_field(f, grid, batch.field(c0 + c));
    });
  }
  return batch;
}

// ---------------------------------------------------------------------------
// Obstacles

struct ObstacleVoxelSet {
  EnvGrid grid;
  std::vector<std::uint32_t> occupied;  // sorted, unique linear voxel indices
  std::size_t source_points = 0;
  std::size_t dropped_points = 0;

  std::size_t size() const { return occupied.size(); }
};

template <typename Point>
ObstacleVoxelSet voxelize_pointcloud(std::span<const Point> points, const EnvGrid& grid) {
  ObstacleVoxelSet out;
  out.grid = grid;
  out.source_points = points.size();
  std::vector<std::uint8_t> hit(grid.voxel_count(), 0);
  for (const auto& p : points) {
    const Index3 j = grid.nearest_voxel(p.template cast<double>());
    if (!grid.contains(j)) {
      ++out.dropped_points;
      continue;
    }
    hit[grid.linear_index(j)] = 1;
  }
  for (std::size_t v = 0; v < hit.size(); ++v) {
    if (hit[v]) out.occupied.push_back(static_cast<std::uint32_t>(v));
  }
  return out;
}

inline ObstacleVoxelSet voxelize_pointcloud(const std::vector<Vec3>& points, const EnvGrid& grid) {
  return voxelize_pointcloud(std::span<const Vec3>(points), grid);
}

inline ObstacleVoxelSet voxelize_pointcloud(const std::vector<Vec3f>& points, const EnvGrid& grid) {
  return voxelize_pointcloud(std::span<const Vec3f>(points), grid);
}

// ---------------------------------------------------------------------------
// Queries

/// Operation counters for the two query paths.
struct QueryStats {
  std::size_t gathers = 0;          // memory reads of robot SDF values
  std::size_t pose_arithmetic = 0;  // per-query geometric evaluations
};

/// d[c] = min over occupied voxels of the configuration's field: gathers and
/// min reductions only.
inline std::vector<float> query_min_distances(const RobotSdfBatch& batch, const ObstacleVoxelSet& obstacles,
                                              QueryStats* stats = nullptr) {
  if (!(batch.grid() == obstacles.grid)) throw GridMismatch("obstacle set and robot SDFs use different grids");
  std::vector<float> out(batch.configs(), static_cast<float>(batch.d_far()));
  for (std::size_t c = 0; c < batch.configs(); ++c) {
    const auto f = batch.field(c);
    float m = out[c];
    for (std::uint32_t v : obstacles.occupied) m = std::min(m, f[v]);
    out[c] = m;
  }
  if (stats) stats->gathers += batch.configs() * obstacles.occupied.size();
  return out;
}

/// Per-link minima straight from the placed windows (C x fields-per-config),
/// clamped to `d_far_global`. Diagnostic only.
inline Eigen::MatrixXf per_link_min_distances(const std::vector<std::vector<SdfSampleField>>& fields,
                                              const ObstacleVoxelSet& obstacles, double d_far_global) {
  const std::size_t links = fields.empty() ? 0 : fields.front().size();
  Eigen::MatrixXf out = Eigen::MatrixXf::Constant(static_cast<Eigen::Index>(fields.size()),
                                                  static_cast<Eigen::Index>(links), static_cast<float>(d_far_global));
  const EnvGrid& grid = obstacles.grid;
  for (std::size_t c = 0; c < fields.size(); ++c) {
    for (std::size_t k = 0; k < fields[c].size(); ++k) {
      const SdfSampleField& f = fields[c][k];
      if (f.window.minCoeff() <= 0) continue;
      float m = out(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(k));
      for (std::uint32_t v : obstacles.occupied) {
        const Index3 local = grid.index_from_linear(v) - f.anchor;
        if ((local.array() < 0).any() || (local.array() >= f.window.array()).any()) continue;
        m = std::min(m, f.values[f.linear_index(local)]);
      }
      out(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(k)) = m;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Sphere-model baseline

/// Per link, spheres in the link frame that together contain the link's
/// collision geometry.
struct SphereRobotModel {
  std::vector<std::vector<LinkSphere>> links;

  std::size_t sphere_count() const {
    std::size_t n = 0;
    for (const auto& l : links) n += l.size();
    return n;
  }
};

namespace detail {

inline void append_transformed(std::vector<LinkSphere>& out, const Pose& origin, const Vec3& c, double r) {
  out.push_back({origin * c, r});
}

// Covering spheres for a primitive in its own frame.
inline std::vector<LinkSphere> cover_primitive(const Primitive& shape, const Pose& origin) {
  std::vector<LinkSphere> out;
  std::visit(
      [&](const auto& s) {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, Sphere>) {
          append_transformed(out, origin, Vec3::Zero(), s.radius);
        } else if constexpr (std::is_same_v<T, Capsule>) {
          // Spheres of radius r + h/2 spaced h along the axis cover the
          // cylinder; the end spheres cover the caps.
          const int n = std::max(1, static_cast<int>(std::ceil(2.0 * s.half_length / s.radius)));
          const double step = 2.0 * s.half_length / n;
          for (int i = 0; i <= n; ++i) {
            const double z = -s.half_length + i * step;
            append_transformed(out, origin, Vec3(0, 0, z), std::hypot(s.radius, 0.5 * step));
          }
        } else if constexpr (std::is_same_v<T, Box>) {
          // Regular grid of cubes, each covered by its circumsphere.
          const double cell = s.half_extents.minCoeff();
          Index3 n;
          for (int a = 0; a < 3; ++a) n[a] = std::max(1, static_cast<int>(std::ceil(2.0 * s.half_extents[a] / cell)));
          const Vec3 step = (2.0 * s.half_extents).cwiseQuotient(n.cast<double>());
          const double r = 0.5 * step.norm();
          for (int z = 0; z < n.z(); ++z)
            for (int y = 0; y < n.y(); ++y)
              for (int x = 0; x < n.x(); ++x) {
                const Vec3 c = -s.half_extents + step.cwiseProduct(Vec3(x + 0.5, y + 0.5, z + 0.5));
                append_transformed(out, origin, c, r);
              }
        }
      },
      shape);
  return out;
}

// Surface samples of a link's geometry in the link frame, used to validate a
// sphere cover.
inline std::vector<Vec3> surface_samples(const CollisionGeometry& g, const Pose& origin, int density) {
  std::vector<Vec3> pts;
  const TriangleMesh mesh = std::visit(
      [&](const auto& s) -> TriangleMesh {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, MeshGeometry>) {
          return *s.mesh;
        } else if constexpr (std::is_same_v<T, Sphere>) {
          return make_icosphere(s.radius, 3);
        } else if constexpr (std::is_same_v<T, Box>) {
          return make_box_mesh(s.half_extents);
        } else {
          // Capsule: icosphere stretched at the equator into a cylinder; all
          // vertices lie on the capsule surface.
          TriangleMesh m = make_icosphere(s.radius, 3);
          for (auto& v : m.vertices) v.z() += (v.z() >= 0 ? s.half_length : -s.half_length);
          return m;
        }
      },
      g);
  for (std::size_t t = 0; t < mesh.triangles.size(); ++t) {
    for (int i = 0; i <= density; ++i) {
      for (int j = 0; j <= density - i; ++j) {
        const double u = static_cast<double>(i) / density, v = static_cast<double>(j) / density;
        const Vec3 p = mesh.a(t) + u * (mesh.b(t) - mesh.a(t)) + v * (mesh.c(t) - mesh.a(t));
        pts.push_back(origin * p);
      }
    }
  }
  return pts;
}

}  // namespace detail

/// Largest amount by which any sampled surface point of the link sticks out
/// of its sphere cover (<= 0 means covered).
inline double sphere_cover_excess(const Link& link, const std::vector<LinkSphere>& spheres, int density = 8) {
  if (!link.geometry) return -std::numeric_limits<double>::infinity();
  if (spheres.empty()) return std::numeric_limits<double>::infinity();
  double worst = -std::numeric_limits<double>::infinity();
  for (const Vec3& p : detail::surface_samples(*link.geometry, link.geometry_origin, density)) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& s : spheres) best = std::min(best, (p - s.center).norm() - s.radius);
    worst = std::max(worst, best);
  }
  return worst;
}

/// Sphere model from the robot description: explicit per-link spheres when
/// given, otherwise a generated cover for primitive links. Validates that
/// every cover contains its link.
inline SphereRobotModel make_sphere_model(const RobotModel& model, double tolerance = 1e-9) {
  SphereRobotModel out;
  out.links.resize(model.link_count());
  for (std::size_t i = 0; i < model.link_count(); ++i) {
    const Link& link = model.links()[i];
    if (!link.spheres.empty()) {
      out.links[i] = link.spheres;
    } else if (link.geometry) {
      std::visit(
          [&](const auto& g) {
            using T = std::decay_t<decltype(g)>;
            if constexpr (std::is_same_v<T, MeshGeometry>) {
              throw ValidationError("link '" + link.name + "' has a mesh but no sphere cover");
            } else {
              out.links[i] = detail::cover_primitive(g, link.geometry_origin);
            }
          },
          *link.geometry);
    }
    for (const auto& s : out.links[i]) {
      if (!(s.radius > 0.0)) throw ValidationError("link '" + link.name + "' has a non-positive sphere radius");
    }
    const double excess = sphere_cover_excess(link, out.links[i]);
    if (excess > tolerance) {
      throw ValidationError("sphere cover of link '" + link.name + "' leaves geometry uncovered by " +
                            std::to_string(excess) + " m");
    }
  }
  return out;
}

/// Baseline distance: min over (sphere, occupied voxel) of the center
/// distance minus radius, evaluated from scratch for every query.
inline std::vector<float> sphere_baseline_distances(const SphereRobotModel& model, const LinkPoseBatch& poses,
                                                    const ObstacleVoxelSet& obstacles, const EnvGrid& grid,
                                                    double d_far = std::numeric_limits<double>::infinity(),
                                                    QueryStats* stats = nullptr) {
  if (!(grid == obstacles.grid)) throw GridMismatch("obstacle set uses a different grid");
  if (model.links.size() != poses.links) throw ValidationError("sphere model and pose batch disagree on link count");
  std::vector<Vec3> centers;
  centers.reserve(obstacles.size());
  for (std::uint32_t v : obstacles.occupied) centers.push_back(grid.center(grid.index_from_linear(v)));

  std::vector<float> out(poses.configs);
  std::size_t evaluations = 0;
  for (std::size_t c = 0; c < poses.configs; ++c) {
    double best = d_far;
    for (std::size_t i = 0; i < poses.links; ++i) {
      const Pose& pose = poses.at(c, i);
      for (const auto& s : model.links[i]) {
        const Vec3 w = pose * s.center;
        for (const Vec3& o : centers) {
          best = std::min(best, std::hypot(w.x() - o.x(), w.y() - o.y(), w.z() - o.z()) - s.radius);
        }
        evaluations += centers.size();
      }
    }
    out[c] = static_cast<float>(best);
  }
  if (stats) stats->pose_arithmetic += evaluations;
  return out;
}

// ---------------------------------------------------------------------------
// Point-cloud frames and streaming

struct CloudFrame {
  std::int64_t timestamp_ms = 0;
  std::vector<Vec3f> points;
};

// Frame file: u32 point count, then count x (f32 x, y, z), little-endian.
inline void write_cloud_frame(std::ostream& os, std::span<const Vec3f> points) {
  io::write_u32(os, static_cast<std::uint32_t>(points.size()));
  for (const auto& p : points) {
    for (int a = 0; a < 3; ++a) io::write_f32(os, p[a]);
  }
  if (!os) throw Error("failed writing cloud frame");
}

inline std::vector<Vec3f> read_cloud_frame(std::istream& is) {
  const std::uint32_t n = io::read_u32(is, "cloud point count");
  std::vector<float> raw(static_cast<std::size_t>(n) * 3);
  io::read_f32s(is, raw, "cloud points");
  std::vector<Vec3f> pts(n);
  for (std::uint32_t i = 0; i < n; ++i) pts[i] = {raw[3 * i], raw[3 * i + 1], raw[3 * i + 2]};
  return pts;
}

inline void save_cloud_frame(const std::filesystem::path& path, std::span<const Vec3f> points) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw Error("cannot open " + path.string() + " for writing");
  write_cloud_frame(os, points);
}

inline std::vector<Vec3f> load_cloud_frame(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open " + path.string());
  return read_cloud_frame(is);
}

struct ManifestEntry {
  std::int64_t timestamp_ms = 0;
  std::filesystem::path frame;
};

// Manifest: one "timestamp_ms frame_path" pair per line (space or comma
// separated); relative paths resolve against the manifest directory.
inline std::vector<ManifestEntry> load_manifest(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw Error("cannot open " + path.string());
  std::vector<ManifestEntry> out;
  std::string line;
  while (std::getline(is, line)) {
    std::replace(line.begin(), line.end(), ',', ' ');
    std::istringstream ls(line);
    ManifestEntry e;
    std::string file;
    if (line.find_first_not_of(" \t\r") == std::string::npos || line[line.find_first_not_of(" \t")] == '#') continue;
    if (!(ls >> e.timestamp_ms >> file)) throw FormatError("malformed manifest line: " + line);
    e.frame = std::filesystem::path(file).is_absolute() ? std::filesystem::path(file) : path.parent_path() / file;
    out.push_back(std::move(e));
  }
  return out;
}

struct CycleDistances {
  std::int64_t timestamp_ms = 0;
  std::vector<float> distances;
};

/// Controller-facing loop: for every incoming frame, voxelise and query the
/// prepared batch. `next_frame` returns std::nullopt at end of stream.
inline void distances_along_trajectory(const RobotSdfBatch& batch,
                                       const std::function<std::optional<CloudFrame>()>& next_frame,
                                       const std::function<void(const CycleDistances&)>& sink) {
  while (auto frame = next_frame()) {
    const ObstacleVoxelSet obstacles = voxelize_pointcloud(frame->points, batch.grid());
    sink({frame->timestamp_ms, query_min_distances(batch, obstacles)});
  }
}

inline std::vector<CycleDistances> distances_along_trajectory(const RobotSdfBatch& batch,
                                                              std::span<const CloudFrame> frames) {
  std::vector<CycleDistances> out;
  std::size_t next = 0;
  distances_along_trajectory(
      batch, [&]() -> std::optional<CloudFrame> { return next < frames.size() ? std::optional(frames[next++]) : std::nullopt; },
      [&](const CycleDistances& d) { out.push_back(d); });
  return out;
}

inline void write_distance_csv_header(std::ostream& os, std::size_t configs) {
  os << "timestamp";
  for (std::size_t c = 0; c < configs; ++c) os << ",d_" << c;
  os << '\n';
}

inline void write_distance_csv_row(std::ostream& os, const CycleDistances& row) {
  os << row.timestamp_ms;
  char buf[32];
  for (float d : row.distances) {
    std::snprintf(buf, sizeof buf, ",%.6f", static_cast<double>(d));
    os << buf;
  }
  os << '\n';
}

}  // namespace lsdf
