#pragma once

#include <Eigen/Core>
#include <cmath>
#include <cstdint>
#include <span>
#include <sstream>
#include <vector>

#include "lsdf/core_grids.hpp"
#include "lsdf/errors.hpp"
#include "lsdf/parallel.hpp"
#include "lsdf/robot_model.hpp"

namespace lsdf {

/// Link-frame sample coordinates for the cells of one window, normalised by
/// the link half-extent. Column a belongs to the a-th active window cell.
using GridTransform = Eigen::Matrix3Xf;

// Cells per axis of the environment-aligned window for a link grid of
// half-extent `extent_r`. Must be an even integer.
inline Index3 window_dims(double extent_r, const EnvGrid& grid) {
  Index3 w;
  for (int a = 0; a < 3; ++a) {
    w[a] = detail::exact_cell_count(extent_r, grid.resolution()[a], "window");
    if (w[a] % 2 != 0) {
      std::ostringstream msg;
      msg << "window width " << w[a] << " on axis " << a << " is odd; 2*e_r/r_e must be even";
      throw ValidationError(msg.str());
    }
  }
  return w;
}

struct AlignmentResult {
  Index3 anchor = Index3::Zero();   // first environment voxel covered by the window
  Index3 voxel = Index3::Zero();    // voxel containing the link origin
  Vec3 delta_t = Vec3::Zero();      // origin - center(voxel), each axis in [-r_e/2, r_e/2)
};

/// Snaps a link origin onto the environment grid. The window [anchor,
/// anchor + W) satisfies center(anchor + W/2) + delta_t == origin.
inline AlignmentResult compute_alignment(const Vec3& origin, const EnvGrid& grid, double extent_r) {
  const Index3 w = window_dims(extent_r, grid);
  AlignmentResult out;
  for (int a = 0; a < 3; ++a) {
    const auto [j, residual] = grid.snap_axis(origin[a], a);
    out.voxel[a] = j;
    out.delta_t[a] = residual;
    out.anchor[a] = j - w[a] / 2;
    if (out.anchor[a] + w[a] <= 0 || out.anchor[a] >= grid.dims()[a]) {
      throw NoOverlap("link window at " + detail::format_index(out.anchor) + " misses the environment grid");
    }
  }
  return out;
}

// The window's geometric center is the lower face of the origin's voxel, so
// the offset of the origin from it is delta_t + r_e/2, in [0, r_e).
inline Vec3 window_shift(const AlignmentResult& al, const EnvGrid& grid) {
  return al.delta_t + 0.5 * grid.resolution();
}

/// Window cell centers relative to the window center, divided by the link
/// half-extent. x fastest; symmetric about the origin.
inline Eigen::Matrix3Xd canonical_points(double extent_r, const EnvGrid& grid) {
  const Index3 w = window_dims(extent_r, grid);
  const Vec3& r = grid.resolution();
  Eigen::Matrix3Xd p(3, static_cast<Eigen::Index>(w.x()) * w.y() * w.z());
  Eigen::Index col = 0;
  for (int z = 0; z < w.z(); ++z) {
    for (int y = 0; y < w.y(); ++y) {
      for (int x = 0; x < w.x(); ++x) {
        p(0, col) = ((x - w.x() / 2 + 0.5) * r.x()) / extent_r;
        p(1, col) = ((y - w.y() / 2 + 0.5) * r.y()) / extent_r;
        p(2, col) = ((z - w.z() / 2 + 0.5) * r.z()) / extent_r;
        ++col;
      }
    }
  }
  return p;
}

/// Window cells whose centers lie within e_r + |r_e|/2 of the window center:
/// the ball around the link that survives any sub-voxel shift.
inline std::vector<std::uint8_t> sphere_mask(double extent_r, const EnvGrid& grid) {
  const Eigen::Matrix3Xd p = canonical_points(extent_r, grid);
  const double radius = (extent_r + 0.5 * grid.resolution().norm()) / extent_r;
  std::vector<std::uint8_t> mask(static_cast<std::size_t>(p.cols()));
  for (Eigen::Index i = 0; i < p.cols(); ++i) mask[static_cast<std::size_t>(i)] = p.col(i).norm() <= radius ? 1 : 0;
  return mask;
}

/// Fixed per (e_r, r_e): the window geometry plus the active cells whose
/// values are resampled. Inactive cells carry the far sentinel.
struct CanonicalWindow {
  double extent = 0.0;
  Index3 dims = Index3::Zero();
  bool masked = false;
  std::vector<std::uint32_t> active;  // window-linear index of each active cell
  Eigen::Matrix3Xf points;            // normalised coordinates of active cells

  std::size_t cell_count() const { return static_cast<std::size_t>(dims.x()) * dims.y() * dims.z(); }
  std::size_t active_count() const { return active.size(); }
};

inline CanonicalWindow make_canonical_window(double extent_r, const EnvGrid& grid, bool masked = true) {
  CanonicalWindow w;
  w.extent = extent_r;
  w.dims = window_dims(extent_r, grid);
  w.masked = masked;
  const Eigen::Matrix3Xd all = canonical_points(extent_r, grid);
  std::vector<std::uint8_t> mask = masked ? sphere_mask(extent_r, grid) : std::vector<std::uint8_t>(w.cell_count(), 1);
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (mask[i]) w.active.push_back(static_cast<std::uint32_t>(i));
  }
  w.points.resize(3, static_cast<Eigen::Index>(w.active.size()));
  for (std::size_t a = 0; a < w.active.size(); ++a) {
    w.points.col(static_cast<Eigen::Index>(a)) = all.col(w.active[a]).cast<float>();
  }
  return w;
}

/// Exact inverse map: G = R^T P - R^T (shift / e_r).
inline GridTransform grid_transform_exact(const Eigen::Matrix3d& rotation, const Vec3& shift, double extent_r,
                                          const Eigen::Ref<const Eigen::Matrix3Xf>& points) {
  const Eigen::Matrix3f rt = rotation.transpose().cast<float>();
  const Eigen::Vector3f offset = -(rotation.transpose() * (shift / extent_r)).cast<float>();
  GridTransform g = rt * points;
  g.colwise() += offset;
  return g;
}

/// Matrix-product transform provider.
class ExactGridTransform {
 public:
  explicit ExactGridTransform(const CanonicalWindow& window) : window_(&window) {}

  const CanonicalWindow& window() const { return *window_; }

  GridTransform operator()(const Eigen::Matrix3d& rotation, const Vec3& shift) const {
    return grid_transform_exact(rotation, shift, window_->extent, window_->points);
  }

  std::vector<GridTransform> batch(std::span<const Eigen::Matrix3d> rotations, std::span<const Vec3> shifts) const {
    std::vector<GridTransform> out(rotations.size());
    parallel_for(rotations.size(), [&](std::size_t i) { out[i] = (*this)(rotations[i], shifts[i]); });
    return out;
  }

 private:
  const CanonicalWindow* window_;
};

namespace detail {

inline void check_window_fits(const LinkSdf& sdf, const CanonicalWindow& window) {
  const auto& e = sdf.extent();
  if ((e.cast<double>().array() - window.extent).abs().maxCoeff() > 1e-5 * window.extent) {
    throw ValidationError("link grid extent does not match the placement window extent");
  }
}

inline SdfSampleField sample_window(const LinkSdf& sdf, const AlignmentResult& al, const CanonicalWindow& window,
                                    const GridTransform& g) {
  if (static_cast<std::size_t>(g.cols()) != window.active_count()) {
    throw DimensionMismatch("grid transform has " + std::to_string(g.cols()) + " samples, window has " +
                            std::to_string(window.active_count()));
  }
  SdfSampleField field;
  field.link_id = sdf.link_id();
  field.anchor = al.anchor;
  field.window = window.dims;
  field.d_far = sdf.d_far();
  field.values.assign(window.cell_count(), static_cast<float>(field.d_far));
  for (std::size_t a = 0; a < window.active.size(); ++a) {
    const Vec3 q = g.col(static_cast<Eigen::Index>(a)).cast<double>() * window.extent;
    field.values[window.active[a]] = static_cast<float>(trilinear_sample(sdf, q));
  }
  return field;
}

}  // namespace detail

/// Resamples one link grid onto the environment-aligned window for `pose`.
/// `provider` is an ExactGridTransform or a neural approximator.
template <typename Provider>
SdfSampleField place_link(const LinkSdf& sdf, const Pose& pose, const EnvGrid& grid, const Provider& provider) {
  const CanonicalWindow& window = provider.window();
  detail::check_window_fits(sdf, window);
  const AlignmentResult al = compute_alignment(pose.translation, grid, window.extent);
  const GridTransform g = provider(pose.rotation, window_shift(al, grid));
  return detail::sample_window(sdf, al, window, g);
}

/// All C x L placements in one call: one batched provider evaluation, then
/// data-parallel resampling. Result is indexed [config][k] with k following
/// `sdfs`. Placements whose window misses the grid yield an empty field.
template <typename Provider>
std::vector<std::vector<SdfSampleField>> place_links_batch(std::span<const LinkSdf> sdfs, const LinkPoseBatch& poses,
                                                            const EnvGrid& grid, const Provider& provider) {
  const CanonicalWindow& window = provider.window();
  for (const auto& s : sdfs) {
    detail::check_window_fits(s, window);
    if (s.link_id() >= poses.links) throw ValidationError("link grid id outside the pose batch");
  }
  const std::size_t n = poses.configs * sdfs.size();
  std::vector<Eigen::Matrix3d> rotations(n);
  std::vector<Vec3> shifts(n);
  std::vector<AlignmentResult> alignments(n);
  std::vector<std::uint8_t> overlaps(n, 1);
  for (std::size_t c = 0; c < poses.configs; ++c) {
    for (std::size_t k = 0; k < sdfs.size(); ++k) {
      const std::size_t idx = c * sdfs.size() + k;
      const Pose& pose = poses.at(c, sdfs[k].link_id());
      rotations[idx] = pose.rotation;
      try {
        alignments[idx] = compute_alignment(pose.translation, grid, window.extent);
        shifts[idx] = window_shift(alignments[idx], grid);
      } catch (const NoOverlap&) {
        overlaps[idx] = 0;
        shifts[idx] = Vec3::Zero();
      }
    }
  }

  const std::vector<GridTransform> transforms = provider.batch(rotations, shifts);

  std::vector<std::vector<SdfSampleField>> out(poses.configs, std::vector<SdfSampleField>(sdfs.size()));
  parallel_for(n, [&](std::size_t idx) {
    const std::size_t c = idx / sdfs.size(), k = idx % sdfs.size();
    if (!overlaps[idx]) {
      out[c][k].link_id = sdfs[k].link_id();
      out[c][k].d_far = sdfs[k].d_far();
      return;
    }
    out[c][k] = detail::sample_window(sdfs[k], alignments[idx], window, transforms[idx]);
  });
  return out;
}

}  // namespace lsdf
