#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "lsdf/binary_io.hpp"
#include "lsdf/errors.hpp"

namespace lsdf {

using Vec3 = Eigen::Vector3d;
using Vec3f = Eigen::Vector3f;
using Index3 = Eigen::Vector3i;

namespace detail {

// Number of cells of size `cell` spanning 2 * half_extent, or a validation
// error when the span is not an integer multiple of the cell size.
inline int exact_cell_count(double half_extent, double cell, const char* what) {
  if (!(half_extent > 0.0) || !(cell > 0.0)) {
    throw ValidationError(std::string(what) + ": extent and resolution must be positive");
  }
  const double ratio = 2.0 * half_extent / cell;
  const double rounded = std::round(ratio);
  if (rounded < 1.0 || std::abs(ratio - rounded) > 1e-5 * std::max(1.0, ratio)) {
    std::ostringstream msg;
    msg << what << ": 2*extent (" << 2.0 * half_extent << ") is not a multiple of resolution (" << cell << ")";
    throw ValidationError(msg.str());
  }
  return static_cast<int>(rounded);
}

inline std::string format_index(const Index3& j) {
  std::ostringstream s;
  s << "(" << j.x() << "," << j.y() << "," << j.z() << ")";
  return s.str();
}

}  // namespace detail

/// Axis-aligned voxelisation of the workspace: `dims` cells of size
/// `resolution` covering [-extent, +extent) on each axis. Linear indices are
/// row-major with x fastest.
class EnvGrid {
 public:
  EnvGrid() = default;

  EnvGrid(const Vec3& extent, const Vec3& resolution) : extent_(extent), resolution_(resolution) {
    for (int a = 0; a < 3; ++a) dims_[a] = detail::exact_cell_count(extent[a], resolution[a], "EnvGrid");
  }

  static EnvGrid cubic(double extent, double resolution) {
    return EnvGrid(Vec3::Constant(extent), Vec3::Constant(resolution));
  }

  const Vec3& extent() const { return extent_; }
  const Vec3& resolution() const { return resolution_; }
  const Index3& dims() const { return dims_; }

  std::size_t voxel_count() const {
    return static_cast<std::size_t>(dims_.x()) * static_cast<std::size_t>(dims_.y()) *
           static_cast<std::size_t>(dims_.z());
  }

  double center(int j, int axis) const { return -extent_[axis] + (j + 0.5) * resolution_[axis]; }

  Vec3 center(const Index3& j) const { return {center(j.x(), 0), center(j.y(), 1), center(j.z(), 2)}; }

  bool contains(const Index3& j) const {
    return (j.array() >= 0).all() && (j.array() < dims_.array()).all();
  }

  std::size_t linear_index(const Index3& j) const {
    return static_cast<std::size_t>(j.x()) +
           static_cast<std::size_t>(dims_.x()) *
               (static_cast<std::size_t>(j.y()) + static_cast<std::size_t>(dims_.y()) * static_cast<std::size_t>(j.z()));
  }

  Index3 index_from_linear(std::size_t v) const {
    const auto nx = static_cast<std::size_t>(dims_.x());
    const auto ny = static_cast<std::size_t>(dims_.y());
    return {static_cast<int>(v % nx), static_cast<int>((v / nx) % ny), static_cast<int>(v / (nx * ny))};
  }

  // Cell containing `p` on one axis, without bounds checking, together with
  // the residual p - center(j). Floor semantics: a point on a face belongs to
  // the upper cell, so the residual lies in [-r/2, r/2).
  std::pair<int, double> snap_axis(double p, int axis) const {
    const double u = (p + extent_[axis]) / resolution_[axis];
    const double j = std::floor(u);
    const double frac = u - j;  // exact, in [0, 1)
    return {static_cast<int>(j), (frac - 0.5) * resolution_[axis]};
  }

  Index3 nearest_voxel(const Vec3& p) const {
    return {snap_axis(p.x(), 0).first, snap_axis(p.y(), 1).first, snap_axis(p.z(), 2).first};
  }

  bool operator==(const EnvGrid& other) const {
    return extent_ == other.extent_ && resolution_ == other.resolution_;
  }

 private:
  Vec3 extent_ = Vec3::Ones();
  Vec3 resolution_ = Vec3::Constant(0.1);
  Index3 dims_ = Index3::Constant(20);
};

/// Index of the voxel whose cell contains `point`; throws OutOfBounds when
/// the point lies outside [-extent, extent).
inline Index3 voxel_index_of(const Vec3& point, const EnvGrid& grid) {
  const Index3 j = grid.nearest_voxel(point);
  if (!grid.contains(j)) {
    std::ostringstream msg;
    msg << "point (" << point.x() << "," << point.y() << "," << point.z() << ") outside environment grid";
    throw OutOfBounds(msg.str());
  }
  return j;
}

/// Dense link-local signed distance grid. Geometry is kept in single
/// precision so that a cache reload is bit-identical to the in-memory build.
class LinkSdf {
 public:
  LinkSdf() = default;

  LinkSdf(std::uint32_t link_id, const Vec3f& extent, const Vec3f& resolution)
      : link_id_(link_id), extent_(extent), resolution_(resolution) {
    for (int a = 0; a < 3; ++a) dims_[a] = detail::exact_cell_count(extent[a], resolution[a], "LinkSdf");
    values_.assign(cell_count(), 0.0f);
  }

  LinkSdf(std::uint32_t link_id, const Vec3f& extent, const Vec3f& resolution, const Index3& dims,
          std::vector<float> values)
      : link_id_(link_id), extent_(extent), resolution_(resolution), dims_(dims), values_(std::move(values)) {
    if ((dims.array() <= 0).any()) throw FormatError("LinkSdf: dims must be positive");
    if (values_.size() != cell_count()) throw FormatError("LinkSdf: value count does not match dims");
  }

  std::uint32_t link_id() const { return link_id_; }
  const Vec3f& extent() const { return extent_; }
  const Vec3f& resolution() const { return resolution_; }
  const Index3& dims() const { return dims_; }

  std::size_t cell_count() const {
    return static_cast<std::size_t>(dims_.x()) * static_cast<std::size_t>(dims_.y()) *
           static_cast<std::size_t>(dims_.z());
  }

  // Sentinel for queries the grid cannot vouch for.
  double d_far() const { return static_cast<double>(extent_.minCoeff()); }

  Vec3 center(const Index3& i) const {
    Vec3 c;
    for (int a = 0; a < 3; ++a) {
      c[a] = -static_cast<double>(extent_[a]) + (i[a] + 0.5) * static_cast<double>(resolution_[a]);
    }
    return c;
  }

  std::size_t linear_index(const Index3& i) const {
    return static_cast<std::size_t>(i.x()) +
           static_cast<std::size_t>(dims_.x()) *
               (static_cast<std::size_t>(i.y()) + static_cast<std::size_t>(dims_.y()) * static_cast<std::size_t>(i.z()));
  }

  Index3 index_from_linear(std::size_t v) const {
    const auto nx = static_cast<std::size_t>(dims_.x());
    const auto ny = static_cast<std::size_t>(dims_.y());
    return {static_cast<int>(v % nx), static_cast<int>((v / nx) % ny), static_cast<int>(v / (nx * ny))};
  }

  float at(const Index3& i) const { return values_[linear_index(i)]; }
  float& at(const Index3& i) { return values_[linear_index(i)]; }

  const std::vector<float>& values() const { return values_; }
  std::vector<float>& values() { return values_; }

  bool operator==(const LinkSdf&) const = default;

 private:
  std::uint32_t link_id_ = 0;
  Vec3f extent_ = Vec3f::Ones();
  Vec3f resolution_ = Vec3f::Constant(0.1f);
  Index3 dims_ = Index3::Zero();
  std::vector<float> values_;
};

/// Trilinear interpolation of the link grid at a link-frame point. Points in
/// the outer half cell clamp to the boundary cells; points outside the grid
/// box return LinkSdf::d_far().
inline double trilinear_sample(const LinkSdf& sdf, const Vec3& query) {
  const auto& ext = sdf.extent();
  const auto& res = sdf.resolution();
  const auto& dims = sdf.dims();

  int base[3];
  double t[3];
  for (int a = 0; a < 3; ++a) {
    const double e = ext[a];
    if (!(query[a] >= -e && query[a] <= e)) return sdf.d_far();
    double u = (query[a] + e) / static_cast<double>(res[a]) - 0.5;
    u = std::clamp(u, 0.0, static_cast<double>(dims[a] - 1));
    int i0 = std::min(static_cast<int>(u), std::max(dims[a] - 2, 0));
    base[a] = i0;
    t[a] = dims[a] > 1 ? u - i0 : 0.0;
  }

  const auto& v = sdf.values();
  const std::size_t sx = 1;
  const std::size_t sy = static_cast<std::size_t>(dims.x());
  const std::size_t sz = sy * static_cast<std::size_t>(dims.y());
  const std::size_t dx = dims.x() > 1 ? sx : 0;
  const std::size_t dy = dims.y() > 1 ? sy : 0;
  const std::size_t dz = dims.z() > 1 ? sz : 0;
  const std::size_t o = base[0] * sx + base[1] * sy + base[2] * sz;

  const double c00 = v[o] + (v[o + dx] - static_cast<double>(v[o])) * t[0];
  const double c10 = v[o + dy] + (v[o + dy + dx] - static_cast<double>(v[o + dy])) * t[0];
  const double c01 = v[o + dz] + (v[o + dz + dx] - static_cast<double>(v[o + dz])) * t[0];
  const double c11 = v[o + dz + dy] + (v[o + dz + dy + dx] - static_cast<double>(v[o + dz + dy])) * t[0];
  const double c0 = c00 + (c10 - c00) * t[1];
  const double c1 = c01 + (c11 - c01) * t[1];
  return c0 + (c1 - c0) * t[2];
}

/// Environment-aligned window of resampled link distances. Cell (a, b, c) of
/// the window lies on environment voxel anchor + (a, b, c); cells outside the
/// environment grid are dropped when merging.
struct SdfSampleField {
  std::uint32_t link_id = 0;
  Index3 anchor = Index3::Zero();
  Index3 window = Index3::Zero();
  double d_far = 0.0;
  std::vector<float> values;  // window.prod() entries, x fastest

  std::size_t linear_index(const Index3& m) const {
    return static_cast<std::size_t>(m.x()) +
           static_cast<std::size_t>(window.x()) *
               (static_cast<std::size_t>(m.y()) + static_cast<std::size_t>(window.y()) * static_cast<std::size_t>(m.z()));
  }
};

// ---------------------------------------------------------------------------
// LSDF cache format: "LSDF", u32 version, 3 x u32 dims, 3 x f32 extent,
// 3 x f32 resolution, u32 link_id, then prod(dims) f32 values (x fastest).
// Little-endian throughout.

inline constexpr std::uint32_t kLsdfVersion = 1;

inline void write_link_sdf(std::ostream& os, const LinkSdf& sdf) {
  io::write_magic(os, "LSDF");
  io::write_u32(os, kLsdfVersion);
  for (int a = 0; a < 3; ++a) io::write_u32(os, static_cast<std::uint32_t>(sdf.dims()[a]));
  for (int a = 0; a < 3; ++a) io::write_f32(os, sdf.extent()[a]);
  for (int a = 0; a < 3; ++a) io::write_f32(os, sdf.resolution()[a]);
  io::write_u32(os, sdf.link_id());
  io::write_f32s(os, sdf.values());
  if (!os) throw Error("failed writing LSDF stream");
}

inline LinkSdf read_link_sdf(std::istream& is) {
  io::read_magic(is, "LSDF");
  const std::uint32_t version = io::read_u32(is, "LSDF version");
  if (version != kLsdfVersion) throw FormatError("unsupported LSDF version " + std::to_string(version));
  Index3 dims;
  for (int a = 0; a < 3; ++a) {
    const std::uint32_t d = io::read_u32(is, "LSDF dims");
    if (d == 0 || d > (1u << 16)) throw FormatError("LSDF dims out of range");
    dims[a] = static_cast<int>(d);
  }
  Vec3f extent, resolution;
  for (int a = 0; a < 3; ++a) extent[a] = io::read_f32(is, "LSDF extent");
  for (int a = 0; a < 3; ++a) resolution[a] = io::read_f32(is, "LSDF resolution");
  const std::uint32_t link_id = io::read_u32(is, "LSDF link_id");
  std::vector<float> values(static_cast<std::size_t>(dims.x()) * dims.y() * dims.z());
  io::read_f32s(is, values, "LSDF values");
  return LinkSdf(link_id, extent, resolution, dims, std::move(values));
}

inline void save_link_sdf(const std::filesystem::path& path, const LinkSdf& sdf) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw Error("cannot open " + path.string() + " for writing");
  write_link_sdf(os, sdf);
}

inline LinkSdf load_link_sdf(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open " + path.string());
  return read_link_sdf(is);
}

}  // namespace lsdf
