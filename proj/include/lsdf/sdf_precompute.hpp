#pragma once

#include <functional>
#include <iostream>
#include <memory>
#include <string>
#include <variant>
#include <vector>

#include "lsdf/core_grids.hpp"
#include "lsdf/errors.hpp"
#include "lsdf/mesh.hpp"
#include "lsdf/parallel.hpp"
#include "lsdf/primitives.hpp"
#include "lsdf/robot_model.hpp"

namespace lsdf {

using WarningSink = std::function<void(const std::string&)>;

inline void warn_to_stderr(const std::string& msg) { std::cerr << "warning: " << msg << '\n'; }

/// Signed distance of one link's collision geometry, evaluated in the link
/// frame. Open meshes evaluate unsigned when `allow_unsigned` is set and
/// throw NonWatertight otherwise.
class LinkDistanceFunction {
 public:
  LinkDistanceFunction(const CollisionGeometry& geometry, const Pose& geometry_origin, bool allow_unsigned = false)
      : geometry_(geometry), to_geometry_(geometry_origin.inverse()) {
    if (const auto* m = std::get_if<MeshGeometry>(&geometry_)) {
      if (!m->mesh) throw ValidationError("mesh geometry has no mesh loaded");
      query_ = std::make_shared<MeshDistanceQuery>(*m->mesh);
      if (!query_->watertight()) {
        if (!allow_unsigned) throw NonWatertight("mesh " + m->path.string() + " is not watertight");
        signed_ = false;
      }
    } else {
      const Primitive prim = as_primitive();
      if (!is_valid(prim)) throw ValidationError("invalid primitive parameters");
    }
  }

  bool is_signed() const { return signed_; }

  double operator()(const Vec3& p_link) const {
    const Vec3 p = to_geometry_ * p_link;
    if (query_) return signed_ ? query_->signed_distance(p) : query_->unsigned_distance(p);
    return primitive_sdf(as_primitive(), p);
  }

 private:
  Primitive as_primitive() const {
    return std::visit(
        [](const auto& g) -> Primitive {
          using T = std::decay_t<decltype(g)>;
          if constexpr (std::is_same_v<T, MeshGeometry>) {
            return Sphere{};
          } else {
            return g;
          }
        },
        geometry_);
  }

  CollisionGeometry geometry_;
  Pose to_geometry_;
  std::shared_ptr<MeshDistanceQuery> query_;
  bool signed_ = true;
};

namespace detail {

template <typename DistanceFn>
LinkSdf fill_link_sdf(std::uint32_t link_id, float extent, float resolution, const DistanceFn& fn) {
  LinkSdf sdf(link_id, Vec3f::Constant(extent), Vec3f::Constant(resolution));
  const Index3 dims = sdf.dims();
  // One task per z-slice; each task owns its slice of the output.
  parallel_for(static_cast<std::size_t>(dims.z()), [&](std::size_t z) {
    for (int y = 0; y < dims.y(); ++y) {
      for (int x = 0; x < dims.x(); ++x) {
        const Index3 i(x, y, static_cast<int>(z));
        sdf.at(i) = static_cast<float>(fn(sdf.center(i)));
      }
    }
  });
  return sdf;
}

}  // namespace detail

/// Link grid for a mesh: every cell holds the exact signed distance at its
/// center. Throws NonWatertight for open meshes.
inline LinkSdf build_link_sdf(const TriangleMesh& mesh, float extent_r, float resolution_r, std::uint32_t link_id = 0) {
  const MeshDistanceQuery query(mesh);
  if (!query.watertight()) throw NonWatertight("cannot build a signed field from an open mesh");
  return detail::fill_link_sdf(link_id, extent_r, resolution_r, [&](const Vec3& p) { return query.signed_distance(p); });
}

inline LinkSdf build_link_sdf(const Primitive& shape, float extent_r, float resolution_r, std::uint32_t link_id = 0) {
  if (!is_valid(shape)) throw ValidationError("invalid primitive parameters");
  return detail::fill_link_sdf(link_id, extent_r, resolution_r, [&](const Vec3& p) { return primitive_sdf(shape, p); });
}

inline LinkSdf build_link_sdf(const LinkDistanceFunction& fn, float extent_r, float resolution_r, std::uint32_t link_id) {
  return detail::fill_link_sdf(link_id, extent_r, resolution_r, fn);
}

/// One grid per link that carries collision geometry, in link order. Open
/// meshes fall back to unsigned distances and report through `warn`.
inline std::vector<LinkSdf> build_robot_link_sdfs(const RobotModel& model, float extent_r, float resolution_r,
                                                  const WarningSink& warn = warn_to_stderr) {
  std::vector<LinkSdf> out;
  for (std::size_t i = 0; i < model.link_count(); ++i) {
    const Link& link = model.links()[i];
    if (!link.geometry) continue;
    LinkDistanceFunction fn(*link.geometry, link.geometry_origin, /*allow_unsigned=*/true);
    if (!fn.is_signed() && warn) {
      warn("link '" + link.name + "' mesh is not watertight; using unsigned distance");
    }
    out.push_back(build_link_sdf(fn, extent_r, resolution_r, static_cast<std::uint32_t>(i)));
  }
  return out;
}

}  // namespace lsdf
