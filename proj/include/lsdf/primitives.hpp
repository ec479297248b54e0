#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <variant>

#include "lsdf/core_grids.hpp"

namespace lsdf {

struct Sphere {
  double radius = 0.0;
};

// Capsule around the local z axis: segment [-half_length, +half_length].
struct Capsule {
  double half_length = 0.0;
  double radius = 0.0;
};

struct Box {
  Vec3 half_extents = Vec3::Zero();
};

using Primitive = std::variant<Sphere, Capsule, Box>;

inline double primitive_sdf(const Sphere& s, const Vec3& p) { return p.norm() - s.radius; }

inline double primitive_sdf(const Capsule& c, const Vec3& p) {
  const double z = std::clamp(p.z(), -c.half_length, c.half_length);
  return (p - Vec3(0.0, 0.0, z)).norm() - c.radius;
}

inline double primitive_sdf(const Box& b, const Vec3& p) {
  const Vec3 q = p.cwiseAbs() - b.half_extents;
  const double outside = q.cwiseMax(0.0).norm();
  const double inside = std::min(q.maxCoeff(), 0.0);
  return outside + inside;
}

inline double primitive_sdf(const Primitive& shape, const Vec3& p) {
  return std::visit([&](const auto& s) { return primitive_sdf(s, p); }, shape);
}

inline bool is_valid(const Primitive& shape) {
  return std::visit(
      [](const auto& s) {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, Sphere>) return s.radius > 0.0;
        if constexpr (std::is_same_v<T, Capsule>) return s.radius > 0.0 && s.half_length >= 0.0;
        if constexpr (std::is_same_v<T, Box>) return (s.half_extents.array() > 0.0).all();
      },
      shape);
}

// Largest distance from the local origin to any point of the shape.
inline double bounding_radius(const Primitive& shape) {
  return std::visit(
      [](const auto& s) -> double {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, Sphere>) return s.radius;
        if constexpr (std::is_same_v<T, Capsule>) return s.half_length + s.radius;
        if constexpr (std::is_same_v<T, Box>) return s.half_extents.norm();
      },
      shape);
}

}  // namespace lsdf
