#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "lsdf/binary_io.hpp"
#include "lsdf/core_grids.hpp"
#include "lsdf/errors.hpp"

namespace lsdf {

struct TriangleMesh {
  std::vector<Vec3> vertices;
  std::vector<std::array<std::uint32_t, 3>> triangles;

  Vec3 a(std::size_t t) const { return vertices[triangles[t][0]]; }
  Vec3 b(std::size_t t) const { return vertices[triangles[t][1]]; }
  Vec3 c(std::size_t t) const { return vertices[triangles[t][2]]; }

  double area(std::size_t t) const { return 0.5 * (b(t) - a(t)).cross(c(t) - a(t)).norm(); }
};

/// Welds bit-identical vertices, drops zero-area triangles and rejects
/// out-of-range indices. Mesh loaders call this before returning.
inline TriangleMesh clean_mesh(const TriangleMesh& in) {
  for (const auto& tri : in.triangles) {
    for (auto idx : tri) {
      if (idx >= in.vertices.size()) throw ValidationError("triangle index out of range");
    }
  }

  auto key_less = [](const Vec3& l, const Vec3& r) {
    return std::lexicographical_compare(l.data(), l.data() + 3, r.data(), r.data() + 3);
  };
  std::map<Vec3, std::uint32_t, decltype(key_less)> welded(key_less);
  TriangleMesh out;
  std::vector<std::uint32_t> remap(in.vertices.size());
  for (std::size_t i = 0; i < in.vertices.size(); ++i) {
    auto [it, inserted] = welded.try_emplace(in.vertices[i], static_cast<std::uint32_t>(out.vertices.size()));
    if (inserted) out.vertices.push_back(in.vertices[i]);
    remap[i] = it->second;
  }
  for (const auto& tri : in.triangles) {
    std::array<std::uint32_t, 3> t{remap[tri[0]], remap[tri[1]], remap[tri[2]]};
    if (t[0] == t[1] || t[1] == t[2] || t[0] == t[2]) continue;
    const Vec3 n = (out.vertices[t[1]] - out.vertices[t[0]]).cross(out.vertices[t[2]] - out.vertices[t[0]]);
    if (n.norm() <= 1e-14) continue;
    out.triangles.push_back(t);
  }
  return out;
}

// Closed two-manifold test: every undirected edge is shared by exactly two
// triangles.
inline bool is_watertight(const TriangleMesh& mesh) {
  if (mesh.triangles.empty()) return false;
  std::map<std::pair<std::uint32_t, std::uint32_t>, int> edges;
  for (const auto& t : mesh.triangles) {
    for (int e = 0; e < 3; ++e) {
      auto u = t[e], v = t[(e + 1) % 3];
      if (u > v) std::swap(u, v);
      ++edges[{u, v}];
    }
  }
  return std::all_of(edges.begin(), edges.end(), [](const auto& kv) { return kv.second == 2; });
}

// ---------------------------------------------------------------------------
// Loaders

inline TriangleMesh load_stl(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open " + path.string());
  std::string data((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());

  TriangleMesh mesh;
  bool binary = false;
  if (data.size() >= 84) {
    std::uint32_t count = 0;
    std::memcpy(&count, data.data() + 80, 4);
    binary = data.size() == 84 + static_cast<std::size_t>(count) * 50;
  }

  if (binary) {
    std::istringstream ss(data);
    ss.seekg(80);
    const std::uint32_t count = io::read_u32(ss, "STL triangle count");
    for (std::uint32_t t = 0; t < count; ++t) {
      for (int k = 0; k < 3; ++k) io::read_f32(ss, "STL normal");
      std::array<std::uint32_t, 3> tri{};
      for (int v = 0; v < 3; ++v) {
        Vec3 p;
        for (int k = 0; k < 3; ++k) p[k] = io::read_f32(ss, "STL vertex");
        tri[v] = static_cast<std::uint32_t>(mesh.vertices.size());
        mesh.vertices.push_back(p);
      }
      char attr[2];
      ss.read(attr, 2);
      mesh.triangles.push_back(tri);
    }
  } else {
    std::istringstream ss(data);
    std::string token;
    std::array<std::uint32_t, 3> tri{};
    int corner = 0;
    while (ss >> token) {
      if (token != "vertex") continue;
      Vec3 p;
      if (!(ss >> p.x() >> p.y() >> p.z())) throw FormatError("malformed ASCII STL vertex in " + path.string());
      tri[corner] = static_cast<std::uint32_t>(mesh.vertices.size());
      mesh.vertices.push_back(p);
      if (++corner == 3) {
        mesh.triangles.push_back(tri);
        corner = 0;
      }
    }
    if (mesh.triangles.empty()) throw FormatError("no triangles in " + path.string());
  }
  return clean_mesh(mesh);
}

inline TriangleMesh load_obj(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw Error("cannot open " + path.string());
  TriangleMesh mesh;
  std::string line;
  while (std::getline(is, line)) {
    std::istringstream ls(line);
    std::string tag;
    if (!(ls >> tag)) continue;
    if (tag == "v") {
      Vec3 p;
      if (!(ls >> p.x() >> p.y() >> p.z())) throw FormatError("malformed OBJ vertex in " + path.string());
      mesh.vertices.push_back(p);
    } else if (tag == "f") {
      std::vector<std::uint32_t> poly;
      std::string ref;
      while (ls >> ref) {
        const long idx = std::stol(ref.substr(0, ref.find('/')));
        const long n = static_cast<long>(mesh.vertices.size());
        const long resolved = idx > 0 ? idx - 1 : n + idx;
        if (resolved < 0 || resolved >= n) throw FormatError("OBJ face index out of range in " + path.string());
        poly.push_back(static_cast<std::uint32_t>(resolved));
      }
      for (std::size_t k = 1; k + 1 < poly.size(); ++k) mesh.triangles.push_back({poly[0], poly[k], poly[k + 1]});
    }
  }
  return clean_mesh(mesh);
}

inline TriangleMesh load_mesh(const std::filesystem::path& path) {
  auto ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  if (ext == ".stl") return load_stl(path);
  if (ext == ".obj") return load_obj(path);
  throw ValidationError("unsupported mesh format: " + path.string());
}

inline void save_binary_stl(const std::filesystem::path& path, const TriangleMesh& mesh) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw Error("cannot open " + path.string() + " for writing");
  const std::string header(80, ' ');
  os.write(header.data(), 80);
  io::write_u32(os, static_cast<std::uint32_t>(mesh.triangles.size()));
  for (std::size_t t = 0; t < mesh.triangles.size(); ++t) {
    Vec3 n = (mesh.b(t) - mesh.a(t)).cross(mesh.c(t) - mesh.a(t)).normalized();
    for (int k = 0; k < 3; ++k) io::write_f32(os, static_cast<float>(n[k]));
    for (const Vec3& p : {mesh.a(t), mesh.b(t), mesh.c(t)}) {
      for (int k = 0; k < 3; ++k) io::write_f32(os, static_cast<float>(p[k]));
    }
    os.put('\0');
    os.put('\0');
  }
}

// ---------------------------------------------------------------------------
// Generators (outward-facing, watertight)

inline TriangleMesh make_box_mesh(const Vec3& half) {
  TriangleMesh m;
  for (int i = 0; i < 8; ++i) {
    m.vertices.emplace_back((i & 1 ? 1 : -1) * half.x(), (i & 2 ? 1 : -1) * half.y(), (i & 4 ? 1 : -1) * half.z());
  }
  m.triangles = {{0, 2, 1}, {1, 2, 3}, {4, 5, 6}, {5, 7, 6}, {0, 1, 4}, {1, 5, 4},
                 {2, 6, 3}, {3, 6, 7}, {0, 4, 2}, {2, 4, 6}, {1, 3, 5}, {3, 7, 5}};
  return m;
}

// Icosahedron refined `subdivisions` times; 20 * 4^subdivisions faces with all
// vertices on the sphere.
inline TriangleMesh make_icosphere(double radius, int subdivisions) {
  const double phi = (1.0 + std::sqrt(5.0)) / 2.0;
  std::vector<Vec3> v = {{-1, phi, 0}, {1, phi, 0}, {-1, -phi, 0}, {1, -phi, 0}, {0, -1, phi}, {0, 1, phi},
                         {0, -1, -phi}, {0, 1, -phi}, {phi, 0, -1}, {phi, 0, 1}, {-phi, 0, -1}, {-phi, 0, 1}};
  for (auto& p : v) p.normalize();
  std::vector<std::array<std::uint32_t, 3>> f = {
      {0, 11, 5}, {0, 5, 1}, {0, 1, 7}, {0, 7, 10}, {0, 10, 11}, {1, 5, 9}, {5, 11, 4}, {11, 10, 2}, {10, 7, 6}, {7, 1, 8},
      {3, 9, 4}, {3, 4, 2}, {3, 2, 6}, {3, 6, 8}, {3, 8, 9}, {4, 9, 5}, {2, 4, 11}, {6, 2, 10}, {8, 6, 7}, {9, 8, 1}};
  for (int s = 0; s < subdivisions; ++s) {
    std::map<std::pair<std::uint32_t, std::uint32_t>, std::uint32_t> mid;
    auto midpoint = [&](std::uint32_t i, std::uint32_t j) {
      auto key = std::minmax(i, j);
      auto it = mid.find(key);
      if (it != mid.end()) return it->second;
      v.push_back((v[i] + v[j]).normalized());
      const auto idx = static_cast<std::uint32_t>(v.size() - 1);
      mid.emplace(key, idx);
      return idx;
    };
    std::vector<std::array<std::uint32_t, 3>> next;
    for (const auto& t : f) {
      const auto a = midpoint(t[0], t[1]), b = midpoint(t[1], t[2]), c = midpoint(t[2], t[0]);
      next.push_back({t[0], a, c});
      next.push_back({t[1], b, a});
      next.push_back({t[2], c, b});
      next.push_back({a, b, c});
    }
    f = std::move(next);
  }
  TriangleMesh m;
  for (auto& p : v) m.vertices.push_back(p * radius);
  m.triangles = std::move(f);
  return m;
}

// ---------------------------------------------------------------------------
// Distance queries

// Closest point on triangle abc to p (Ericson, Real-Time Collision Detection).
inline Vec3 closest_point_on_triangle(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c) {
  const Vec3 ab = b - a, ac = c - a, ap = p - a;
  const double d1 = ab.dot(ap), d2 = ac.dot(ap);
  if (d1 <= 0.0 && d2 <= 0.0) return a;

  const Vec3 bp = p - b;
  const double d3 = ab.dot(bp), d4 = ac.dot(bp);
  if (d3 >= 0.0 && d4 <= d3) return b;

  const double vc = d1 * d4 - d3 * d2;
  if (vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0) return a + (d1 / (d1 - d3)) * ab;

  const Vec3 cp = p - c;
  const double d5 = ab.dot(cp), d6 = ac.dot(cp);
  if (d6 >= 0.0 && d5 <= d6) return c;

  const double vb = d5 * d2 - d1 * d6;
  if (vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0) return a + (d2 / (d2 - d6)) * ac;

  const double va = d3 * d6 - d5 * d4;
  if (va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0) {
    return b + ((d4 - d3) / ((d4 - d3) + (d5 - d6))) * (c - b);
  }

  const double denom = 1.0 / (va + vb + vc);
  return a + ab * (vb * denom) + ac * (vc * denom);
}

/// Exact point-to-mesh distance with a two-level bounding-box prefilter:
/// triangles are grouped into spatially sorted clusters and a cluster is
/// skipped when its box is already farther than the best distance found.
class MeshDistanceQuery {
 public:
  explicit MeshDistanceQuery(const TriangleMesh& mesh, std::size_t cluster_size = 16)
      : mesh_(mesh), watertight_(is_watertight(mesh)) {
    if (mesh.triangles.empty()) throw ValidationError("mesh has no triangles");
    std::vector<std::size_t> order(mesh.triangles.size());
    std::iota(order.begin(), order.end(), 0);
    std::vector<Vec3> centroid(order.size());
    for (std::size_t t = 0; t < order.size(); ++t) centroid[t] = (mesh.a(t) + mesh.b(t) + mesh.c(t)) / 3.0;
    build_clusters(order, centroid, 0, order.size(), cluster_size);
  }

  bool watertight() const { return watertight_; }

  double unsigned_distance(const Vec3& p) const {
    // Visit nearer clusters first so the prune bound tightens quickly.
    std::vector<std::pair<double, std::size_t>> visit;
    visit.reserve(clusters_.size());
    for (std::size_t k = 0; k < clusters_.size(); ++k) visit.emplace_back(box_distance_sq(clusters_[k], p), k);
    std::sort(visit.begin(), visit.end());

    double best = std::numeric_limits<double>::infinity();
    for (const auto& [lower, k] : visit) {
      if (lower >= best) break;
      const Cluster& cl = clusters_[k];
      for (std::size_t i = cl.begin; i < cl.end; ++i) {
        const std::size_t t = tri_order_[i];
        const Vec3 q = closest_point_on_triangle(p, mesh_.a(t), mesh_.b(t), mesh_.c(t));
        best = std::min(best, (q - p).squaredNorm());
      }
    }
    return std::sqrt(best);
  }

  // Inside test by ray-crossing parity; majority vote over three skewed ray
  // directions so a ray grazing an edge or vertex cannot flip the result.
  bool inside(const Vec3& p) const {
    static const std::array<Vec3, 3> dirs = {Vec3(0.5773502691896258, 0.5773502691896257, 0.5773502691896259).normalized(),
                                             Vec3(-0.3141592653589793, 0.8414709848078965, 0.4402949436867411).normalized(),
                                             Vec3(0.7071067811865475, -0.2718281828459045, -0.6532814824381883).normalized()};
    int votes = 0;
    for (const Vec3& d : dirs) votes += (crossings(p, d) % 2 == 1) ? 1 : 0;
    return votes >= 2;
  }

  double signed_distance(const Vec3& p) const {
    if (!watertight_) throw NonWatertight("signed distance requested on an open mesh");
    const double d = unsigned_distance(p);
    return inside(p) ? -d : d;
  }

 private:
  struct Cluster {
    Vec3 lo, hi;
    std::size_t begin, end;
  };

  void build_clusters(std::vector<std::size_t>& order, const std::vector<Vec3>& centroid, std::size_t begin,
                      std::size_t end, std::size_t leaf) {
    if (end - begin <= leaf) {
      Cluster cl{Vec3::Constant(std::numeric_limits<double>::infinity()),
                 Vec3::Constant(-std::numeric_limits<double>::infinity()), tri_order_.size(), 0};
      for (std::size_t i = begin; i < end; ++i) {
        const std::size_t t = order[i];
        for (const Vec3& v : {mesh_.a(t), mesh_.b(t), mesh_.c(t)}) {
          cl.lo = cl.lo.cwiseMin(v);
          cl.hi = cl.hi.cwiseMax(v);
        }
        tri_order_.push_back(t);
      }
      cl.end = tri_order_.size();
      clusters_.push_back(cl);
      return;
    }
    Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity()), hi = -lo;
    for (std::size_t i = begin; i < end; ++i) {
      lo = lo.cwiseMin(centroid[order[i]]);
      hi = hi.cwiseMax(centroid[order[i]]);
    }
    int axis = 0;
    (hi - lo).maxCoeff(&axis);
    const std::size_t midpoint = begin + (end - begin) / 2;
    std::nth_element(order.begin() + static_cast<std::ptrdiff_t>(begin), order.begin() + static_cast<std::ptrdiff_t>(midpoint),
                     order.begin() + static_cast<std::ptrdiff_t>(end),
                     [&](std::size_t l, std::size_t r) { return centroid[l][axis] < centroid[r][axis]; });
    build_clusters(order, centroid, begin, midpoint, leaf);
    build_clusters(order, centroid, midpoint, end, leaf);
  }

  static double box_distance_sq(const Cluster& cl, const Vec3& p) {
    const Vec3 d = (cl.lo - p).cwiseMax(p - cl.hi).cwiseMax(0.0);
    return d.squaredNorm();
  }

  static bool ray_hits_box(const Cluster& cl, const Vec3& o, const Vec3& inv_d) {
    double t0 = 0.0, t1 = std::numeric_limits<double>::infinity();
    for (int a = 0; a < 3; ++a) {
      double tn = (cl.lo[a] - o[a]) * inv_d[a];
      double tf = (cl.hi[a] - o[a]) * inv_d[a];
      if (tn > tf) std::swap(tn, tf);
      t0 = std::max(t0, tn);
      t1 = std::min(t1, tf);
      if (t0 > t1) return false;
    }
    return true;
  }

  int crossings(const Vec3& o, const Vec3& d) const {
    const Vec3 inv_d = d.cwiseInverse();
    int hits = 0;
    for (const Cluster& cl : clusters_) {
      if (!ray_hits_box(cl, o, inv_d)) continue;
      for (std::size_t i = cl.begin; i < cl.end; ++i) {
        const std::size_t t = tri_order_[i];
        // Moller-Trumbore
        const Vec3 e1 = mesh_.b(t) - mesh_.a(t), e2 = mesh_.c(t) - mesh_.a(t);
        const Vec3 pv = d.cross(e2);
        const double det = e1.dot(pv);
        if (std::abs(det) < 1e-18) continue;
        const double inv = 1.0 / det;
        const Vec3 tv = o - mesh_.a(t);
        const double u = tv.dot(pv) * inv;
        if (u < 0.0 || u > 1.0) continue;
        const Vec3 qv = tv.cross(e1);
        const double v = d.dot(qv) * inv;
        if (v < 0.0 || u + v > 1.0) continue;
        if (e2.dot(qv) * inv > 0.0) ++hits;
      }
    }
    return hits;
  }

  TriangleMesh mesh_;
  bool watertight_;
  std::vector<std::size_t> tri_order_;
  std::vector<Cluster> clusters_;
};

/// Signed distance from `point` to `mesh`, negative inside. Throws
/// NonWatertight when the sign is requested on an open mesh.
inline double exact_point_distance(const TriangleMesh& mesh, const Vec3& point, bool signed_result = true) {
  MeshDistanceQuery query(mesh);
  return signed_result ? query.signed_distance(point) : query.unsigned_distance(point);
}

}  // namespace lsdf
