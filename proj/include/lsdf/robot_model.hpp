#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "json.hpp"
#include "lsdf/core_grids.hpp"
#include "lsdf/errors.hpp"
#include "lsdf/mesh.hpp"
#include "lsdf/primitives.hpp"

namespace lsdf {

/// Rigid transform x -> rotation * x + translation.
struct Pose {
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Vec3 translation = Vec3::Zero();

  static Pose from_xyz_rpy(const Vec3& xyz, const Vec3& rpy) {
    Pose p;
    p.rotation = (Eigen::AngleAxisd(rpy.z(), Vec3::UnitZ()) * Eigen::AngleAxisd(rpy.y(), Vec3::UnitY()) *
                  Eigen::AngleAxisd(rpy.x(), Vec3::UnitX()))
                     .toRotationMatrix();
    p.translation = xyz;
    return p;
  }

  Pose operator*(const Pose& rhs) const { return {rotation * rhs.rotation, rotation * rhs.translation + translation}; }
  Vec3 operator*(const Vec3& x) const { return rotation * x + translation; }
  Pose inverse() const {
    const Eigen::Matrix3d rt = rotation.transpose();
    return {rt, -(rt * translation)};
  }
  bool operator==(const Pose&) const = default;
};

enum class JointType { Revolute, Prismatic, Fixed };

struct JointLimits {
  double lower = -std::numeric_limits<double>::infinity();
  double upper = std::numeric_limits<double>::infinity();
  double velocity = 0.0;
  double acceleration = 0.0;
};

struct Joint {
  std::string name;
  JointType type = JointType::Fixed;
  int parent_link = -1;
  int child_link = -1;
  Vec3 axis = Vec3::UnitZ();
  Pose origin;
  JointLimits limits;
  int dof_index = -1;  // column in a ConfigBatch, -1 for fixed joints
};

struct MeshGeometry {
  std::filesystem::path path;
  std::shared_ptr<const TriangleMesh> mesh;
};

using CollisionGeometry = std::variant<Sphere, Capsule, Box, MeshGeometry>;

struct LinkSphere {
  Vec3 center = Vec3::Zero();  // link frame
  double radius = 0.0;
};

struct Link {
  std::string name;
  int parent_joint = -1;
  std::optional<CollisionGeometry> geometry;
  Pose geometry_origin;  // geometry frame relative to the link frame
  std::vector<LinkSphere> spheres;  // optional conservative sphere cover
};

/// Kinematic tree with collision geometry. Links are stored so that every
/// parent precedes its children; link_id is the position in `links`.
class RobotModel {
 public:
  RobotModel() = default;

  RobotModel(std::vector<Link> links, std::vector<Joint> joints, double link_reach)
      : links_(std::move(links)), joints_(std::move(joints)), link_reach_(link_reach) {
    finalize();
  }

  const std::vector<Link>& links() const { return links_; }
  const std::vector<Joint>& joints() const { return joints_; }
  std::size_t link_count() const { return links_.size(); }
  int dof() const { return dof_; }
  double link_reach() const { return link_reach_; }

  // Links in parent-before-child order.
  const std::vector<int>& traversal_order() const { return order_; }

  const Joint& dof_joint(int d) const { return joints_[dof_joints_[static_cast<std::size_t>(d)]]; }

  int link_index(const std::string& name) const {
    for (std::size_t i = 0; i < links_.size(); ++i) {
      if (links_[i].name == name) return static_cast<int>(i);
    }
    return -1;
  }

 private:
  void finalize() {
    if (links_.empty()) throw ValidationError("robot model has no links");
    for (auto& l : links_) l.parent_joint = -1;
    for (std::size_t j = 0; j < joints_.size(); ++j) {
      Joint& jt = joints_[j];
      const auto n = static_cast<int>(links_.size());
      if (jt.parent_link < 0 || jt.parent_link >= n || jt.child_link < 0 || jt.child_link >= n) {
        throw ValidationError("joint '" + jt.name + "' references an unknown link");
      }
      if (links_[static_cast<std::size_t>(jt.child_link)].parent_joint != -1) {
        throw ValidationError("link '" + links_[static_cast<std::size_t>(jt.child_link)].name + "' has two parent joints");
      }
      links_[static_cast<std::size_t>(jt.child_link)].parent_joint = static_cast<int>(j);
      if (jt.type != JointType::Fixed) {
        if (std::abs(jt.axis.norm() - 1.0) > 1e-9) throw ValidationError("joint '" + jt.name + "' axis is not unit length");
        if (!(jt.limits.velocity > 0.0) || !(jt.limits.acceleration > 0.0)) {
          throw ValidationError("joint '" + jt.name + "' needs positive velocity and acceleration limits");
        }
        if (jt.limits.lower > jt.limits.upper) throw ValidationError("joint '" + jt.name + "' has lower > upper");
      }
    }
    const auto roots = std::count_if(links_.begin(), links_.end(), [](const Link& l) { return l.parent_joint == -1; });
    if (roots != 1) throw ValidationError("kinematic structure must have exactly one root link");

    // Parent-before-child order, which also rejects cycles.
    order_.clear();
    std::vector<bool> placed(links_.size(), false);
    for (std::size_t i = 0; i < links_.size(); ++i) {
      if (links_[i].parent_joint == -1) {
        order_.push_back(static_cast<int>(i));
        placed[i] = true;
      }
    }
    for (std::size_t head = 0; head < order_.size(); ++head) {
      for (const Joint& jt : joints_) {
        if (jt.parent_link == order_[head] && !placed[static_cast<std::size_t>(jt.child_link)]) {
          placed[static_cast<std::size_t>(jt.child_link)] = true;
          order_.push_back(jt.child_link);
        }
      }
    }
    if (order_.size() != links_.size()) throw ValidationError("kinematic structure is not a tree");

    dof_joints_.clear();
    for (std::size_t j = 0; j < joints_.size(); ++j) {
      if (joints_[j].type != JointType::Fixed) {
        joints_[j].dof_index = static_cast<int>(dof_joints_.size());
        dof_joints_.push_back(j);
      } else {
        joints_[j].dof_index = -1;
      }
    }
    dof_ = static_cast<int>(dof_joints_.size());
  }

  std::vector<Link> links_;
  std::vector<Joint> joints_;
  std::vector<int> order_;
  std::vector<std::size_t> dof_joints_;
  int dof_ = 0;
  double link_reach_ = 0.0;
};

/// C x D matrix of joint positions, one configuration (waypoint) per row.
struct ConfigBatch {
  Eigen::MatrixXd q;
  Eigen::Index size() const { return q.rows(); }
};

/// C x L link poses, row-major by configuration.
struct LinkPoseBatch {
  std::size_t configs = 0;
  std::size_t links = 0;
  std::vector<Pose> transforms;

  const Pose& at(std::size_t c, std::size_t i) const { return transforms[c * links + i]; }
  Pose& at(std::size_t c, std::size_t i) { return transforms[c * links + i]; }
};

namespace detail {

inline Pose joint_motion(const Joint& j, double q) {
  switch (j.type) {
    case JointType::Revolute:
      return {Eigen::AngleAxisd(q, j.axis).toRotationMatrix(), Vec3::Zero()};
    case JointType::Prismatic:
      return {Eigen::Matrix3d::Identity(), j.axis * q};
    case JointType::Fixed:
      break;
  }
  return {};
}

// The single composition rule used by both the serial and the batched FK, so
// the two paths produce identical bits.
inline Pose child_pose(const Pose& parent, const Joint& j, double q) { return parent * (j.origin * joint_motion(j, q)); }

}  // namespace detail

/// Throws LimitViolation listing every offending (configuration, joint).
inline void check_limits(const RobotModel& model, const ConfigBatch& batch) {
  if (batch.size() < 1) throw ValidationError("configuration batch is empty");
  if (batch.q.cols() != model.dof()) {
    throw ValidationError("configuration batch has " + std::to_string(batch.q.cols()) + " columns, robot has " +
                          std::to_string(model.dof()) + " DoF");
  }
  std::ostringstream offenders;
  int count = 0;
  for (Eigen::Index c = 0; c < batch.size(); ++c) {
    for (int d = 0; d < model.dof(); ++d) {
      const Joint& j = model.dof_joint(d);
      const double q = batch.q(c, d);
      if (!(q >= j.limits.lower && q <= j.limits.upper)) {
        if (count < 20) offenders << " (" << c << ", " << j.name << ")";
        ++count;
      }
    }
  }
  if (count > 0) {
    throw LimitViolation("joint limits violated at " + std::to_string(count) + " entries:" + offenders.str() +
                         (count > 20 ? " ..." : ""));
  }
}

/// Link poses in the base frame for a single configuration.
inline std::vector<Pose> forward_kinematics(const RobotModel& model, std::span<const double> q) {
  if (static_cast<int>(q.size()) != model.dof()) throw ValidationError("configuration size does not match DoF");
  std::vector<Pose> out(model.link_count());
  for (int i : model.traversal_order()) {
    const Link& link = model.links()[static_cast<std::size_t>(i)];
    if (link.parent_joint < 0) {
      out[static_cast<std::size_t>(i)] = Pose{};
      continue;
    }
    const Joint& j = model.joints()[static_cast<std::size_t>(link.parent_joint)];
    const double qj = j.dof_index >= 0 ? q[static_cast<std::size_t>(j.dof_index)] : 0.0;
    out[static_cast<std::size_t>(i)] = detail::child_pose(out[static_cast<std::size_t>(j.parent_link)], j, qj);
  }
  return out;
}

/// Batched FK: sweeps the tree once, link by link, advancing every
/// configuration at each level.
inline LinkPoseBatch forward_kinematics_batch(const RobotModel& model, const ConfigBatch& batch) {
  check_limits(model, batch);
  LinkPoseBatch out;
  out.configs = static_cast<std::size_t>(batch.size());
  out.links = model.link_count();
  out.transforms.assign(out.configs * out.links, Pose{});
  for (int i : model.traversal_order()) {
    const Link& link = model.links()[static_cast<std::size_t>(i)];
    if (link.parent_joint < 0) continue;
    const Joint& j = model.joints()[static_cast<std::size_t>(link.parent_joint)];
    const auto child = static_cast<std::size_t>(i);
    const auto parent = static_cast<std::size_t>(j.parent_link);
    for (std::size_t c = 0; c < out.configs; ++c) {
      const double qj = j.dof_index >= 0 ? batch.q(static_cast<Eigen::Index>(c), j.dof_index) : 0.0;
      out.at(c, child) = detail::child_pose(out.at(c, parent), j, qj);
    }
  }
  return out;
}

/// Worst-case stopping time: max over joints of velocity / acceleration limit.
inline double max_braking_time(const RobotModel& model) {
  double t = 0.0;
  for (int d = 0; d < model.dof(); ++d) {
    const auto& lim = model.dof_joint(d).limits;
    t = std::max(t, lim.velocity / lim.acceleration);
  }
  return t;
}

/// Smallest link-grid half-extent that still sees an obstacle moving at
/// v_obs for t_brake before it violates the protective distance.
inline double required_extent(double v_obs, double t_brake, double d_prot, double link_reach) {
  if (v_obs < 0.0 || t_brake < 0.0 || d_prot < 0.0 || link_reach < 0.0) {
    throw ValidationError("required_extent inputs must be non-negative");
  }
  return v_obs * t_brake + d_prot + link_reach;
}

// ---------------------------------------------------------------------------
// Robot description (JSON)
//
// {
//   "name": "arm", "link_reach": 0.6,
//   "links":  [{"name": "base", "geometry": {"type": "box", "half_extents": [..]},
//               "origin": {"xyz": [..], "rpy": [..]},
//               "spheres": [{"center": [..], "radius": r}]}, ...],
//   "joints": [{"name": "j1", "type": "revolute", "parent": "base", "child": "l1",
//               "axis": [0,0,1], "origin": {...},
//               "limits": {"lower": .., "upper": .., "velocity": .., "acceleration": ..}}],
//   "limits": {"j1": {...}}        // optional, overrides per-joint limits
// }
//
// Geometry types: sphere {radius}, capsule {half_length, radius} along local z,
// box {half_extents}, mesh {path, scale?} with path relative to the model file.

namespace detail {

inline Vec3 json_vec3(const nlohmann::json& j, const char* what) {
  if (!j.is_array() || j.size() != 3) throw ValidationError(std::string(what) + " must be a 3-element array");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

inline Pose json_pose(const nlohmann::json& j) {
  if (j.is_null()) return {};
  const Vec3 xyz = j.contains("xyz") ? json_vec3(j["xyz"], "origin.xyz") : Vec3::Zero();
  const Vec3 rpy = j.contains("rpy") ? json_vec3(j["rpy"], "origin.rpy") : Vec3::Zero();
  return Pose::from_xyz_rpy(xyz, rpy);
}

inline JointLimits json_limits(const nlohmann::json& j, JointLimits lim) {
  if (j.contains("lower")) lim.lower = j["lower"].get<double>();
  if (j.contains("upper")) lim.upper = j["upper"].get<double>();
  if (j.contains("velocity")) lim.velocity = j["velocity"].get<double>();
  if (j.contains("acceleration")) lim.acceleration = j["acceleration"].get<double>();
  return lim;
}

inline CollisionGeometry json_geometry(const nlohmann::json& g, const std::filesystem::path& base_dir) {
  const auto type = g.at("type").get<std::string>();
  if (type == "sphere") return Sphere{g.at("radius").get<double>()};
  if (type == "capsule") return Capsule{g.at("half_length").get<double>(), g.at("radius").get<double>()};
  if (type == "box") return Box{json_vec3(g.at("half_extents"), "half_extents")};
  if (type == "mesh") {
    MeshGeometry m;
    m.path = g.at("path").get<std::string>();
    auto mesh = load_mesh(m.path.is_absolute() ? m.path : base_dir / m.path);
    const double scale = g.value("scale", 1.0);
    for (auto& v : mesh.vertices) v *= scale;
    m.mesh = std::make_shared<const TriangleMesh>(std::move(mesh));
    return m;
  }
  throw ValidationError("unknown geometry type '" + type + "'");
}

}  // namespace detail

inline RobotModel parse_robot_model(const nlohmann::json& doc, const std::filesystem::path& base_dir = {}) {
  try {
    std::vector<Link> links;
    std::map<std::string, int> link_ids;
    for (const auto& jl : doc.at("links")) {
      Link l;
      l.name = jl.at("name").get<std::string>();
      if (link_ids.count(l.name)) throw ValidationError("duplicate link name '" + l.name + "'");
      if (jl.contains("geometry")) {
        l.geometry = detail::json_geometry(jl["geometry"], base_dir);
        if (const auto* prim = std::get_if<Sphere>(&*l.geometry); prim && !(prim->radius > 0)) {
          throw ValidationError("link '" + l.name + "' has invalid sphere");
        }
      }
      l.geometry_origin = detail::json_pose(jl.value("origin", nlohmann::json()));
      for (const auto& s : jl.value("spheres", nlohmann::json::array())) {
        l.spheres.push_back({detail::json_vec3(s.at("center"), "sphere center"), s.at("radius").get<double>()});
      }
      link_ids[l.name] = static_cast<int>(links.size());
      links.push_back(std::move(l));
    }

    const auto link_id = [&](const std::string& name) {
      auto it = link_ids.find(name);
      if (it == link_ids.end()) throw ValidationError("unknown link '" + name + "'");
      return it->second;
    };

    const nlohmann::json shared_limits = doc.value("limits", nlohmann::json::object());
    std::vector<Joint> joints;
    for (const auto& jj : doc.value("joints", nlohmann::json::array())) {
      Joint j;
      j.name = jj.at("name").get<std::string>();
      const auto type = jj.at("type").get<std::string>();
      if (type == "revolute") {
        j.type = JointType::Revolute;
      } else if (type == "prismatic") {
        j.type = JointType::Prismatic;
      } else if (type == "fixed") {
        j.type = JointType::Fixed;
      } else {
        throw ValidationError("unknown joint type '" + type + "'");
      }
      j.parent_link = link_id(jj.at("parent").get<std::string>());
      j.child_link = link_id(jj.at("child").get<std::string>());
      if (jj.contains("axis")) j.axis = detail::json_vec3(jj["axis"], "axis");
      j.origin = detail::json_pose(jj.value("origin", nlohmann::json()));
      if (jj.contains("limits")) j.limits = detail::json_limits(jj["limits"], j.limits);
      if (shared_limits.contains(j.name)) j.limits = detail::json_limits(shared_limits[j.name], j.limits);
      joints.push_back(std::move(j));
    }
    const double reach = doc.value("link_reach", 0.0);
    if (reach < 0.0) throw ValidationError("link_reach must be non-negative");
    return RobotModel(std::move(links), std::move(joints), reach);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("robot model: ") + e.what());
  }
}

inline RobotModel load_robot_model(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw Error("cannot open " + path.string());
  nlohmann::json doc;
  try {
    is >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  return parse_robot_model(doc, path.parent_path());
}

// ---------------------------------------------------------------------------
// Configuration batch CSV: one waypoint per row, D columns. Blank lines and
// lines starting with '#' are skipped; a non-numeric first row is a header.

inline ConfigBatch parse_config_csv(std::istream& is) {
  std::vector<std::vector<double>> rows;
  std::string line;
  bool first = true;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#' || line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::vector<double> row;
    std::stringstream ls(line);
    std::string cell;
    bool numeric = true;
    while (std::getline(ls, cell, ',')) {
      try {
        std::size_t used = 0;
        row.push_back(std::stod(cell, &used));
        if (cell.find_first_not_of(" \t\r", used) != std::string::npos) numeric = false;
      } catch (const std::exception&) {
        numeric = false;
      }
    }
    if (!numeric) {
      if (first) {
        first = false;
        continue;
      }
      throw FormatError("non-numeric configuration row: " + line);
    }
    first = false;
    if (!rows.empty() && row.size() != rows.front().size()) throw FormatError("ragged configuration CSV");
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw ValidationError("configuration CSV has no rows");
  ConfigBatch batch;
  const Eigen::Index cols = rows.empty() ? 0 : static_cast<Eigen::Index>(rows.front().size());
  batch.q.resize(static_cast<Eigen::Index>(rows.size()), cols);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) batch.q(static_cast<Eigen::Index>(r), c) = rows[r][static_cast<std::size_t>(c)];
  }
  return batch;
}

inline ConfigBatch load_config_csv(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw Error("cannot open " + path.string());
  return parse_config_csv(is);
}

}  // namespace lsdf
