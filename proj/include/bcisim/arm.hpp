#pragma once

// Kinematic tree of revolute joints with named marker points.
//
// Joint j sits at its parent's origin displaced by `offset` (parent frame)
// and rotates about its own `axis`:
//   R_j = R_parent * Rot(axis_j, q_j),  P_j = P_parent + R_parent * offset_j
// A marker is a point fixed in a joint frame: P_j + R_j * local.

#include "bcisim/types.hpp"

#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

namespace bcisim {

struct Joint {
  std::string name;
  int parent = -1;
  Vector3 axis = Vector3::UnitZ();
  Vector3 offset = Vector3::Zero();
  double lower = -M_PI;
  double upper = M_PI;
};

struct Marker {
  int joint = 0;
  Vector3 local = Vector3::Zero();
};

using MarkerPositions = std::map<std::string, Vector3, std::less<>>;

class ArmModel {
 public:
  ArmModel() = default;

  ArmModel(std::vector<Joint> joints, std::map<std::string, Marker, std::less<>> markers)
      : joints_(std::move(joints)), markers_(std::move(markers)) {
    validate();
  }

  /// Parses the plain-text chain description:
  ///   joint  <name> <parent> <ax> <ay> <az> <ox> <oy> <oz> <min> <max>
  ///   marker <name> <joint> <x> <y> <z>
  /// '#' starts a comment; parent -1 marks the root.
  static ArmModel parse(std::istream& in) {
    std::vector<Joint> joints;
    std::map<std::string, Marker, std::less<>> markers;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
      std::istringstream ss(line);
      std::string kind;
      if (!(ss >> kind)) continue;
      auto fail = [&](const std::string& what) {
        throw std::invalid_argument("arm chain line " + std::to_string(line_no) + ": " + what);
      };
      if (kind == "joint") {
        Joint j;
        if (!(ss >> j.name >> j.parent >> j.axis.x() >> j.axis.y() >> j.axis.z() >> j.offset.x() >>
              j.offset.y() >> j.offset.z() >> j.lower >> j.upper)) {
          fail("expected: joint name parent ax ay az ox oy oz min max");
        }
        joints.push_back(std::move(j));
      } else if (kind == "marker") {
        std::string name;
        Marker m;
        if (!(ss >> name >> m.joint >> m.local.x() >> m.local.y() >> m.local.z())) {
          fail("expected: marker name joint x y z");
        }
        markers[name] = m;
      } else {
        fail("unknown record '" + kind + "'");
      }
    }
    return ArmModel(std::move(joints), std::move(markers));
  }

  static ArmModel load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::invalid_argument("cannot open arm chain file: " + path);
    return parse(in);
  }

  const std::vector<Joint>& joints() const { return joints_; }
  const std::map<std::string, Marker, std::less<>>& markers() const { return markers_; }
  Eigen::Index d_dof() const { return static_cast<Eigen::Index>(joints_.size()); }

  Vector lower_limits() const {
    Vector v(d_dof());
    for (Eigen::Index i = 0; i < d_dof(); ++i) v[i] = joints_[static_cast<std::size_t>(i)].lower;
    return v;
  }
  Vector upper_limits() const {
    Vector v(d_dof());
    for (Eigen::Index i = 0; i < d_dof(); ++i) v[i] = joints_[static_cast<std::size_t>(i)].upper;
    return v;
  }

  /// All-zero pose clamped into the limits.
  Vector rest_pose() const { return clamp(Vector::Zero(d_dof())); }

  Vector clamp(const Vector& q) const { return q.cwiseMax(lower_limits()).cwiseMin(upper_limits()); }

  const Marker& marker(std::string_view name) const {
    auto it = markers_.find(name);
    if (it == markers_.end()) throw std::invalid_argument("unknown marker: " + std::string(name));
    return it->second;
  }

  /// True if joint `j` lies on the root path of joint `leaf` (inclusive).
  bool is_ancestor(int j, int leaf) const {
    for (int cur = leaf; cur >= 0; cur = joints_[static_cast<std::size_t>(cur)].parent) {
      if (cur == j) return true;
    }
    return false;
  }

  /// Sum of link offsets and marker offsets: bounds how far any marker can
  /// move per radian of joint motion.
  double total_length() const {
    double len = 0.0;
    for (const auto& j : joints_) len += j.offset.norm();
    for (const auto& [name, m] : markers_) len += m.local.norm();
    return len;
  }

 private:
  void validate() const {
    const auto n = static_cast<int>(joints_.size());
    if (n == 0) throw std::invalid_argument("arm has no joints");
    int roots = 0;
    for (int i = 0; i < n; ++i) {
      const Joint& j = joints_[static_cast<std::size_t>(i)];
      if (j.parent == -1) {
        ++roots;
      } else if (j.parent < 0 || j.parent >= i) {
        // parents must precede children, which also rules out cycles
        throw std::invalid_argument("joint '" + j.name + "' must follow its parent");
      }
      if (std::abs(j.axis.norm() - 1.0) > 1e-9) throw std::invalid_argument("joint '" + j.name + "' axis not unit");
      if (!(j.lower <= j.upper)) throw std::invalid_argument("joint '" + j.name + "' has empty limits");
    }
    if (roots != 1) throw std::invalid_argument("arm must have exactly one root joint");
    for (const auto& [name, m] : markers_) {
      if (m.joint < 0 || m.joint >= n) throw std::invalid_argument("marker '" + name + "' on unknown joint");
    }
  }

  std::vector<Joint> joints_;
  std::map<std::string, Marker, std::less<>> markers_;
};

/// World frames of every joint for pose q.
struct JointFrames {
  std::vector<Eigen::Matrix3d> rotation;
  std::vector<Vector3> origin;
};

inline JointFrames joint_frames(const ArmModel& arm, const Vector& q) {
  const auto n = arm.joints().size();
  JointFrames f;
  f.rotation.resize(n);
  f.origin.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const Joint& j = arm.joints()[i];
    const Eigen::Matrix3d local = Eigen::AngleAxisd(q[static_cast<Eigen::Index>(i)], j.axis).toRotationMatrix();
    if (j.parent < 0) {
      f.origin[i] = j.offset;
      f.rotation[i] = local;
    } else {
      const auto p = static_cast<std::size_t>(j.parent);
      f.origin[i] = f.origin[p] + f.rotation[p] * j.offset;
      f.rotation[i] = f.rotation[p] * local;
    }
  }
  return f;
}

inline Vector3 marker_position(const ArmModel& arm, const JointFrames& f, std::string_view name) {
  const Marker& m = arm.marker(name);
  const auto j = static_cast<std::size_t>(m.joint);
  return f.origin[j] + f.rotation[j] * m.local;
}

inline MarkerPositions forward_kinematics(const ArmModel& arm, const Vector& q) {
  const JointFrames f = joint_frames(arm, q);
  MarkerPositions out;
  for (const auto& [name, m] : arm.markers()) out[name] = marker_position(arm, f, name);
  return out;
}

/// 3 x d_dof positional Jacobian of a marker: column j is
/// (R_j axis_j) x (marker - P_j) for joints on the marker's root path.
inline Matrix marker_jacobian(const ArmModel& arm, const JointFrames& f, std::string_view name) {
  const Marker& m = arm.marker(name);
  const Vector3 p = marker_position(arm, f, name);
  Matrix J = Matrix::Zero(3, arm.d_dof());
  for (int cur = m.joint; cur >= 0; cur = arm.joints()[static_cast<std::size_t>(cur)].parent) {
    const auto c = static_cast<std::size_t>(cur);
    const Vector3 axis = f.rotation[c] * arm.joints()[c].axis;
    J.col(cur) = axis.cross(p - f.origin[c]);
  }
  return J;
}

namespace detail {
inline constexpr const char* kDefaultArmChain = R"(# 26-DOF arm: shoulder(3) elbow(2) wrist(3) thumb(4) index(4) middle(4) ring(3) pinky(3)
# Rest pose: upper arm hanging along -z, forearm and hand pointing along +x.
#      name            parent  axis           offset              limits
joint  shoulder_flex   -1      0 1 0          0 0 0               -2.6 1.0
joint  shoulder_abd    0       1 0 0          0 0 0               -1.2 1.6
joint  shoulder_rot    1       0 0 1          0 0 0               -1.4 1.4
joint  elbow_flex      2       0 1 0          0 0 -1              -2.4 1.5
joint  elbow_pron      3       1 0 0          0 0 0               -1.4 1.4
joint  wrist_flex      4       0 1 0          1 0 0               -1.2 1.2
joint  wrist_dev       5       0 0 1          0 0 0               -0.5 0.5
joint  wrist_rot       6       1 0 0          0 0 0               -1.0 1.0
joint  thumb_cmc_flex  7       1 0 0          0.08 0.10 0         -1.0 1.2
joint  thumb_cmc_abd   8       0 0 1          0 0 0               -0.6 0.6
joint  thumb_mcp       9       -0.8 0.6 0     0.15 0.20 0         -0.2 1.2
joint  thumb_ip        10      -0.8 0.6 0     0.12 0.16 0         -0.2 1.2
joint  index_mcp       7       0 1 0          0.4 0.06 0          -0.3 1.6
joint  index_abd       12      0 0 1          0 0 0               -0.3 0.3
joint  index_pip       13      0 1 0          0.25 0 0            0.0 1.7
joint  index_dip       14      0 1 0          0.2 0 0             0.0 1.3
joint  middle_mcp      7       0 1 0          0.4 0 0             -0.3 1.6
joint  middle_abd      16      0 0 1          0 0 0               -0.3 0.3
joint  middle_pip      17      0 1 0          0.25 0 0            0.0 1.7
joint  middle_dip      18      0 1 0          0.2 0 0             0.0 1.3
joint  ring_mcp        7       0 1 0          0.38 -0.06 0        -0.3 1.6
joint  ring_pip        20      0 1 0          0.25 0 0            0.0 1.7
joint  ring_dip        21      0 1 0          0.2 0 0             0.0 1.3
joint  pinky_mcp       7       0 1 0          0.34 -0.12 0        -0.3 1.6
joint  pinky_pip       23      0 1 0          0.2 0 0             0.0 1.7
joint  pinky_dip       24      0 1 0          0.16 0 0            0.0 1.3
marker wrist           7       0 0 0
marker thumb_tip       11      0.12 0.16 0
marker index_tip       15      0.2 0 0
marker middle_tip      19      0.2 0 0
)";
}  // namespace detail

inline ArmModel default_arm() {
  std::istringstream in(detail::kDefaultArmChain);
  return ArmModel::parse(in);
}

}  // namespace bcisim
