#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <stdexcept>
#include <string>

namespace bcisim {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using Vector3 = Eigen::Vector3d;

/// Runtime failure inside the simulator (numerical breakdown, bad state).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Position + velocity of the controlled effector. Position is cursor
/// coordinates or joint angles (radians); velocity is per simulation step.
struct EffectorState {
  Vector position;
  Vector velocity;
  double dt = 1.0;

  static EffectorState at_rest(const Vector& position, double dt = 1.0) {
    return {position, Vector::Zero(position.size()), dt};
  }

  bool finite() const { return position.allFinite() && velocity.allFinite(); }
};

}  // namespace bcisim
