#pragma once

// Steady-state velocity Kalman filter (SSVKF) policy and oracle assist.
//
//   v' = F_v n + b_v + G_v v
//   p' = p + dt v          (previous velocity, explicit Euler)

#include "bcisim/random.hpp"
#include "bcisim/types.hpp"

#include <optional>
#include <vector>

namespace bcisim {

struct DecoderParams {
  Matrix F;  // d_dof x n_neurons
  Vector b;  // d_dof
  Matrix G;  // d_dof x d_dof

  static DecoderParams zeros(Eigen::Index d_dof, Eigen::Index n_neurons) {
    return {Matrix::Zero(d_dof, n_neurons), Vector::Zero(d_dof), Matrix::Zero(d_dof, d_dof)};
  }

  Eigen::Index d_dof() const { return F.rows(); }
  Eigen::Index n_neurons() const { return F.cols(); }
  Eigen::Index n_covariates() const { return n_neurons() + 1 + d_dof(); }

  /// W = [F_v | b_v | G_v], acting on the covariate [n; 1; v].
  Matrix weights() const {
    Matrix W(d_dof(), n_covariates());
    W << F, b, G;
    return W;
  }

  static DecoderParams from_weights(const Matrix& W, Eigen::Index n_neurons) {
    const Eigen::Index d = W.rows();
    if (W.cols() != n_neurons + 1 + d) throw std::invalid_argument("weight matrix has wrong width");
    return {W.leftCols(n_neurons), W.col(n_neurons), W.rightCols(d)};
  }

  bool finite() const { return F.allFinite() && b.allFinite() && G.allFinite(); }
};

struct JointLimits {
  Vector lower;
  Vector upper;
};

/// Integrates position with the current velocity and installs the next one.
/// With limits, positions are clamped and the next velocity is zeroed on any
/// clamped coordinate.
inline EffectorState advance(const EffectorState& state, const Vector& next_velocity,
                             const JointLimits* limits = nullptr) {
  EffectorState next{state.position + state.dt * state.velocity, next_velocity, state.dt};
  if (limits != nullptr) {
    for (Eigen::Index i = 0; i < next.position.size(); ++i) {
      if (next.position[i] < limits->lower[i]) {
        next.position[i] = limits->lower[i];
        next.velocity[i] = 0.0;
      } else if (next.position[i] > limits->upper[i]) {
        next.position[i] = limits->upper[i];
        next.velocity[i] = 0.0;
      }
    }
  }
  return next;
}

inline Vector decoded_velocity(const DecoderParams& params, const Vector& neural,
                               const EffectorState& state) {
  return params.F * neural + params.b + params.G * state.velocity;
}

inline EffectorState decode_step(const DecoderParams& params, const Vector& neural,
                                 const EffectorState& state, const JointLimits* limits = nullptr) {
  return advance(state, decoded_velocity(params, neural, state), limits);
}

/// Regression covariate z = [n; 1; v].
inline Vector covariate(const Vector& neural, const EffectorState& state) {
  Vector z(neural.size() + 1 + state.velocity.size());
  z << neural, 1.0, state.velocity;
  return z;
}

enum class AssistMode { linear_mix, probabilistic_mix };

struct AssistSpec {
  std::vector<double> betas{1.0, 0.0};  // indexed by reach (k = 1 is betas[0]); last value repeats
  AssistMode mode = AssistMode::linear_mix;
  double init_action_noise_sigma = 0.0;

  double beta(int k) const {
    if (betas.empty()) return 0.0;
    const auto idx = static_cast<std::size_t>(k < 1 ? 0 : k - 1);
    return idx < betas.size() ? betas[idx] : betas.back();
  }

  void validate() const {
    for (double b : betas) {
      if (!(b >= 0.0 && b <= 1.0)) throw std::invalid_argument("assist beta outside [0,1]");
    }
    if (!(init_action_noise_sigma >= 0.0)) throw std::invalid_argument("assist noise must be >= 0");
  }
};

/// Effective action of the assisted decoder for reach k. Draws exactly one
/// uniform and one normal per coordinate from the stream regardless of the
/// branch taken, so the stream stays aligned across configurations.
inline Vector blend_action(const AssistSpec& assist, int k, const Vector& oracle_action,
                           const Vector& decoder_action, Rng& rng) {
  const double beta = assist.beta(k);
  const double u = uniform(rng, 0.0, 1.0);
  const Vector noise = normal_vector(rng, oracle_action.size(), assist.init_action_noise_sigma);

  Vector action;
  if (beta >= 1.0) {
    action = oracle_action;
    if (assist.init_action_noise_sigma > 0.0) action += noise;
    return action;
  }
  if (beta <= 0.0) return decoder_action;
  if (assist.mode == AssistMode::linear_mix) return beta * oracle_action + (1.0 - beta) * decoder_action;
  return u < beta ? oracle_action : decoder_action;
}

}  // namespace bcisim
