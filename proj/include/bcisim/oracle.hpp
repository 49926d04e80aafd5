#pragma once

// Intention oracles: goal-directed velocities for the cursor, and one-step
// damped-least-squares (DLS) joint updates on a reach/grasp objective for
// the arm.

#include "bcisim/arm.hpp"
#include "bcisim/random.hpp"
#include "bcisim/types.hpp"

#include <array>
#include <optional>
#include <vector>

namespace bcisim {

struct GoalSpec {
  Vector target;     // cursor goal, or wand anchor for the arm
  double epsilon = 0.05;
  std::optional<std::array<Vector3, 2>> wand_points;  // thumb, middle fingertip targets
};

// ---------------------------------------------------------------------------
// Cursor
// ---------------------------------------------------------------------------

/// Unit direction toward the goal scaled by min(speed, distance / dt); zero
/// once within epsilon.
inline Vector cursor_oracle(const EffectorState& state, const GoalSpec& goal, double speed) {
  const Vector delta = goal.target - state.position;
  const double dist = delta.norm();
  if (dist <= goal.epsilon) return Vector::Zero(delta.size());
  return delta * (std::min(speed, dist / state.dt) / dist);
}

// ---------------------------------------------------------------------------
// Arm
// ---------------------------------------------------------------------------

enum class ArmPhase { reach, grasp };

struct ObjectiveTerm {
  std::string marker;
  Vector3 target;
  double weight = 1.0;
};

struct TaskObjective {
  ArmPhase phase = ArmPhase::reach;
  std::vector<ObjectiveTerm> terms;
};

struct ArmTaskParams {
  double delta = 0.15;            // wrist-to-wand radius that switches to the grasp phase
  double reach_weight = 1.0;
  double grasp_weight = 1.0;
  double grasp_wrist_weight = 1.0;  // wrist spring stays on while grasping
  double acquire_cost = 0.01;     // grasp-phase cost at which the reach is acquired
  double mu = 0.1;                // DLS damping
  double max_step = 0.05;         // rad per step, infinity norm
};

inline double objective_cost(const ArmModel& arm, const JointFrames& f, const TaskObjective& obj) {
  double cost = 0.0;
  for (const auto& term : obj.terms) cost += term.weight * (marker_position(arm, f, term.marker) - term.target).squaredNorm();
  return cost;
}

inline double objective_cost(const ArmModel& arm, const Vector& q, const TaskObjective& obj) {
  return objective_cost(arm, joint_frames(arm, q), obj);
}

inline TaskObjective objective_for(const ArmModel& arm, const JointFrames& f, const GoalSpec& goal,
                                   const ArmTaskParams& params) {
  const Vector3 anchor = goal.target.head<3>();
  const double wrist_dist = (marker_position(arm, f, "wrist") - anchor).norm();
  TaskObjective obj;
  if (wrist_dist <= params.delta && goal.wand_points) {
    obj.phase = ArmPhase::grasp;
    obj.terms.push_back({"wrist", anchor, params.grasp_wrist_weight});
    obj.terms.push_back({"thumb_tip", (*goal.wand_points)[0], params.grasp_weight});
    obj.terms.push_back({"middle_tip", (*goal.wand_points)[1], params.grasp_weight});
  } else {
    obj.phase = ArmPhase::reach;
    obj.terms.push_back({"wrist", anchor, params.reach_weight});
  }
  return obj;
}

struct ArmObjectiveValue {
  double cost = 0.0;
  TaskObjective objective;
};

/// Grasp phase iff the wrist is within delta of the wand anchor (boundary
/// inclusive); cost is the weighted squared marker residual of that phase.
inline ArmObjectiveValue arm_objective(const ArmModel& arm, const Vector& q, const GoalSpec& goal,
                                       const ArmTaskParams& params) {
  const JointFrames f = joint_frames(arm, q);
  ArmObjectiveValue out{0.0, objective_for(arm, f, goal, params)};
  out.cost = objective_cost(arm, f, out.objective);
  return out;
}

/// Acquisition distance for the arm: grasp-phase cost, or +inf while still
/// reaching (the reach phase can never be acquired).
inline double arm_task_distance(const ArmObjectiveValue& value) {
  return value.objective.phase == ArmPhase::grasp ? value.cost : std::numeric_limits<double>::infinity();
}

/// Damped-least-squares step on the current-phase objective:
///   dq = J^T (J J^T + mu^2 I)^{-1} r
/// rescaled to |dq|_inf <= max_step, kept inside the joint limits, then
/// halved (at most 8 times) until the objective does not increase. Returns
/// dq / dt, or zero if acquired or no non-increasing step was found.
inline Vector arm_oracle(const ArmModel& arm, const Vector& q, const GoalSpec& goal,
                         const ArmTaskParams& params, double dt = 1.0) {
  const Eigen::Index d = arm.d_dof();
  const JointFrames f = joint_frames(arm, q);
  const TaskObjective obj = objective_for(arm, f, goal, params);
  const double cost = objective_cost(arm, f, obj);
  if (!std::isfinite(cost) || !q.allFinite()) throw Error("invalid arm state");
  if (obj.phase == ArmPhase::grasp && cost < params.acquire_cost) return Vector::Zero(d);
  if (cost == 0.0) return Vector::Zero(d);

  const auto m = static_cast<Eigen::Index>(obj.terms.size());
  Matrix J(3 * m, d);
  Vector r(3 * m);
  for (Eigen::Index t = 0; t < m; ++t) {
    const auto& term = obj.terms[static_cast<std::size_t>(t)];
    const double w = std::sqrt(term.weight);
    J.middleRows(3 * t, 3) = w * marker_jacobian(arm, f, term.marker);
    r.segment(3 * t, 3) = w * (term.target - marker_position(arm, f, term.marker));
  }
  if (!r.allFinite() || !J.allFinite()) throw Error("invalid arm state");

  auto dls = [&](const Matrix& jac) -> Vector {
    Matrix JJt = jac * jac.transpose();
    JJt.diagonal().array() += params.mu * params.mu;
    return jac.transpose() * JJt.ldlt().solve(r);
  };
  Vector dq = dls(J);
  // Joints pinned at a limit and pushed outward are dropped and the step
  // re-solved over the remaining joints.
  const Vector lower = arm.lower_limits();
  const Vector upper = arm.upper_limits();
  bool pinned = false;
  for (Eigen::Index j = 0; j < d; ++j) {
    if ((q[j] <= lower[j] && dq[j] < 0.0) || (q[j] >= upper[j] && dq[j] > 0.0)) {
      J.col(j).setZero();
      pinned = true;
    }
  }
  if (pinned) dq = dls(J);

  const double peak = dq.cwiseAbs().maxCoeff();
  if (peak > params.max_step) dq *= params.max_step / peak;
  dq = arm.clamp(q + dq) - q;

  for (int halvings = 0;; ++halvings) {
    if (objective_cost(arm, q + dq, obj) <= cost) return dq / dt;
    if (halvings == 8) break;
    dq *= 0.5;
  }
  return Vector::Zero(d);
}

// ---------------------------------------------------------------------------
// Goal sampling
// ---------------------------------------------------------------------------

struct CursorWorkspace {
  Vector lower;
  Vector upper;
};

inline GoalSpec sample_cursor_goal(Rng& rng, const CursorWorkspace& ws, double epsilon) {
  if (ws.lower.size() == 0 || ws.lower.size() != ws.upper.size()) throw std::invalid_argument("empty workspace");
  GoalSpec g;
  g.epsilon = epsilon;
  g.target.resize(ws.lower.size());
  for (Eigen::Index i = 0; i < ws.lower.size(); ++i) {
    g.target[i] = ws.lower[i] == ws.upper[i] ? ws.lower[i] : uniform(rng, ws.lower[i], ws.upper[i]);
  }
  return g;
}

struct ArmWorkspace {
  double min_radius = 0.8;        // wand anchor distance from the shoulder
  double max_radius = 1.9;
  double posture_fraction = 0.6;  // central fraction of each joint range used for grasp postures
  int horizon = 150;              // oracle rollout must acquire within this many steps
  int max_attempts = 1000;
};

/// Goal geometry drawn from a random grasp posture: joints that move the
/// wrist, thumb tip, or middle tip are drawn uniformly from the central part
/// of their range, others stay at rest. The wrist position becomes the wand
/// anchor and the two fingertips the wand points, so the grasp is always
/// kinematically consistent with the anchor.
inline GoalSpec sample_arm_goal_candidate(Rng& rng, const ArmModel& arm, const ArmWorkspace& ws,
                                          double epsilon) {
  const int thumb = arm.marker("thumb_tip").joint;
  const int middle = arm.marker("middle_tip").joint;
  const Vector rest = arm.rest_pose();
  Vector q = rest;
  for (int j = 0; j < static_cast<int>(arm.d_dof()); ++j) {
    const Joint& jt = arm.joints()[static_cast<std::size_t>(j)];
    const double mid = 0.5 * (jt.lower + jt.upper);
    const double half = 0.5 * ws.posture_fraction * (jt.upper - jt.lower);
    const double draw = uniform(rng, mid - half, mid + half);
    if (arm.is_ancestor(j, thumb) || arm.is_ancestor(j, middle)) q[j] = draw;
  }
  const JointFrames f = joint_frames(arm, q);
  GoalSpec g;
  g.epsilon = epsilon;
  g.target = marker_position(arm, f, "wrist");
  g.wand_points = std::array<Vector3, 2>{marker_position(arm, f, "thumb_tip"), marker_position(arm, f, "middle_tip")};
  return g;
}

/// Runs the oracle alone from `q0`; true if it acquires within `horizon` steps.
inline bool oracle_reaches(const ArmModel& arm, const Vector& q0, const GoalSpec& goal,
                           const ArmTaskParams& params, int horizon) {
  Vector q = q0;
  for (int t = 0; t < horizon; ++t) {
    if (arm_task_distance(arm_objective(arm, q, goal, params)) < params.acquire_cost) return true;
    const Vector dq = arm_oracle(arm, q, goal, params);
    if (dq.isZero(0.0)) return false;
    q = arm.clamp(q + dq);
  }
  return arm_task_distance(arm_objective(arm, q, goal, params)) < params.acquire_cost;
}

inline GoalSpec sample_arm_goal(Rng& rng, const ArmModel& arm, const ArmWorkspace& ws,
                                const ArmTaskParams& params) {
  const Vector rest = arm.rest_pose();
  for (int attempt = 0; attempt < ws.max_attempts; ++attempt) {
    GoalSpec g = sample_arm_goal_candidate(rng, arm, ws, params.acquire_cost);
    const double r = g.target.norm();
    if (r < ws.min_radius || r > ws.max_radius) continue;
    if (oracle_reaches(arm, rest, g, params, ws.horizon)) return g;
  }
  throw Error("unreachable workspace");
}

}  // namespace bcisim
