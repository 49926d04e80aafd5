#include "bcisim/arm.hpp"
#include "bcisim/oracle.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

using namespace bcisim;

namespace {

Rng stream(std::uint64_t seed) { return make_stream({seed, 0, 0, Purpose::goal}); }

Vector vec(std::initializer_list<double> xs) {
  Vector v(static_cast<Eigen::Index>(xs.size()));
  Eigen::Index i = 0;
  for (double x : xs) v[i++] = x;
  return v;
}

// Two unit links rotating about z; the marker "wrist" sits at the tip.
ArmModel planar_two_link() {
  std::vector<Joint> joints(2);
  joints[0] = {"j0", -1, Vector3::UnitZ(), Vector3::Zero(), -M_PI, M_PI};
  joints[1] = {"j1", 0, Vector3::UnitZ(), Vector3(1, 0, 0), -M_PI, M_PI};
  std::map<std::string, Marker, std::less<>> markers{{"wrist", {1, Vector3(1, 0, 0)}}};
  return ArmModel(joints, markers);
}

Vector random_pose(Rng& rng, const ArmModel& arm, double fraction = 1.0) {
  Vector q(arm.d_dof());
  for (Eigen::Index j = 0; j < arm.d_dof(); ++j) {
    const Joint& jt = arm.joints()[static_cast<std::size_t>(j)];
    const double mid = 0.5 * (jt.lower + jt.upper), half = 0.5 * fraction * (jt.upper - jt.lower);
    q[j] = uniform(rng, mid - half, mid + half);
  }
  return q;
}

double angle_between(const Vector& a, const Vector& b) {
  return std::acos(std::clamp(a.dot(b) / (a.norm() * b.norm()), -1.0, 1.0));
}

}  // namespace

// ----- cursor ------------------------------------------------------------

TEST(CursorOracle, ZeroAtTarget) {
  const GoalSpec g{vec({0.3, 0.2, -0.1}), 0.05, std::nullopt};
  const EffectorState s = EffectorState::at_rest(g.target);
  EXPECT_TRUE(cursor_oracle(s, g, 0.1).isZero(0.0));
}

TEST(CursorOracle, AxisAlignedUnitStep) {
  const GoalSpec g{vec({5, 0, 0}), 0.05, std::nullopt};
  EXPECT_TRUE(cursor_oracle(EffectorState::at_rest(Vector::Zero(3)), g, 1.0) == vec({1, 0, 0}));
}

TEST(CursorOracle, ClipsToRemainingDistance) {
  const GoalSpec g{vec({0.4, 0, 0}), 0.05, std::nullopt};
  const Vector o = cursor_oracle(EffectorState::at_rest(Vector::Zero(3)), g, 1.0);
  EXPECT_NEAR(o[0], 0.4, 1e-15);
  EXPECT_EQ(o[1], 0.0);
}

TEST(CursorOracle, MagnitudeLaw) {
  Rng rng = stream(1);
  for (int i = 0; i < 500; ++i) {
    const GoalSpec g{normal_vector(rng, 3, 0.5), 0.05, std::nullopt};
    EffectorState s = EffectorState::at_rest(normal_vector(rng, 3, 0.5));
    s.dt = uniform(rng, 0.5, 2.0);
    const double dist = (g.target - s.position).norm();
    const Vector o = cursor_oracle(s, g, 0.1);
    if (dist <= g.epsilon) {
      EXPECT_TRUE(o.isZero(0.0));
    } else {
      EXPECT_NEAR(o.norm(), std::min(0.1, dist / s.dt), 1e-14);
      EXPECT_NEAR(angle_between(o, g.target - s.position), 0.0, 1e-7);
    }
  }
}

TEST(CursorGoal, UniformInBox) {
  Rng rng = stream(2);
  const CursorWorkspace ws{Vector::Constant(3, -1.0), Vector::Constant(3, 1.0)};
  Vector mean = Vector::Zero(3);
  for (int i = 0; i < 10000; ++i) {
    const GoalSpec g = sample_cursor_goal(rng, ws, 0.05);
    ASSERT_LE(g.target.cwiseAbs().maxCoeff(), 1.0);
    mean += g.target;
  }
  mean /= 10000.0;
  for (Eigen::Index i = 0; i < 3; ++i) EXPECT_NEAR(mean[i], 0.0, 0.04);
}

TEST(CursorGoal, PointWorkspaceGivesOrigin) {
  Rng rng = stream(3);
  const CursorWorkspace ws{Vector::Zero(3), Vector::Zero(3)};
  for (int i = 0; i < 10; ++i) EXPECT_TRUE(sample_cursor_goal(rng, ws, 0.05).target.isZero(0.0));
}

// ----- kinematics --------------------------------------------------------

TEST(ArmModel, DefaultChainGrouping) {
  const ArmModel arm = default_arm();
  ASSERT_EQ(arm.d_dof(), 26);
  const std::vector<std::pair<std::string, int>> groups{{"shoulder", 3}, {"elbow", 2}, {"wrist", 3}, {"thumb", 4},
                                                        {"index", 4},    {"middle", 4}, {"ring", 3}, {"pinky", 3}};
  std::size_t j = 0;
  for (const auto& [prefix, count] : groups) {
    for (int c = 0; c < count; ++c, ++j) EXPECT_EQ(arm.joints()[j].name.rfind(prefix, 0), 0u) << arm.joints()[j].name;
  }
  for (const char* m : {"wrist", "thumb_tip", "middle_tip"}) EXPECT_NO_THROW(arm.marker(m));
}

TEST(ArmModel, RejectsMalformedChains) {
  std::istringstream bad_parent("joint a -1 0 0 1 0 0 0 -1 1\njoint b 5 0 0 1 0 0 0 -1 1\n");
  EXPECT_THROW(ArmModel::parse(bad_parent), std::invalid_argument);
  std::istringstream two_roots("joint a -1 0 0 1 0 0 0 -1 1\njoint b -1 0 0 1 0 0 0 -1 1\n");
  EXPECT_THROW(ArmModel::parse(two_roots), std::invalid_argument);
  std::istringstream bad_axis("joint a -1 0 0 2 0 0 0 -1 1\n");
  EXPECT_THROW(ArmModel::parse(bad_axis), std::invalid_argument);
  std::istringstream garbage("joint a -1 0 0\n");
  EXPECT_THROW(ArmModel::parse(garbage), std::invalid_argument);
}

TEST(ForwardKinematics, RestPoseIsSumOfOffsets) {
  const ArmModel arm = default_arm();
  const MarkerPositions fk = forward_kinematics(arm, Vector::Zero(26));
  for (const auto& [name, m] : arm.markers()) {
    Vector3 expected = m.local;
    for (int j = m.joint; j >= 0; j = arm.joints()[static_cast<std::size_t>(j)].parent) {
      expected += arm.joints()[static_cast<std::size_t>(j)].offset;
    }
    EXPECT_LT((fk.at(name) - expected).norm(), 1e-15) << name;
  }
}

TEST(ForwardKinematics, PlanarTwoLink) {
  const ArmModel arm = planar_two_link();
  const Vector3 tip = forward_kinematics(arm, vec({M_PI / 2, 0.0})).at("wrist");
  EXPECT_LT((tip - Vector3(0, 2, 0)).norm(), 1e-15);
}

TEST(ForwardKinematics, JacobianMatchesCentralDifference) {
  const ArmModel arm = default_arm();
  Rng rng = stream(4);
  const double h = 1e-5;
  for (int trial = 0; trial < 5; ++trial) {
    const Vector q = random_pose(rng, arm);
    const JointFrames f = joint_frames(arm, q);
    for (const char* name : {"wrist", "thumb_tip", "index_tip", "middle_tip"}) {
      const Matrix J = marker_jacobian(arm, f, name);
      for (Eigen::Index i = 0; i < arm.d_dof(); ++i) {
        Vector qp = q, qm = q;
        qp[i] += h;
        qm[i] -= h;
        const Vector3 fd = (forward_kinematics(arm, qp).at(name) - forward_kinematics(arm, qm).at(name)) / (2 * h);
        EXPECT_LT((J.col(i) - fd).cwiseAbs().maxCoeff(), 1e-6) << name << " joint " << i;
      }
    }
  }
}

TEST(ForwardKinematics, LipschitzInJointAngles) {
  const ArmModel arm = default_arm();
  const double L = arm.total_length();
  Rng rng = stream(5);
  for (int trial = 0; trial < 200; ++trial) {
    const Vector q = random_pose(rng, arm);
    const Vector dq = normal_vector(rng, arm.d_dof(), uniform(rng, 1e-4, 0.3));
    const MarkerPositions a = forward_kinematics(arm, q), b = forward_kinematics(arm, q + dq);
    for (const auto& [name, p] : a) EXPECT_LE((b.at(name) - p).norm(), L * dq.norm()) << name;
  }
}

// ----- arm objective and oracle ------------------------------------------

TEST(ArmObjective, ZeroResidualInGrasp) {
  const ArmModel arm = default_arm();
  const MarkerPositions fk = forward_kinematics(arm, arm.rest_pose());
  GoalSpec g{fk.at("wrist"), 0.01, std::array<Vector3, 2>{fk.at("thumb_tip"), fk.at("middle_tip")}};
  const ArmObjectiveValue v = arm_objective(arm, arm.rest_pose(), g, {});
  EXPECT_EQ(v.objective.phase, ArmPhase::grasp);
  EXPECT_EQ(v.cost, 0.0);
  EXPECT_TRUE(arm_oracle(arm, arm.rest_pose(), g, {}).isZero(0.0));
}

TEST(ArmObjective, ReachPhaseBeyondDelta) {
  const ArmModel arm = default_arm();
  ArmTaskParams p;
  p.reach_weight = 2.0;
  const Vector3 wrist = forward_kinematics(arm, arm.rest_pose()).at("wrist");
  GoalSpec g{wrist + Vector3(0, 2 * p.delta, 0), 0.01, std::array<Vector3, 2>{wrist, wrist}};
  const ArmObjectiveValue v = arm_objective(arm, arm.rest_pose(), g, p);
  EXPECT_EQ(v.objective.phase, ArmPhase::reach);
  ASSERT_EQ(v.objective.terms.size(), 1u);
  EXPECT_EQ(v.objective.terms[0].marker, "wrist");
  EXPECT_NEAR(v.cost, 2.0 * std::pow(2 * p.delta, 2), 1e-14);
}

TEST(ArmObjective, BoundaryAtDeltaIsGrasp) {
  const ArmModel arm = default_arm();
  ArmTaskParams p;
  p.delta = 0.125;  // exactly representable, as is the rest wrist position
  const Vector3 wrist = forward_kinematics(arm, arm.rest_pose()).at("wrist");
  GoalSpec g{wrist + Vector3(0.125, 0, 0), 0.01, std::array<Vector3, 2>{wrist, wrist}};
  ASSERT_EQ((g.target.head<3>() - wrist).norm(), 0.125);
  const ArmObjectiveValue v = arm_objective(arm, arm.rest_pose(), g, p);
  EXPECT_EQ(v.objective.phase, ArmPhase::grasp);
  std::vector<std::string> names;
  for (const auto& t : v.objective.terms) names.push_back(t.marker);
  EXPECT_NE(std::find(names.begin(), names.end(), "thumb_tip"), names.end());
  EXPECT_NE(std::find(names.begin(), names.end(), "middle_tip"), names.end());
}

// Links 1 and 1/sqrt(2) with the elbow at 3pi/4 give J^T J = I / 2, where the
// damped step and the gradient share a direction for any target offset.
TEST(ArmOracle, PlanarStepAgreesWithNumericalGradient) {
  std::vector<Joint> joints(2);
  joints[0] = {"j0", -1, Vector3::UnitZ(), Vector3::Zero(), -M_PI, M_PI};
  joints[1] = {"j1", 0, Vector3::UnitZ(), Vector3(1, 0, 0), -M_PI, M_PI};
  std::map<std::string, Marker, std::less<>> markers{{"wrist", {1, Vector3(M_SQRT1_2, 0, 0)}}};
  const ArmModel arm(joints, markers);
  ArmTaskParams p;
  p.max_step = 1.0;  // leave the raw DLS direction unscaled
  const Vector q = vec({0.3, 3.0 * M_PI / 4.0});
  const Vector3 start = forward_kinematics(arm, q).at("wrist");

  for (const Vector3& offset : {Vector3(0.02, -0.015, 0), Vector3(-0.01, 0.03, 0), Vector3(0.0, -0.025, 0)}) {
    GoalSpec g{start + offset, 0.001, std::nullopt};
    auto cost = [&](const Vector& x) {
      return (forward_kinematics(arm, x).at("wrist") - g.target.head<3>()).squaredNorm();
    };
    Vector grad(2);
    for (Eigen::Index i = 0; i < 2; ++i) {
      Vector a = q, b = q;
      a[i] += 1e-6;
      b[i] -= 1e-6;
      grad[i] = (cost(a) - cost(b)) / 2e-6;
    }
    const Vector dq = arm_oracle(arm, q, g, p);
    EXPECT_LT(cost(q + dq), cost(q));
    EXPECT_LT(angle_between(dq, -grad), 15.0 * M_PI / 180.0);
  }
}

TEST(ArmOracle, PlanarStepIsDescentDirectionAtAnyPose) {
  const ArmModel arm = planar_two_link();
  ArmTaskParams p;
  p.max_step = 1.0;
  Rng rng = make_stream({41, 0, 0, Purpose::stream});
  for (int trial = 0; trial < 200; ++trial) {
    const Vector q = random_pose(rng, arm, 0.9);
    const Vector3 start = forward_kinematics(arm, q).at("wrist");
    GoalSpec g{start + Vector3(uniform(rng, -0.1, 0.1), uniform(rng, -0.1, 0.1), 0), 0.001, std::nullopt};
    auto cost = [&](const Vector& x) {
      return (forward_kinematics(arm, x).at("wrist") - g.target.head<3>()).squaredNorm();
    };
    Vector grad(2);
    for (Eigen::Index i = 0; i < 2; ++i) {
      Vector a = q, b = q;
      a[i] += 1e-6;
      b[i] -= 1e-6;
      grad[i] = (cost(a) - cost(b)) / 2e-6;
    }
    const Vector dq = arm_oracle(arm, q, g, p);
    if (dq.norm() == 0.0) continue;
    EXPECT_LT(dq.dot(grad), 0.0);
    EXPECT_LE(cost(q + dq), cost(q));
  }
}

TEST(ArmOracle, RespectsMaxStepAndNeverIncreasesCost) {
  const ArmModel arm = default_arm();
  const ArmTaskParams p;
  Rng rng = stream(6);
  const ArmWorkspace ws;
  for (int trial = 0; trial < 100; ++trial) {
    const Vector q = random_pose(rng, arm);
    const GoalSpec g = sample_arm_goal_candidate(rng, arm, ws, p.acquire_cost);
    const Vector dq = arm_oracle(arm, q, g, p);
    EXPECT_LE(dq.cwiseAbs().maxCoeff(), p.max_step + 1e-15);
    EXPECT_TRUE(arm.clamp(q + dq) == q + dq);
    const TaskObjective obj = arm_objective(arm, q, g, p).objective;
    EXPECT_LE(objective_cost(arm, q + dq, obj), objective_cost(arm, q, obj));
  }
}

TEST(ArmOracle, NonFiniteStateIsAnError) {
  const ArmModel arm = default_arm();
  Vector q = arm.rest_pose();
  q[3] = std::nan("");
  const GoalSpec g{Vector3(1.0, 0.5, -0.5), 0.01, std::nullopt};
  try {
    arm_oracle(arm, q, g, {});
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_STREQ(e.what(), "invalid arm state");
  }
}

TEST(ArmGoal, AcceptedGoalsAreReachable) {
  const ArmModel arm = default_arm();
  const ArmTaskParams p;
  const ArmWorkspace ws;
  Rng rng = stream(7);
  for (int i = 0; i < 5; ++i) {
    const GoalSpec g = sample_arm_goal(rng, arm, ws, p);
    const double r = g.target.norm();
    EXPECT_GE(r, ws.min_radius);
    EXPECT_LE(r, ws.max_radius);
    EXPECT_TRUE(oracle_reaches(arm, arm.rest_pose(), g, p, ws.horizon));
  }
}

TEST(ArmGoal, EmptyShellIsUnreachable) {
  const ArmModel arm = default_arm();
  ArmWorkspace ws;
  ws.min_radius = 50.0;
  ws.max_radius = 60.0;
  ws.max_attempts = 20;
  Rng rng = stream(8);
  try {
    sample_arm_goal(rng, arm, ws, {});
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_STREQ(e.what(), "unreachable workspace");
  }
}
