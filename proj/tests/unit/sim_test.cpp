#include "ds4d/sim.hpp"

#include "../support/generators.hpp"

#include <gtest/gtest.h>

#include <algorithm>

#include <cstdio>
#include <filesystem>

using namespace ds4d;
using namespace ds4d::sim;
using ds4d::testgen::Gen;

namespace {

const SimModel& model() {
  static const SimModel m = default_model();
  return m;
}

JointVector random_q(Gen& g, const ArmModel& arm, double margin = 0.0) {
  JointVector q(static_cast<Eigen::Index>(arm.dof()));
  for (std::size_t i = 0; i < arm.dof(); ++i) {
    q[static_cast<Eigen::Index>(i)] = g.uniform(arm.joints[i].lower + margin, arm.joints[i].upper - margin);
  }
  return q;
}

JointVector home(const ArmModel& arm) {
  return Eigen::Map<const JointVector>(arm.home_q.data(), static_cast<Eigen::Index>(arm.home_q.size()));
}

// Craig's modified DH chain written out with plain 4x4 matrices.
Mat4 dh_oracle(const JointVector& q) {
  struct Row {
    double a, d, alpha;
  };
  constexpr double h = std::numbers::pi / 2.0;
  const Row rows[] = {{0.0, 0.333, 0.0}, {0.0, 0.0, -h},     {0.0, 0.316, h},      {0.0825, 0.0, h},
                      {-0.0825, 0.384, -h}, {0.0, 0.0, h}, {0.088, 0.0, h}};
  Mat4 t = Mat4::Identity();
  for (int i = 0; i < 7; ++i) {
    const double ca = std::cos(rows[i].alpha), sa = std::sin(rows[i].alpha);
    const double ct = std::cos(q[i]), st = std::sin(q[i]);
    Mat4 a;
    a << ct, -st, 0, rows[i].a,                  //
        st * ca, ct * ca, -sa, -sa * rows[i].d,  //
        st * sa, ct * sa, ca, ca * rows[i].d,    //
        0, 0, 0, 1;
    t = t * a;
  }
  Mat4 tool = Mat4::Identity();
  tool(2, 3) = 0.2104;
  return t * tool;
}

RobotCommand command(const Transform& target, double width) {
  RobotCommand c;
  c.target = target;
  c.gripper_width = width;
  return c;
}

void drive(World& w, const Transform& target, double width, int ticks) {
  for (int i = 0; i < ticks; ++i) step_world(w, command(target, width), model().world.dt);
}

Transform down_at(const World& w, const Vec3& p) {
  return Transform(reset(model(), w.task, 0).ee_pose.rotation(), p);
}

}  // namespace

TEST(SimModel, DefaultModelIsValid) {
  EXPECT_NO_THROW(model().arm.validate());
  EXPECT_EQ(model().arm.dof(), 7u);
  for (auto k : {TaskKind::Lift, TaskKind::PickPlace, TaskKind::Stack}) {
    EXPECT_EQ(model().task(k).kind, k);
  }
}

TEST(SimModel, TaskNames) {
  for (auto k : {TaskKind::Lift, TaskKind::PickPlace, TaskKind::Stack}) {
    EXPECT_EQ(task_from_string(to_string(k)), k);
  }
  EXPECT_EQ(task_from_string("pick-place"), TaskKind::PickPlace);
  EXPECT_THROW(task_from_string("juggle"), ModelError);
}

TEST(SimModel, ValidateRejectsBrokenArms) {
  ArmModel a = model().arm;
  a.joints[2].axis = Vec3(0.0, 0.0, 2.0);
  EXPECT_THROW(a.validate(), ModelError);
  a = model().arm;
  a.joints[0].lower = a.joints[0].upper;
  EXPECT_THROW(a.validate(), ModelError);
  a = model().arm;
  a.home_q.pop_back();
  EXPECT_THROW(a.validate(), ModelError);
  a = model().arm;
  a.home_q[3] = 1.0;
  EXPECT_THROW(a.validate(), ModelError);
}

TEST(SimModel, JsonRoundTripKeepsKinematicsAndHash) {
  const SimModel back = model_from_json(to_json(model()));
  EXPECT_EQ(back.hash(), model_from_json(to_json(back)).hash());
  Gen g(1);
  for (int i = 0; i < 100; ++i) {
    const JointVector q = random_q(g, model().arm);
    const Transform a = forward_kinematics(model().arm, q);
    const Transform b = forward_kinematics(back.arm, q);
    EXPECT_LE((a.matrix() - b.matrix()).norm(), 1e-12);
  }
  EXPECT_EQ(back.task(TaskKind::Stack).objects.size(), 2u);
  EXPECT_EQ(back.task(TaskKind::PickPlace).horizon_ticks, model().task(TaskKind::PickPlace).horizon_ticks);
}

TEST(SimModel, HashIsStableAndSensitive) {
  EXPECT_EQ(model().hash(), default_model().hash());
  EXPECT_EQ(model().hash().size(), 16u);
  SimModel m = default_model();
  m.world.grasp_radius += 1e-6;
  EXPECT_NE(m.hash(), model().hash());
}

TEST(SimModel, FileRoundTripAndErrors) {
  const auto path = (std::filesystem::temp_directory_path() / "ds4d_sim_test_model.json").string();
  save_model(model(), path);
  EXPECT_EQ(load_model(path).name, model().name);
  std::remove(path.c_str());
  EXPECT_THROW(load_model(path), ModelError);

  auto j = to_json(model());
  j["version"] = 2;
  EXPECT_THROW(model_from_json(j), ModelError);
  j = to_json(model());
  j["format"] = "other";
  EXPECT_THROW(model_from_json(j), ModelError);
  j = to_json(model());
  j["arm"].erase("tool");
  EXPECT_THROW(model_from_json(j), ModelError);
  j = to_json(model());
  j["tasks"][0]["objects"][0]["half_extents"] = {0.02, 0.0, 0.02};
  EXPECT_THROW(model_from_json(j), ModelError);
}

TEST(Kinematics, HomePoseHoldsGripperDownAboveTable) {
  const Transform ee = forward_kinematics(model().arm, home(model().arm));
  EXPECT_NEAR(ee.translation().x(), 0.45, 1e-3);
  EXPECT_NEAR(ee.translation().y(), 0.0, 1e-3);
  EXPECT_NEAR(ee.translation().z(), 0.30, 1e-3);
  EXPECT_NEAR(ee.rotation().rotate(Vec3::UnitZ()).z(), -1.0, 1e-3);
}

TEST(Kinematics, MatchesDhOracle) {
  Gen g(2);
  for (int i = 0; i < 1000; ++i) {
    const JointVector q = random_q(g, model().arm);
    EXPECT_LE((forward_kinematics(model().arm, q).matrix() - dh_oracle(q)).norm(), 1e-12);
  }
}

TEST(Kinematics, JacobianMatchesFiniteDifferences) {
  Gen g(3);
  const double h = 1e-6;
  for (int trial = 0; trial < 200; ++trial) {
    const JointVector q = random_q(g, model().arm, 2e-6);
    const KinematicsResult k = kinematics(model().arm, q);
    EXPECT_LE((k.ee.matrix() - forward_kinematics(model().arm, q).matrix()).norm(), 1e-12);
    for (Eigen::Index i = 0; i < q.size(); ++i) {
      JointVector qp = q, qm = q;
      qp[i] += h;
      qm[i] -= h;
      const Transform tp = forward_kinematics(model().arm, qp);
      const Transform tm = forward_kinematics(model().arm, qm);
      const Vec3 dv = (tp.translation() - tm.translation()) / (2 * h);
      const Vec3 dw = (tp.rotation() * tm.rotation().inverse()).log() / (2 * h);
      EXPECT_LE((dv - k.jacobian.block<3, 1>(0, i)).norm(), 1e-7);
      EXPECT_LE((dw - k.jacobian.block<3, 1>(3, i)).norm(), 1e-7);
    }
  }
}

TEST(Kinematics, RejectsOutOfRangeJoints) {
  JointVector q = home(model().arm);
  q[3] = 0.5;
  try {
    forward_kinematics(model().arm, q);
    FAIL() << "no JointLimitError";
  } catch (const JointLimitError& e) {
    EXPECT_EQ(e.joint(), 3u);
  }
  EXPECT_THROW(kinematics(model().arm, JointVector::Zero(3)), std::invalid_argument);
}

TEST(Kinematics, PoseErrorIsZeroAtTargetAndAntisymmetric) {
  Gen g(4);
  for (int i = 0; i < 200; ++i) {
    const Transform a = g.transform();
    const Transform b = g.transform();
    EXPECT_TRUE(pose_error(a, a).isZero(1e-15));
    const auto ab = pose_error(a, b);
    const auto ba = pose_error(b, a);
    EXPECT_LE((ab.head<3>() + ba.head<3>()).norm(), 1e-12);
    EXPECT_NEAR(ab.tail<3>().norm(), angle_between(a.rotation(), b.rotation()), 1e-9);
  }
}

TEST(Servo, RespectsSpeedAndJointLimits) {
  Gen g(5);
  const ArmModel& arm = model().arm;
  const double dt = 0.01;
  for (int i = 0; i < 500; ++i) {
    const JointVector q = random_q(g, arm);
    const JointVector next = servo_step(arm, q, g.transform(0.8), dt);
    for (Eigen::Index j = 0; j < q.size(); ++j) {
      const Joint& joint = arm.joints[static_cast<std::size_t>(j)];
      EXPECT_LE(std::abs(next[j] - q[j]), joint.max_speed * dt + 1e-12);
      EXPECT_GE(next[j], joint.lower);
      EXPECT_LE(next[j], joint.upper);
    }
  }
}

TEST(Servo, StaysPutAtTarget) {
  const JointVector q = home(model().arm);
  const Transform ee = forward_kinematics(model().arm, q);
  EXPECT_EQ(servo_step(model().arm, q, ee, 0.01), q);
}

TEST(Servo, ConvergesToReachableTargets) {
  Gen g(6);
  const ArmModel& arm = model().arm;
  const Transform start = forward_kinematics(arm, home(arm));
  for (int trial = 0; trial < 20; ++trial) {
    const Transform target(g.small_rotation(0.3) * start.rotation(),
                           Vec3(g.uniform(0.35, 0.65), g.uniform(-0.25, 0.25), g.uniform(0.05, 0.35)));
    JointVector q = home(arm);
    for (int i = 0; i < 600; ++i) q = servo_step(arm, q, target, 0.01);
    const Transform ee = forward_kinematics(arm, q);
    EXPECT_LE((ee.translation() - target.translation()).norm(), 1e-4) << "trial " << trial;
    EXPECT_LE(angle_between(ee.rotation(), target.rotation()), 1e-3) << "trial " << trial;
  }
}

TEST(World, ResetIsDeterministicAndWithinRanges) {
  for (const TaskSpec& task : model().tasks) {
    for (std::uint64_t seed = 0; seed < 10000; ++seed) {
      const World a = reset(model(), task, seed);
      const World b = reset(model(), task, seed);
      ASSERT_EQ(a.objects.size(), task.objects.size());
      EXPECT_EQ(a.snapshot(), b.snapshot());
      EXPECT_FALSE(a.success);
      EXPECT_EQ(a.tick, 0u);
      EXPECT_DOUBLE_EQ(a.gripper_width, model().world.gripper_max);
      for (std::size_t i = 0; i < task.objects.size(); ++i) {
        const ObjectSpec& s = task.objects[i];
        const Vec3 p = a.objects[i].pose.translation();
        EXPECT_LE(std::abs(p.x() - s.nominal.x()), s.range.x());
        EXPECT_LE(std::abs(p.y() - s.nominal.y()), s.range.y());
        EXPECT_DOUBLE_EQ(p.z(), model().world.table_z + s.half_extents.z());
      }
    }
    EXPECT_NE(reset(model(), task, 1).snapshot(), reset(model(), task, 2).snapshot());
  }
}

TEST(World, GripperIsRateLimited) {
  World w = reset(model(), model().task(TaskKind::Lift), 0);
  const double dt = model().world.dt;
  const double before = w.gripper_width;
  step_world(w, command(w.ee_pose, 0.0), dt);
  EXPECT_NEAR(before - w.gripper_width, model().world.gripper_speed * dt, 1e-15);
  drive(w, w.ee_pose, -1.0, 100);
  EXPECT_EQ(w.gripper_width, model().world.gripper_min);
  EXPECT_EQ(w.tick, 101u);
}

TEST(World, ClosingAwayFromObjectsGraspsNothing) {
  World w = reset(model(), model().task(TaskKind::Lift), 0);
  drive(w, w.ee_pose, 0.0, 50);
  for (const auto& o : w.objects) EXPECT_FALSE(o.attached);
}

TEST(World, LiftSucceedsAfterGraspAndRaise) {
  World w = reset(model(), model().task(TaskKind::Lift), 3);
  const Vec3 cube = w.object(1).pose.translation();
  drive(w, down_at(w, cube + Vec3(0, 0, 0.1)), 0.08, 300);
  drive(w, down_at(w, cube), 0.08, 300);
  drive(w, down_at(w, cube), 0.0, 40);
  ASSERT_TRUE(w.object(1).attached);
  EXPECT_FALSE(w.success);
  drive(w, down_at(w, cube + Vec3(0, 0, 0.08)), 0.0, 300);
  EXPECT_TRUE(w.success);
  EXPECT_TRUE(w.snapshot().task_success);

  // Opening drops the cube back onto the table.
  drive(w, w.ee_pose, 0.08, 30);
  EXPECT_FALSE(w.object(1).attached);
  EXPECT_DOUBLE_EQ(w.object(1).pose.translation().z(), 0.02);
  EXPECT_FALSE(w.success);
}

TEST(World, PickPlaceSucceedsWhenReleasedOverBin) {
  const TaskSpec& task = model().task(TaskKind::PickPlace);
  World w = reset(model(), task, 5);
  const Vec3 can = w.object(1).pose.translation();
  drive(w, down_at(w, can + Vec3(0, 0, 0.1)), 0.08, 300);
  drive(w, down_at(w, can), 0.08, 300);
  drive(w, down_at(w, can), 0.0, 40);
  ASSERT_TRUE(w.object(1).attached);
  const Vec3 over_bin = task.bin.center + Vec3(0, 0, 0.15);
  drive(w, down_at(w, over_bin), 0.0, 400);
  EXPECT_FALSE(w.success);
  drive(w, down_at(w, over_bin), 0.08, 30);
  EXPECT_TRUE(w.success);
  EXPECT_DOUBLE_EQ(w.object(1).pose.translation().z(), task.bin.center.z() + 0.04);
}

TEST(World, StackSuccessRule) {
  const TaskSpec& task = model().task(TaskKind::Stack);
  World w = reset(model(), task, 0);
  auto& red = w.objects[0];
  const auto& green = w.objects[1];
  const Vec3 g = green.pose.translation();
  const double rest = g.z() + 0.025 + 0.02;
  red.pose = Transform::from_translation(Vec3(g.x() + 0.005, g.y() + 0.005, rest));
  EXPECT_TRUE(check_success(task, w));
  red.pose = Transform::from_translation(Vec3(g.x() + 0.009, g.y() + 0.009, rest));
  EXPECT_FALSE(check_success(task, w));
  red.pose = Transform::from_translation(Vec3(g.x(), g.y(), rest + 1e-6));
  EXPECT_FALSE(check_success(task, w));
  red.pose = Transform::from_translation(Vec3(g.x(), g.y(), rest));
  red.attached = true;
  EXPECT_FALSE(check_success(task, w));
}

TEST(World, SupportHeightSeesTableBinAndObjects) {
  World stack = reset(model(), model().task(TaskKind::Stack), 0);
  const Vec3 g = stack.object(2).pose.translation();
  EXPECT_DOUBLE_EQ(support_height(stack, g + Vec3(0, 0, 0.2), 1), 0.05);
  EXPECT_DOUBLE_EQ(support_height(stack, g + Vec3(0, 0, 0.2), 2), 0.0);
  EXPECT_DOUBLE_EQ(support_height(stack, g + Vec3(0.1, 0, 0.2), 1), 0.0);
  EXPECT_DOUBLE_EQ(support_height(stack, g, 1), 0.0);  // below the top face

  World pick = reset(model(), model().task(TaskKind::PickPlace), 0);
  EXPECT_DOUBLE_EQ(support_height(pick, Vec3(0.5, -0.22, 0.3), 1), 0.01);
  EXPECT_DOUBLE_EQ(support_height(pick, Vec3(0.5, 0.22, 0.3), 1), 0.0);
}

TEST(World, SteppingIsDeterministic) {
  Gen g(7);
  World a = reset(model(), model().task(TaskKind::Stack), 9);
  World b = reset(model(), model().task(TaskKind::Stack), 9);
  for (int i = 0; i < 300; ++i) {
    const RobotCommand c = command(Transform(g.small_rotation(0.2) * a.ee_pose.rotation(),
                                             Vec3(g.uniform(0.4, 0.6), g.uniform(-0.2, 0.2), g.uniform(0.02, 0.3))),
                                   g.uniform(0.0, 0.08));
    EXPECT_EQ(step_world(a, c, 0.01), step_world(b, c, 0.01));
  }
}

TEST(SimModel, ShippedModelFileMatchesBuiltIn) {
  const SimModel shipped = load_model(DS4D_MODEL_FILE);
  EXPECT_EQ(shipped.hash(), model().hash());
}

TEST(Kinematics, ZeroConfigurationMatchesChainConstant) {
  const JointVector q = JointVector::Zero(7);
  const Transform ee = forward_kinematics(model().arm, q);
  EXPECT_LE((ee.matrix() - dh_oracle(q)).norm(), 1e-12);
  // Straight-up arm: 0.333 + 0.316 + 0.384 = 1.033 m column with the 0.0825 and 0.088 offsets.
  EXPECT_NEAR(ee.translation().x(), 0.088, 1e-12);
  EXPECT_NEAR(ee.translation().y(), 0.0, 1e-12);
  EXPECT_NEAR(ee.translation().z(), 1.033 - 0.2104, 1e-12);
}

TEST(Kinematics, SingleJointSweepTracesACircle) {
  Gen g(8);
  for (int trial = 0; trial < 100; ++trial) {
    JointVector q = random_q(g, model().arm, 0.5);
    const Eigen::Index j = g.integer(0, 6);
    const KinematicsResult k = kinematics(model().arm, q);
    const double radius = k.jacobian.block<3, 1>(0, j).norm();
    const Vec3 p0 = k.ee.translation();
    const double q0 = q[j];
    for (int i = 0; i < 10; ++i) {
      const Joint& joint = model().arm.joints[static_cast<std::size_t>(j)];
      q[j] = g.uniform(joint.lower, joint.upper);
      const Vec3 p = forward_kinematics(model().arm, q).translation();
      EXPECT_NEAR((p - p0).norm(), 2.0 * radius * std::abs(std::sin(0.5 * (q[j] - q0))), 1e-12);
    }
  }
}

TEST(Servo, OneCentimeterStepConvergesWithinFiftyTicks) {
  const ArmModel& arm = model().arm;
  const Transform start = forward_kinematics(arm, home(arm));
  for (const Vec3 axis : {Vec3::UnitX(), Vec3::UnitY(), Vec3::UnitZ()}) {
    const Transform target(start.rotation(), start.translation() + 0.01 * axis);
    JointVector q = home(arm);
    for (int i = 0; i < 50; ++i) q = servo_step(arm, q, target, 0.01);
    EXPECT_LT((forward_kinematics(arm, q).translation() - target.translation()).norm(), 1e-3);
  }
}

TEST(Servo, UnreachableTargetPlateausInsideLimits) {
  const ArmModel& arm = model().arm;
  const Transform target = Transform::from_translation(Vec3(3.0, 0.0, 0.5));
  JointVector q = home(arm);
  std::vector<double> errors;
  for (int i = 0; i < 1000; ++i) {
    q = servo_step(arm, q, target, 0.01);
    ASSERT_TRUE(q.allFinite());
    for (Eigen::Index j = 0; j < q.size(); ++j) {
      ASSERT_GE(q[j], arm.joints[static_cast<std::size_t>(j)].lower);
      ASSERT_LE(q[j], arm.joints[static_cast<std::size_t>(j)].upper);
    }
    errors.push_back((forward_kinematics(arm, q).translation() - target.translation()).norm());
  }
  const auto tail = std::minmax_element(errors.begin() + 800, errors.end());
  EXPECT_GT(*tail.first, 1.5);
  EXPECT_LT(*tail.second - *tail.first, 1e-2);
  EXPECT_LT(errors.back(), errors.front());
}

TEST(World, HoldingStillIsAFixedPoint) {
  World w = reset(model(), model().task(TaskKind::Lift), 7);
  const SimState before = w.snapshot();
  step_world(w, command(w.ee_pose, w.gripper_width), model().world.dt);
  SimState after = w.snapshot();
  EXPECT_EQ(after.tick, before.tick + 1);
  after.tick = before.tick;
  EXPECT_EQ(after, before);
}

TEST(World, SuccessThresholds) {
  const TaskSpec& lift = model().task(TaskKind::Lift);
  World w = reset(model(), lift, 0);
  EXPECT_FALSE(check_success(lift, w));
  w.objects[0].attached = true;
  w.objects[0].pose = Transform::from_translation(Vec3(0.55, 0.0, 0.05));
  EXPECT_TRUE(check_success(lift, w));

  const TaskSpec& pick = model().task(TaskKind::PickPlace);
  World p = reset(model(), pick, 0);
  p.objects[0].pose = Transform::from_translation(pick.bin.center + Vec3(0, 0, 0.04));
  p.objects[0].attached = true;
  EXPECT_FALSE(check_success(pick, p));
  p.objects[0].attached = false;
  EXPECT_TRUE(check_success(pick, p));
}

TEST(World, ZeroRangeResetsToNominal) {
  TaskSpec task = model().task(TaskKind::Stack);
  for (auto& o : task.objects) o.range = Vec3::Zero();
  for (std::uint64_t seed : {1ULL, 99ULL}) {
    const World w = reset(model(), task, seed);
    for (std::size_t i = 0; i < task.objects.size(); ++i) {
      EXPECT_EQ(w.objects[i].pose.translation().x(), task.objects[i].nominal.x());
      EXPECT_EQ(w.objects[i].pose.translation().y(), task.objects[i].nominal.y());
    }
  }
}
