#include "ds4d/operator_sim.hpp"

#include "../support/generators.hpp"

#include <gtest/gtest.h>

#include <set>

using namespace ds4d;
using namespace ds4d::operator_sim;
using ds4d::testgen::Gen;

namespace {

const sim::SimModel& model() {
  static const sim::SimModel m = sim::default_model();
  return m;
}

const OperatorSetup& setup() {
  static const OperatorSetup s = OperatorSetup::defaults(model());
  return s;
}

}  // namespace

TEST(CollectionSeed, TopBitClearAndDistinct) {
  std::set<std::uint64_t> seen;
  for (std::uint64_t base : {0ULL, 7ULL, ~0ULL}) {
    for (std::uint64_t e = 0; e < 1000; ++e) {
      const std::uint64_t s = collection_seed(base, e);
      EXPECT_EQ(s >> 63, 0u);
      seen.insert(s);
    }
  }
  EXPECT_EQ(seen.size(), 3000u);
  EXPECT_EQ(collection_seed(7, 3), collection_seed(7, 3));
}

TEST(OperatorSetup, InitialMasterMapsOntoRobotOrientation) {
  const sim::World w = sim::reset(model(), model().task(sim::TaskKind::Lift), 0);
  const auto state = setup().engaged_state(w.ee_pose);
  const Transform tip = setup().initial_master(w.ee_pose);
  const auto desired = mapping::map_pose(state, setup().cfg, setup().cal, tip);
  const Transform target = mapping::camera_to_world(setup().cal, desired);
  EXPECT_LE((target.translation() - w.ee_pose.translation()).norm(), 1e-12);
  EXPECT_LE(angle_between(target.rotation(), w.ee_pose.rotation()), 1e-9);
}

TEST(PlanWaypoints, MasterPosesMapToWorldTargets) {
  for (const auto& task : model().tasks) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      const sim::World w = sim::reset(model(), task, seed);
      const WaypointPlan plan = plan_waypoints(task, w.snapshot(), setup());
      ASSERT_GE(plan.waypoints.size(), 4u);
      const auto state = setup().engaged_state(w.ee_pose);
      for (const auto& wp : plan.waypoints) {
        const auto desired = mapping::map_pose(state, setup().cfg, setup().cal, wp.master_pose);
        const Transform t = mapping::camera_to_world(setup().cal, desired);
        EXPECT_LE((t.translation() - wp.world_target.translation()).norm(), 1e-9);
        EXPECT_LE(angle_between(t.rotation(), wp.world_target.rotation()), 1e-9);
      }
      // The first descent ends over the target object.
      const Vec3 obj = w.object(task.target_id).pose.translation();
      EXPECT_LE((plan.waypoints[1].world_target.translation().head<2>() - obj.head<2>()).norm(), 1e-12);
    }
  }
}

TEST(PlanWaypoints, ObjectOutsideWorkspaceIsUnplannable) {
  const auto& task = model().task(sim::TaskKind::Lift);
  sim::World w = sim::reset(model(), task, 0);
  SimState scene = w.snapshot();
  scene.objects[0].pose = Transform::from_translation(Vec3(5.0, 0.0, 0.02));
  try {
    plan_waypoints(task, scene, setup());
    FAIL() << "no OperatorError";
  } catch (const OperatorError& e) {
    EXPECT_EQ(e.code(), Errc::Unplannable);
  }
  scene.objects.clear();
  EXPECT_THROW(plan_waypoints(task, scene, setup()), OperatorError);
}

TEST(ScriptedOperator, PressesStartOnceThenFinishes) {
  const auto& task = model().task(sim::TaskKind::Lift);
  const sim::World w = sim::reset(model(), task, 1);
  ScriptedOperator op(plan_waypoints(task, w.snapshot(), setup()), setup(), setup().initial_master(w.ee_pose),
                      model().world.dt, 1);
  EXPECT_EQ(op.next().pedals, pedal::kStartStop);
  int ticks = 0;
  while (!op.finished() && ticks < 5000) {
    EXPECT_EQ(op.next().pedals, 0);
    ++ticks;
  }
  EXPECT_TRUE(op.finished());
}

TEST(ScriptedOperator, MotionIsBoundedBySpeed) {
  const auto& task = model().task(sim::TaskKind::PickPlace);
  const sim::World w = sim::reset(model(), task, 2);
  const auto plan = plan_waypoints(task, w.snapshot(), setup());
  double fastest = 0.0;
  for (const auto& wp : plan.waypoints) fastest = std::max(fastest, wp.speed);
  ScriptedOperator op(plan, setup(), setup().initial_master(w.ee_pose), model().world.dt, 2);
  Vec3 last = op.next().tip_pose.translation();
  for (int i = 0; i < 3000 && !op.finished(); ++i) {
    const Vec3 p = op.next().tip_pose.translation();
    // Horizontal and vertical are closed separately, so the combined step may reach sqrt(2) x speed.
    EXPECT_LE((p - last).norm(), std::sqrt(2.0) * fastest * model().world.dt + 1e-12);
    last = p;
  }
}

TEST(ScriptedOperator, JitterDependsOnSeedOnlyWithNoise) {
  const auto& task = model().task(sim::TaskKind::Lift);
  const sim::World w = sim::reset(model(), task, 3);
  const auto start = setup().initial_master(w.ee_pose);
  const auto quiet = plan_waypoints(task, w.snapshot(), setup(), 0.0);
  const auto noisy = plan_waypoints(task, w.snapshot(), setup(), 0.005);
  const ScriptedOperator a(quiet, setup(), start, 0.01, 1), b(quiet, setup(), start, 0.01, 2);
  EXPECT_EQ(a.targets(), b.targets());
  const ScriptedOperator c(noisy, setup(), start, 0.01, 1), d(noisy, setup(), start, 0.01, 2),
      e(noisy, setup(), start, 0.01, 1);
  EXPECT_NE(c.targets(), d.targets());
  EXPECT_EQ(c.targets(), e.targets());
}

TEST(RunEpisode, NoiselessOperatorSucceedsOnEveryTask) {
  for (const auto& task : model().tasks) {
    for (std::uint64_t e = 0; e < 5; ++e) {
      const auto r = run_episode(model(), task.kind, collection_seed(1, e), 0.0);
      EXPECT_EQ(r.termination, Termination::Success) << sim::to_string(task.kind) << " episode " << e;
      EXPECT_TRUE(r.demo.success);
      EXPECT_TRUE(r.final_state.task_success);
      EXPECT_FALSE(r.demo.steps.empty());
      EXPECT_EQ(r.demo.final_objects, r.final_state.objects);
    }
  }
}

TEST(RunEpisode, DeterministicInSeedAndNoise) {
  const auto a = run_episode(model(), sim::TaskKind::PickPlace, 99, 0.005);
  const auto b = run_episode(model(), sim::TaskKind::PickPlace, 99, 0.005);
  EXPECT_EQ(a.demo, b.demo);
  const auto c = run_episode(model(), sim::TaskKind::PickPlace, 100, 0.005);
  EXPECT_NE(a.demo, c.demo);
}

TEST(RunEpisode, TimeoutIsAFailedDemo) {
  EpisodeOptions opt;
  opt.setup = setup();
  opt.max_ticks = 30;
  const auto r = run_episode(model(), sim::TaskKind::Lift, 5, 0.0, opt);
  EXPECT_EQ(r.termination, Termination::Timeout);
  EXPECT_FALSE(r.demo.success);
  EXPECT_EQ(r.demo.steps.size(), 30u);
  EXPECT_EQ(to_string(r.termination), "timeout");
}

TEST(Replay, ReproducesEpisodesExactly) {
  for (const auto& task : model().tasks) {
    const auto r = run_episode(model(), task.kind, collection_seed(4, 0), 0.005);
    const auto back = replay(model(), r.demo);
    EXPECT_TRUE(back.matches);
    EXPECT_EQ(back.success, r.demo.success);
    EXPECT_EQ(back.final_state, r.final_state);
  }
}

TEST(Replay, DetectsTamperedActions) {
  auto r = run_episode(model(), sim::TaskKind::Lift, collection_seed(4, 1), 0.0);
  ASSERT_TRUE(replay(model(), r.demo).matches);
  auto tampered = r.demo;
  tampered.steps[tampered.steps.size() / 2].action[0] += 1e-3;
  EXPECT_FALSE(replay(model(), tampered).matches);
  auto wrong_seed = r.demo;
  wrong_seed.seed ^= 1;
  EXPECT_FALSE(replay(model(), wrong_seed).matches);
}

TEST(PlanWaypoints, TemplatesPerTask) {
  const auto& lift = model().task(sim::TaskKind::Lift);
  const sim::World lw = sim::reset(model(), lift, 0);
  EXPECT_EQ(plan_waypoints(lift, lw.snapshot(), setup()).waypoints.size(), 4u);

  const auto& pick = model().task(sim::TaskKind::PickPlace);
  const sim::World pw = sim::reset(model(), pick, 0);
  const auto plan = plan_waypoints(pick, pw.snapshot(), setup());
  const Waypoint& last = plan.waypoints.back();
  EXPECT_EQ(last.grip, 1.0);
  EXPECT_LE((last.world_target.translation().head<2>() - pick.bin.center.head<2>()).norm(), 1e-12);
}

TEST(RunEpisode, NoiselessLiftFinishesWithinSixSeconds) {
  for (std::uint64_t e = 0; e < 10; ++e) {
    const auto r = run_episode(model(), sim::TaskKind::Lift, collection_seed(2, e), 0.0);
    ASSERT_TRUE(r.demo.success);
    EXPECT_LT(r.demo.duration_s, 6.0);
  }
}

TEST(RunEpisode, LargeNoiseProducesRecordedFailures) {
  int failures = 0;
  for (std::uint64_t e = 0; e < 30; ++e) {
    const auto r = run_episode(model(), sim::TaskKind::Stack, collection_seed(5, e), 0.02);
    if (!r.demo.success) {
      ++failures;
      EXPECT_TRUE(r.demo.finalized);
      EXPECT_FALSE(r.demo.steps.empty());
    }
  }
  EXPECT_GT(failures, 0);
}
