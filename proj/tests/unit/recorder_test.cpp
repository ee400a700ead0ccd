#include "ds4d/recorder.hpp"

#include "../support/generators.hpp"

#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <set>

using namespace ds4d;
using namespace ds4d::recorder;
using ds4d::testgen::Gen;

namespace {

const sim::SimModel& model() {
  static const sim::SimModel m = sim::default_model();
  return m;
}

Errc recorder_error(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const RecorderError& e) {
    return e.code();
  }
  ADD_FAILURE() << "no RecorderError";
  return Errc::Io;
}

Dataset random_dataset(Gen& g, sim::TaskKind task, int demos) {
  Dataset d;
  d.header = make_header(model(), task);
  for (int i = 0; i < demos; ++i) {
    Demonstration demo;
    demo.task = task;
    demo.operator_id = g.coin() ? "synthetic" : "";
    demo.seed = g.u64();
    const int n = g.integer(0, 30);
    std::uint64_t tick = g.integer(0, 5);
    for (int s = 0; s < n; ++s) {
      demo.append_step(g.doubles(d.header.obs_dim), g.doubles(kActionDim), tick);
      tick += static_cast<std::uint64_t>(g.integer(1, 3));
    }
    std::vector<ObjectPose> objects;
    for (int k = 0; k < g.integer(0, 2); ++k) {
      objects.push_back({static_cast<std::uint16_t>(k + 1), g.wire_transform()});
    }
    demo.finalize(n > 0 && g.coin(), d.header.dt, objects);
    d.demos.push_back(std::move(demo));
  }
  return d;
}

std::string temp_path(const char* name) { return (std::filesystem::temp_directory_path() / name).string(); }

}  // namespace

TEST(Observation, LayoutAndDimension) {
  for (const auto& task : model().tasks) {
    const sim::World w = sim::reset(model(), task, 4);
    const auto obs = observation(w);
    ASSERT_EQ(obs.size(), obs_dim(task));
    const auto& ee = w.ee_pose;
    EXPECT_EQ(obs[0], ee.rotation().w());
    EXPECT_EQ(obs[4], ee.translation().x());
    EXPECT_EQ(obs[7], w.gripper_width);
    const auto& o = w.objects.back();
    const std::size_t base = 8 + 10 * (w.objects.size() - 1);
    EXPECT_EQ(obs[base + 6], o.pose.translation().z());
    EXPECT_EQ(obs[base + 7], o.pose.translation().x() - ee.translation().x());
  }
}

TEST(Action, EncodeThenApplyRecoversCommand) {
  Gen g(1);
  ActionLimits wide;
  wide.max_translation = 10.0;
  wide.workspace_min = Vec3::Constant(-10.0);
  wide.workspace_max = Vec3::Constant(10.0);
  for (int i = 0; i < 2000; ++i) {
    const Transform prev = g.transform();
    const RobotCommand cmd{Transform(g.small_rotation(2.0) * prev.rotation(), prev.translation() + g.vec3(-0.5, 0.5)),
                           g.uniform(0.0, 0.08), 0};
    const auto a = encode_action(prev, cmd);
    ASSERT_EQ(a.size(), kActionDim);
    const RobotCommand back = apply_action(prev, a, wide);
    EXPECT_LE((back.target.translation() - cmd.target.translation()).norm(), 1e-12);
    EXPECT_LE(angle_between(back.target.rotation(), cmd.target.rotation()), 1e-9);
    EXPECT_EQ(back.gripper_width, cmd.gripper_width);
  }
}

TEST(Action, ApplyClampsStepWorkspaceAndGripper) {
  ActionLimits l;
  l.max_translation = 0.02;
  l.workspace_min = Vec3(0.0, -1.0, 0.1);
  l.workspace_max = Vec3(1.0, 1.0, 1.0);
  const Transform prev = Transform::from_translation(Vec3(0.5, 0.0, 0.1));
  const auto cmd = apply_action(prev, std::vector<double>{1.0, 0, 0, 0, 0, 0, 0.5}, l);
  EXPECT_NEAR(cmd.target.translation().x(), 0.52, 1e-15);
  EXPECT_EQ(cmd.gripper_width, 0.08);
  const auto down = apply_action(prev, std::vector<double>{0, 0, -0.01, 0, 0, 0, -1.0}, l);
  EXPECT_EQ(down.target.translation().z(), 0.1);
  EXPECT_EQ(down.gripper_width, 0.0);
}

TEST(Action, ApplyRejectsBadVectors) {
  const ActionLimits l;
  EXPECT_EQ(recorder_error([&] { apply_action(Transform(), std::vector<double>(6, 0.0), l); }), Errc::DimMismatch);
  std::vector<double> a(7, 0.0);
  a[2] = std::nan("");
  EXPECT_EQ(recorder_error([&] { apply_action(Transform(), a, l); }), Errc::DimMismatch);
}

TEST(Demonstration, AppendAndFinalizeRules) {
  Demonstration d;
  d.append_step({1.0, 2.0}, {0.5});
  d.append_step({1.0, 2.0}, {0.5});
  EXPECT_EQ(d.steps[1].tick, 1u);
  EXPECT_EQ(recorder_error([&] { d.append_step({1.0}, {0.5}, 5); }), Errc::DimMismatch);
  EXPECT_EQ(recorder_error([&] { d.append_step({1.0, 2.0}, {0.5}, 1); }), Errc::InvalidDemo);
  EXPECT_EQ(recorder_error([&] { d.append_step({1.0, std::nan("")}, {0.5}, 9); }), Errc::InvalidDemo);
  d.finalize(true, 0.01);
  EXPECT_DOUBLE_EQ(d.duration_s, 0.02);
  EXPECT_EQ(recorder_error([&] { d.append_step({1.0, 2.0}, {0.5}, 9); }), Errc::Finalized);
  EXPECT_EQ(recorder_error([&] { d.finalize(true, 0.01); }), Errc::Finalized);

  Demonstration empty;
  EXPECT_EQ(recorder_error([&] { empty.finalize(true, 0.01); }), Errc::InvalidDemo);
  EXPECT_NO_THROW(empty.finalize(false, 0.01));
}

TEST(Dataset, SerializeRoundTripIsExact) {
  Gen g(2);
  for (int trial = 0; trial < 50; ++trial) {
    const auto task = static_cast<sim::TaskKind>(g.integer(0, 2));
    const Dataset d = random_dataset(g, task, g.integer(0, 6));
    const auto bytes = serialize(d);
    EXPECT_EQ(deserialize(bytes), d);
    EXPECT_EQ(serialize(deserialize(bytes)), bytes);
  }
}

TEST(Dataset, SaveAndLoad) {
  Gen g(3);
  const Dataset d = random_dataset(g, sim::TaskKind::Stack, 4);
  const auto path = temp_path("ds4d_recorder_test.ds4d");
  save(d, path);
  EXPECT_EQ(load(path), d);
  std::remove(path.c_str());
  EXPECT_EQ(recorder_error([&] { load(path); }), Errc::Io);
}

TEST(Dataset, EveryByteFlipIsRejected) {
  Gen g(4);
  const auto bytes = serialize(random_dataset(g, sim::TaskKind::Lift, 3));
  for (std::size_t i = 0; i < bytes.size(); ++i) {
    auto bad = bytes;
    bad[i] ^= static_cast<std::byte>(1u << g.integer(0, 7));
    EXPECT_THROW(deserialize(bad), RecorderError) << "offset " << i;
  }
}

TEST(Dataset, TruncationAndVersionAreTyped) {
  Gen g(5);
  const auto bytes = serialize(random_dataset(g, sim::TaskKind::Lift, 2));
  for (std::size_t n = 0; n < bytes.size(); n += 7) {
    EXPECT_EQ(recorder_error([&] { deserialize(std::span(bytes).first(n)); }), Errc::CorruptFile);
  }
  auto v2 = bytes;
  v2[4] = std::byte{2};
  EXPECT_EQ(recorder_error([&] { deserialize(v2); }), Errc::BadVersion);
}

TEST(Dataset, SerializeRejectsInconsistentDemos) {
  Gen g(6);
  Dataset d = random_dataset(g, sim::TaskKind::Lift, 1);
  d.demos[0].task = sim::TaskKind::Stack;
  EXPECT_EQ(recorder_error([&] { serialize(d); }), Errc::DimMismatch);
  d = random_dataset(g, sim::TaskKind::Lift, 0);
  Demonstration demo;
  demo.append_step({1.0}, std::vector<double>(kActionDim, 0.0));
  demo.finalize(false, 0.01);
  d.demos.push_back(demo);
  EXPECT_EQ(recorder_error([&] { serialize(d); }), Errc::DimMismatch);
}

TEST(Dataset, ModelCheck) {
  Dataset d;
  d.header = make_header(model(), sim::TaskKind::PickPlace);
  EXPECT_NO_THROW(check_model(d, model()));
  sim::SimModel other = sim::default_model();
  other.world.grasp_width = 0.031;
  EXPECT_EQ(recorder_error([&] { check_model(d, other); }), Errc::ModelMismatch);
}

TEST(Subset, SizeOrderAndDeterminism) {
  Gen g(7);
  const Dataset d = random_dataset(g, sim::TaskKind::Lift, 50);
  for (double f : {0.2, 0.5, 0.33, 0.02}) {
    const Dataset s = subset(d, f, 11);
    EXPECT_EQ(s.demos.size(), static_cast<std::size_t>(f * 50 + 1e-9));
    EXPECT_EQ(s, subset(d, f, 11));
    std::size_t pos = 0;
    for (const auto& demo : s.demos) {
      while (pos < d.demos.size() && !(d.demos[pos] == demo)) ++pos;
      ASSERT_LT(pos, d.demos.size()) << "subset demo missing or out of order";
      ++pos;
    }
  }
  EXPECT_EQ(subset(d, 1.0, 3), d);
  EXPECT_NE(subset(d, 0.5, 1), subset(d, 0.5, 2));
  EXPECT_THROW(subset(d, 0.0, 1), std::invalid_argument);
  EXPECT_THROW(subset(d, 1.5, 1), std::invalid_argument);
}

TEST(Stats, ExactSmallCase) {
  const std::vector<double> v{2.0, 4.0, 6.0};
  const Stats s = stats(v);
  EXPECT_EQ(s.mean, 4.0);
  EXPECT_EQ(s.std, 2.0);
  EXPECT_EQ(s.count, 3u);
  EXPECT_FALSE(s.degenerate);
}

TEST(Stats, SingleValueAndEmpty) {
  const std::vector<double> one{7.5};
  const Stats s = stats(one);
  EXPECT_EQ(s.mean, 7.5);
  EXPECT_EQ(s.std, 0.0);
  EXPECT_TRUE(s.degenerate);
  EXPECT_EQ(recorder_error([] { stats(std::vector<double>{}); }), Errc::Empty);
}

TEST(Stats, PermutationInvariantAndMatchesTwoPassOracle) {
  Gen g(8);
  for (int trial = 0; trial < 200; ++trial) {
    auto v = g.doubles(static_cast<std::size_t>(g.integer(2, 60)), 0.0, 100.0);
    const Stats s = stats(v);
    long double sum = 0, ss = 0;
    for (double x : v) sum += x;
    const long double mean = sum / v.size();
    for (double x : v) ss += (x - mean) * (x - mean);
    EXPECT_NEAR(s.mean, static_cast<double>(mean), 1e-12);
    EXPECT_NEAR(s.std, std::sqrt(static_cast<double>(ss / (v.size() - 1))), 1e-10);
    for (std::size_t i = v.size() - 1; i > 0; --i) std::swap(v[i], v[static_cast<std::size_t>(g.integer(0, static_cast<int>(i)))]);
    const Stats p = stats(v);
    EXPECT_EQ(p.mean, s.mean);
    EXPECT_EQ(p.std, s.std);
  }
}

TEST(Report, ReferenceRowAppearsVerbatim) {
  const std::vector<double> v{2.0, 4.0, 6.0};
  const std::vector<ReportRow> rows{{"lift (ours)", stats(v), false}, reference_row()};
  const std::string table = format_table(rows);
  EXPECT_NE(table.find("3.54"), std::string::npos);
  EXPECT_NE(table.find("1.28"), std::string::npos);
  EXPECT_NE(table.find("238"), std::string::npos);
  EXPECT_NE(table.find("Mean"), std::string::npos);
  EXPECT_NE(table.find("Standard Deviation"), std::string::npos);
  EXPECT_NE(table.find("No. Demonstrations"), std::string::npos);
  const auto j = report_json(rows);
  EXPECT_EQ(j["rows"][1]["mean_s"], 3.54);
  EXPECT_EQ(j["rows"][1]["count"], 238);
  EXPECT_EQ(j["rows"][1]["reference"], true);
}

TEST(Report, DurationsFilter) {
  Dataset d;
  d.header = make_header(model(), sim::TaskKind::Lift);
  for (int i = 0; i < 4; ++i) {
    Demonstration demo;
    for (int s = 0; s <= i; ++s) demo.append_step(std::vector<double>(d.header.obs_dim, 0.0), std::vector<double>(kActionDim, 0.0));
    demo.finalize(i % 2 == 0, 0.5);
    d.demos.push_back(demo);
  }
  EXPECT_EQ(durations(d), (std::vector<double>{0.5, 1.0, 1.5, 2.0}));
  EXPECT_EQ(durations(d, true), (std::vector<double>{0.5, 1.5}));
}

TEST(Recorder, DrainsBusIntoDemonstration) {
  bus::Bus b;
  Recorder rec(b.subscribe(topic::kRecordStep));
  b.publish(topic::kRecordStep, RecordStep{{9.0}, {9.0}, 99});  // before start: discarded
  rec.start(sim::TaskKind::Lift, "op", 42);
  for (std::uint64_t t = 0; t < 5; ++t) b.publish(topic::kRecordStep, RecordStep{{1.0 * t}, {2.0}, t});
  EXPECT_EQ(rec.drain(), 5u);
  b.publish(topic::kRecordStep, RecordStep{{5.0}, {2.0}, 5});
  const Demonstration d = rec.finish(true, 0.01, {});
  EXPECT_EQ(d.steps.size(), 6u);
  EXPECT_EQ(d.seed, 42u);
  EXPECT_EQ(d.operator_id, "op");
  EXPECT_TRUE(d.finalized);
  EXPECT_EQ(recorder_error([&] { rec.finish(true, 0.01, {}); }), Errc::Finalized);
}

TEST(Recorder, OverflowSurfacesAsBusError) {
  bus::Bus b;
  Recorder rec(b.subscribe(topic::kRecordStep));
  rec.start(sim::TaskKind::Lift, "op", 1);
  for (std::uint64_t t = 0; t < 300; ++t) b.publish(topic::kRecordStep, RecordStep{{1.0}, {2.0}, t});
  try {
    rec.drain();
    FAIL() << "no overflow";
  } catch (const bus::BusError& e) {
    EXPECT_EQ(e.code(), bus::Errc::Overflow);
  }
}

TEST(Demonstration, DurationIsStepsTimesDt) {
  Demonstration d;
  for (int i = 0; i < 350; ++i) d.append_step({0.0}, {0.0});
  d.finalize(true, 0.01);
  EXPECT_NEAR(d.duration_s, 3.50, 1e-12);
}

TEST(Dataset, EmptyAndLargeRoundTrips) {
  Dataset empty;
  empty.header = make_header(model(), sim::TaskKind::Lift);
  EXPECT_EQ(deserialize(serialize(empty)), empty);
  Gen g(9);
  const Dataset big = random_dataset(g, sim::TaskKind::Lift, 238);
  EXPECT_EQ(deserialize(serialize(big)), big);
}

TEST(Dataset, ByteFlipsOutsideTheVersionAreCorruptFile) {
  Gen g(10);
  const auto bytes = serialize(random_dataset(g, sim::TaskKind::PickPlace, 2));
  for (std::size_t i = 0; i < bytes.size(); ++i) {
    if (i >= 4 && i < 8) continue;  // version field: BadVersion
    auto bad = bytes;
    bad[i] ^= std::byte{0x10};
    EXPECT_EQ(recorder_error([&] { deserialize(bad); }), Errc::CorruptFile) << "offset " << i;
  }
}

TEST(Subset, FifthOfFiftyIsTenDistinctDemos) {
  Dataset d;
  d.header = make_header(model(), sim::TaskKind::Lift);
  for (std::uint64_t i = 0; i < 50; ++i) {
    Demonstration demo;
    demo.seed = i;
    demo.finalize(false, 0.01);
    d.demos.push_back(demo);
  }
  const Dataset s = subset(d, 0.2, 5);
  ASSERT_EQ(s.demos.size(), 10u);
  std::set<std::uint64_t> seeds;
  for (const auto& demo : s.demos) seeds.insert(demo.seed);
  EXPECT_EQ(seeds.size(), 10u);
}

TEST(Subset, SeedsSpreadOverAllPicks) {
  // N = 10, keep 5: every demo is picked by some seed and about half the seeds pick each one.
  Dataset d;
  d.header = make_header(model(), sim::TaskKind::Lift);
  for (std::uint64_t i = 0; i < 10; ++i) {
    Demonstration demo;
    demo.seed = i;
    demo.finalize(false, 0.01);
    d.demos.push_back(demo);
  }
  std::set<std::vector<std::uint64_t>> distinct;
  std::vector<int> picks(10, 0);
  for (std::uint64_t seed = 0; seed < 1000; ++seed) {
    std::vector<std::uint64_t> chosen;
    for (const auto& demo : subset(d, 0.5, seed).demos) {
      chosen.push_back(demo.seed);
      ++picks[demo.seed];
    }
    distinct.insert(chosen);
  }
  EXPECT_GT(distinct.size(), 200u);
  for (int n : picks) {
    EXPECT_GT(n, 400);
    EXPECT_LT(n, 600);
  }
}
