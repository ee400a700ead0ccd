#pragma once

#include "ds4d/mapping.hpp"

#include "generators.hpp"

#include <algorithm>

namespace ds4d::testgen {

struct ClutchEpisode {
  double hold_dev_m = 0.0;       // largest command drift while clutched
  double hold_dev_rad = 0.0;
  bool hold_exact = true;        // every clutched command equal to the frozen one, bit for bit
  double release_dev_m = 0.0;    // first command after release vs the frozen one
  double release_dev_rad = 0.0;
  bool engaged = false;
};

/// Engages a mapper on a random robot pose, drives the master along a random
/// walk, holds the clutch while the master keeps moving and turning, then
/// releases and compares the first command with the frozen one. The workspace
/// is wide enough that clamping never triggers.
inline ClutchEpisode run_clutch_episode(Gen& g) {
  mapping::MappingConfig cfg;
  cfg.lambda = g.uniform(0.1, 3.0);
  cfg.align_rate = 0.2;
  cfg.workspace_min = Vec3::Constant(-100.0);
  cfg.workspace_max = Vec3::Constant(100.0);
  const auto cal = mapping::FrameCalibration::make(g.transform(), g.transform());
  mapping::Mapper mapper(cfg, cal);

  MasterState m;
  m.tip_pose = g.transform(0.3);
  m.grip = g.uniform(0.0, 1.0);
  Transform robot = g.transform(0.5);

  auto tick = [&] {
    const auto cmd = mapper.tick(m, robot);
    if (cmd) robot = cmd->target;
    return cmd;
  };
  auto wander = [&](double step, double turn) {
    m.tip_pose = Transform(g.small_rotation(turn) * m.tip_pose.rotation(),
                           m.tip_pose.translation() + g.vec3(-step, step));
  };

  ClutchEpisode out;
  m.pedals = pedal::kStartStop;
  tick();
  m.pedals = 0;
  for (int i = 0; i < 100 && mapper.state().phase != mapping::Phase::Engaged; ++i) tick();
  out.engaged = mapper.state().phase == mapping::Phase::Engaged;
  if (!out.engaged) return out;

  const int before = g.integer(0, 30);
  for (int i = 0; i < before; ++i) {
    wander(0.005, 0.02);
    tick();
  }

  m.pedals = pedal::kClutch;
  wander(0.005, 0.02);
  const auto frozen = tick();
  const int held = g.integer(1, 50);
  for (int i = 0; i < held; ++i) {
    wander(0.02, 0.2);
    const auto cmd = tick();
    out.hold_exact = out.hold_exact && *cmd == *frozen;
    out.hold_dev_m = std::max(out.hold_dev_m, (cmd->target.translation() - frozen->target.translation()).norm());
    out.hold_dev_rad = std::max(out.hold_dev_rad, angle_between(cmd->target.rotation(), frozen->target.rotation()));
  }

  m.pedals = 0;
  wander(0.02, 0.2);
  const auto first = tick();
  out.release_dev_m = (first->target.translation() - frozen->target.translation()).norm();
  out.release_dev_rad = angle_between(first->target.rotation(), frozen->target.rotation());
  return out;
}

}  // namespace ds4d::testgen
