#include "ds4d/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <stdexcept>
#include <thread>

namespace ds4d {

RobotCommand execute_action(sim::World& world, Transform& previous_target,
                            std::span<const double> action, const recorder::ActionLimits& limits,
                            std::uint64_t stamp_ns) {
  const RobotCommand cmd = recorder::apply_action(previous_target, action, limits, stamp_ns);
  sim::step_world(world, cmd, world.model->world.dt);
  previous_target = cmd.target;
  return cmd;
}

mapping::MappingConfig default_mapping_config(const sim::SimModel& model,
                                              const mapping::FrameCalibration& cal) {
  mapping::MappingConfig cfg =
      mapping::default_config(cal, model.world.workspace_min, model.world.workspace_max);
  cfg.gripper_min = model.world.gripper_min;
  cfg.gripper_max = model.world.gripper_max;
  return cfg;
}

Pipeline::Pipeline(bus::Bus& bus, const sim::SimModel& model, sim::TaskKind task,
                   mapping::MappingConfig cfg, mapping::FrameCalibration cal)
    : bus_(bus),
      model_(model),
      task_(model.task(task)),
      mapper_(cfg, cal),
      master_sub_(bus.subscribe(topic::kMasterState)),
      command_sub_(bus.subscribe(topic::kRobotCommand)),
      limits_(recorder::ActionLimits::from(model.world)) {
  reset(0);
}

void Pipeline::reset(std::uint64_t seed) {
  world_ = sim::reset(model_, task_, seed);
  mapper_.reset();
  last_master_.reset();
  last_command_.reset();
  previous_target_ = world_.ee_pose;
  // Drop anything queued for the previous episode.
  while (master_sub_.poll_latest()) {
  }
  while (command_sub_.poll_latest()) {
  }
}

Pipeline::TickResult Pipeline::tick(std::uint64_t stamp_ns) {
  if (auto m = master_sub_.poll_latest()) {
    last_master_ = m->as<MasterState>();
  }
  // Without a fresh sample the previous one is repeated, like a heartbeat.
  if (last_master_) {
    if (auto cmd = mapper_.tick(*last_master_, world_.ee_pose)) {
      bus_.publish(topic::kRobotCommand, *cmd);
    }
  }
  if (auto c = command_sub_.poll_latest()) {
    last_command_ = c->as<RobotCommand>();
  }

  TickResult out;
  out.commanded = last_command_.has_value();
  if (out.commanded) {
    const std::vector<double> action = recorder::encode_action(previous_target_, *last_command_);
    if (recording_ && mapper_.state().phase != mapping::Phase::Idle) {
      bus_.publish(topic::kRecordStep,
                   RecordStep{recorder::observation(world_), action, world_.tick});
      out.recorded = true;
    }
    execute_action(world_, previous_target_, action, limits_, stamp_ns);
  } else {
    sim::step_world(world_, RobotCommand{previous_target_, world_.gripper_width, stamp_ns},
                    model_.world.dt);
  }
  bus_.publish(topic::kSimState, world_.snapshot());
  out.success = world_.success;
  out.tick = world_.tick;
  return out;
}

LoopStats run_loop(Pipeline& pipeline, const LoopOptions& options, const std::atomic<bool>& stop,
                   const std::function<void(Pipeline&, const Pipeline::TickResult&)>& after_tick) {
  if (!(options.hz > 0.0)) throw std::invalid_argument("loop rate must be positive");
  using clock = std::chrono::steady_clock;
  const auto period = std::chrono::duration_cast<clock::duration>(std::chrono::duration<double>(1.0 / options.hz));
  std::vector<double> tick_ms;
  LoopStats stats;
  const auto start = clock::now();
  auto deadline = start;
  while (!stop.load(std::memory_order_relaxed) &&
         (options.max_ticks == 0 || stats.ticks < options.max_ticks)) {
    deadline += period;
    const auto t0 = clock::now();
    const auto result = pipeline.tick(bus::steady_now_ns());
    const auto t1 = clock::now();
    tick_ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
    ++stats.ticks;
    if (after_tick) after_tick(pipeline, result);
    if (clock::now() > deadline) {
      ++stats.overruns;
    } else {
      std::this_thread::sleep_until(deadline);
    }
  }
  const double elapsed = std::chrono::duration<double>(clock::now() - start).count();
  if (!tick_ms.empty()) {
    std::sort(tick_ms.begin(), tick_ms.end());
    stats.median_tick_ms = tick_ms[tick_ms.size() / 2];
    stats.p99_tick_ms = tick_ms[std::min(tick_ms.size() - 1, tick_ms.size() * 99 / 100)];
    stats.max_tick_ms = tick_ms.back();
  }
  stats.achieved_hz = elapsed > 0.0 ? static_cast<double>(stats.ticks) / elapsed : 0.0;
  return stats;
}

}  // namespace ds4d
