#pragma once

#include "ds4d/bus.hpp"
#include "ds4d/mapping.hpp"
#include "ds4d/recorder.hpp"
#include "ds4d/sim.hpp"

#include <atomic>
#include <functional>
#include <optional>
#include <span>

namespace ds4d {

/// Integrates `action` onto the previously executed target, steps the world
/// with the result and advances `previous_target`. Teleoperation, replay and
/// policy rollout all execute actions through this one function.
RobotCommand execute_action(sim::World& world, Transform& previous_target,
                            std::span<const double> action, const recorder::ActionLimits& limits,
                            std::uint64_t stamp_ns = 0);

/// Mapping configuration used by the pipeline when nothing else is given:
/// default calibration and the camera-frame image of the world workspace.
mapping::MappingConfig default_mapping_config(const sim::SimModel& model,
                                              const mapping::FrameCalibration& cal);

/// One teleoperation control loop over the bus. Each tick consumes the newest
/// master/state, runs the mapper, publishes robot/command, consumes it on the
/// simulator side, publishes the (obs, action) pair on record/step, steps the
/// world and publishes sim/state. Single owner; the bus carries the threading.
class Pipeline {
public:
  Pipeline(bus::Bus& bus, const sim::SimModel& model, sim::TaskKind task,
           mapping::MappingConfig cfg, mapping::FrameCalibration cal);

  void reset(std::uint64_t seed);

  struct TickResult {
    bool commanded = false;  // a robot command existed this tick
    bool recorded = false;
    bool success = false;
    std::uint64_t tick = 0;
  };
  TickResult tick(std::uint64_t stamp_ns);

  const sim::World& world() const { return world_; }
  const mapping::Mapper& mapper() const { return mapper_; }
  const sim::TaskSpec& task() const { return task_; }
  void set_recording(bool on) { recording_ = on; }

private:
  bus::Bus& bus_;
  const sim::SimModel& model_;
  sim::TaskSpec task_;
  mapping::Mapper mapper_;
  sim::World world_;
  bus::Subscription master_sub_;
  bus::Subscription command_sub_;
  std::optional<MasterState> last_master_;
  std::optional<RobotCommand> last_command_;
  Transform previous_target_;
  recorder::ActionLimits limits_;
  bool recording_ = true;
};

struct LoopOptions {
  double hz = 100.0;
  std::uint64_t max_ticks = 0;  // 0 runs until stopped
};

struct LoopStats {
  std::uint64_t ticks = 0;
  std::uint64_t overruns = 0;  // ticks whose work ended after their deadline
  double median_tick_ms = 0.0;
  double p99_tick_ms = 0.0;
  double max_tick_ms = 0.0;
  double achieved_hz = 0.0;
};

/// Runs `pipeline` at a fixed rate on the calling thread until `stop` is set
/// or max_ticks is reached. Ticks are scheduled on absolute deadlines, so a
/// late tick does not shift the ones after it. Only Pipeline::tick is timed;
/// `after_tick` runs outside the measurement.
LoopStats run_loop(Pipeline& pipeline, const LoopOptions& options, const std::atomic<bool>& stop,
                   const std::function<void(Pipeline&, const Pipeline::TickResult&)>& after_tick = {});

}  // namespace ds4d
