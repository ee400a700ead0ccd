#pragma once

#include "ds4d/mapping.hpp"
#include "ds4d/recorder.hpp"
#include "ds4d/sim.hpp"

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace ds4d::operator_sim {

enum class Errc { Unplannable, Mismatch };

class OperatorError : public std::runtime_error {
public:
  OperatorError(Errc code, const std::string& what) : std::runtime_error(what), code_(code) {}
  Errc code() const { return code_; }

private:
  Errc code_;
};

/// How waypoint jitter is drawn. Waypoints sharing a group share one draw.
enum class Jitter { Isotropic, Horizontal, None };

struct Waypoint {
  Transform master_pose;  // master base frame
  Transform world_target; // what the pose maps to once engaged
  double grip = 1.0;      // master grip fraction
  std::uint32_t dwell_ticks = 0;
  double speed = 0.1;     // m/s of master tip motion toward this waypoint
  double pass_radius = 0.0;  // m of master travel; > 0 moves on without stopping
  Jitter jitter = Jitter::Isotropic;
  int jitter_group = 0;
};

struct WaypointPlan {
  std::vector<Waypoint> waypoints;
  double noise_sigma = 0.0;  // m, applied in world coordinates
};

/// Operator-side setup shared by planning and execution.
struct OperatorSetup {
  mapping::MappingConfig cfg;
  mapping::FrameCalibration cal;
  Vec3 master_origin = Vec3::Zero();  // master tip position when the episode starts

  static OperatorSetup defaults(const sim::SimModel& model);

  /// Mapping state right after engaging on a robot at `robot_pose`.
  mapping::MappingState engaged_state(const Transform& robot_pose) const;
  /// Master tip pose whose mapped orientation equals the robot's, so alignment
  /// completes on the first tick.
  Transform initial_master(const Transform& robot_pose) const;
};

/// Scripted plan for the task from a freshly reset scene, in master coordinates.
/// Throws Unplannable when an object or waypoint lies outside the workspace.
WaypointPlan plan_waypoints(const sim::TaskSpec& task, const SimState& scene,
                            const OperatorSetup& setup, double noise_sigma = 0.0);

/// Replays a plan as a stream of master samples at the simulator tick rate.
/// The first sample presses start/stop; waypoints are approached with the
/// horizontal and vertical errors closed separately, slowing down
/// proportionally near the target. A waypoint with a dwell is held until its
/// dwell has elapsed, counted from when it became the target. Via points with
/// a pass radius are left as soon as the tip is inside it. With nonzero noise,
/// moves without dwell also carry a small random tremor that the approach then
/// corrects. Jitter is drawn once per group from a counter-based generator
/// keyed by `seed`.
class ScriptedOperator {
public:
  ScriptedOperator(WaypointPlan plan, const OperatorSetup& setup, const Transform& start_pose,
                   double dt, std::uint64_t seed);

  MasterState next();
  bool finished() const { return index_ >= targets_.size(); }
  const std::vector<Transform>& targets() const { return targets_; }

private:
  Vec3 approach(const Vec3& d, double speed) const;
  Vec3 tremor_step() const;

  WaypointPlan plan_;
  std::vector<Transform> targets_;  // jittered master poses
  double dt_;
  Transform tip_;
  double grip_ = 1.0;
  std::size_t index_ = 0;
  std::uint32_t dwell_ = 0;
  std::uint64_t ticks_ = 0;
  std::uint64_t seed_;
  Rotation world_to_master_;
  double lambda_;
  Vec3 vertical_;  // world up in master coordinates
};

/// Reset seeds for data collection; the top bit is always clear. Evaluation
/// seeds set it, so the two sets never overlap.
std::uint64_t collection_seed(std::uint64_t base, std::uint64_t episode);

enum class Termination { Success, Timeout };
std::string_view to_string(Termination t);

struct EpisodeOptions {
  std::uint64_t max_ticks = 3000;
  std::string operator_id = "synthetic";
  OperatorSetup setup;
};

struct EpisodeResult {
  recorder::Demonstration demo;
  Termination termination = Termination::Timeout;
  SimState final_state;
};

/// One synthetic-operator episode through the full bus pipeline. Deterministic
/// in (task, seed, noise_sigma). A timeout is reported as a failed demo.
EpisodeResult run_episode(const sim::SimModel& model, sim::TaskKind task, std::uint64_t seed,
                          double noise_sigma, const EpisodeOptions& options);
EpisodeResult run_episode(const sim::SimModel& model, sim::TaskKind task, std::uint64_t seed,
                          double noise_sigma);

struct ReplayResult {
  bool success = false;
  std::vector<ObjectPose> final_objects;
  SimState final_state;
  bool matches = false;  // success flag and final object poses equal the demo's, bit for bit
};

/// Re-executes a demo's actions from its reset seed.
ReplayResult replay(const sim::SimModel& model, const recorder::Demonstration& demo);

}  // namespace ds4d::operator_sim
