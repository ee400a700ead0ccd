#pragma once

#include "ds4d/geometry.hpp"
#include "ds4d/messages.hpp"

#include <json.hpp>

#include <optional>
#include <stdexcept>
#include <string>

namespace ds4d::mapping {

// Frame names follow the usual teleoperation setup:
//   B master base, M master tip, R operator reference,
//   W simulator world, C display camera, G robot gripper.

/// Fixed transforms between the operator side and the simulator side.
struct FrameCalibration {
  Transform r_from_b;  // operator reference <- master base
  Transform c_from_w;  // camera <- world
  Transform w_from_c;  // cached inverse of c_from_w

  static FrameCalibration make(const Transform& r_from_b, const Transform& c_from_w);
  /// Operator reference aligned so that master axes match world axes through
  /// a camera yawed a quarter turn about the world z axis.
  static FrameCalibration defaults();
};

struct MappingConfig {
  double lambda = 1.0;
  double engage_angle_tol = 1e-3;  // rad
  double align_rate = 0.05;        // rad per tick
  Vec3 workspace_min = Vec3::Constant(-1.0);  // camera frame
  Vec3 workspace_max = Vec3::Constant(1.0);
  double gripper_min = 0.0;
  double gripper_max = 0.08;

  /// Throws std::invalid_argument when an invariant does not hold.
  void validate() const;
};

/// Camera-frame workspace box that contains the given world-frame box.
std::pair<Vec3, Vec3> camera_box(const FrameCalibration& cal, const Vec3& world_min,
                                 const Vec3& world_max);

/// Default config with the workspace derived from a world-frame box.
MappingConfig default_config(const FrameCalibration& cal, const Vec3& world_min,
                             const Vec3& world_max);

nlohmann::json to_json(const MappingConfig& cfg, const FrameCalibration& cal);
/// Reads any subset of the keys written by to_json over the given defaults.
void merge_json(const nlohmann::json& j, MappingConfig& cfg, FrameCalibration& cal);

enum class Phase { Idle, Aligning, Engaged, Clutched };
std::string_view to_string(Phase p);

struct MappingState {
  Phase phase = Phase::Idle;
  Vec3 anchor_master_p = Vec3::Zero();          // master tip position at (re)anchoring, B frame
  Vec3 anchor_gripper_p_world = Vec3::Zero();   // gripper position at (re)anchoring, W frame
  std::optional<RobotCommand> last_command;
  /// Tip-frame correction applied after a clutch during which the master
  /// rotated; identity otherwise.
  Rotation orientation_offset;
};

enum class Errc { EngageWhileActive, NotEngaged, ClutchWhileIdle };

class MappingError : public std::logic_error {
public:
  MappingError(Errc code, const std::string& what) : std::logic_error(what), code_(code) {}
  Errc code() const { return code_; }

private:
  Errc code_;
};

/// Desired gripper pose expressed in the camera frame.
struct DesiredPose {
  Vec3 position;
  Rotation orientation;
};

/// Captures both anchors and starts aligning the gripper orientation.
MappingState engage(const MappingState& state, const MasterState& master,
                    const Transform& robot_pose);

/// One alignment tick: rotates the commanded orientation toward the mapped
/// master orientation by at most align_rate, holding the anchored position.
/// Switches to Engaged once within engage_angle_tol.
MappingState align_step(const MappingState& state, const MappingConfig& cfg,
                        const FrameCalibration& cal, const MasterState& master);

/// Position and orientation mapping; translation clamped to the workspace box.
DesiredPose map_pose(const MappingState& state, const MappingConfig& cfg,
                     const FrameCalibration& cal, const Transform& master_tip);

/// Position term before clamping: c_p_w + c_R_w * w_p0_g + lambda * r_R_b * (b_p_m - b_p0_m).
Vec3 mapped_position(const MappingState& state, const MappingConfig& cfg,
                     const FrameCalibration& cal, const Vec3& master_p);

/// Camera-frame desired pose to world-frame target: w_X_c * [R p; 0 1].
Transform camera_to_world(const FrameCalibration& cal, const DesiredPose& desired);

/// Press freezes the last command. Release re-anchors the master position to
/// `master_tip` and the gripper anchor to the frozen command so the next
/// command equals the frozen one, then returns to Engaged.
MappingState clutch(const MappingState& state, bool pressed, const Transform& master_tip,
                    const FrameCalibration& cal);

Vec3 clamp_workspace(const MappingConfig& cfg, const Vec3& p);

/// Affine grip-fraction to width map; input clamped to [0, 1].
double map_gripper(const MappingConfig& cfg, double master_grip);

/// Inverse of the position and orientation mapping for an Engaged state:
/// the master tip pose that produces the given world-frame target.
Transform master_for_target(const MappingState& state, const MappingConfig& cfg,
                            const FrameCalibration& cal, const Transform& world_target);

/// The operator-side node: consumes master samples, tracks pedal edges and
/// produces robot commands. Owned by a single task.
class Mapper {
public:
  Mapper(MappingConfig cfg, FrameCalibration cal);

  /// Processes one master sample. Rising edge of the start/stop pedal engages
  /// (or stops when active); the clutch pedal is level-triggered. Returns the
  /// command to publish, or nothing while Idle.
  std::optional<RobotCommand> tick(const MasterState& master, const Transform& robot_pose);

  const MappingState& state() const { return state_; }
  const MappingConfig& config() const { return cfg_; }
  const FrameCalibration& calibration() const { return cal_; }
  void reset();

private:
  MappingConfig cfg_;
  FrameCalibration cal_;
  MappingState state_;
  std::uint8_t previous_pedals_ = 0;
};

}  // namespace ds4d::mapping
