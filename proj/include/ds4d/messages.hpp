#pragma once

#include "ds4d/geometry.hpp"

#include <cstdint>
#include <string_view>
#include <variant>
#include <vector>

namespace ds4d {

/// Foot-pedal bits carried in MasterState::pedals.
namespace pedal {
inline constexpr std::uint8_t kClutch = 1u << 0;
inline constexpr std::uint8_t kStartStop = 1u << 1;
inline constexpr std::uint8_t kMode = 1u << 2;
}  // namespace pedal

/// Operator device sample: tip pose in the master base frame.
struct MasterState {
  Transform tip_pose;
  double grip = 0.0;  // 0 = closed, 1 = fully open
  std::uint8_t pedals = 0;
  std::uint64_t stamp_ns = 0;

  bool operator==(const MasterState&) const = default;
};

/// Desired gripper pose in the simulator world frame.
struct RobotCommand {
  Transform target;
  double gripper_width = 0.0;  // meters
  std::uint64_t stamp_ns = 0;

  bool operator==(const RobotCommand&) const = default;
};

struct ObjectPose {
  std::uint16_t id = 0;
  Transform pose;

  bool operator==(const ObjectPose&) const = default;
};

struct SimState {
  std::vector<double> q;
  Transform ee_pose;
  std::vector<ObjectPose> objects;
  double gripper_width = 0.0;
  bool task_success = false;
  std::uint64_t tick = 0;

  bool operator==(const SimState&) const = default;
};

/// One (observation, action) pair streamed to the recorder.
struct RecordStep {
  std::vector<double> obs;
  std::vector<double> action;
  std::uint64_t tick = 0;

  bool operator==(const RecordStep&) const = default;
};

enum class MsgType : std::uint8_t {
  MasterState = 1,
  RobotCommand = 2,
  SimState = 3,
  RecordStep = 4,
};

using Message = std::variant<MasterState, RobotCommand, SimState, RecordStep>;

MsgType type_of(const Message& m);
std::string_view type_name(MsgType t);

namespace topic {
inline constexpr std::string_view kMasterState = "master/state";
inline constexpr std::string_view kRobotCommand = "robot/command";
inline constexpr std::string_view kSimState = "sim/state";
inline constexpr std::string_view kRecordStep = "record/step";
}  // namespace topic

/// Default topic carrying each message type.
std::string_view default_topic(MsgType t);

}  // namespace ds4d
