#pragma once

#include "ds4d/geometry.hpp"
#include "ds4d/messages.hpp"

#include <Eigen/Core>
#include <json.hpp>

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace ds4d::sim {

using JointVector = Eigen::VectorXd;

class JointLimitError : public std::out_of_range {
public:
  JointLimitError(std::size_t joint, double value)
      : std::out_of_range("joint " + std::to_string(joint) + " outside limits: " +
                          std::to_string(value)),
        joint_(joint) {}
  std::size_t joint() const { return joint_; }

private:
  std::size_t joint_;
};

class ModelError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

struct Joint {
  Transform offset;  // parent frame -> joint frame at q = 0
  Vec3 axis = Vec3::UnitZ();
  double lower = -3.14;
  double upper = 3.14;
  double max_speed = 2.0;  // rad/s
};

struct ArmModel {
  std::vector<Joint> joints;
  Transform tool;  // last joint frame -> gripper grasp frame
  std::vector<double> home_q;

  std::size_t dof() const { return joints.size(); }
  void validate() const;
};

struct ServoParams {
  double damping = 0.05;  // DLS mu
};

enum class TaskKind { Lift, PickPlace, Stack };

std::string_view to_string(TaskKind k);
TaskKind task_from_string(std::string_view s);

struct ObjectSpec {
  std::uint16_t id = 0;
  std::string name;
  Vec3 half_extents = Vec3::Constant(0.02);
  Vec3 nominal = Vec3::Zero();  // center position; z is derived from the table
  Vec3 range = Vec3::Zero();    // uniform +-range per axis around nominal (z ignored)
};

struct BinRegion {
  Vec3 center = Vec3::Zero();  // z = floor height
  Vec3 half_size = Vec3::Zero();

  bool contains_xy(const Vec3& p) const;
};

struct TaskSpec {
  TaskKind kind = TaskKind::Lift;
  std::vector<ObjectSpec> objects;
  double lift_height = 0.04;         // Lift: object center above its rest height
  BinRegion bin;                     // PickPlace
  std::uint16_t target_id = 1;       // object being manipulated
  std::uint16_t base_id = 2;         // Stack: object to stack on
  double stack_xy_tolerance = 0.01;  // Stack
  std::uint64_t horizon_ticks = 1500;

  const ObjectSpec& object(std::uint16_t id) const;
};

struct WorldParams {
  double dt = 0.01;
  double table_z = 0.0;
  double gripper_min = 0.0;
  double gripper_max = 0.08;
  double gripper_speed = 0.25;  // m/s
  double grasp_width = 0.03;
  double release_width = 0.05;
  double grasp_radius = 0.015;
  Vec3 workspace_min{0.25, -0.40, 0.005};  // world frame, reachable target box
  Vec3 workspace_max{0.75, 0.40, 0.50};
  ServoParams servo;
};

/// Everything the simulator needs; persisted as a versioned JSON model file.
struct SimModel {
  int version = 1;
  std::string name;
  ArmModel arm;
  WorldParams world;
  std::vector<TaskSpec> tasks;

  const TaskSpec& task(TaskKind k) const;
  /// CRC-64 of the canonical JSON encoding, hex; identifies the generating model.
  std::string hash() const;
};

SimModel default_model();
nlohmann::json to_json(const SimModel& m);
SimModel model_from_json(const nlohmann::json& j);
SimModel load_model(const std::string& path);
void save_model(const SimModel& m, const std::string& path);

// ---------------------------------------------------------------------------
// Kinematics

/// Gripper pose in the world frame. Throws JointLimitError.
Transform forward_kinematics(const ArmModel& arm, const JointVector& q);

/// 6 x n geometric Jacobian (linear rows first) and the end-effector pose.
struct KinematicsResult {
  Transform ee;
  Eigen::Matrix<double, 6, Eigen::Dynamic> jacobian;
};
KinematicsResult kinematics(const ArmModel& arm, const JointVector& q);

/// Stacked (position, rotation-vector) error from current to target, world frame.
Eigen::Matrix<double, 6, 1> pose_error(const Transform& current, const Transform& target);

/// One damped-least-squares step: dq = J^T (J J^T + mu^2 I)^-1 e, uniformly
/// scaled to the joint speed limits and clamped to the joint limits.
JointVector servo_step(const ArmModel& arm, const JointVector& q, const Transform& target,
                       double dt, const ServoParams& params = {});

// ---------------------------------------------------------------------------
// World

struct SceneObject {
  std::uint16_t id = 0;
  Vec3 half_extents = Vec3::Constant(0.02);
  Transform pose;
  bool attached = false;
  Transform grasp_offset;  // gripper -> object while attached
};

struct World {
  const SimModel* model = nullptr;
  TaskSpec task;
  JointVector q;
  Transform ee_pose;
  double gripper_width = 0.0;
  std::vector<SceneObject> objects;
  std::uint64_t tick = 0;
  bool success = false;

  const SceneObject& object(std::uint16_t id) const;
  SimState snapshot() const;
};

/// Arm at home, gripper open, objects drawn from the task's ranges with a
/// counter-based generator keyed by seed. The model must outlive the world.
World reset(const SimModel& model, const TaskSpec& task, std::uint64_t seed);

SimState step_world(World& world, const RobotCommand& cmd, double dt);

bool check_success(const TaskSpec& task, const World& world);

/// Height of the highest support surface under `p` (table, bin floor or the
/// top face of another resting object), ignoring object `self_id`.
double support_height(const World& world, const Vec3& p, std::uint16_t self_id);

}  // namespace ds4d::sim
