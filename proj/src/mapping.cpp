#include "ds4d/mapping.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace ds4d::mapping {

FrameCalibration FrameCalibration::make(const Transform& r_from_b, const Transform& c_from_w) {
  return {r_from_b, c_from_w, inverse(c_from_w)};
}

FrameCalibration FrameCalibration::defaults() {
  constexpr double kHalfPi = std::numbers::pi / 2.0;
  // Camera yawed a quarter turn and offset from the world origin; the operator
  // reference undoes the yaw so master x/y/z line up with world x/y/z.
  return make(Transform::from_rotation(Rotation::rz(-kHalfPi)),
              Transform(Rotation::rz(-kHalfPi), Vec3(0.0, 0.5, 0.0)));
}

void MappingConfig::validate() const {
  if (!(lambda > 0.0) || !std::isfinite(lambda)) {
    throw std::invalid_argument("mapping: lambda must be positive");
  }
  if (!(engage_angle_tol > 0.0 && engage_angle_tol <= std::numbers::pi)) {
    throw std::invalid_argument("mapping: engage_angle_tol must be in (0, pi]");
  }
  if (!(align_rate > 0.0) || !std::isfinite(align_rate)) {
    throw std::invalid_argument("mapping: align_rate must be positive");
  }
  if (!(workspace_min.array() < workspace_max.array()).all()) {
    throw std::invalid_argument("mapping: workspace_min must be below workspace_max");
  }
  if (!(gripper_min >= 0.0 && gripper_min < gripper_max)) {
    throw std::invalid_argument("mapping: gripper bounds must satisfy 0 <= min < max");
  }
}

std::pair<Vec3, Vec3> camera_box(const FrameCalibration& cal, const Vec3& lo, const Vec3& hi) {
  Vec3 out_lo = Vec3::Constant(std::numeric_limits<double>::infinity());
  Vec3 out_hi = -out_lo;
  for (int corner = 0; corner < 8; ++corner) {
    const Vec3 p((corner & 1) ? hi.x() : lo.x(), (corner & 2) ? hi.y() : lo.y(),
                 (corner & 4) ? hi.z() : lo.z());
    const Vec3 c = apply(cal.c_from_w, p);
    out_lo = out_lo.cwiseMin(c);
    out_hi = out_hi.cwiseMax(c);
  }
  return {out_lo, out_hi};
}

MappingConfig default_config(const FrameCalibration& cal, const Vec3& world_min,
                             const Vec3& world_max) {
  MappingConfig cfg;
  std::tie(cfg.workspace_min, cfg.workspace_max) = camera_box(cal, world_min, world_max);
  return cfg;
}

namespace {

nlohmann::json vec_json(const Vec3& v) { return {v.x(), v.y(), v.z()}; }

Vec3 vec_from(const nlohmann::json& j) {
  if (!j.is_array() || j.size() != 3) throw std::invalid_argument("expected a 3-vector");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

nlohmann::json pose_json(const Transform& t) {
  const auto a = to_array(t);
  return nlohmann::json(std::vector<double>(a.begin(), a.end()));
}

Transform pose_from(const nlohmann::json& j) {
  if (!j.is_array() || j.size() != 7) throw std::invalid_argument("expected a 7-element pose");
  std::array<double, 7> a{};
  for (std::size_t i = 0; i < 7; ++i) a[i] = j[i].get<double>();
  // Hand-written config files may carry rounded quaternions; renormalize.
  return Transform(Rotation(a[0], a[1], a[2], a[3]), Vec3(a[4], a[5], a[6]));
}

}  // namespace

nlohmann::json to_json(const MappingConfig& cfg, const FrameCalibration& cal) {
  return {{"lambda", cfg.lambda},
          {"engage_angle_tol", cfg.engage_angle_tol},
          {"align_rate", cfg.align_rate},
          {"workspace_min", vec_json(cfg.workspace_min)},
          {"workspace_max", vec_json(cfg.workspace_max)},
          {"gripper_min", cfg.gripper_min},
          {"gripper_max", cfg.gripper_max},
          {"r_from_b", pose_json(cal.r_from_b)},
          {"c_from_w", pose_json(cal.c_from_w)}};
}

void merge_json(const nlohmann::json& j, MappingConfig& cfg, FrameCalibration& cal) {
  if (j.contains("lambda")) cfg.lambda = j.at("lambda").get<double>();
  if (j.contains("engage_angle_tol")) cfg.engage_angle_tol = j.at("engage_angle_tol").get<double>();
  if (j.contains("align_rate")) cfg.align_rate = j.at("align_rate").get<double>();
  if (j.contains("workspace_min")) cfg.workspace_min = vec_from(j.at("workspace_min"));
  if (j.contains("workspace_max")) cfg.workspace_max = vec_from(j.at("workspace_max"));
  if (j.contains("gripper_min")) cfg.gripper_min = j.at("gripper_min").get<double>();
  if (j.contains("gripper_max")) cfg.gripper_max = j.at("gripper_max").get<double>();
  Transform r_from_b = cal.r_from_b;
  Transform c_from_w = cal.c_from_w;
  if (j.contains("r_from_b")) r_from_b = pose_from(j.at("r_from_b"));
  if (j.contains("c_from_w")) c_from_w = pose_from(j.at("c_from_w"));
  cal = FrameCalibration::make(r_from_b, c_from_w);
  cfg.validate();
}

std::string_view to_string(Phase p) {
  switch (p) {
    case Phase::Idle: return "idle";
    case Phase::Aligning: return "aligning";
    case Phase::Engaged: return "engaged";
    case Phase::Clutched: return "clutched";
  }
  return "?";
}

namespace {

Rotation mapped_orientation(const MappingState& state, const FrameCalibration& cal,
                            const Rotation& master_r) {
  return cal.r_from_b.rotation() * master_r * state.orientation_offset;
}

}  // namespace

MappingState engage(const MappingState& state, const MasterState& master,
                    const Transform& robot_pose) {
  if (state.phase != Phase::Idle) {
    throw MappingError(Errc::EngageWhileActive,
                       "engage requires Idle, phase is " + std::string(to_string(state.phase)));
  }
  MappingState next;
  next.phase = Phase::Aligning;
  next.anchor_master_p = master.tip_pose.translation();
  next.anchor_gripper_p_world = robot_pose.translation();
  next.last_command = RobotCommand{robot_pose, 0.0, master.stamp_ns};
  next.orientation_offset = Rotation::identity();
  return next;
}

MappingState align_step(const MappingState& state, const MappingConfig& cfg,
                        const FrameCalibration& cal, const MasterState& master) {
  if (state.phase != Phase::Aligning || !state.last_command) {
    throw MappingError(Errc::NotEngaged, "align_step requires Aligning");
  }
  MappingState next = state;
  // The robot holds position while aligning, so the master anchor follows the
  // tip; position mapping then starts without a jump.
  next.anchor_master_p = master.tip_pose.translation();
  const Rotation goal =
      cal.w_from_c.rotation() * mapped_orientation(state, cal, master.tip_pose.rotation());
  const Rotation current = state.last_command->target.rotation();
  const Rotation commanded = rotate_toward(current, goal, cfg.align_rate);
  next.last_command = RobotCommand{Transform(commanded, state.anchor_gripper_p_world),
                                   map_gripper(cfg, master.grip), master.stamp_ns};
  if (angle_between(commanded, goal) <= cfg.engage_angle_tol) {
    next.phase = Phase::Engaged;
  }
  return next;
}

Vec3 mapped_position(const MappingState& state, const MappingConfig& cfg,
                     const FrameCalibration& cal, const Vec3& master_p) {
  return apply(cal.c_from_w, state.anchor_gripper_p_world) +
         cfg.lambda * cal.r_from_b.rotation().rotate(master_p - state.anchor_master_p);
}

Vec3 clamp_workspace(const MappingConfig& cfg, const Vec3& p) {
  return p.cwiseMax(cfg.workspace_min).cwiseMin(cfg.workspace_max);
}

DesiredPose map_pose(const MappingState& state, const MappingConfig& cfg,
                     const FrameCalibration& cal, const Transform& master_tip) {
  if (state.phase != Phase::Engaged) {
    throw MappingError(Errc::NotEngaged,
                       "map_pose requires Engaged, phase is " + std::string(to_string(state.phase)));
  }
  return {clamp_workspace(cfg, mapped_position(state, cfg, cal, master_tip.translation())),
          mapped_orientation(state, cal, master_tip.rotation())};
}

Transform camera_to_world(const FrameCalibration& cal, const DesiredPose& desired) {
  return cal.w_from_c * Transform(desired.orientation, desired.position);
}

MappingState clutch(const MappingState& state, bool pressed, const Transform& master_tip,
                    const FrameCalibration& cal) {
  if (state.phase == Phase::Idle || state.phase == Phase::Aligning) {
    throw MappingError(Errc::ClutchWhileIdle,
                       "clutch requires Engaged or Clutched, phase is " +
                           std::string(to_string(state.phase)));
  }
  MappingState next = state;
  if (pressed) {
    next.phase = Phase::Clutched;
    return next;
  }
  if (state.phase != Phase::Clutched) {
    return next;
  }
  const Transform& frozen = state.last_command->target;
  next.anchor_master_p = master_tip.translation();
  next.anchor_gripper_p_world = frozen.translation();
  // Keep orientation continuous if the master turned while clutched.
  const Rotation frozen_camera = cal.c_from_w.rotation() * frozen.rotation();
  next.orientation_offset =
      (cal.r_from_b.rotation() * master_tip.rotation()).inverse() * frozen_camera;
  next.phase = Phase::Engaged;
  return next;
}

double map_gripper(const MappingConfig& cfg, double master_grip) {
  const double g = std::isfinite(master_grip) ? std::clamp(master_grip, 0.0, 1.0) : 0.0;
  return cfg.gripper_min + g * (cfg.gripper_max - cfg.gripper_min);
}

Transform master_for_target(const MappingState& state, const MappingConfig& cfg,
                            const FrameCalibration& cal, const Transform& world_target) {
  const Vec3 camera_p = apply(cal.c_from_w, world_target.translation());
  const Rotation rb_inv = cal.r_from_b.rotation().inverse();
  const Vec3 displacement =
      rb_inv.rotate(camera_p - apply(cal.c_from_w, state.anchor_gripper_p_world)) / cfg.lambda;
  const Rotation camera_r = cal.c_from_w.rotation() * world_target.rotation();
  return Transform(rb_inv * camera_r * state.orientation_offset.inverse(),
                   state.anchor_master_p + displacement);
}

Mapper::Mapper(MappingConfig cfg, FrameCalibration cal) : cfg_(cfg), cal_(cal) {
  cfg_.validate();
}

void Mapper::reset() {
  state_ = MappingState{};
  previous_pedals_ = 0;
}

std::optional<RobotCommand> Mapper::tick(const MasterState& master, const Transform& robot_pose) {
  const bool start_edge =
      (master.pedals & pedal::kStartStop) != 0 && (previous_pedals_ & pedal::kStartStop) == 0;
  previous_pedals_ = master.pedals;

  if (start_edge) {
    if (state_.phase == Phase::Idle) {
      state_ = engage(state_, master, robot_pose);
    } else {
      state_ = MappingState{};
      return std::nullopt;
    }
  }

  switch (state_.phase) {
    case Phase::Idle:
      return std::nullopt;
    case Phase::Aligning:
      state_ = align_step(state_, cfg_, cal_, master);
      return state_.last_command;
    case Phase::Engaged:
    case Phase::Clutched:
      break;
  }

  const bool clutch_down = (master.pedals & pedal::kClutch) != 0;
  if (clutch_down != (state_.phase == Phase::Clutched)) {
    state_ = clutch(state_, clutch_down, master.tip_pose, cal_);
  }
  if (state_.phase == Phase::Clutched) {
    return state_.last_command;
  }

  const DesiredPose desired = map_pose(state_, cfg_, cal_, master.tip_pose);
  RobotCommand cmd{camera_to_world(cal_, desired), map_gripper(cfg_, master.grip), master.stamp_ns};
  state_.last_command = cmd;
  return cmd;
}

}  // namespace ds4d::mapping
