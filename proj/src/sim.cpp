#include "ds4d/sim.hpp"

#include "ds4d/checksum.hpp"
#include "ds4d/random.hpp"

#include <Eigen/Cholesky>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>

namespace ds4d::sim {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Model

std::string_view to_string(TaskKind k) {
  switch (k) {
    case TaskKind::Lift: return "lift";
    case TaskKind::PickPlace: return "pickplace";
    case TaskKind::Stack: return "stack";
  }
  return "?";
}

TaskKind task_from_string(std::string_view s) {
  if (s == "lift") return TaskKind::Lift;
  if (s == "pickplace" || s == "pick-place" || s == "pick_place") return TaskKind::PickPlace;
  if (s == "stack") return TaskKind::Stack;
  throw ModelError("unknown task '" + std::string(s) + "' (expected lift, pickplace, stack)");
}

bool BinRegion::contains_xy(const Vec3& p) const {
  return std::abs(p.x() - center.x()) <= half_size.x() &&
         std::abs(p.y() - center.y()) <= half_size.y();
}

const ObjectSpec& TaskSpec::object(std::uint16_t id) const {
  for (const auto& o : objects) {
    if (o.id == id) return o;
  }
  throw ModelError("task has no object with id " + std::to_string(id));
}

const TaskSpec& SimModel::task(TaskKind k) const {
  for (const auto& t : tasks) {
    if (t.kind == k) return t;
  }
  throw ModelError("model defines no task '" + std::string(to_string(k)) + "'");
}

void ArmModel::validate() const {
  if (joints.empty()) throw ModelError("arm has no joints");
  if (home_q.size() != joints.size()) throw ModelError("home_q size does not match joint count");
  for (std::size_t i = 0; i < joints.size(); ++i) {
    const Joint& j = joints[i];
    if (std::abs(j.axis.norm() - 1.0) > 1e-9) {
      throw ModelError("joint " + std::to_string(i) + " axis is not unit-norm");
    }
    if (!(j.lower < j.upper)) {
      throw ModelError("joint " + std::to_string(i) + " has lower >= upper");
    }
    if (!(j.max_speed > 0.0)) {
      throw ModelError("joint " + std::to_string(i) + " max_speed must be positive");
    }
    if (home_q[i] < j.lower || home_q[i] > j.upper) {
      throw ModelError("home_q[" + std::to_string(i) + "] outside limits");
    }
  }
}

namespace {

json vec_json(const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); }

Vec3 vec_from(const json& j) {
  if (!j.is_array() || j.size() != 3) throw ModelError("expected a 3-vector");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

// Offsets are stored as translation + axis-angle so the file stays readable.
json offset_json(const Transform& t) {
  const Vec3 rv = t.rotation().log();
  const double angle = rv.norm();
  const Vec3 axis = angle > 0.0 ? Vec3(rv / angle) : Vec3::UnitZ();
  return {{"translation", vec_json(t.translation())},
          {"rotation_axis", vec_json(axis)},
          {"rotation_angle", angle}};
}

Transform offset_from(const json& j) {
  return Transform(Rotation::from_axis_angle(vec_from(j.at("rotation_axis")),
                                             j.at("rotation_angle").get<double>()),
                   vec_from(j.at("translation")));
}

// Modified DH link transform: RotX(alpha) * TransX(a) * TransZ(d).
Joint dh_joint(double a, double d, double alpha, double lower, double upper) {
  Joint j;
  const Rotation r = Rotation::rx(alpha);
  j.offset = Transform(r, Vec3(a, 0.0, 0.0) + r.rotate(Vec3(0.0, 0.0, d)));
  j.axis = Vec3::UnitZ();
  j.lower = lower;
  j.upper = upper;
  j.max_speed = 2.0;
  return j;
}

}  // namespace

SimModel default_model() {
  SimModel m;
  m.version = 1;
  m.name = "panda-like-7dof";

  // Franka Panda modified-DH link constants with simplified joint limits
  // (joints 4 and 6 are widened to include q = 0) and a rigid 0.2104 m
  // flange-plus-fingertip tool offset.
  constexpr double kHalfPi = std::numbers::pi / 2.0;
  m.arm.joints = {
      dh_joint(0.0, 0.333, 0.0, -2.8973, 2.8973),
      dh_joint(0.0, 0.0, -kHalfPi, -1.7628, 1.7628),
      dh_joint(0.0, 0.316, kHalfPi, -2.8973, 2.8973),
      dh_joint(0.0825, 0.0, kHalfPi, -3.0718, 0.0),
      dh_joint(-0.0825, 0.384, -kHalfPi, -2.8973, 2.8973),
      dh_joint(0.0, 0.0, kHalfPi, -0.0175, 3.7525),
      dh_joint(0.088, 0.0, kHalfPi, -2.8973, 2.8973),
  };
  m.arm.tool = Transform::from_translation(Vec3(0.0, 0.0, 0.2104));
  // Gripper at (0.45, 0, 0.30), pointing down.
  m.arm.home_q = {0.0, -0.2594, 0.0, -2.4315, 0.0, 2.1721, 0.0};

  TaskSpec lift;
  lift.kind = TaskKind::Lift;
  lift.objects = {{1, "cube", Vec3::Constant(0.02), Vec3(0.55, 0.0, 0.0), Vec3(0.04, 0.04, 0.0)}};
  lift.lift_height = 0.04;
  lift.target_id = 1;
  lift.horizon_ticks = 1000;

  TaskSpec pick;
  pick.kind = TaskKind::PickPlace;
  pick.objects = {{1, "can", Vec3(0.02, 0.02, 0.04), Vec3(0.55, 0.15, 0.0), Vec3(0.03, 0.03, 0.0)}};
  pick.bin.center = Vec3(0.50, -0.22, 0.01);
  pick.bin.half_size = Vec3(0.10, 0.08, 0.0);
  pick.target_id = 1;
  pick.horizon_ticks = 2000;

  TaskSpec stack;
  stack.kind = TaskKind::Stack;
  stack.objects = {
      {1, "red_cube", Vec3::Constant(0.02), Vec3(0.55, 0.12, 0.0), Vec3(0.03, 0.03, 0.0)},
      {2, "green_cube", Vec3::Constant(0.025), Vec3(0.55, -0.12, 0.0), Vec3(0.03, 0.03, 0.0)},
  };
  stack.target_id = 1;
  stack.base_id = 2;
  stack.stack_xy_tolerance = 0.01;
  stack.horizon_ticks = 2500;

  m.tasks = {lift, pick, stack};
  return m;
}

json to_json(const SimModel& m) {
  json joints = json::array();
  for (const auto& j : m.arm.joints) {
    joints.push_back({{"offset", offset_json(j.offset)},
                      {"axis", vec_json(j.axis)},
                      {"lower", j.lower},
                      {"upper", j.upper},
                      {"max_speed", j.max_speed}});
  }
  json tasks = json::array();
  for (const auto& t : m.tasks) {
    json objects = json::array();
    for (const auto& o : t.objects) {
      objects.push_back({{"id", o.id},
                         {"name", o.name},
                         {"half_extents", vec_json(o.half_extents)},
                         {"nominal", vec_json(o.nominal)},
                         {"range", vec_json(o.range)}});
    }
    tasks.push_back({{"kind", std::string(to_string(t.kind))},
                     {"objects", objects},
                     {"lift_height", t.lift_height},
                     {"bin", {{"center", vec_json(t.bin.center)},
                              {"half_size", vec_json(t.bin.half_size)}}},
                     {"target_id", t.target_id},
                     {"base_id", t.base_id},
                     {"stack_xy_tolerance", t.stack_xy_tolerance},
                     {"horizon_ticks", t.horizon_ticks}});
  }
  const WorldParams& w = m.world;
  return {{"format", "ds4d-model"},
          {"version", m.version},
          {"name", m.name},
          {"arm", {{"joints", joints}, {"tool", offset_json(m.arm.tool)}, {"home_q", m.arm.home_q}}},
          {"world",
           {{"dt", w.dt},
            {"table_z", w.table_z},
            {"gripper_min", w.gripper_min},
            {"gripper_max", w.gripper_max},
            {"gripper_speed", w.gripper_speed},
            {"grasp_width", w.grasp_width},
            {"release_width", w.release_width},
            {"grasp_radius", w.grasp_radius},
            {"workspace_min", vec_json(w.workspace_min)},
            {"workspace_max", vec_json(w.workspace_max)},
            {"servo_damping", w.servo.damping}}},
          {"tasks", tasks}};
}

SimModel model_from_json(const json& j) {
  try {
    if (j.at("format") != "ds4d-model") throw ModelError("not a ds4d model file");
    SimModel m;
    m.version = j.at("version").get<int>();
    if (m.version != 1) throw ModelError("unsupported model version " + std::to_string(m.version));
    m.name = j.at("name").get<std::string>();
    const json& arm = j.at("arm");
    for (const auto& jj : arm.at("joints")) {
      Joint joint;
      joint.offset = offset_from(jj.at("offset"));
      joint.axis = vec_from(jj.at("axis"));
      joint.lower = jj.at("lower").get<double>();
      joint.upper = jj.at("upper").get<double>();
      joint.max_speed = jj.at("max_speed").get<double>();
      m.arm.joints.push_back(joint);
    }
    m.arm.tool = offset_from(arm.at("tool"));
    m.arm.home_q = arm.at("home_q").get<std::vector<double>>();
    m.arm.validate();

    const json& w = j.at("world");
    m.world.dt = w.at("dt").get<double>();
    m.world.table_z = w.at("table_z").get<double>();
    m.world.gripper_min = w.at("gripper_min").get<double>();
    m.world.gripper_max = w.at("gripper_max").get<double>();
    m.world.gripper_speed = w.at("gripper_speed").get<double>();
    m.world.grasp_width = w.at("grasp_width").get<double>();
    m.world.release_width = w.at("release_width").get<double>();
    m.world.grasp_radius = w.at("grasp_radius").get<double>();
    m.world.workspace_min = vec_from(w.at("workspace_min"));
    m.world.workspace_max = vec_from(w.at("workspace_max"));
    m.world.servo.damping = w.at("servo_damping").get<double>();

    for (const auto& jt : j.at("tasks")) {
      TaskSpec t;
      t.kind = task_from_string(jt.at("kind").get<std::string>());
      for (const auto& jo : jt.at("objects")) {
        ObjectSpec o;
        o.id = jo.at("id").get<std::uint16_t>();
        o.name = jo.at("name").get<std::string>();
        o.half_extents = vec_from(jo.at("half_extents"));
        o.nominal = vec_from(jo.at("nominal"));
        o.range = vec_from(jo.at("range"));
        if ((o.half_extents.array() <= 0.0).any()) {
          throw ModelError("object half extents must be positive");
        }
        t.objects.push_back(o);
      }
      t.lift_height = jt.at("lift_height").get<double>();
      t.bin.center = vec_from(jt.at("bin").at("center"));
      t.bin.half_size = vec_from(jt.at("bin").at("half_size"));
      t.target_id = jt.at("target_id").get<std::uint16_t>();
      t.base_id = jt.at("base_id").get<std::uint16_t>();
      t.stack_xy_tolerance = jt.at("stack_xy_tolerance").get<double>();
      t.horizon_ticks = jt.at("horizon_ticks").get<std::uint64_t>();
      m.tasks.push_back(t);
    }
    return m;
  } catch (const json::exception& e) {
    throw ModelError(std::string("malformed model file: ") + e.what());
  } catch (const GeometryError& e) {
    throw ModelError(std::string("malformed model file: ") + e.what());
  }
}

std::string SimModel::hash() const {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(crc64(to_json(*this).dump())));
  return buf;
}

SimModel load_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ModelError("cannot open model file " + path);
  try {
    return model_from_json(json::parse(in));
  } catch (const json::parse_error& e) {
    throw ModelError("model file " + path + ": " + e.what());
  }
}

void save_model(const SimModel& m, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ModelError("cannot write model file " + path);
  out << to_json(m).dump(2) << '\n';
}

// ---------------------------------------------------------------------------
// Kinematics

namespace {

void check_limits(const ArmModel& arm, const JointVector& q) {
  if (static_cast<std::size_t>(q.size()) != arm.dof()) {
    throw std::invalid_argument("joint vector has " + std::to_string(q.size()) +
                                " entries, arm has " + std::to_string(arm.dof()));
  }
  for (std::size_t i = 0; i < arm.dof(); ++i) {
    const double v = q[static_cast<Eigen::Index>(i)];
    if (!(v >= arm.joints[i].lower && v <= arm.joints[i].upper)) {
      throw JointLimitError(i, v);
    }
  }
}

}  // namespace

Transform forward_kinematics(const ArmModel& arm, const JointVector& q) {
  check_limits(arm, q);
  Transform t;
  for (std::size_t i = 0; i < arm.dof(); ++i) {
    const Joint& j = arm.joints[i];
    t = t * j.offset * Transform::from_rotation(
                           Rotation::from_axis_angle(j.axis, q[static_cast<Eigen::Index>(i)]));
  }
  return t * arm.tool;
}

KinematicsResult kinematics(const ArmModel& arm, const JointVector& q) {
  check_limits(arm, q);
  const auto n = static_cast<Eigen::Index>(arm.dof());
  std::vector<Vec3> axes(arm.dof());
  std::vector<Vec3> origins(arm.dof());
  Transform t;
  for (Eigen::Index i = 0; i < n; ++i) {
    const Joint& j = arm.joints[static_cast<std::size_t>(i)];
    t = t * j.offset;
    axes[static_cast<std::size_t>(i)] = t.rotation().rotate(j.axis);
    origins[static_cast<std::size_t>(i)] = t.translation();
    t = t * Transform::from_rotation(Rotation::from_axis_angle(j.axis, q[i]));
  }
  KinematicsResult out;
  out.ee = t * arm.tool;
  out.jacobian.resize(6, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Vec3& a = axes[static_cast<std::size_t>(i)];
    out.jacobian.block<3, 1>(0, i) = a.cross(out.ee.translation() - origins[static_cast<std::size_t>(i)]);
    out.jacobian.block<3, 1>(3, i) = a;
  }
  return out;
}

Eigen::Matrix<double, 6, 1> pose_error(const Transform& current, const Transform& target) {
  Eigen::Matrix<double, 6, 1> e;
  e.head<3>() = target.translation() - current.translation();
  e.tail<3>() = (target.rotation() * current.rotation().inverse()).log();
  return e;
}

JointVector servo_step(const ArmModel& arm, const JointVector& q, const Transform& target,
                       double dt, const ServoParams& params) {
  const KinematicsResult k = kinematics(arm, q);
  const Eigen::Matrix<double, 6, 1> e = pose_error(k.ee, target);
  if (e.isZero(0.0)) {
    return q;
  }
  const auto& J = k.jacobian;
  Eigen::Matrix<double, 6, 6> A = J * J.transpose();
  A.diagonal().array() += params.damping * params.damping;
  JointVector dq = J.transpose() * A.ldlt().solve(e);

  double scale = 1.0;
  for (Eigen::Index i = 0; i < dq.size(); ++i) {
    const double limit = arm.joints[static_cast<std::size_t>(i)].max_speed * dt;
    scale = std::max(scale, std::abs(dq[i]) / limit);
  }
  if (!dq.allFinite()) {
    return q;
  }
  dq /= scale;

  JointVector next = q + dq;
  for (Eigen::Index i = 0; i < next.size(); ++i) {
    const Joint& j = arm.joints[static_cast<std::size_t>(i)];
    next[i] = std::clamp(next[i], j.lower, j.upper);
  }
  return next;
}

// ---------------------------------------------------------------------------
// World

const SceneObject& World::object(std::uint16_t id) const {
  for (const auto& o : objects) {
    if (o.id == id) return o;
  }
  throw ModelError("world has no object with id " + std::to_string(id));
}

SimState World::snapshot() const {
  SimState s;
  s.q.assign(q.data(), q.data() + q.size());
  s.ee_pose = ee_pose;
  s.objects.reserve(objects.size());
  for (const auto& o : objects) {
    s.objects.push_back({o.id, o.pose});
  }
  s.gripper_width = gripper_width;
  s.task_success = success;
  s.tick = tick;
  return s;
}

World reset(const SimModel& model, const TaskSpec& task, std::uint64_t seed) {
  World w;
  w.model = &model;
  w.task = task;
  w.q = Eigen::Map<const JointVector>(model.arm.home_q.data(),
                                      static_cast<Eigen::Index>(model.arm.home_q.size()));
  w.ee_pose = forward_kinematics(model.arm, w.q);
  w.gripper_width = model.world.gripper_max;
  for (const auto& spec : task.objects) {
    const CounterRng rng(seed, spec.id);
    SceneObject o;
    o.id = spec.id;
    o.half_extents = spec.half_extents;
    const double x = spec.nominal.x() + spec.range.x() * (2.0 * rng.uniform(0) - 1.0);
    const double y = spec.nominal.y() + spec.range.y() * (2.0 * rng.uniform(1) - 1.0);
    o.pose = Transform::from_translation(Vec3(x, y, model.world.table_z + spec.half_extents.z()));
    w.objects.push_back(o);
  }
  w.tick = 0;
  w.success = check_success(task, w);
  return w;
}

double support_height(const World& world, const Vec3& p, std::uint16_t self_id) {
  double h = world.model->world.table_z;
  if (world.task.kind == TaskKind::PickPlace && world.task.bin.contains_xy(p)) {
    h = std::max(h, world.task.bin.center.z());
  }
  for (const auto& o : world.objects) {
    if (o.id == self_id || o.attached) continue;
    const Vec3& c = o.pose.translation();
    if (std::abs(p.x() - c.x()) <= o.half_extents.x() &&
        std::abs(p.y() - c.y()) <= o.half_extents.y()) {
      const double top = c.z() + o.half_extents.z();
      if (top <= p.z() + 1e-9) {
        h = std::max(h, top);
      }
    }
  }
  return h;
}

namespace {

// Object comes to rest upright on the surface below it, keeping its yaw.
void settle(World& world, SceneObject& o) {
  const Vec3 c = o.pose.translation();
  const Mat3 r = o.pose.rotation().matrix();
  const double yaw = std::atan2(r(1, 0), r(0, 0));
  const double floor = support_height(world, c, o.id);
  o.pose = Transform(Rotation::rz(yaw), Vec3(c.x(), c.y(), floor + o.half_extents.z()));
}

void carry(const World& world, SceneObject& o) {
  const Transform slaved = world.ee_pose * o.grasp_offset;
  Vec3 p = slaved.translation();
  p.z() = std::max(p.z(), world.model->world.table_z + o.half_extents.z());
  o.pose = Transform(slaved.rotation(), p);
}

}  // namespace

SimState step_world(World& world, const RobotCommand& cmd, double dt) {
  const SimModel& model = *world.model;
  const WorldParams& wp = model.world;

  world.q = servo_step(model.arm, world.q, cmd.target, dt, wp.servo);
  world.ee_pose = forward_kinematics(model.arm, world.q);

  const double previous_width = world.gripper_width;
  const double goal = std::clamp(cmd.gripper_width, wp.gripper_min, wp.gripper_max);
  const double max_delta = wp.gripper_speed * dt;
  world.gripper_width += std::clamp(goal - previous_width, -max_delta, max_delta);

  SceneObject* held = nullptr;
  for (auto& o : world.objects) {
    if (o.attached) held = &o;
  }
  if (held != nullptr && world.gripper_width > wp.release_width) {
    held->attached = false;
    settle(world, *held);
    held = nullptr;
  }
  if (held != nullptr) {
    carry(world, *held);
  }

  const bool closing = world.gripper_width < previous_width;
  if (held == nullptr && closing && world.gripper_width < wp.grasp_width) {
    SceneObject* nearest = nullptr;
    double best = wp.grasp_radius;
    for (auto& o : world.objects) {
      const double d = (o.pose.translation() - world.ee_pose.translation()).norm();
      if (d <= best) {
        best = d;
        nearest = &o;
      }
    }
    if (nearest != nullptr) {
      nearest->attached = true;
      nearest->grasp_offset = inverse(world.ee_pose) * nearest->pose;
    }
  }

  ++world.tick;
  world.success = check_success(world.task, world);
  return world.snapshot();
}

bool check_success(const TaskSpec& task, const World& world) {
  const double table_z = world.model->world.table_z;
  const SceneObject& target = world.object(task.target_id);
  const Vec3& p = target.pose.translation();
  switch (task.kind) {
    case TaskKind::Lift:
      return target.attached && p.z() >= table_z + task.lift_height;
    case TaskKind::PickPlace:
      return !target.attached && task.bin.contains_xy(p);
    case TaskKind::Stack: {
      if (target.attached) return false;
      const SceneObject& base = world.object(task.base_id);
      const Vec3& b = base.pose.translation();
      const double dxy = std::hypot(p.x() - b.x(), p.y() - b.y());
      const double rest_z = b.z() + base.half_extents.z() + target.half_extents.z();
      return !base.attached && dxy <= task.stack_xy_tolerance && std::abs(p.z() - rest_z) <= 1e-9;
    }
  }
  return false;
}

}  // namespace ds4d::sim
