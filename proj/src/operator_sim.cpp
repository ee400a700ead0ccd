#include "ds4d/operator_sim.hpp"

#include "ds4d/bus.hpp"
#include "ds4d/pipeline.hpp"
#include "ds4d/random.hpp"

#include <cmath>

namespace ds4d::operator_sim {

namespace {

// Plan template heights, meters.
constexpr double kApproachHeight = 0.10;  // above the object center before descending
constexpr double kLiftHeight = 0.12;      // Lift: final raise above the grasp point
constexpr double kDropClearance = 0.04;   // bottom face above the support when releasing

constexpr double kApproachSpeed = 0.15;
constexpr double kDescendSpeed = 0.10;
constexpr double kCarrySpeed = 0.12;
constexpr double kApproachGain = 4.0;         // 1/s
constexpr double kArrivalTolerance = 5e-4;    // m
constexpr double kViaRadius = 0.01;           // m in the world
constexpr double kGraspDepth = 0.005;         // m the grasp target sits below the object center
constexpr double kCloseRadius = 0.007;        // m in the world; closing starts while still descending

constexpr double kTremorRatio = 0.1;  // per-tick tremor step relative to the noise sigma

constexpr std::uint32_t kCloseDwell = 36;  // full close at 0.25 m/s takes 32 ticks
constexpr std::uint32_t kOpenDwell = 30;

constexpr double kGripOpen = 1.0;
constexpr double kGripClosed = 0.0;

bool inside(const Vec3& p, const Vec3& lo, const Vec3& hi) {
  return (p.array() >= lo.array()).all() && (p.array() <= hi.array()).all();
}

}  // namespace

OperatorSetup OperatorSetup::defaults(const sim::SimModel& model) {
  OperatorSetup s;
  s.cal = mapping::FrameCalibration::defaults();
  s.cfg = default_mapping_config(model, s.cal);
  return s;
}

mapping::MappingState OperatorSetup::engaged_state(const Transform& robot_pose) const {
  mapping::MappingState st;
  st.phase = mapping::Phase::Engaged;
  st.anchor_master_p = master_origin;
  st.anchor_gripper_p_world = robot_pose.translation();
  return st;
}

Transform OperatorSetup::initial_master(const Transform& robot_pose) const {
  return mapping::master_for_target(engaged_state(robot_pose), cfg, cal, robot_pose);
}

WaypointPlan plan_waypoints(const sim::TaskSpec& task, const SimState& scene,
                            const OperatorSetup& setup, double noise_sigma) {
  const auto find = [&scene](std::uint16_t id) -> const Transform& {
    for (const auto& o : scene.objects) {
      if (o.id == id) return o.pose;
    }
    throw OperatorError(Errc::Unplannable, "scene has no object " + std::to_string(id));
  };
  // World box whose camera image is the mapping workspace, recovered from the
  // camera-frame corners.
  Vec3 wmin = Vec3::Constant(std::numeric_limits<double>::infinity());
  Vec3 wmax = -wmin;
  for (int corner = 0; corner < 8; ++corner) {
    const Vec3& a = setup.cfg.workspace_min;
    const Vec3& b = setup.cfg.workspace_max;
    const Vec3 c((corner & 1) ? b.x() : a.x(), (corner & 2) ? b.y() : a.y(),
                 (corner & 4) ? b.z() : a.z());
    const Vec3 w = apply(setup.cal.w_from_c, c);
    wmin = wmin.cwiseMin(w);
    wmax = wmax.cwiseMax(w);
  }

  const Rotation down = scene.ee_pose.rotation();
  const Vec3 obj = find(task.target_id).translation();
  if (!inside(obj, wmin, wmax)) {
    throw OperatorError(Errc::Unplannable, "object outside the workspace");
  }
  const sim::ObjectSpec& spec = task.object(task.target_id);
  const Vec3 above = obj + Vec3(0, 0, kApproachHeight);

  std::vector<Waypoint> wps;
  const auto add = [&](const Vec3& p, double grip, std::uint32_t dwell, double speed, Jitter j,
                       int group, double pass = 0.0) {
    Waypoint w;
    w.world_target = Transform(down, p);
    w.grip = grip;
    w.dwell_ticks = dwell;
    w.speed = speed;
    w.jitter = j;
    w.jitter_group = group;
    w.pass_radius = pass / setup.cfg.lambda;
    wps.push_back(w);
  };
  add(above, kGripOpen, 0, kApproachSpeed, Jitter::Isotropic, 0, kViaRadius);
  const Vec3 grasp(obj.x(), obj.y(), std::max(obj.z() - kGraspDepth, wmin.z()));
  add(grasp, kGripOpen, 0, kDescendSpeed, Jitter::Horizontal, 1, kCloseRadius);
  add(grasp, kGripClosed, kCloseDwell, kDescendSpeed, Jitter::Horizontal, 1);

  switch (task.kind) {
    case sim::TaskKind::Lift:
      add(obj + Vec3(0, 0, kLiftHeight), kGripClosed, 0, kDescendSpeed, Jitter::Isotropic, 2);
      break;
    case sim::TaskKind::PickPlace: {
      const Vec3 drop(task.bin.center.x(), task.bin.center.y(),
                      task.bin.center.z() + spec.half_extents.z() + kDropClearance);
      add(drop, kGripClosed, 0, kCarrySpeed, Jitter::Isotropic, 2, kViaRadius);
      add(drop, kGripOpen, kOpenDwell, kCarrySpeed, Jitter::Isotropic, 2);
      break;
    }
    case sim::TaskKind::Stack: {
      const Vec3 base = find(task.base_id).translation();
      const double top = base.z() + task.object(task.base_id).half_extents.z();
      const Vec3 drop(base.x(), base.y(), top + spec.half_extents.z() + kDropClearance / 4.0);
      add(drop, kGripClosed, 0, kCarrySpeed, Jitter::Horizontal, 2);
      add(drop, kGripOpen, kOpenDwell, kCarrySpeed, Jitter::Horizontal, 2);
      break;
    }
  }

  const mapping::MappingState engaged = setup.engaged_state(scene.ee_pose);
  for (auto& w : wps) {
    if (!inside(w.world_target.translation(), wmin, wmax)) {
      throw OperatorError(Errc::Unplannable, "waypoint outside the workspace");
    }
    w.master_pose = mapping::master_for_target(engaged, setup.cfg, setup.cal, w.world_target);
  }
  return WaypointPlan{std::move(wps), noise_sigma};
}

ScriptedOperator::ScriptedOperator(WaypointPlan plan, const OperatorSetup& setup,
                                   const Transform& start_pose, double dt, std::uint64_t seed)
    : plan_(std::move(plan)),
      dt_(dt),
      tip_(start_pose),
      seed_(seed),
      world_to_master_(setup.cal.r_from_b.rotation().inverse() * setup.cal.c_from_w.rotation()),
      lambda_(setup.cfg.lambda),
      vertical_(world_to_master_.rotate(Vec3::UnitZ())) {
  if (!(dt > 0.0)) throw std::invalid_argument("dt must be positive");
  // World-frame jitter expressed as a master-frame displacement.
  const Rotation& world_to_master = world_to_master_;
  targets_.reserve(plan_.waypoints.size());
  for (const auto& w : plan_.waypoints) {
    if (!(w.speed > 0.0)) throw std::invalid_argument("waypoint speed must be positive");
    Vec3 d = Vec3::Zero();
    if (plan_.noise_sigma > 0.0 && w.jitter != Jitter::None) {
      const CounterRng rng(seed, 0x4A4954ULL + static_cast<std::uint64_t>(w.jitter_group));
      d = plan_.noise_sigma * Vec3(rng.normal(0), rng.normal(1), rng.normal(2));
      if (w.jitter == Jitter::Horizontal) d.z() = 0.0;
    }
    const Vec3 offset = world_to_master.rotate(d) / setup.cfg.lambda;
    targets_.emplace_back(w.master_pose.rotation(), w.master_pose.translation() + offset);
  }
  if (!plan_.waypoints.empty()) grip_ = plan_.waypoints.front().grip;
}

Vec3 ScriptedOperator::approach(const Vec3& d, double speed) const {
  const double dist = d.norm();
  const double step = std::min(speed, kApproachGain * dist) * dt_;
  if (dist <= std::max(step, kArrivalTolerance)) return d;
  return d * (step / dist);
}

Vec3 ScriptedOperator::tremor_step() const {
  if (!(plan_.noise_sigma > 0.0)) return Vec3::Zero();
  const CounterRng rng(seed_, 0x54524DULL);
  const std::uint64_t k = 3 * ticks_;
  const Vec3 d = kTremorRatio * plan_.noise_sigma * Vec3(rng.normal(k), rng.normal(k + 1), rng.normal(k + 2));
  return world_to_master_.rotate(d) / lambda_;
}

MasterState ScriptedOperator::next() {
  MasterState m;
  m.stamp_ns = static_cast<std::uint64_t>(std::llround(static_cast<double>(ticks_) * dt_ * 1e9));
  if (ticks_++ == 0) {
    m.tip_pose = tip_;
    m.grip = grip_;
    m.pedals = pedal::kStartStop;
    return m;
  }
  if (!finished()) {
    const Waypoint& wp = plan_.waypoints[index_];
    const Transform& target = targets_[index_];
    grip_ = wp.grip;
    // Horizontal and vertical errors are closed independently, each with a
    // proportional approach capped at the waypoint speed and finished exactly
    // within the arrival tolerance.
    const Vec3 d = target.translation() - tip_.translation();
    const Vec3 dv = vertical_.dot(d) * vertical_;
    const Vec3 p = tip_.translation() + approach(d - dv, wp.speed) + approach(dv, wp.speed);
    const Rotation r = rotate_toward(tip_.rotation(), target.rotation(), 0.05);
    tip_ = Transform(r, wp.dwell_ticks == 0 ? Vec3(p + tremor_step()) : p);
    // Holds are timed from the start of the waypoint; moves end on arrival or
    // on entering the pass radius.
    bool done = false;
    if (wp.dwell_ticks > 0) {
      done = ++dwell_ >= wp.dwell_ticks;
    } else if (wp.pass_radius > 0.0) {
      done = (target.translation() - tip_.translation()).norm() <= wp.pass_radius;
    } else {
      done = p == target.translation() && angle_between(r, target.rotation()) < 1e-12;
    }
    if (done) {
      ++index_;
      dwell_ = 0;
    }
  }
  m.tip_pose = tip_;
  m.grip = grip_;
  return m;
}

std::uint64_t collection_seed(std::uint64_t base, std::uint64_t episode) {
  return CounterRng(base, 0x434F4CULL).bits(episode) & ~(1ULL << 63);
}

std::string_view to_string(Termination t) {
  return t == Termination::Success ? "success" : "timeout";
}

EpisodeResult run_episode(const sim::SimModel& model, sim::TaskKind task, std::uint64_t seed,
                          double noise_sigma) {
  EpisodeOptions opt;
  opt.setup = OperatorSetup::defaults(model);
  return run_episode(model, task, seed, noise_sigma, opt);
}

EpisodeResult run_episode(const sim::SimModel& model, sim::TaskKind task, std::uint64_t seed,
                          double noise_sigma, const EpisodeOptions& options) {
  bus::Bus bus;
  recorder::Recorder rec(bus.subscribe(topic::kRecordStep));
  Pipeline pipe(bus, model, task, options.setup.cfg, options.setup.cal);
  pipe.reset(seed);
  rec.start(task, options.operator_id, seed);

  const sim::World& world = pipe.world();
  const WaypointPlan plan = plan_waypoints(pipe.task(), world.snapshot(), options.setup, noise_sigma);
  ScriptedOperator op(plan, options.setup, options.setup.initial_master(world.ee_pose),
                      model.world.dt, seed);

  EpisodeResult out;
  for (std::uint64_t t = 0; t < options.max_ticks; ++t) {
    const MasterState m = op.next();
    bus.publish(topic::kMasterState, m);
    const auto r = pipe.tick(m.stamp_ns);
    rec.drain();
    if (r.success) {
      out.termination = Termination::Success;
      break;
    }
  }
  out.final_state = world.snapshot();
  out.demo = rec.finish(out.termination == Termination::Success, model.world.dt,
                        out.final_state.objects);
  return out;
}

ReplayResult replay(const sim::SimModel& model, const recorder::Demonstration& demo) {
  sim::World world = sim::reset(model, model.task(demo.task), demo.seed);
  Transform previous = world.ee_pose;
  const auto limits = recorder::ActionLimits::from(model.world);
  for (const auto& s : demo.steps) {
    execute_action(world, previous, s.action, limits);
  }
  ReplayResult out;
  out.final_state = world.snapshot();
  out.success = world.success;
  out.final_objects = out.final_state.objects;
  out.matches = out.success == demo.success && out.final_objects == demo.final_objects;
  return out;
}

}  // namespace ds4d::operator_sim
