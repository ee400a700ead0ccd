#pragma once

#include "ds4d/bus.hpp"
#include "ds4d/geometry.hpp"
#include "ds4d/messages.hpp"
#include "ds4d/sim.hpp"

#include <json.hpp>

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace ds4d::recorder {

enum class Errc { Finalized, InvalidDemo, BadVersion, DimMismatch, CorruptFile, ModelMismatch, Empty, Io };

std::string_view to_string(Errc e);

class RecorderError : public std::runtime_error {
public:
  RecorderError(Errc code, const std::string& what) : std::runtime_error(what), code_(code) {}
  Errc code() const { return code_; }

private:
  Errc code_;
};

inline constexpr std::uint32_t kFormatVersion = 1;
inline constexpr std::size_t kActionDim = 7;
inline constexpr const char* kActionConvention =
    "delta: target_t = clamp(target_{t-1} + clamp_norm(a[0:3], max_translation)), "
    "R_t = exp(a[3:6]) * R_{t-1}, width_t = clamp(a[6]); target_{-1} = EE pose at reset";

// ---------------------------------------------------------------------------
// Observations and actions

/// EE pose 7, gripper width 1, then per object: pose 7 and object-minus-EE position 3.
std::size_t obs_dim(const sim::TaskSpec& task);
std::vector<double> observation(const sim::World& world);

struct ActionLimits {
  double max_translation = 0.02;  // m per step
  Vec3 workspace_min = Vec3::Constant(-1.0);
  Vec3 workspace_max = Vec3::Constant(1.0);
  double gripper_min = 0.0;
  double gripper_max = 0.08;

  static ActionLimits from(const sim::WorldParams& wp);
};

/// Delta from the previously executed target to `cmd`.
std::vector<double> encode_action(const Transform& previous_target, const RobotCommand& cmd);

/// Integrates one action onto the previously executed target. Throws DimMismatch.
RobotCommand apply_action(const Transform& previous_target, std::span<const double> action,
                          const ActionLimits& limits, std::uint64_t stamp_ns = 0);

// ---------------------------------------------------------------------------
// Demonstrations and datasets

struct Step {
  std::vector<double> obs;
  std::vector<double> action;
  std::uint64_t tick = 0;

  bool operator==(const Step&) const = default;
};

struct Demonstration {
  sim::TaskKind task = sim::TaskKind::Lift;
  std::string operator_id;
  std::vector<Step> steps;
  double duration_s = 0.0;
  bool success = false;
  std::uint64_t seed = 0;
  std::vector<ObjectPose> final_objects;  // as stored after the last step
  bool finalized = false;

  /// Tick defaults to the step index.
  void append_step(std::vector<double> obs, std::vector<double> action);
  void append_step(std::vector<double> obs, std::vector<double> action, std::uint64_t tick);
  void finalize(bool success, double dt, std::vector<ObjectPose> final_objects = {});

  bool operator==(const Demonstration&) const = default;
};

struct DatasetHeader {
  std::uint32_t format_version = kFormatVersion;
  sim::TaskKind task = sim::TaskKind::Lift;
  double dt = 0.01;
  std::size_t obs_dim = 0;
  std::size_t action_dim = kActionDim;
  std::string model_hash;
  std::string action_convention = kActionConvention;

  bool operator==(const DatasetHeader&) const = default;
};

struct Dataset {
  DatasetHeader header;
  std::vector<Demonstration> demos;

  bool operator==(const Dataset&) const = default;
};

/// Header filled from the model and task.
DatasetHeader make_header(const sim::SimModel& model, sim::TaskKind task);

std::vector<std::byte> serialize(const Dataset& d);
Dataset deserialize(std::span<const std::byte> bytes);
void save(const Dataset& d, const std::string& path);
Dataset load(const std::string& path);

/// Throws ModelMismatch when the dataset was generated by a different model.
void check_model(const Dataset& d, const sim::SimModel& model);

/// floor(f * N) demos without replacement, kept in original relative order.
/// f == 1 returns the dataset unchanged.
Dataset subset(const Dataset& d, double fraction, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Statistics and report

struct Stats {
  double mean = 0.0;
  double std = 0.0;  // n-1 denominator
  std::size_t count = 0;
  bool degenerate = false;  // fewer than two samples; std reported as 0
};

/// Summation runs over the sorted values, so the result does not depend on input order.
Stats stats(std::span<const double> values);

std::vector<double> durations(const Dataset& d, bool successful_only = false);

struct ReportRow {
  std::string label;
  Stats stats;
  bool reference = false;
};

/// Completion-time reference from the original dVRK study (Lift task).
ReportRow reference_row();

std::string format_table(const std::vector<ReportRow>& rows);
nlohmann::json report_json(const std::vector<ReportRow>& rows);

// ---------------------------------------------------------------------------
// Bus consumer

/// Drains the bounded record/step topic into an open demonstration. Runs on
/// the consumer's own task; overflow surfaces as bus::BusError(Overflow).
class Recorder {
public:
  explicit Recorder(bus::Subscription sub);

  void start(sim::TaskKind task, std::string operator_id, std::uint64_t seed);
  /// Moves every queued step into the open demo; returns how many were taken.
  std::size_t drain();
  Demonstration finish(bool success, double dt, std::vector<ObjectPose> final_objects);

  const Demonstration& current() const { return demo_; }

private:
  bus::Subscription sub_;
  Demonstration demo_;
  bool open_ = false;
};

}  // namespace ds4d::recorder
