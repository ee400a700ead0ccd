#include "ds4d/recorder.hpp"

#include "ds4d/checksum.hpp"
#include "ds4d/random.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <numeric>

namespace ds4d::recorder {

using nlohmann::json;

std::string_view to_string(Errc e) {
  switch (e) {
    case Errc::Finalized: return "Finalized";
    case Errc::InvalidDemo: return "InvalidDemo";
    case Errc::BadVersion: return "BadVersion";
    case Errc::DimMismatch: return "DimMismatch";
    case Errc::CorruptFile: return "CorruptFile";
    case Errc::ModelMismatch: return "ModelMismatch";
    case Errc::Empty: return "Empty";
    case Errc::Io: return "Io";
  }
  return "?";
}

namespace {

[[noreturn]] void fail(Errc code, const std::string& what) {
  throw RecorderError(code, std::string(to_string(code)) + ": " + what);
}

}  // namespace

// ---------------------------------------------------------------------------
// Observations and actions

std::size_t obs_dim(const sim::TaskSpec& task) { return 8 + 10 * task.objects.size(); }

std::vector<double> observation(const sim::World& world) {
  std::vector<double> obs;
  obs.reserve(8 + 10 * world.objects.size());
  // Raw quaternion coefficients; no sign canonicalization, so the signal
  // stays continuous along a trajectory.
  const auto push_pose = [&obs](const Transform& t) {
    for (double c : t.rotation().coeffs()) obs.push_back(c);
    for (int i = 0; i < 3; ++i) obs.push_back(t.translation()[i]);
  };
  push_pose(world.ee_pose);
  obs.push_back(world.gripper_width);
  for (const auto& o : world.objects) {
    push_pose(o.pose);
    const Vec3 rel = o.pose.translation() - world.ee_pose.translation();
    obs.insert(obs.end(), rel.data(), rel.data() + 3);
  }
  return obs;
}

ActionLimits ActionLimits::from(const sim::WorldParams& wp) {
  ActionLimits l;
  l.workspace_min = wp.workspace_min;
  l.workspace_max = wp.workspace_max;
  l.gripper_min = wp.gripper_min;
  l.gripper_max = wp.gripper_max;
  return l;
}

std::vector<double> encode_action(const Transform& previous_target, const RobotCommand& cmd) {
  const Vec3 dp = cmd.target.translation() - previous_target.translation();
  const Vec3 dr = (cmd.target.rotation() * previous_target.rotation().inverse()).log();
  return {dp.x(), dp.y(), dp.z(), dr.x(), dr.y(), dr.z(), cmd.gripper_width};
}

RobotCommand apply_action(const Transform& previous_target, std::span<const double> action,
                          const ActionLimits& limits, std::uint64_t stamp_ns) {
  if (action.size() != kActionDim) {
    fail(Errc::DimMismatch, "action has " + std::to_string(action.size()) + " entries, expected " +
                                std::to_string(kActionDim));
  }
  for (double a : action) {
    if (!std::isfinite(a)) fail(Errc::DimMismatch, "action contains a non-finite entry");
  }
  Vec3 dp(action[0], action[1], action[2]);
  const double n = dp.norm();
  if (n > limits.max_translation) {
    dp *= limits.max_translation / n;
  }
  const Vec3 p = (previous_target.translation() + dp)
                     .cwiseMax(limits.workspace_min)
                     .cwiseMin(limits.workspace_max);
  const Rotation r = Rotation::exp(Vec3(action[3], action[4], action[5])) * previous_target.rotation();
  const double width = std::clamp(action[6], limits.gripper_min, limits.gripper_max);
  return RobotCommand{Transform(r, p), width, stamp_ns};
}

// ---------------------------------------------------------------------------
// Demonstration

void Demonstration::append_step(std::vector<double> obs, std::vector<double> action) {
  append_step(std::move(obs), std::move(action), steps.size());
}

void Demonstration::append_step(std::vector<double> obs, std::vector<double> action,
                                std::uint64_t tick) {
  if (finalized) fail(Errc::Finalized, "append_step after finalize");
  if (!steps.empty()) {
    if (tick <= steps.back().tick) fail(Errc::InvalidDemo, "ticks must increase");
    if (obs.size() != steps.front().obs.size() || action.size() != steps.front().action.size()) {
      fail(Errc::DimMismatch, "step dimensions differ within a demonstration");
    }
  }
  const auto finite = [](const std::vector<double>& v) {
    return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
  };
  if (!finite(obs) || !finite(action)) fail(Errc::InvalidDemo, "step contains non-finite values");
  steps.push_back(Step{std::move(obs), std::move(action), tick});
}

void Demonstration::finalize(bool ok, double dt, std::vector<ObjectPose> objects) {
  if (finalized) fail(Errc::Finalized, "finalize called twice");
  if (ok && steps.empty()) fail(Errc::InvalidDemo, "a successful demonstration needs steps");
  success = ok;
  duration_s = static_cast<double>(steps.size()) * dt;
  final_objects = std::move(objects);
  finalized = true;
}

// ---------------------------------------------------------------------------
// File format

DatasetHeader make_header(const sim::SimModel& model, sim::TaskKind task) {
  DatasetHeader h;
  h.task = task;
  h.dt = model.world.dt;
  h.obs_dim = obs_dim(model.task(task));
  h.model_hash = model.hash();
  return h;
}

namespace {

constexpr char kMagic[4] = {'D', 'S', '4', 'D'};
constexpr std::size_t kMaxHeader = 1u << 20;

class Writer {
public:
  explicit Writer(std::vector<std::byte>& out) : out_(out) {}
  void raw(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::byte*>(p);
    out_.insert(out_.end(), b, b + n);
  }
  void u8(std::uint8_t v) { le(v, 1); }
  void u16(std::uint16_t v) { le(v, 2); }
  void u32(std::uint32_t v) { le(v, 4); }
  void u64(std::uint64_t v) { le(v, 8); }
  void f64(double v) { le(std::bit_cast<std::uint64_t>(v), 8); }
  // Stored coefficient-for-coefficient so loaded poses compare bit-equal.
  void pose(const Transform& t) {
    for (double c : t.rotation().coeffs()) f64(c);
    for (int i = 0; i < 3; ++i) f64(t.translation()[i]);
  }
  std::size_t size() const { return out_.size(); }
  void patch_u64(std::size_t at, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out_[at + i] = static_cast<std::byte>((v >> (8 * i)) & 0xFFu);
  }

private:
  void le(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) out_.push_back(static_cast<std::byte>((v >> (8 * i)) & 0xFFu));
  }
  std::vector<std::byte>& out_;
};

class Reader {
public:
  explicit Reader(std::span<const std::byte> in) : in_(in) {}
  std::span<const std::byte> take(std::size_t n) {
    if (n > in_.size() - pos_) fail(Errc::CorruptFile, "unexpected end of data");
    auto s = in_.subspan(pos_, n);
    pos_ += n;
    return s;
  }
  std::uint8_t u8() { return static_cast<std::uint8_t>(le(1)); }
  std::uint16_t u16() { return static_cast<std::uint16_t>(le(2)); }
  std::uint32_t u32() { return static_cast<std::uint32_t>(le(4)); }
  std::uint64_t u64() { return le(8); }
  double f64() { return std::bit_cast<double>(le(8)); }
  Transform pose() {
    const double w = f64(), x = f64(), y = f64(), z = f64();
    const double px = f64(), py = f64(), pz = f64();
    try {
      return Transform(Rotation::from_unit_coeffs(w, x, y, z), Vec3(px, py, pz));
    } catch (const GeometryError& e) {
      fail(Errc::CorruptFile, std::string("bad pose: ") + e.what());
    }
  }
  std::size_t remaining() const { return in_.size() - pos_; }

private:
  std::uint64_t le(int n) {
    const auto s = take(static_cast<std::size_t>(n));
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(s[i]) << (8 * i);
    return v;
  }
  std::span<const std::byte> in_;
  std::size_t pos_ = 0;
};

json header_json(const DatasetHeader& h, std::size_t demo_count) {
  return {{"format_version", h.format_version},
          {"task", std::string(sim::to_string(h.task))},
          {"dt", h.dt},
          {"obs_dim", h.obs_dim},
          {"action_dim", h.action_dim},
          {"arm_model_hash", h.model_hash},
          {"action_convention", h.action_convention},
          {"demo_count", demo_count}};
}

void check_dims(const DatasetHeader& h, const Demonstration& d, std::size_t index) {
  for (const auto& s : d.steps) {
    if (s.obs.size() != h.obs_dim || s.action.size() != h.action_dim) {
      fail(Errc::DimMismatch, "demo " + std::to_string(index) + " step dims (" +
                                  std::to_string(s.obs.size()) + ", " +
                                  std::to_string(s.action.size()) + ") differ from header");
    }
  }
}

}  // namespace

std::vector<std::byte> serialize(const Dataset& d) {
  std::vector<std::byte> out;
  Writer w(out);
  w.raw(kMagic, 4);
  w.u32(d.header.format_version);
  const std::string header = header_json(d.header, d.demos.size()).dump();
  w.u32(static_cast<std::uint32_t>(header.size()));
  w.raw(header.data(), header.size());
  for (std::size_t i = 0; i < d.demos.size(); ++i) {
    const Demonstration& demo = d.demos[i];
    if (demo.task != d.header.task) fail(Errc::DimMismatch, "demo task differs from header");
    check_dims(d.header, demo, i);
    const std::size_t len_at = w.size();
    w.u64(0);
    const std::size_t start = w.size();
    w.u16(static_cast<std::uint16_t>(demo.operator_id.size()));
    w.raw(demo.operator_id.data(), demo.operator_id.size());
    w.u64(demo.seed);
    w.u8(demo.success ? 1 : 0);
    w.f64(demo.duration_s);
    w.u32(static_cast<std::uint32_t>(demo.steps.size()));
    for (const auto& s : demo.steps) {
      w.u64(s.tick);
      for (double v : s.obs) w.f64(v);
      for (double v : s.action) w.f64(v);
    }
    w.u16(static_cast<std::uint16_t>(demo.final_objects.size()));
    for (const auto& o : demo.final_objects) {
      w.u16(o.id);
      w.pose(o.pose);
    }
    w.patch_u64(len_at, w.size() - start);
  }
  w.u64(crc64(std::span<const std::byte>(out)));
  return out;
}

Dataset deserialize(std::span<const std::byte> bytes) {
  if (bytes.size() < 4 + 4 + 4 + 8 ||
      !std::equal(kMagic, kMagic + 4, reinterpret_cast<const char*>(bytes.data()))) {
    fail(Errc::CorruptFile, "not a dataset file");
  }
  Reader r(bytes);
  r.take(4);
  const std::uint32_t version = r.u32();
  if (version != kFormatVersion) {
    fail(Errc::BadVersion, "format version " + std::to_string(version) + ", expected " +
                               std::to_string(kFormatVersion));
  }
  const auto body = bytes.first(bytes.size() - 8);
  Reader tail(bytes.last(8));
  if (crc64(body) != tail.u64()) fail(Errc::CorruptFile, "checksum mismatch");

  Reader br(body);
  br.take(8);
  const std::uint32_t header_len = br.u32();
  if (header_len > kMaxHeader) fail(Errc::CorruptFile, "header too large");
  const auto hb = br.take(header_len);
  Dataset d;
  std::size_t demo_count = 0;
  try {
    const json h = json::parse(reinterpret_cast<const char*>(hb.data()),
                               reinterpret_cast<const char*>(hb.data()) + hb.size());
    d.header.format_version = h.at("format_version").get<std::uint32_t>();
    d.header.task = sim::task_from_string(h.at("task").get<std::string>());
    d.header.dt = h.at("dt").get<double>();
    d.header.obs_dim = h.at("obs_dim").get<std::size_t>();
    d.header.action_dim = h.at("action_dim").get<std::size_t>();
    d.header.model_hash = h.at("arm_model_hash").get<std::string>();
    d.header.action_convention = h.at("action_convention").get<std::string>();
    demo_count = h.at("demo_count").get<std::size_t>();
  } catch (const json::exception& e) {
    fail(Errc::CorruptFile, std::string("header: ") + e.what());
  } catch (const std::invalid_argument& e) {
    fail(Errc::CorruptFile, std::string("header: ") + e.what());
  }
  if (d.header.format_version != version) fail(Errc::BadVersion, "header version disagrees");
  if (d.header.action_dim != kActionDim) {
    fail(Errc::DimMismatch, "action_dim " + std::to_string(d.header.action_dim));
  }

  for (std::size_t i = 0; i < demo_count; ++i) {
    const std::uint64_t len = br.u64();
    if (len > br.remaining()) fail(Errc::CorruptFile, "demo block overruns file");
    Reader dr(br.take(static_cast<std::size_t>(len)));
    Demonstration demo;
    demo.task = d.header.task;
    const auto id = dr.take(dr.u16());
    demo.operator_id.assign(reinterpret_cast<const char*>(id.data()), id.size());
    demo.seed = dr.u64();
    const std::uint8_t ok = dr.u8();
    if (ok > 1) fail(Errc::CorruptFile, "success flag");
    demo.success = ok == 1;
    demo.duration_s = dr.f64();
    const std::uint32_t n = dr.u32();
    const std::size_t step_bytes = 8 * (1 + d.header.obs_dim + d.header.action_dim);
    if (static_cast<std::uint64_t>(n) * step_bytes > dr.remaining()) {
      fail(Errc::DimMismatch, "step block size does not match header dims");
    }
    demo.steps.resize(n);
    for (auto& s : demo.steps) {
      s.tick = dr.u64();
      s.obs.resize(d.header.obs_dim);
      for (double& v : s.obs) v = dr.f64();
      s.action.resize(d.header.action_dim);
      for (double& v : s.action) v = dr.f64();
    }
    demo.final_objects.resize(dr.u16());
    for (auto& o : demo.final_objects) {
      o.id = dr.u16();
      o.pose = dr.pose();
    }
    if (dr.remaining() != 0) fail(Errc::DimMismatch, "demo block has trailing bytes");
    demo.finalized = true;
    d.demos.push_back(std::move(demo));
  }
  if (br.remaining() != 0) fail(Errc::CorruptFile, "trailing bytes after last demo");
  return d;
}

void save(const Dataset& d, const std::string& path) {
  const auto bytes = serialize(d);
  const std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) fail(Errc::Io, "cannot write " + path);
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!f) fail(Errc::Io, "write failed for " + path);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) fail(Errc::Io, "cannot rename to " + path);
}

Dataset load(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) fail(Errc::Io, "cannot open " + path);
  const std::vector<char> raw((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return deserialize(std::as_bytes(std::span<const char>(raw)));
}

void check_model(const Dataset& d, const sim::SimModel& model) {
  const std::string h = model.hash();
  if (d.header.model_hash != h) {
    fail(Errc::ModelMismatch, "dataset model " + d.header.model_hash + ", simulator model " + h);
  }
  if (d.header.obs_dim != obs_dim(model.task(d.header.task))) {
    fail(Errc::DimMismatch, "observation size differs from the model's task");
  }
}

Dataset subset(const Dataset& d, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0)) {
    throw std::invalid_argument("subset fraction must be in (0, 1]");
  }
  if (fraction == 1.0) return d;
  const std::size_t total = d.demos.size();
  const auto keep = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(total) + 1e-9));
  std::vector<std::size_t> idx(total);
  std::iota(idx.begin(), idx.end(), 0);
  const CounterRng rng(seed, 0x53554253ULL);
  for (std::size_t i = 0; i < keep; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.bits(i) % (total - i));
    std::swap(idx[i], idx[j]);
  }
  idx.resize(keep);
  std::sort(idx.begin(), idx.end());
  Dataset out;
  out.header = d.header;
  out.demos.reserve(keep);
  for (std::size_t i : idx) out.demos.push_back(d.demos[i]);
  return out;
}

// ---------------------------------------------------------------------------
// Statistics

Stats stats(std::span<const double> values) {
  if (values.empty()) fail(Errc::Empty, "stats of an empty list");
  std::vector<double> v(values.begin(), values.end());
  std::sort(v.begin(), v.end());
  Stats s;
  s.count = v.size();
  double sum = 0.0;
  for (double x : v) sum += x;
  s.mean = sum / static_cast<double>(s.count);
  if (s.count < 2) {
    s.degenerate = true;
    return s;
  }
  double ss = 0.0;
  for (double x : v) ss += (x - s.mean) * (x - s.mean);
  s.std = std::sqrt(ss / static_cast<double>(s.count - 1));
  return s;
}

std::vector<double> durations(const Dataset& d, bool successful_only) {
  std::vector<double> out;
  for (const auto& demo : d.demos) {
    if (!successful_only || demo.success) out.push_back(demo.duration_s);
  }
  return out;
}

ReportRow reference_row() {
  ReportRow r;
  r.label = "dVRK Master (reference)";
  r.stats = Stats{3.54, 1.28, 238, false};
  r.reference = true;
  return r;
}

std::string format_table(const std::vector<ReportRow>& rows) {
  std::size_t label_w = 8;
  for (const auto& r : rows) label_w = std::max(label_w, r.label.size());
  std::string out;
  char line[256];
  std::snprintf(line, sizeof line, "%-*s  %8s  %22s  %18s\n", static_cast<int>(label_w), "Operator",
                "Mean (s)", "Standard Deviation (s)", "No. Demonstrations");
  out += line;
  out += std::string(label_w + 2 + 8 + 2 + 22 + 2 + 18, '-') + "\n";
  for (const auto& r : rows) {
    std::snprintf(line, sizeof line, "%-*s  %8.2f  %22.2f  %18zu%s\n", static_cast<int>(label_w),
                  r.label.c_str(), r.stats.mean, r.stats.std, r.stats.count,
                  r.stats.degenerate ? "  (std undefined, n=1)" : "");
    out += line;
  }
  return out;
}

json report_json(const std::vector<ReportRow>& rows) {
  json arr = json::array();
  for (const auto& r : rows) {
    arr.push_back({{"label", r.label},
                   {"mean_s", r.stats.mean},
                   {"std_s", r.stats.std},
                   {"count", r.stats.count},
                   {"degenerate", r.stats.degenerate},
                   {"reference", r.reference}});
  }
  return {{"columns", {"Mean", "Standard Deviation", "No. Demonstrations"}}, {"rows", arr}};
}

// ---------------------------------------------------------------------------
// Recorder

Recorder::Recorder(bus::Subscription sub) : sub_(std::move(sub)) {}

void Recorder::start(sim::TaskKind task, std::string operator_id, std::uint64_t seed) {
  demo_ = Demonstration{};
  demo_.task = task;
  demo_.operator_id = std::move(operator_id);
  demo_.seed = seed;
  open_ = true;
  // Steps left over from an aborted episode do not belong to this one.
  while (sub_.pending() > 0) sub_.poll_latest();
}

std::size_t Recorder::drain() {
  std::size_t n = 0;
  while (auto r = sub_.poll_latest()) {
    if (!open_) continue;
    const auto& step = r->as<RecordStep>();
    demo_.append_step(step.obs, step.action, step.tick);
    ++n;
  }
  return n;
}

Demonstration Recorder::finish(bool success, double dt, std::vector<ObjectPose> final_objects) {
  drain();
  if (!open_) fail(Errc::Finalized, "no open demonstration");
  demo_.finalize(success, dt, std::move(final_objects));
  open_ = false;
  return std::move(demo_);
}

}  // namespace ds4d::recorder
