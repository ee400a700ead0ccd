#include "ds4d/codec.hpp"

#include <bit>
#include <cmath>
#include <cstring>

namespace ds4d {

MsgType type_of(const Message& m) {
  return std::visit(
      [](const auto& v) -> MsgType {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, MasterState>) {
          return MsgType::MasterState;
        } else if constexpr (std::is_same_v<T, RobotCommand>) {
          return MsgType::RobotCommand;
        } else if constexpr (std::is_same_v<T, SimState>) {
          return MsgType::SimState;
        } else {
          return MsgType::RecordStep;
        }
      },
      m);
}

std::string_view type_name(MsgType t) {
  switch (t) {
    case MsgType::MasterState: return "master_state";
    case MsgType::RobotCommand: return "robot_command";
    case MsgType::SimState: return "sim_state";
    case MsgType::RecordStep: return "record_step";
  }
  return "unknown";
}

std::string_view default_topic(MsgType t) {
  switch (t) {
    case MsgType::MasterState: return topic::kMasterState;
    case MsgType::RobotCommand: return topic::kRobotCommand;
    case MsgType::SimState: return topic::kSimState;
    case MsgType::RecordStep: return topic::kRecordStep;
  }
  return {};
}

}  // namespace ds4d

namespace ds4d::codec {

std::string_view to_string(Errc e) {
  switch (e) {
    case Errc::BadMagic: return "BadMagic";
    case Errc::BadVersion: return "BadVersion";
    case Errc::BadLength: return "BadLength";
    case Errc::UnknownType: return "UnknownType";
    case Errc::TrailingBytes: return "TrailingBytes";
    case Errc::InvalidField: return "InvalidField";
  }
  return "?";
}

CodecError::CodecError(Errc code, const std::string& what)
    : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

namespace {

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

class Writer {
public:
  explicit Writer(Bytes& out) : out_(out) {}

  void u8(std::uint8_t v) { out_.push_back(static_cast<std::byte>(v)); }
  void u16(std::uint16_t v) { put_le(v, 2); }
  void u32(std::uint32_t v) { put_le(v, 4); }
  void u64(std::uint64_t v) { put_le(v, 8); }
  void f64(double v) { put_le(std::bit_cast<std::uint64_t>(v), 8); }
  void pose(const Transform& t) {
    for (double v : to_array(t)) {
      f64(v);
    }
  }

private:
  void put_le(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) {
      out_.push_back(static_cast<std::byte>((v >> (8 * i)) & 0xFFu));
    }
  }

  Bytes& out_;
};

class Reader {
public:
  explicit Reader(std::span<const std::byte> in) : in_(in) {}

  std::uint8_t u8() { return static_cast<std::uint8_t>(get_le(1)); }
  std::uint16_t u16() { return static_cast<std::uint16_t>(get_le(2)); }
  std::uint32_t u32() { return static_cast<std::uint32_t>(get_le(4)); }
  std::uint64_t u64() { return get_le(8); }
  double f64() { return std::bit_cast<double>(get_le(8)); }

  double finite_f64(const char* field) {
    const double v = f64();
    if (!std::isfinite(v)) {
      throw CodecError(Errc::InvalidField, std::string(field) + " is not finite");
    }
    return v;
  }

  Transform pose(const char* field) {
    std::array<double, 7> a{};
    for (double& v : a) {
      v = f64();
    }
    try {
      return from_array(a);
    } catch (const GeometryError& e) {
      throw CodecError(Errc::InvalidField, std::string(field) + ": " + e.what());
    }
  }

  std::size_t remaining() const { return in_.size() - pos_; }

private:
  std::uint64_t get_le(std::size_t n) {
    if (remaining() < n) {
      throw CodecError(Errc::BadLength, "payload shorter than its layout");
    }
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < n; ++i) {
      v |= static_cast<std::uint64_t>(in_[pos_ + i]) << (8 * i);
    }
    pos_ += n;
    return v;
  }

  std::span<const std::byte> in_;
  std::size_t pos_ = 0;
};

void check_count(std::size_t n, const char* what) {
  if (n > 255) {
    throw CodecError(Errc::InvalidField, std::string(what) + " count exceeds 255");
  }
}

void check_grip(double grip) {
  if (!(grip >= 0.0 && grip <= 1.0)) {
    throw CodecError(Errc::InvalidField, "grip outside [0, 1]");
  }
}

void check_width(double width) {
  if (!(std::isfinite(width) && width >= 0.0)) {
    throw CodecError(Errc::InvalidField, "gripper width must be finite and non-negative");
  }
}

}  // namespace

Bytes encode_payload(const Message& m) {
  Bytes out;
  Writer w(out);
  std::visit(
      [&](const auto& v) {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, MasterState>) {
          check_grip(v.grip);
          out.reserve(kPoseSize + 17);
          w.pose(v.tip_pose);
          w.f64(v.grip);
          w.u8(v.pedals);
          w.u64(v.stamp_ns);
        } else if constexpr (std::is_same_v<T, RobotCommand>) {
          check_width(v.gripper_width);
          w.pose(v.target);
          w.f64(v.gripper_width);
          w.u64(v.stamp_ns);
        } else if constexpr (std::is_same_v<T, SimState>) {
          check_count(v.q.size(), "joint");
          check_count(v.objects.size(), "object");
          check_width(v.gripper_width);
          w.u8(static_cast<std::uint8_t>(v.q.size()));
          for (double qi : v.q) {
            w.f64(qi);
          }
          w.pose(v.ee_pose);
          w.u8(static_cast<std::uint8_t>(v.objects.size()));
          for (const auto& o : v.objects) {
            w.u16(o.id);
            w.pose(o.pose);
          }
          w.f64(v.gripper_width);
          w.u8(v.task_success ? 1 : 0);
          w.u64(v.tick);
        } else {
          // RecordStep: u16 obs_dim, obs, u16 act_dim, action, u64 tick
          if (v.obs.size() > 0xFFFF || v.action.size() > 0xFFFF) {
            throw CodecError(Errc::InvalidField, "record step dimension exceeds u16");
          }
          w.u16(static_cast<std::uint16_t>(v.obs.size()));
          for (double x : v.obs) {
            w.f64(x);
          }
          w.u16(static_cast<std::uint16_t>(v.action.size()));
          for (double x : v.action) {
            w.f64(x);
          }
          w.u64(v.tick);
        }
      },
      m);
  return out;
}

Message decode_payload(MsgType type, std::span<const std::byte> payload) {
  Reader r(payload);
  Message out;
  switch (type) {
    case MsgType::MasterState: {
      MasterState s;
      s.tip_pose = r.pose("tip_pose");
      s.grip = r.f64();
      check_grip(s.grip);
      s.pedals = r.u8();
      s.stamp_ns = r.u64();
      out = s;
      break;
    }
    case MsgType::RobotCommand: {
      RobotCommand c;
      c.target = r.pose("target");
      c.gripper_width = r.f64();
      check_width(c.gripper_width);
      c.stamp_ns = r.u64();
      out = c;
      break;
    }
    case MsgType::SimState: {
      SimState s;
      const std::size_t n = r.u8();
      s.q.resize(n);
      for (double& qi : s.q) {
        qi = r.finite_f64("q");
      }
      s.ee_pose = r.pose("ee_pose");
      const std::size_t count = r.u8();
      s.objects.resize(count);
      for (auto& o : s.objects) {
        o.id = r.u16();
        o.pose = r.pose("object pose");
      }
      s.gripper_width = r.f64();
      check_width(s.gripper_width);
      const std::uint8_t success = r.u8();
      if (success > 1) {
        throw CodecError(Errc::InvalidField, "task_success must be 0 or 1");
      }
      s.task_success = success == 1;
      s.tick = r.u64();
      out = std::move(s);
      break;
    }
    case MsgType::RecordStep: {
      RecordStep s;
      s.obs.resize(r.u16());
      for (double& x : s.obs) {
        x = r.finite_f64("obs");
      }
      s.action.resize(r.u16());
      for (double& x : s.action) {
        x = r.finite_f64("action");
      }
      s.tick = r.u64();
      out = std::move(s);
      break;
    }
    default:
      throw CodecError(Errc::UnknownType, "msg_type " + std::to_string(static_cast<int>(type)));
  }
  if (r.remaining() != 0) {
    throw CodecError(Errc::TrailingBytes, "payload longer than its layout");
  }
  return out;
}

Bytes encode_frame(const Frame& f) {
  const Bytes payload = encode_payload(f.message);
  Bytes out;
  out.reserve(kHeaderSize + payload.size());
  Writer w(out);
  w.u8(kMagic0);
  w.u8(kMagic1);
  w.u8(kVersion);
  w.u8(static_cast<std::uint8_t>(type_of(f.message)));
  w.u64(f.seq);
  w.u64(f.timestamp_ns);
  w.u32(static_cast<std::uint32_t>(payload.size()));
  out.insert(out.end(), payload.begin(), payload.end());
  return out;
}

namespace {

struct Header {
  std::uint8_t type;
  std::uint64_t seq;
  std::uint64_t timestamp_ns;
  std::uint32_t payload_len;
};

Header read_header(std::span<const std::byte> bytes) {
  if (bytes.size() < kHeaderSize) {
    throw CodecError(Errc::BadLength, "frame shorter than envelope header");
  }
  if (static_cast<std::uint8_t>(bytes[0]) != kMagic0 ||
      static_cast<std::uint8_t>(bytes[1]) != kMagic1) {
    throw CodecError(Errc::BadMagic, "expected 'DS'");
  }
  if (static_cast<std::uint8_t>(bytes[2]) != kVersion) {
    throw CodecError(Errc::BadVersion,
                     "unsupported version " + std::to_string(static_cast<int>(bytes[2])));
  }
  Reader r(bytes.subspan(3, kHeaderSize - 3));
  Header h{};
  h.type = r.u8();
  h.seq = r.u64();
  h.timestamp_ns = r.u64();
  h.payload_len = r.u32();
  if (h.payload_len > kMaxPayload) {
    throw CodecError(Errc::BadLength, "payload_len exceeds limit");
  }
  return h;
}

bool known_type(std::uint8_t t) { return t >= 1 && t <= 4; }

}  // namespace

std::size_t frame_length(std::span<const std::byte> header) {
  const Header h = read_header(header);
  if (!known_type(h.type)) {
    throw CodecError(Errc::UnknownType, "msg_type " + std::to_string(h.type));
  }
  return kHeaderSize + h.payload_len;
}

Frame decode_frame(std::span<const std::byte> bytes) {
  const Header h = read_header(bytes);
  if (!known_type(h.type)) {
    throw CodecError(Errc::UnknownType, "msg_type " + std::to_string(h.type));
  }
  const std::size_t available = bytes.size() - kHeaderSize;
  if (available < h.payload_len) {
    throw CodecError(Errc::BadLength, "frame truncated: payload_len " +
                                          std::to_string(h.payload_len) + ", have " +
                                          std::to_string(available));
  }
  if (available > h.payload_len) {
    throw CodecError(Errc::TrailingBytes, "bytes after payload");
  }
  Frame f;
  f.seq = h.seq;
  f.timestamp_ns = h.timestamp_ns;
  f.message = decode_payload(static_cast<MsgType>(h.type), bytes.subspan(kHeaderSize));
  return f;
}

// ---------------------------------------------------------------------------
// JSON variant

namespace {

using nlohmann::json;

json pose_json(const Transform& t) {
  const auto a = to_array(t);
  return json::array({a[0], a[1], a[2], a[3], a[4], a[5], a[6]});
}

const json& field(const json& j, const char* name) {
  if (!j.is_object() || !j.contains(name)) {
    throw CodecError(Errc::InvalidField, std::string("missing field '") + name + "'");
  }
  return j.at(name);
}

double number(const json& j, const char* name) {
  const json& v = field(j, name);
  if (!v.is_number()) {
    throw CodecError(Errc::InvalidField, std::string(name) + " must be a number");
  }
  return v.get<double>();
}

std::uint64_t unsigned_number(const json& j, const char* name) {
  const json& v = field(j, name);
  if (v.is_number_unsigned()) {
    return v.get<std::uint64_t>();
  }
  if (v.is_number_integer() && v.get<std::int64_t>() >= 0) {
    return static_cast<std::uint64_t>(v.get<std::int64_t>());
  }
  throw CodecError(Errc::InvalidField, std::string(name) + " must be an unsigned integer");
}

Transform pose_from(const json& j, const char* name) {
  const json& v = field(j, name);
  if (!v.is_array() || v.size() != 7) {
    throw CodecError(Errc::InvalidField, std::string(name) + " must be an array of 7 numbers");
  }
  std::array<double, 7> a{};
  for (std::size_t i = 0; i < 7; ++i) {
    if (!v[i].is_number()) {
      throw CodecError(Errc::InvalidField, std::string(name) + " must be numeric");
    }
    a[i] = v[i].get<double>();
  }
  try {
    return from_array(a);
  } catch (const GeometryError& e) {
    throw CodecError(Errc::InvalidField, std::string(name) + ": " + e.what());
  }
}

std::vector<double> vector_from(const json& j, const char* name) {
  const json& v = field(j, name);
  if (!v.is_array()) {
    throw CodecError(Errc::InvalidField, std::string(name) + " must be an array");
  }
  std::vector<double> out;
  out.reserve(v.size());
  for (const auto& x : v) {
    if (!x.is_number()) {
      throw CodecError(Errc::InvalidField, std::string(name) + " must be numeric");
    }
    out.push_back(x.get<double>());
  }
  return out;
}

json payload_json(const Message& m) {
  return std::visit(
      [](const auto& v) -> json {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, MasterState>) {
          return {{"tip_pose", pose_json(v.tip_pose)},
                  {"grip", v.grip},
                  {"pedals", v.pedals},
                  {"stamp_ns", v.stamp_ns}};
        } else if constexpr (std::is_same_v<T, RobotCommand>) {
          return {{"target", pose_json(v.target)},
                  {"gripper_width", v.gripper_width},
                  {"stamp_ns", v.stamp_ns}};
        } else if constexpr (std::is_same_v<T, SimState>) {
          json objects = json::array();
          for (const auto& o : v.objects) {
            objects.push_back({{"id", o.id}, {"pose", pose_json(o.pose)}});
          }
          return {{"q", v.q},
                  {"ee_pose", pose_json(v.ee_pose)},
                  {"objects", objects},
                  {"gripper_width", v.gripper_width},
                  {"task_success", v.task_success},
                  {"tick", v.tick}};
        } else {
          return {{"obs", v.obs}, {"action", v.action}, {"tick", v.tick}};
        }
      },
      m);
}

}  // namespace

nlohmann::json to_json(const Frame& f) {
  const MsgType t = type_of(f.message);
  return {{"magic", "DS"},
          {"version", kVersion},
          {"msg_type", static_cast<int>(t)},
          {"topic", std::string(default_topic(t))},
          {"seq", f.seq},
          {"timestamp_ns", f.timestamp_ns},
          {"payload", payload_json(f.message)}};
}

Frame from_json(const nlohmann::json& j) {
  if (!j.is_object()) {
    throw CodecError(Errc::InvalidField, "frame must be a JSON object");
  }
  if (!j.contains("magic") || j.at("magic") != "DS") {
    throw CodecError(Errc::BadMagic, "expected magic \"DS\"");
  }
  if (unsigned_number(j, "version") != kVersion) {
    throw CodecError(Errc::BadVersion, "unsupported version");
  }
  const std::uint64_t type = unsigned_number(j, "msg_type");
  if (type < 1 || type > 4) {
    throw CodecError(Errc::UnknownType, "msg_type " + std::to_string(type));
  }
  Frame f;
  f.seq = unsigned_number(j, "seq");
  f.timestamp_ns = unsigned_number(j, "timestamp_ns");
  const json& p = field(j, "payload");
  switch (static_cast<MsgType>(type)) {
    case MsgType::MasterState: {
      MasterState s;
      s.tip_pose = pose_from(p, "tip_pose");
      s.grip = number(p, "grip");
      check_grip(s.grip);
      const std::uint64_t pedals = unsigned_number(p, "pedals");
      if (pedals > 0xFF) {
        throw CodecError(Errc::InvalidField, "pedals must fit in u8");
      }
      s.pedals = static_cast<std::uint8_t>(pedals);
      s.stamp_ns = unsigned_number(p, "stamp_ns");
      f.message = s;
      break;
    }
    case MsgType::RobotCommand: {
      RobotCommand c;
      c.target = pose_from(p, "target");
      c.gripper_width = number(p, "gripper_width");
      check_width(c.gripper_width);
      c.stamp_ns = unsigned_number(p, "stamp_ns");
      f.message = c;
      break;
    }
    case MsgType::SimState: {
      SimState s;
      s.q = vector_from(p, "q");
      check_count(s.q.size(), "joint");
      s.ee_pose = pose_from(p, "ee_pose");
      const json& objects = field(p, "objects");
      if (!objects.is_array()) {
        throw CodecError(Errc::InvalidField, "objects must be an array");
      }
      check_count(objects.size(), "object");
      for (const auto& o : objects) {
        const std::uint64_t id = unsigned_number(o, "id");
        if (id > 0xFFFF) {
          throw CodecError(Errc::InvalidField, "object id must fit in u16");
        }
        s.objects.push_back({static_cast<std::uint16_t>(id), pose_from(o, "pose")});
      }
      s.gripper_width = number(p, "gripper_width");
      check_width(s.gripper_width);
      const json& success = field(p, "task_success");
      if (!success.is_boolean()) {
        throw CodecError(Errc::InvalidField, "task_success must be boolean");
      }
      s.task_success = success.get<bool>();
      s.tick = unsigned_number(p, "tick");
      f.message = std::move(s);
      break;
    }
    case MsgType::RecordStep: {
      RecordStep s;
      s.obs = vector_from(p, "obs");
      s.action = vector_from(p, "action");
      s.tick = unsigned_number(p, "tick");
      f.message = std::move(s);
      break;
    }
  }
  return f;
}

}  // namespace ds4d::codec
