#pragma once

#include "ds4d/messages.hpp"

#include <json.hpp>

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace ds4d::codec {

// Envelope layout (little-endian):
//   0  u8[2] magic 'D' 'S'
//   2  u8    version (1)
//   3  u8    msg_type
//   4  u64   seq
//   12 u64   timestamp_ns
//   20 u32   payload_len
//   24 ...   payload
inline constexpr std::uint8_t kMagic0 = 0x44;
inline constexpr std::uint8_t kMagic1 = 0x53;
inline constexpr std::uint8_t kVersion = 1;
inline constexpr std::size_t kHeaderSize = 24;
inline constexpr std::size_t kPoseSize = 7 * 8;
/// Upper bound accepted by decoders; guards stream readers against bogus lengths.
inline constexpr std::uint32_t kMaxPayload = 1u << 20;

enum class Errc {
  BadMagic,
  BadVersion,
  BadLength,
  UnknownType,
  TrailingBytes,
  InvalidField,
};

std::string_view to_string(Errc e);

class CodecError : public std::runtime_error {
public:
  CodecError(Errc code, const std::string& what);
  Errc code() const { return code_; }

private:
  Errc code_;
};

using Bytes = std::vector<std::byte>;

struct Frame {
  std::uint64_t seq = 0;
  std::uint64_t timestamp_ns = 0;
  Message message;

  bool operator==(const Frame&) const = default;
};

Bytes encode_payload(const Message& m);
Message decode_payload(MsgType type, std::span<const std::byte> payload);

Bytes encode_frame(const Frame& f);
/// Decodes exactly one frame; the span must hold the frame and nothing else.
Frame decode_frame(std::span<const std::byte> bytes);

/// For stream readers: given at least kHeaderSize bytes, returns the full frame
/// length. Validates magic, version and the payload bound.
std::size_t frame_length(std::span<const std::byte> header);

// Text variant used over WebSocket: one JSON object per frame with the same
// fields as the binary envelope, payload expanded field by field.
nlohmann::json to_json(const Frame& f);
Frame from_json(const nlohmann::json& j);

}  // namespace ds4d::codec
