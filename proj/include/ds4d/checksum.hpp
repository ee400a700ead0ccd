#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>

namespace ds4d {

/// CRC-64/XZ (ECMA-182 polynomial, reflected, init and xorout all ones).
/// Check value for "123456789" is 0x995DC9BBDF1939FA.
std::uint64_t crc64(std::span<const std::byte> data);
std::uint64_t crc64(std::string_view data);

}  // namespace ds4d
