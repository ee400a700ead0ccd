#include "ds4d/checksum.hpp"

#include <boost/crc.hpp>

namespace ds4d {

namespace {
using Crc64Xz = boost::crc_optimal<64, 0x42F0E1EBA9EA3693ULL, 0xFFFFFFFFFFFFFFFFULL,
                                   0xFFFFFFFFFFFFFFFFULL, true, true>;
}

std::uint64_t crc64(std::span<const std::byte> data) {
  Crc64Xz crc;
  crc.process_bytes(data.data(), data.size());
  return crc.checksum();
}

std::uint64_t crc64(std::string_view data) {
  Crc64Xz crc;
  crc.process_bytes(data.data(), data.size());
  return crc.checksum();
}

}  // namespace ds4d
