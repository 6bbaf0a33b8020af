#include "routelab/crc32.hpp"

#include <zlib.h>

#include <algorithm>
#include <limits>

namespace routelab {

std::uint32_t crc32(std::span<const std::byte> data) {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  const auto* p = reinterpret_cast<const Bytef*>(data.data());
  std::size_t remaining = data.size();
  while (remaining > 0) {
    const auto chunk = static_cast<uInt>(
        std::min<std::size_t>(remaining, std::numeric_limits<uInt>::max()));
    crc = ::crc32(crc, p, chunk);
    p += chunk;
    remaining -= chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

}  // namespace routelab
