#pragma once

#include <cstddef>
#include <cstdint>
#include <span>

namespace routelab {

// CRC-32 (IEEE 802.3 polynomial, as used by zlib/PNG/gzip).
std::uint32_t crc32(std::span<const std::byte> data);

}  // namespace routelab
