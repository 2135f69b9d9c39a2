#pragma once

#include <string>
#include <vector>

#include "copi/puzzle.hpp"

namespace copi {

/// Dataset container, little-endian:
///
///   magic "RPMD1" (5 bytes)
///   u32 version (1), u64 instance count
///   u16 panel height, u16 panel width, u8 attribute count, u8 rule count
///   per instance:
///     u64 seed, u8 rule id per attribute, u8 answer index
///     16 panels (8 context then 8 candidates), each
///       u8 number/shape/size/shade, then height*width raw 8-bit pixels
///     u32 CRC32 of the instance bytes above
///
/// A sidecar text file at <path>.txt lists one line per instance
/// (seed, rule spec, answer index) for human inspection.
void write_dataset(const std::vector<ProblemInstance>& instances, const std::string& path);

/// Round-trips write_dataset exactly, including seeds and rule specs.
/// Corruption or truncation fails with the byte offset.
std::vector<ProblemInstance> read_dataset(const std::string& path);

uint32_t crc32(const uint8_t* data, size_t len, uint32_t seed = 0);

}  // namespace copi
