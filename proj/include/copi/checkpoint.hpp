#pragma once

#include <string>

#include "copi/optim.hpp"

namespace copi {

/// Parameter container, little-endian throughout:
///
///   magic "COPI1" (5 bytes)
///   u64 parameter count
///   per parameter, in store order:
///     u32 name length, name bytes
///     u32 rank, u64 extent per dimension
///     f64 raw values (row-major)
///   u64 footer = byte length of everything before it
///
/// Loading verifies the magic, every length field, and the footer.
void save_checkpoint(const ParameterStore& params, const std::string& path);

/// Loads into an existing store; names and shapes must match exactly.
void load_checkpoint(ParameterStore& params, const std::string& path);

/// Reads just the parameter names/shapes (for diagnostics).
std::vector<std::pair<std::string, std::vector<int>>> peek_checkpoint(const std::string& path);

}  // namespace copi
