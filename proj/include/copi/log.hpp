#pragma once

#include <cstdarg>

namespace copi::logging {

enum class Level { error = 0, info = 1, debug = 2 };

/// Verbosity from COPI_LOG (error|info|debug), read once; default info.
Level level();

/// printf-style message to stderr, shown when lvl <= level().
void logf(Level lvl, const char* fmt, ...) __attribute__((format(printf, 2, 3)));

}  // namespace copi::logging

#define COPI_ERROR(...) ::copi::logging::logf(::copi::logging::Level::error, __VA_ARGS__)
#define COPI_INFO(...) ::copi::logging::logf(::copi::logging::Level::info, __VA_ARGS__)
#define COPI_DEBUG(...) ::copi::logging::logf(::copi::logging::Level::debug, __VA_ARGS__)
