#include "copi/log.hpp"

#include <cstdio>
#include <cstdlib>
#include <cstring>

namespace copi::logging {

Level level() {
    static const Level lvl = [] {
        const char* env = std::getenv("COPI_LOG");
        if (env == nullptr) return Level::info;
        if (std::strcmp(env, "error") == 0) return Level::error;
        if (std::strcmp(env, "debug") == 0) return Level::debug;
        return Level::info;
    }();
    return lvl;
}

void logf(Level lvl, const char* fmt, ...) {
    if (lvl > level()) return;
    const char* tag = lvl == Level::error ? "error" : (lvl == Level::info ? "info" : "debug");
    std::fprintf(stderr, "[%s] ", tag);
    va_list args;
    va_start(args, fmt);
    std::vfprintf(stderr, fmt, args);
    va_end(args);
    std::fputc('\n', stderr);
}

}  // namespace copi::logging
