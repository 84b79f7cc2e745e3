#pragma once

#include <cstdio>
#include <cstdlib>
#include <cstring>

namespace derlab {

enum class LogLevel { Error = 0, Info = 1, Debug = 2 };

// Level comes from DERLAB_LOG={error|info|debug}; default is error.
inline LogLevel log_level() {
    static const LogLevel level = [] {
        const char* env = std::getenv("DERLAB_LOG");
        if (env == nullptr) return LogLevel::Error;
        if (std::strcmp(env, "debug") == 0) return LogLevel::Debug;
        if (std::strcmp(env, "info") == 0) return LogLevel::Info;
        return LogLevel::Error;
    }();
    return level;
}

template <typename... Args>
void log_at(LogLevel lvl, const char* tag, const char* fmt, Args... args) {
    if (static_cast<int>(lvl) > static_cast<int>(log_level())) return;
    std::fprintf(stderr, "[%s] ", tag);
    std::fprintf(stderr, fmt, args...);
    std::fputc('\n', stderr);
}

template <typename... Args>
void log_error(const char* fmt, Args... args) {
    log_at(LogLevel::Error, "error", fmt, args...);
}

template <typename... Args>
void log_info(const char* fmt, Args... args) {
    log_at(LogLevel::Info, "info", fmt, args...);
}

template <typename... Args>
void log_debug(const char* fmt, Args... args) {
    log_at(LogLevel::Debug, "debug", fmt, args...);
}

}  // namespace derlab
