#pragma once

#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <string>

namespace dsqn {

enum class LogLevel { Error = 0, Info = 1, Debug = 2 };

// Level comes from DSQN_LOG (error|info|debug), read once; defaults to info.
// All diagnostics go to stderr so stdout stays machine-readable.
inline LogLevel log_level() {
  static const LogLevel level = [] {
    const char* env = std::getenv("DSQN_LOG");
    if (env == nullptr) return LogLevel::Info;
    if (std::strcmp(env, "error") == 0) return LogLevel::Error;
    if (std::strcmp(env, "debug") == 0) return LogLevel::Debug;
    return LogLevel::Info;
  }();
  return level;
}

inline void log_at(LogLevel lvl, const std::string& msg) {
  if (static_cast<int>(lvl) > static_cast<int>(log_level())) return;
  const char* tag = lvl == LogLevel::Error ? "error" : (lvl == LogLevel::Info ? "info" : "debug");
  std::fprintf(stderr, "[%s] %s\n", tag, msg.c_str());
}

inline void log_error(const std::string& msg) { log_at(LogLevel::Error, msg); }
inline void log_info(const std::string& msg) { log_at(LogLevel::Info, msg); }
inline void log_debug(const std::string& msg) { log_at(LogLevel::Debug, msg); }

}  // namespace dsqn
