#pragma once

#include <string_view>

namespace fine {

enum class LogLevel { error = 0, info = 1, debug = 2 };

// Threshold from FINE_LOG={error,info,debug}; defaults to info. Read once.
LogLevel log_threshold();

// Plain line to stderr when `level` is at or below the threshold.
void log_line(LogLevel level, std::string_view message);

inline void log_info(std::string_view m) { log_line(LogLevel::info, m); }
inline void log_debug(std::string_view m) { log_line(LogLevel::debug, m); }
inline void log_error(std::string_view m) { log_line(LogLevel::error, m); }

}  // namespace fine
