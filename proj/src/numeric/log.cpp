#include "fine/log.hpp"

#include <cstdlib>
#include <iostream>
#include <string>

namespace fine {

LogLevel log_threshold() {
  static const LogLevel level = [] {
    const char* env = std::getenv("FINE_LOG");
    const std::string v = env ? env : "";
    if (v == "error") return LogLevel::error;
    if (v == "debug") return LogLevel::debug;
    return LogLevel::info;
  }();
  return level;
}

void log_line(LogLevel level, std::string_view message) {
  if (static_cast<int>(level) > static_cast<int>(log_threshold())) return;
  static constexpr const char* tags[] = {"error", "info", "debug"};
  std::cerr << "[fine " << tags[static_cast<int>(level)] << "] " << message << '\n';
}

}  // namespace fine
