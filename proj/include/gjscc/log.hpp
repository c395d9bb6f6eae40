#pragma once

#include <functional>
#include <sstream>
#include <string>
#include <string_view>

namespace gjscc::log {

enum class Level { Debug, Info, Warn, Error };

using Sink = std::function<void(Level, std::string_view)>;

/// Replaces the process-wide sink. Passing an empty function restores stderr.
void set_sink(Sink sink);
void set_min_level(Level level);
void write(Level level, std::string_view message);

template <typename... Args>
std::string concat(const Args&... args) {
  std::ostringstream os;
  (os << ... << args);
  return os.str();
}

template <typename... Args>
void info(const Args&... args) {
  write(Level::Info, concat(args...));
}

template <typename... Args>
void warn(const Args&... args) {
  write(Level::Warn, concat(args...));
}

template <typename... Args>
void error(const Args&... args) {
  write(Level::Error, concat(args...));
}

}  // namespace gjscc::log
