#include "gjscc/log.hpp"

#include <iostream>
#include <mutex>

namespace gjscc::log {
namespace {

std::mutex g_mutex;
Sink g_sink;
Level g_min_level = Level::Info;

const char* level_name(Level level) {
  switch (level) {
    case Level::Debug: return "debug";
    case Level::Info: return "info";
    case Level::Warn: return "warn";
    case Level::Error: return "error";
  }
  return "?";
}

}  // namespace

void set_sink(Sink sink) {
  std::lock_guard lock(g_mutex);
  g_sink = std::move(sink);
}

void set_min_level(Level level) {
  std::lock_guard lock(g_mutex);
  g_min_level = level;
}

void write(Level level, std::string_view message) {
  std::lock_guard lock(g_mutex);
  if (level < g_min_level) return;
  if (g_sink) {
    g_sink(level, message);
    return;
  }
  std::cerr << "[" << level_name(level) << "] " << message << '\n';
}

}  // namespace gjscc::log
