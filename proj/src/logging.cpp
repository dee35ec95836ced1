#include "nameprobe/logging.hpp"

#include <iostream>
#include <mutex>

namespace nameprobe {

namespace {

std::mutex& sink_mutex() {
  static std::mutex m;
  return m;
}

LogSink& current_sink() {
  static LogSink sink = [](LogLevel level, std::string_view message) {
    static constexpr const char* kPrefix[] = {"info", "warning", "error"};
    std::cerr << "[nameprobe] " << kPrefix[static_cast<int>(level)] << ": " << message << '\n';
  };
  return sink;
}

}  // namespace

LogSink set_log_sink(LogSink sink) {
  std::lock_guard<std::mutex> lock(sink_mutex());
  LogSink previous = std::move(current_sink());
  current_sink() = std::move(sink);
  return previous;
}

void log(LogLevel level, std::string_view message) {
  std::lock_guard<std::mutex> lock(sink_mutex());
  if (current_sink()) current_sink()(level, message);
}

}  // namespace nameprobe
