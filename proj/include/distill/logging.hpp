#pragma once

#include "distill/json.hpp"

#include <functional>
#include <string_view>

namespace distill {

enum class LogLevel { debug, info, warn, error };

using LogSink = std::function<void(const std::string& line)>;

// Structured logging: every record is one JSON object per line with at least
// {"level", "event"}. Default sink discards debug and writes the rest to stderr.
void set_log_sink(LogSink sink);
void set_min_log_level(LogLevel level);
void log_event(LogLevel level, std::string_view event, json fields = json::object());

}  // namespace distill
