#include "distill/logging.hpp"

#include <iostream>
#include <mutex>

namespace distill {

namespace {

std::mutex& sink_mutex() {
    static std::mutex m;
    return m;
}

LogSink& sink() {
    static LogSink s = [](const std::string& line) { std::cerr << line << '\n'; };
    return s;
}

LogLevel& min_level() {
    static LogLevel level = LogLevel::info;
    return level;
}

std::string_view level_name(LogLevel level) {
    switch (level) {
        case LogLevel::debug: return "debug";
        case LogLevel::info: return "info";
        case LogLevel::warn: return "warn";
        case LogLevel::error: return "error";
    }
    return "info";
}

}  // namespace

void set_log_sink(LogSink s) {
    std::lock_guard lock(sink_mutex());
    sink() = std::move(s);
}

void set_min_log_level(LogLevel level) {
    std::lock_guard lock(sink_mutex());
    min_level() = level;
}

void log_event(LogLevel level, std::string_view event, json fields) {
    std::lock_guard lock(sink_mutex());
    if (level < min_level() || !sink()) {
        return;
    }
    json line;
    line["level"] = level_name(level);
    line["event"] = event;
    if (fields.is_object()) {
        for (auto& [k, v] : fields.items()) {
            line[k] = v;
        }
    }
    sink()(line.dump());
}

}  // namespace distill
