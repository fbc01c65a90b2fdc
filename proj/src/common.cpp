#include "dwl/common.hpp"

#include <cstdlib>

namespace dwl {

LogLevel log_level() {
    static LogLevel level = [] {
        const char* env = std::getenv("DWL_LOG");
        if (!env) return LogLevel::warn;
        std::string_view v(env);
        if (v == "debug") return LogLevel::debug;
        if (v == "info") return LogLevel::info;
        if (v == "warn") return LogLevel::warn;
        if (v == "error") return LogLevel::error;
        return LogLevel::warn;
    }();
    return level;
}

void log_message(LogLevel level, const std::string& msg) {
    if (static_cast<int>(level) < static_cast<int>(log_level())) return;
    static const char* names[] = {"debug", "info", "warn", "error"};
    std::fprintf(stderr, "[dwl:%s] %s\n", names[static_cast<int>(level)], msg.c_str());
}

} // namespace dwl
