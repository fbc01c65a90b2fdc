#ifndef DWL_COMMON_HPP
#define DWL_COMMON_HPP

#include <cstdint>
#include <cstdio>
#include <stdexcept>
#include <string>
#include <string_view>

namespace dwl {

// ---------------------------------------------------------------------------
// Error taxonomy. Everything user-facing derives from Error so the CLI can
// map categories to exit codes.
// ---------------------------------------------------------------------------

class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Operand shapes are not conformable for the requested operation.
class ShapeError : public Error {
public:
    explicit ShapeError(const std::string& msg) : Error(msg) {}
};

/// A computation produced NaN/Inf, or gradients required by an update
/// are missing or non-finite.
class NumericError : public Error {
public:
    explicit NumericError(const std::string& msg) : Error(msg) {}
};

/// Training left the stable regime (loss above the guard threshold or
/// non-finite). Carries the sub-step name in the message.
class DivergenceError : public NumericError {
public:
    explicit DivergenceError(const std::string& msg) : NumericError(msg) {}
};

/// Malformed external file (IDX, checkpoint, config, grid).
class FormatError : public Error {
public:
    explicit FormatError(const std::string& msg) : Error(msg) {}
};

/// Invalid experiment configuration.
class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& msg) : Error(msg) {}
};

// ---------------------------------------------------------------------------
// Seed derivation. Independent deterministic streams per purpose so that
// ablations can vary one factor at a time.
// ---------------------------------------------------------------------------

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Derives an independent stream seed from a base seed and a purpose tag.
inline std::uint64_t derive_seed(std::uint64_t base, std::string_view tag) {
    std::uint64_t h = 0xcbf29ce484222325ULL; // FNV-1a
    for (char c : tag) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ULL;
    }
    return splitmix64(base ^ h);
}

// ---------------------------------------------------------------------------
// Formatting helpers. %.17g round-trips IEEE doubles exactly, which the
// deterministic-output contracts rely on.
// ---------------------------------------------------------------------------

inline std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

// ---------------------------------------------------------------------------
// Logging: stderr only, level from DWL_LOG (debug|info|warn|error).
// ---------------------------------------------------------------------------

enum class LogLevel : int { debug = 0, info = 1, warn = 2, error = 3 };

LogLevel log_level();
void log_message(LogLevel level, const std::string& msg);

inline void log_debug(const std::string& msg) { log_message(LogLevel::debug, msg); }
inline void log_info(const std::string& msg) { log_message(LogLevel::info, msg); }
inline void log_warn(const std::string& msg) { log_message(LogLevel::warn, msg); }
inline void log_error(const std::string& msg) { log_message(LogLevel::error, msg); }

} // namespace dwl

#endif
