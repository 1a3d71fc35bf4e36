#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <random>
#include <stdexcept>
#include <string>

namespace cmae {

/// Invalid or inconsistent configuration. The CLI maps this to exit code 1.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Failure while running (I/O, numerics, corrupt state). Exit code 2.
class RuntimeFailure : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

using Rng = std::mt19937_64;

/// splitmix64 finaliser.
constexpr std::uint64_t mix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Generator whose stream is a pure function of the key sequence. All
/// augmentation and masking randomness is drawn through this so results do
/// not depend on call order or worker count.
inline Rng keyed_rng(std::initializer_list<std::uint64_t> keys) {
    std::uint64_t h = 0x6a09e667f3bcc908ULL;
    for (auto k : keys) h = mix64(h ^ mix64(k));
    return Rng(h);
}

// Stream tags for keyed_rng.
enum class Stream : std::uint64_t {
    init = 1,
    shuffle = 2,
    view = 3,
    mask = 4,
    probe = 5,
};

enum class LogLevel { info, warning };

/// Process-wide log sink; defaults to stderr. Tests replace it to observe
/// warnings.
using LogSink = std::function<void(LogLevel, const std::string&)>;
void set_log_sink(LogSink sink);
void log_info(const std::string& msg);
void log_warning(const std::string& msg);

}  // namespace cmae
