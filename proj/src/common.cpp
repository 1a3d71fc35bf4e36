#include "cmae/common.hpp"

#include <iostream>
#include <mutex>

namespace cmae {

namespace {

std::mutex g_log_mutex;
LogSink g_sink = [](LogLevel level, const std::string& msg) {
    std::cerr << (level == LogLevel::warning ? "[warn] " : "[info] ") << msg << '\n';
};

}  // namespace

void set_log_sink(LogSink sink) {
    std::lock_guard lock(g_log_mutex);
    g_sink = std::move(sink);
}

void log_info(const std::string& msg) {
    std::lock_guard lock(g_log_mutex);
    if (g_sink) g_sink(LogLevel::info, msg);
}

void log_warning(const std::string& msg) {
    std::lock_guard lock(g_log_mutex);
    if (g_sink) g_sink(LogLevel::warning, msg);
}

}  // namespace cmae
