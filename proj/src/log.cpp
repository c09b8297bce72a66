#include "egocast/log.hpp"

#include <atomic>
#include <mutex>

namespace egocast::log {

namespace {
std::atomic<Level> g_level{Level::Info};
std::mutex g_mutex;
}  // namespace

Level level() { return g_level.load(); }
void set_level(Level lvl) { g_level.store(lvl); }

void write(Level lvl, std::string_view msg) {
    static constexpr std::string_view tags[] = {"debug", "info", "warn", "error", ""};
    std::lock_guard lock(g_mutex);
    std::cerr << '[' << tags[static_cast<int>(lvl)] << "] " << msg << '\n';
}

}  // namespace egocast::log
