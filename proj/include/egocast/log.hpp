#pragma once

#include <iostream>
#include <sstream>
#include <string_view>

namespace egocast::log {

enum class Level { Debug, Info, Warn, Error, Off };

Level level();
void set_level(Level lvl);

void write(Level lvl, std::string_view msg);

template <typename... Args>
void info(const Args&... args) {
    if (level() > Level::Info) return;
    std::ostringstream os;
    (os << ... << args);
    write(Level::Info, os.str());
}

template <typename... Args>
void warn(const Args&... args) {
    if (level() > Level::Warn) return;
    std::ostringstream os;
    (os << ... << args);
    write(Level::Warn, os.str());
}

template <typename... Args>
void debug(const Args&... args) {
    if (level() > Level::Debug) return;
    std::ostringstream os;
    (os << ... << args);
    write(Level::Debug, os.str());
}

}  // namespace egocast::log
