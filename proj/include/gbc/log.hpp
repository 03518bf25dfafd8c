#pragma once

#include <string_view>

namespace gbc::log {

enum class Level { Debug = 0, Info = 1, Warn = 2, Error = 3, Off = 4 };

/// Process-wide threshold; messages below it are dropped. Thread-safe.
void set_level(Level level);
Level level();

void write(Level level, std::string_view message);
inline void warn(std::string_view message) { write(Level::Warn, message); }
inline void info(std::string_view message) { write(Level::Info, message); }

}  // namespace gbc::log
