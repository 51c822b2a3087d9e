#pragma once

#include <functional>
#include <string_view>

namespace said::log {

/// Warnings go to stderr unless a sink is installed.
void warn(std::string_view message);

/// Replaces the warning sink; an empty function restores stderr.
void set_warning_sink(std::function<void(std::string_view)> sink);

}  // namespace said::log
