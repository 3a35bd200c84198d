#pragma once

#include <memory>

#include <spdlog/spdlog.h>

namespace pixforge {

// Shared stderr logger for library events (rejected steps, aborted epochs).
std::shared_ptr<spdlog::logger> logger();

}  // namespace pixforge
