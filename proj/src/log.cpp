#include "pixforge/log.hpp"

#include <spdlog/sinks/stdout_color_sinks.h>

namespace pixforge {

std::shared_ptr<spdlog::logger> logger() {
  static std::shared_ptr<spdlog::logger> instance = [] {
    auto existing = spdlog::get("pixforge");
    if (existing) return existing;
    auto l = spdlog::stderr_color_mt("pixforge");
    l->set_pattern("[%l] %v");
    return l;
  }();
  return instance;
}

}  // namespace pixforge
