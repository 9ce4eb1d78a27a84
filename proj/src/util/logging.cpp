#include <cstdlib>
#include <string>

#include <spdlog/spdlog.h>

#include "synflow/logging.hpp"
#include "synflow/util.hpp"

namespace synflow {

void init_logging() {
  const char* raw = std::getenv("SYNFLOW_LOG");
  const std::string name = raw ? raw : "warn";
  const auto level = spdlog::level::from_str(name);
  if (level == spdlog::level::off && name != "off") throw Error("unknown SYNFLOW_LOG level '" + name + "'");
  spdlog::set_level(level);
  spdlog::set_pattern("[%l] %v");
}

}  // namespace synflow
