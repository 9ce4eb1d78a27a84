// Process-wide log level from the SYNFLOW_LOG environment variable.
#pragma once

namespace synflow {

/// Reads SYNFLOW_LOG (trace, debug, info, warn, error, off; default warn)
/// and applies it to the default logger. Throws Error on unknown values.
void init_logging();

}  // namespace synflow
