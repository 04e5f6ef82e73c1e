#pragma once

namespace dacs {

/// Configures the default spdlog logger from DACS_LOG (debug|info|warn).
/// Safe to call more than once.
void init_logging();

}  // namespace dacs
