#include "dacs/log.hpp"

#include <cstdlib>
#include <string_view>

#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

namespace dacs {

void init_logging() {
    static const bool once = [] {
        auto logger = spdlog::stderr_color_mt("dacs");
        spdlog::set_default_logger(logger);
        spdlog::set_pattern("%H:%M:%S.%e %^%l%$ [%P] %v");
        return true;
    }();
    (void)once;

    const char* env = std::getenv("DACS_LOG");
    std::string_view level = env != nullptr ? env : "info";
    if (level == "debug")
        spdlog::set_level(spdlog::level::debug);
    else if (level == "warn")
        spdlog::set_level(spdlog::level::warn);
    else
        spdlog::set_level(spdlog::level::info);
}

}  // namespace dacs
