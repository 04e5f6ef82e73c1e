#pragma once

#include <signal.h>
#include <unistd.h>

#include <cstdlib>
#include <string>

namespace dacs::tools {

/// Call first thing in main, before any thread exists, so that SIGINT and
/// SIGTERM stay pending for wait_for_shutdown().
inline void block_shutdown_signals() {
    sigset_t set;
    sigemptyset(&set);
    sigaddset(&set, SIGINT);
    sigaddset(&set, SIGTERM);
    pthread_sigmask(SIG_BLOCK, &set, nullptr);
    signal(SIGPIPE, SIG_IGN);
}

inline int wait_for_shutdown() {
    sigset_t set;
    sigemptyset(&set);
    sigaddset(&set, SIGINT);
    sigaddset(&set, SIGTERM);
    int sig = 0;
    sigwait(&set, &sig);
    return sig;
}

inline std::string default_agent_socket() {
    if (const char* env = std::getenv("DACS_AGENT_SOCKET")) return env;
    return "/tmp/dacs-agent-" + std::to_string(getuid()) + ".sock";
}

}  // namespace dacs::tools
