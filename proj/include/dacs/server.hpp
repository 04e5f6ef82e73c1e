#pragma once

#include <condition_variable>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "dacs/net.hpp"
#include "dacs/repository.hpp"
#include "dacs/wire.hpp"

namespace dacs {

struct Session {
    std::string user;
    std::string client_ip;
    std::uint64_t delivered_version = 0;
    std::uint64_t acked_version = 0;
};

struct PushReport {
    std::size_t sent = 0;
    std::size_t failed = 0;
};

/// The repository file could not be reloaded; the old one stays active.
class ReloadError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Delivers IdentityNotices to the web tier on one worker thread, in the
/// order they were queued. Delivery failures are logged and dropped.
class IdentityNotifier {
public:
    explicit IdentityNotifier(std::optional<net::Endpoint> target);
    ~IdentityNotifier();

    void post(wire::IdentityNotice notice);
    /// Blocks until every queued notice has been attempted.
    void wait_idle();
    std::size_t delivered() const;

private:
    void run();

    std::optional<net::Endpoint> target_;
    mutable std::mutex mu_;
    std::condition_variable cv_;
    std::deque<wire::IdentityNotice> queue_;
    bool busy_ = false;
    bool stopping_ = false;
    std::size_t delivered_ = 0;
    std::thread worker_;
};

/// The policy server. Holds the active repository, composes each login's
/// rule set, redistributes on admin push, and notifies the web tier of who
/// is logged in where.
class DacsServer {
public:
    DacsServer(std::filesystem::path repo_path, std::optional<net::Endpoint> web_identity);
    ~DacsServer();

    /// Composes the rule set for a login with a fresh version, records the
    /// session for `client_ip` (replacing any previous one) and queues an
    /// IdentityNotice.
    RuleSet handle_login(const std::string& user, const std::string& client_ip);

    /// Reloads the repository file and sends a full replacement rule set to
    /// every connected session. Throws ReloadError without sending anything
    /// if the file is bad.
    PushReport admin_push();

    std::shared_ptr<const Repository> repository() const;
    std::vector<Session> sessions() const;
    std::optional<Session> session(const std::string& client_ip) const;
    IdentityNotifier& notifier() { return notifier_; }

    /// Starts the agent listener and the admin control listener.
    void start(const net::Endpoint& listen, const net::Endpoint& control);
    void stop();
    int agent_port() const;
    int control_port() const;

private:
    struct Channel {
        net::Socket* sock = nullptr;
        std::mutex write_mu;
        std::atomic<bool> open{true};
    };
    struct Entry {
        Session session;
        std::shared_ptr<Channel> channel;
    };

    RuleSet login_locked(const std::string& user, const std::string& client_ip,
                         const std::shared_ptr<Channel>& channel);
    void serve_agent(net::Socket& sock);
    void serve_control(net::Socket& sock);

    std::filesystem::path repo_path_;
    mutable std::mutex repo_mu_;
    std::shared_ptr<const Repository> repo_;
    std::mutex push_mu_;

    mutable std::mutex sessions_mu_;
    std::map<std::string, Entry> sessions_;
    std::atomic<std::uint64_t> version_counter_{0};

    IdentityNotifier notifier_;
    std::unique_ptr<net::TcpService> agents_;
    std::unique_ptr<net::TcpService> control_;
};

/// Admin side of the control socket: asks a running server to push. Returns
/// the number of agents notified; throws ReloadError when the server
/// rejected the repository file.
std::size_t request_push(const net::Endpoint& control);

}  // namespace dacs
