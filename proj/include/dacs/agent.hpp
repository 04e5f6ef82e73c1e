#pragma once

#include <chrono>
#include <condition_variable>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "dacs/net.hpp"
#include "dacs/rules.hpp"

namespace dacs {

/// The policy said no. No connection attempt of any kind was made.
class BlockedError : public std::runtime_error {
public:
    explicit BlockedError(const Destination& dst)
        : std::runtime_error("blocked by policy: " + to_string(dst)) {}
};

class InstallError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A redirector listener could not be bound; the previous rules stay active.
class PortExhausted : public InstallError {
public:
    using InstallError::InstallError;
};

struct AgentConfig {
    std::string client_ip;
    /// Prefix every outgoing stream with "DACS1 <client_ip>\n".
    bool preamble = false;
    /// Hosts that get a loopback redirector for their rewrite rules. Unset
    /// means every concrete (non-wildcard) host.
    std::optional<std::set<std::string>> intercept_hosts;
    std::string redirect_bind_ip = "127.0.0.1";
};

struct VirtualDial {
    Destination requested;
    Decision decision;
    std::optional<Destination> effective;  // empty when blocked
    std::uint64_t version = 0;             // snapshot the decision came from
};

struct RedirectorInfo {
    MatchKey key;
    net::Endpoint listen;
};

/// The client-side enforcement point. Holds the installed rule snapshot,
/// applies it when connections are opened, and keeps the server session
/// that delivers new rule sets.
class Agent {
public:
    explicit Agent(AgentConfig config);
    ~Agent();
    Agent(const Agent&) = delete;
    Agent& operator=(const Agent&) = delete;

    /// Swaps in `rs`. Connections opened after return use it; established
    /// ones keep their destination. Redirectors are opened for new rewrite
    /// keys and closed for removed ones.
    void install_ruleset(const RuleSet& rs);

    std::shared_ptr<const RuleSet> snapshot() const;
    std::uint64_t version() const { return snapshot()->version; }
    std::vector<RedirectorInfo> redirectors() const;

    /// Decision for `dst` against the current snapshot, without dialing.
    VirtualDial resolve(const Destination& dst) const;

    struct Connection {
        net::Socket stream;
        VirtualDial dial;
    };
    /// Throws BlockedError for blocked destinations and net::ConnectError
    /// when the effective destination is unreachable.
    Connection open_connection(const Destination& dst,
                               std::chrono::milliseconds timeout = std::chrono::seconds(5));

    /// Called for every dial, including blocked ones, before connecting.
    void set_dial_observer(std::function<void(const VirtualDial&)> observer);

    /// Logs in to the policy server, installs the returned rules and keeps
    /// the session open for pushed updates (each acknowledged). Throws
    /// net::ConnectError, wire::ProtocolError or InstallError.
    void login(const net::Endpoint& server, const std::string& user);
    /// Drops the server session; installed rules stay.
    void disconnect();
    bool connected() const;
    const std::string& user() const { return user_; }
    const AgentConfig& config() const { return config_; }

    /// Waits until the installed version is at least `version`.
    bool wait_for_version(std::uint64_t version, std::chrono::milliseconds timeout) const;

private:
    struct Redirector {
        MatchKey key;
        std::unique_ptr<net::TcpService> service;
    };

    bool intercepts(const MatchKey& key) const;
    void serve_redirect(const MatchKey& key, net::Socket& client);
    void session_loop();
    void install_from_wire(std::uint64_t version, const std::vector<std::string>& lines);

    AgentConfig config_;
    std::string user_;

    mutable std::mutex mu_;  // snapshot_ and redirectors_
    mutable std::condition_variable version_cv_;
    std::shared_ptr<const RuleSet> snapshot_;
    std::map<MatchKey, Redirector> redirectors_;
    std::mutex install_mu_;
    std::vector<std::unique_ptr<net::TcpService>> retired_;

    std::mutex observer_mu_;
    std::function<void(const VirtualDial&)> observer_;

    mutable std::mutex session_mu_;
    net::Socket server_;
    std::thread session_thread_;
    std::atomic<bool> connected_{false};
};

/// Serves `dacs-agent status` and `dacs-agent dial` over a unix socket.
///
/// Request is one line: `STATUS` or `DIAL <host>:<port>`. STATUS answers
/// with a text report and closes. DIAL answers `OK <effective>`, `BLOCKED`
/// or `ERROR <reason>` and, after OK, relays bytes both ways.
class AgentControlServer {
public:
    AgentControlServer(Agent& agent, const std::string& socket_path);
    ~AgentControlServer();

private:
    void serve(net::Socket& sock);

    Agent& agent_;
    std::string path_;
    std::unique_ptr<net::TcpService> service_;
};

std::string format_status(const Agent& agent);

}  // namespace dacs
