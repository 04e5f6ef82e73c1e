#include "dacs/agent.hpp"

#include <unistd.h>

#include <sstream>

#include <spdlog/spdlog.h>

#include "dacs/wire.hpp"

namespace dacs {

Agent::Agent(AgentConfig config)
    : config_(std::move(config)), snapshot_(std::make_shared<const RuleSet>()) {
    if (config_.preamble && !is_ipv4_literal(config_.client_ip))
        throw std::invalid_argument("preamble needs an IPv4 client ip");
}

Agent::~Agent() {
    disconnect();
    std::map<MatchKey, Redirector> redirectors;
    {
        std::lock_guard lock(mu_);
        redirectors.swap(redirectors_);
    }
    for (auto& [key, r] : redirectors) r.service->stop();
    for (auto& s : retired_) s->stop();
}

bool Agent::intercepts(const MatchKey& key) const {
    if (key.is_wildcard()) return false;
    return !config_.intercept_hosts || config_.intercept_hosts->count(key.host) > 0;
}

void Agent::install_ruleset(const RuleSet& rs) {
    std::lock_guard install_lock(install_mu_);
    try {
        check_unique(rs.rules);
    } catch (const RuleError& e) {
        throw InstallError(e.what());
    }
    for (const auto& r : rs.rules) {
        auto violations = validate_rule(r);
        if (!violations.empty()) throw InstallError(format_rule(r) + ": " + violations.front());
    }

    std::set<MatchKey> wanted;
    for (const auto& r : rs.rules)
        if (std::holds_alternative<RewriteAction>(r.action) && intercepts(r.match)) wanted.insert(r.match);

    std::set<MatchKey> existing;
    {
        std::lock_guard lock(mu_);
        for (const auto& [key, r] : redirectors_) existing.insert(key);
    }

    // Bind everything new before touching the live state, so a failure
    // leaves the previous snapshot in place.
    std::map<MatchKey, Redirector> fresh;
    for (const auto& key : wanted) {
        if (existing.count(key)) continue;
        net::Listener listener;
        try {
            listener = net::Listener::bind(config_.redirect_bind_ip, 0);
        } catch (const net::BindError& e) {
            throw PortExhausted(std::string("redirector for ") + to_string(key) + ": " + e.what());
        }
        auto service = std::make_unique<net::TcpService>(
            std::move(listener), [this, key](net::Socket& s) { serve_redirect(key, s); });
        fresh.emplace(key, Redirector{key, std::move(service)});
    }

    std::vector<std::unique_ptr<net::TcpService>> removed;
    {
        std::lock_guard lock(mu_);
        for (auto it = redirectors_.begin(); it != redirectors_.end();) {
            if (!wanted.count(it->first)) {
                removed.push_back(std::move(it->second.service));
                it = redirectors_.erase(it);
            } else {
                ++it;
            }
        }
        for (auto& [key, r] : fresh) redirectors_.emplace(key, std::move(r));
        snapshot_ = std::make_shared<const RuleSet>(rs);
    }
    version_cv_.notify_all();

    for (auto& s : removed) {
        s->close_listener();
        retired_.push_back(std::move(s));
    }
    std::erase_if(retired_, [](auto& s) {
        if (s->active_connections() != 0) return false;
        s->stop();
        return true;
    });
    spdlog::info("installed rule set version {} ({} rules, {} redirectors)", rs.version,
                 rs.rules.size(), wanted.size());
}

std::shared_ptr<const RuleSet> Agent::snapshot() const {
    std::lock_guard lock(mu_);
    return snapshot_;
}

std::vector<RedirectorInfo> Agent::redirectors() const {
    std::lock_guard lock(mu_);
    std::vector<RedirectorInfo> out;
    for (const auto& [key, r] : redirectors_)
        out.push_back(RedirectorInfo{key, net::Endpoint{config_.redirect_bind_ip, r.service->port()}});
    return out;
}

VirtualDial Agent::resolve(const Destination& dst) const {
    auto snap = snapshot();
    VirtualDial dial{dst, decide(*snap, dst), std::nullopt, snap->version};
    if (auto* rw = std::get_if<RewriteAction>(&dial.decision))
        dial.effective = rw->new_dst;
    else if (std::holds_alternative<PassDecision>(dial.decision))
        dial.effective = dst;
    return dial;
}

Agent::Connection Agent::open_connection(const Destination& dst, std::chrono::milliseconds timeout) {
    auto dial = resolve(dst);
    {
        std::lock_guard lock(observer_mu_);
        if (observer_) observer_(dial);
    }
    if (!dial.effective) throw BlockedError(dst);
    auto sock = net::connect_tcp(dial.effective->host, dial.effective->port, timeout);
    if (config_.preamble) sock.write_all(wire::make_preamble(config_.client_ip));
    return Connection{std::move(sock), std::move(dial)};
}

void Agent::set_dial_observer(std::function<void(const VirtualDial&)> observer) {
    std::lock_guard lock(observer_mu_);
    observer_ = std::move(observer);
}

void Agent::serve_redirect(const MatchKey& key, net::Socket& client) {
    try {
        auto conn = open_connection(Destination{key.host, key.port});
        net::relay(client, conn.stream);
    } catch (const BlockedError& e) {
        spdlog::info("redirector {}: {}", to_string(key), e.what());
    } catch (const net::NetError& e) {
        spdlog::warn("redirector {}: {}", to_string(key), e.what());
    }
}

void Agent::install_from_wire(std::uint64_t version, const std::vector<std::string>& lines) {
    RuleSet rs;
    rs.version = version;
    try {
        for (const auto& line : lines) rs.rules.push_back(parse_rule(line));
    } catch (const RuleError& e) {
        throw InstallError(e.what());
    }
    install_ruleset(rs);
}

void Agent::login(const net::Endpoint& server, const std::string& user) {
    std::lock_guard lock(session_mu_);
    if (session_thread_.joinable()) {
        server_.shutdown_both();
        session_thread_.join();
    }
    user_ = user;
    server_ = net::connect_tcp(server);
    wire::send(server_, wire::Login{user, config_.client_ip});

    auto reader = std::make_shared<wire::FrameReader>(server_);
    wire::Message msg;
    if (!reader->next(msg)) throw wire::ProtocolError("server closed the session during login");
    if (auto* err = std::get_if<wire::ErrorMsg>(&msg))
        throw wire::ProtocolError("login refused: " + err->code + ": " + err->detail);
    auto* rs = std::get_if<wire::RuleSetMsg>(&msg);
    if (rs == nullptr) throw wire::ProtocolError(std::string("expected RULESET, got ") + wire::verb_of(msg));
    install_from_wire(rs->version, rs->rules);
    wire::send(server_, wire::Ack{rs->version});

    connected_ = true;
    session_thread_ = std::thread([this, reader] {
        wire::Message m;
        try {
            while (reader->next(m)) {
                if (auto* update = std::get_if<wire::RuleSetMsg>(&m)) {
                    try {
                        install_from_wire(update->version, update->rules);
                        wire::send(server_, wire::Ack{update->version});
                    } catch (const InstallError& e) {
                        spdlog::error("rejected pushed rules v{}: {}", update->version, e.what());
                        wire::send(server_, wire::ErrorMsg{"InstallError", "version " + std::to_string(update->version)});
                    }
                } else if (std::holds_alternative<wire::PushNotice>(m)) {
                    spdlog::debug("push notice from server");
                } else {
                    spdlog::warn("ignoring unexpected {} from server", wire::verb_of(m));
                }
            }
            spdlog::info("server closed the session");
        } catch (const std::exception& e) {
            spdlog::warn("server session ended: {}", e.what());
        }
        connected_ = false;
    });
}

void Agent::disconnect() {
    std::lock_guard lock(session_mu_);
    if (session_thread_.joinable()) {
        server_.shutdown_both();
        session_thread_.join();
    }
    server_.close();
    connected_ = false;
}

bool Agent::connected() const { return connected_.load(); }

bool Agent::wait_for_version(std::uint64_t version, std::chrono::milliseconds timeout) const {
    std::unique_lock lock(mu_);
    return version_cv_.wait_for(lock, timeout, [&] { return snapshot_->version >= version; });
}

std::string format_status(const Agent& agent) {
    auto snap = agent.snapshot();
    std::ostringstream out;
    out << "user=" << agent.user() << "\n";
    out << "client_ip=" << agent.config().client_ip << "\n";
    out << "connected=" << (agent.connected() ? "yes" : "no") << "\n";
    out << "version=" << snap->version << "\n";
    for (const auto& r : snap->rules) out << "rule=" << format_rule(r) << "\n";
    for (const auto& r : agent.redirectors())
        out << "redirect=" << to_string(r.key) << " " << r.listen.str() << "\n";
    return out.str();
}

AgentControlServer::AgentControlServer(Agent& agent, const std::string& socket_path)
    : agent_(agent), path_(socket_path) {
    service_ = std::make_unique<net::TcpService>(net::Listener::bind_unix(path_),
                                                 [this](net::Socket& s) { serve(s); });
}

AgentControlServer::~AgentControlServer() {
    service_->stop();
    ::unlink(path_.c_str());
}

void AgentControlServer::serve(net::Socket& sock) {
    std::string line;
    sock.set_recv_timeout(std::chrono::seconds(5));
    if (!sock.read_line(line)) return;
    sock.set_recv_timeout(std::chrono::milliseconds(0));
    if (line == "STATUS") {
        sock.write_all(format_status(agent_));
        return;
    }
    if (line.rfind("DIAL ", 0) == 0) {
        auto dst = parse_host_port(std::string_view(line).substr(5));
        if (!dst || !is_valid_host(dst->host) || !is_valid_port(dst->port)) {
            sock.write_all("ERROR bad destination\n");
            return;
        }
        try {
            auto conn = agent_.open_connection(*dst);
            sock.write_all("OK " + to_string(*conn.dial.effective) + "\n");
            net::relay(sock, conn.stream);
        } catch (const BlockedError&) {
            sock.write_all("BLOCKED\n");
        } catch (const net::NetError& e) {
            sock.write_all(std::string("ERROR ") + e.what() + "\n");
        }
        return;
    }
    sock.write_all("ERROR unknown command\n");
}

}  // namespace dacs
