#include "dacs/server.hpp"

#include <spdlog/spdlog.h>

namespace dacs {

namespace {

wire::RuleSetMsg to_message(const RuleSet& rs) {
    wire::RuleSetMsg msg;
    msg.version = rs.version;
    for (const auto& r : rs.rules) msg.rules.push_back(format_rule(r));
    return msg;
}

std::string one_line(std::string s) {
    for (auto& c : s)
        if (c == '\n' || c == '\r') c = ' ';
    return s;
}

}  // namespace

IdentityNotifier::IdentityNotifier(std::optional<net::Endpoint> target)
    : target_(std::move(target)), worker_([this] { run(); }) {}

IdentityNotifier::~IdentityNotifier() {
    {
        std::lock_guard lock(mu_);
        stopping_ = true;
    }
    cv_.notify_all();
    worker_.join();
}

void IdentityNotifier::post(wire::IdentityNotice notice) {
    {
        std::lock_guard lock(mu_);
        queue_.push_back(std::move(notice));
    }
    cv_.notify_all();
}

void IdentityNotifier::wait_idle() {
    std::unique_lock lock(mu_);
    cv_.wait(lock, [&] { return queue_.empty() && !busy_; });
}

std::size_t IdentityNotifier::delivered() const {
    std::lock_guard lock(mu_);
    return delivered_;
}

void IdentityNotifier::run() {
    std::unique_lock lock(mu_);
    while (true) {
        cv_.wait(lock, [&] { return stopping_ || !queue_.empty(); });
        if (queue_.empty()) return;
        auto notice = std::move(queue_.front());
        queue_.pop_front();
        busy_ = true;
        lock.unlock();

        bool ok = false;
        if (target_) {
            try {
                auto sock = net::connect_tcp(*target_, std::chrono::seconds(1));
                wire::send(sock, notice);
                sock.shutdown_write();
                // The receiver closes only after ingesting. Waiting for that
                // keeps notices for one address in order on its side.
                sock.set_recv_timeout(std::chrono::seconds(2));
                sock.read_to_end(4096);
                ok = true;
            } catch (const std::exception& e) {
                spdlog::warn("identity notice for {}@{} not delivered: {}", notice.user,
                             notice.client_ip, e.what());
            }
        }

        lock.lock();
        busy_ = false;
        if (ok) ++delivered_;
        cv_.notify_all();
    }
}

DacsServer::DacsServer(std::filesystem::path repo_path, std::optional<net::Endpoint> web_identity)
    : repo_path_(std::move(repo_path)),
      repo_(std::make_shared<const Repository>(load_repository(repo_path_))),
      notifier_(std::move(web_identity)) {}

DacsServer::~DacsServer() { stop(); }

std::shared_ptr<const Repository> DacsServer::repository() const {
    std::lock_guard lock(repo_mu_);
    return repo_;
}

RuleSet DacsServer::handle_login(const std::string& user, const std::string& client_ip) {
    return login_locked(user, client_ip, nullptr);
}

RuleSet DacsServer::login_locked(const std::string& user, const std::string& client_ip,
                                 const std::shared_ptr<Channel>& channel) {
    auto repo = repository();
    auto rs = compose_rules(*repo, user, client_ip, ++version_counter_);
    {
        std::lock_guard lock(sessions_mu_);
        auto it = sessions_.find(client_ip);
        if (it != sessions_.end() && it->second.channel && it->second.channel != channel) {
            spdlog::info("login {}@{} supersedes {}", user, client_ip, it->second.session.user);
            // The old handler has not cleaned up yet (cleanup clears this
            // channel pointer), so its socket is still alive.
            it->second.channel->open = false;
            it->second.channel->sock->shutdown_both();
        }
        sessions_[client_ip] = Entry{Session{user, client_ip, rs.version, 0}, channel};
    }
    notifier_.post(wire::IdentityNotice{user, client_ip, get_groups(*repo, user)});
    spdlog::info("login {}@{}: {} rule(s), version {}", user, client_ip, rs.rules.size(), rs.version);
    return rs;
}

PushReport DacsServer::admin_push() {
    std::lock_guard push_lock(push_mu_);
    std::shared_ptr<const Repository> fresh;
    try {
        fresh = std::make_shared<const Repository>(load_repository(repo_path_));
    } catch (const RepositoryError& e) {
        spdlog::error("push aborted, keeping current repository: {}", e.what());
        throw ReloadError(e.what());
    }
    {
        std::lock_guard lock(repo_mu_);
        repo_ = fresh;
    }

    std::vector<std::pair<Session, std::shared_ptr<Channel>>> targets;
    {
        std::lock_guard lock(sessions_mu_);
        for (const auto& [ip, entry] : sessions_)
            if (entry.channel) targets.emplace_back(entry.session, entry.channel);
    }

    PushReport report;
    for (auto& [session, channel] : targets) {
        std::lock_guard wlock(channel->write_mu);
        if (!channel->open) {
            ++report.failed;
            continue;
        }
        try {
            auto rs = compose_rules(*fresh, session.user, session.client_ip, ++version_counter_);
            wire::send(*channel->sock, wire::PushNotice{});
            wire::send(*channel->sock, to_message(rs));
            ++report.sent;
            std::lock_guard lock(sessions_mu_);
            auto it = sessions_.find(session.client_ip);
            if (it != sessions_.end() && it->second.channel == channel)
                it->second.session.delivered_version = rs.version;
        } catch (const std::exception& e) {
            spdlog::warn("push to {}@{} failed: {}", session.user, session.client_ip, e.what());
            ++report.failed;
        }
    }
    spdlog::info("push: {} sent, {} failed", report.sent, report.failed);
    return report;
}

std::vector<Session> DacsServer::sessions() const {
    std::lock_guard lock(sessions_mu_);
    std::vector<Session> out;
    for (const auto& [ip, entry] : sessions_) out.push_back(entry.session);
    return out;
}

std::optional<Session> DacsServer::session(const std::string& client_ip) const {
    std::lock_guard lock(sessions_mu_);
    auto it = sessions_.find(client_ip);
    if (it == sessions_.end()) return std::nullopt;
    return it->second.session;
}

void DacsServer::start(const net::Endpoint& listen, const net::Endpoint& control) {
    agents_ = std::make_unique<net::TcpService>(net::Listener::bind(listen.host, listen.port),
                                                [this](net::Socket& s) { serve_agent(s); });
    control_ = std::make_unique<net::TcpService>(net::Listener::bind(control.host, control.port),
                                                 [this](net::Socket& s) { serve_control(s); });
    spdlog::info("dacsd: agents on {}:{}, control on {}:{}", listen.host, agents_->port(),
                 control.host, control_->port());
}

void DacsServer::stop() {
    if (control_) control_->stop();
    if (agents_) agents_->stop();
}

int DacsServer::agent_port() const { return agents_ ? agents_->port() : 0; }
int DacsServer::control_port() const { return control_ ? control_->port() : 0; }

void DacsServer::serve_agent(net::Socket& sock) {
    auto channel = std::make_shared<Channel>();
    channel->sock = &sock;
    wire::FrameReader reader(sock);
    wire::Message msg;
    try {
        while (reader.next(msg)) {
            if (auto* login = std::get_if<wire::Login>(&msg)) {
                std::lock_guard wlock(channel->write_mu);
                if (!channel->open) break;
                try {
                    auto rs = login_locked(login->user, login->client_ip, channel);
                    wire::send(sock, to_message(rs));
                } catch (const RuleError& e) {
                    wire::send(sock, wire::ErrorMsg{"MergeError", one_line(e.what())});
                }
            } else if (auto* ack = std::get_if<wire::Ack>(&msg)) {
                std::lock_guard lock(sessions_mu_);
                for (auto& [ip, entry] : sessions_)
                    if (entry.channel == channel) entry.session.acked_version = ack->ref_version;
            } else {
                std::lock_guard wlock(channel->write_mu);
                wire::send(sock, wire::ErrorMsg{"BadRequest", std::string("unexpected ") + wire::verb_of(msg)});
            }
        }
    } catch (const std::exception& e) {
        spdlog::debug("agent connection: {}", e.what());
    }
    {
        std::lock_guard lock(sessions_mu_);
        // Session records outlive their connection.
        for (auto& [ip, entry] : sessions_)
            if (entry.channel == channel) entry.channel.reset();
    }
    std::lock_guard wlock(channel->write_mu);
    channel->open = false;
}

void DacsServer::serve_control(net::Socket& sock) {
    sock.set_recv_timeout(std::chrono::seconds(5));
    wire::FrameReader reader(sock);
    wire::Message msg;
    try {
        if (!reader.next(msg)) return;
        if (!std::holds_alternative<wire::PushNotice>(msg)) {
            wire::send(sock, wire::ErrorMsg{"BadRequest", "control socket accepts PUSH only"});
            return;
        }
        try {
            auto report = admin_push();
            wire::send(sock, wire::Ack{report.sent});
        } catch (const ReloadError& e) {
            wire::send(sock, wire::ErrorMsg{"ReloadError", one_line(e.what())});
        }
    } catch (const std::exception& e) {
        spdlog::warn("control connection: {}", e.what());
    }
}

std::size_t request_push(const net::Endpoint& control) {
    auto sock = net::connect_tcp(control);
    wire::send(sock, wire::PushNotice{});
    wire::FrameReader reader(sock);
    wire::Message reply;
    if (!reader.next(reply)) throw wire::ProtocolError("control socket closed without reply");
    if (auto* ack = std::get_if<wire::Ack>(&reply)) return ack->ref_version;
    if (auto* err = std::get_if<wire::ErrorMsg>(&reply)) {
        if (err->code == "ReloadError") throw ReloadError(err->detail);
        throw wire::ProtocolError(err->code + ": " + err->detail);
    }
    throw wire::ProtocolError(std::string("unexpected reply ") + wire::verb_of(reply));
}

}  // namespace dacs
