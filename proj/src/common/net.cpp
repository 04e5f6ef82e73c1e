#include "dacs/net.hpp"

#include <arpa/inet.h>
#include <fcntl.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <sys/un.h>
#include <unistd.h>

#include <cerrno>
#include <charconv>
#include <cstring>

#include <spdlog/spdlog.h>

namespace dacs::net {

namespace {

std::string errno_text(const char* what) {
    return std::string(what) + ": " + std::strerror(errno);
}

}  // namespace

Socket& Socket::operator=(Socket&& other) noexcept {
    if (this != &other) {
        close();
        fd_ = std::exchange(other.fd_, -1);
    }
    return *this;
}

std::size_t Socket::read_some(std::span<char> buf) {
    while (true) {
        ssize_t n = ::recv(fd_, buf.data(), buf.size(), 0);
        if (n >= 0) return static_cast<std::size_t>(n);
        if (errno == EINTR) continue;
        if (errno == ECONNRESET) return 0;
        throw NetError(errno_text("recv"));
    }
}

bool Socket::read_exact(std::span<char> buf) {
    std::size_t got = 0;
    while (got < buf.size()) {
        std::size_t n = read_some(buf.subspan(got));
        if (n == 0) return false;
        got += n;
    }
    return true;
}

bool Socket::read_line(std::string& line, std::size_t max) {
    line.clear();
    char c = 0;
    while (line.size() <= max) {
        if (read_some({&c, 1}) == 0) return false;
        if (c == '\n') return true;
        line.push_back(c);
    }
    return false;
}

std::string Socket::read_to_end(std::size_t max) {
    std::string out;
    char buf[16384];
    while (out.size() < max) {
        std::size_t n = read_some(buf);
        if (n == 0) break;
        out.append(buf, n);
    }
    return out;
}

void Socket::write_all(std::string_view data) {
    while (!data.empty()) {
        ssize_t n = ::send(fd_, data.data(), data.size(), MSG_NOSIGNAL);
        if (n < 0) {
            if (errno == EINTR) continue;
            throw NetError(errno_text("send"));
        }
        data.remove_prefix(static_cast<std::size_t>(n));
    }
}

void Socket::shutdown_write() {
    if (fd_ >= 0) ::shutdown(fd_, SHUT_WR);
}

void Socket::shutdown_both() {
    if (fd_ >= 0) ::shutdown(fd_, SHUT_RDWR);
}

void Socket::close() {
    if (fd_ >= 0) {
        ::close(fd_);
        fd_ = -1;
    }
}

void Socket::set_recv_timeout(std::chrono::milliseconds timeout) {
    timeval tv{};
    tv.tv_sec = static_cast<time_t>(timeout.count() / 1000);
    tv.tv_usec = static_cast<suseconds_t>((timeout.count() % 1000) * 1000);
    ::setsockopt(fd_, SOL_SOCKET, SO_RCVTIMEO, &tv, sizeof tv);
}

std::string Socket::peer_ip() const {
    sockaddr_storage ss{};
    socklen_t len = sizeof ss;
    if (::getpeername(fd_, reinterpret_cast<sockaddr*>(&ss), &len) != 0) return {};
    if (ss.ss_family != AF_INET) return {};
    char buf[INET_ADDRSTRLEN] = {};
    auto* in = reinterpret_cast<sockaddr_in*>(&ss);
    ::inet_ntop(AF_INET, &in->sin_addr, buf, sizeof buf);
    return buf;
}

Endpoint Endpoint::parse(std::string_view text) {
    auto colon = text.rfind(':');
    if (colon == std::string_view::npos || colon == 0)
        throw NetError("expected host:port, got '" + std::string(text) + "'");
    auto port_text = text.substr(colon + 1);
    int port = -1;
    auto [ptr, ec] = std::from_chars(port_text.data(), port_text.data() + port_text.size(), port);
    if (ec != std::errc{} || ptr != port_text.data() + port_text.size() || port < 0 || port > 65535)
        throw NetError("bad port in '" + std::string(text) + "'");
    return Endpoint{std::string(text.substr(0, colon)), port};
}

Socket connect_tcp(const std::string& host, int port, std::chrono::milliseconds timeout) {
    addrinfo hints{};
    hints.ai_family = AF_INET;
    hints.ai_socktype = SOCK_STREAM;
    addrinfo* res = nullptr;
    std::string service = std::to_string(port);
    int rc = ::getaddrinfo(host.c_str(), service.c_str(), &hints, &res);
    if (rc != 0)
        throw ConnectError("resolve " + host + ": " + ::gai_strerror(rc));
    std::unique_ptr<addrinfo, decltype(&::freeaddrinfo)> guard(res, ::freeaddrinfo);

    std::string last_error = "no address";
    for (addrinfo* ai = res; ai != nullptr; ai = ai->ai_next) {
        Socket s(::socket(ai->ai_family, SOCK_STREAM | SOCK_CLOEXEC, 0));
        if (!s.valid()) throw NetError(errno_text("socket"));
        int flags = ::fcntl(s.fd(), F_GETFL);
        ::fcntl(s.fd(), F_SETFL, flags | O_NONBLOCK);
        int r = ::connect(s.fd(), ai->ai_addr, ai->ai_addrlen);
        if (r != 0 && errno == EINPROGRESS) {
            pollfd p{s.fd(), POLLOUT, 0};
            int pr;
            do {
                pr = ::poll(&p, 1, static_cast<int>(timeout.count()));
            } while (pr < 0 && errno == EINTR);
            if (pr == 0) {
                last_error = "timed out";
                continue;
            }
            int err = 0;
            socklen_t len = sizeof err;
            ::getsockopt(s.fd(), SOL_SOCKET, SO_ERROR, &err, &len);
            if (err != 0) {
                last_error = std::strerror(err);
                continue;
            }
        } else if (r != 0) {
            last_error = std::strerror(errno);
            continue;
        }
        ::fcntl(s.fd(), F_SETFL, flags);
        int one = 1;
        ::setsockopt(s.fd(), IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
        return s;
    }
    throw ConnectError("connect " + host + ":" + service + ": " + last_error);
}

Listener Listener::bind(const std::string& ip, int port, int backlog) {
    Socket s(::socket(AF_INET, SOCK_STREAM | SOCK_CLOEXEC, 0));
    if (!s.valid()) throw BindError(errno_text("socket"));
    int one = 1;
    ::setsockopt(s.fd(), SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(static_cast<std::uint16_t>(port));
    std::string host = ip == "localhost" ? "127.0.0.1" : ip;
    if (::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1)
        throw BindError("bind: not an IPv4 address: " + ip);
    if (::bind(s.fd(), reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0)
        throw BindError(errno_text(("bind " + ip + ":" + std::to_string(port)).c_str()));
    if (::listen(s.fd(), backlog) != 0) throw BindError(errno_text("listen"));
    socklen_t len = sizeof addr;
    ::getsockname(s.fd(), reinterpret_cast<sockaddr*>(&addr), &len);
    Listener l;
    l.sock_ = std::move(s);
    l.port_ = ntohs(addr.sin_port);
    return l;
}

Socket connect_unix(const std::string& path) {
    Socket s(::socket(AF_UNIX, SOCK_STREAM | SOCK_CLOEXEC, 0));
    if (!s.valid()) throw NetError(errno_text("socket"));
    sockaddr_un addr{};
    addr.sun_family = AF_UNIX;
    if (path.size() >= sizeof addr.sun_path) throw ConnectError("unix socket path too long");
    std::memcpy(addr.sun_path, path.c_str(), path.size() + 1);
    if (::connect(s.fd(), reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0)
        throw ConnectError(errno_text(("connect " + path).c_str()));
    return s;
}

Listener Listener::bind_unix(const std::string& path) {
    Socket s(::socket(AF_UNIX, SOCK_STREAM | SOCK_CLOEXEC, 0));
    if (!s.valid()) throw BindError(errno_text("socket"));
    sockaddr_un addr{};
    addr.sun_family = AF_UNIX;
    if (path.size() >= sizeof addr.sun_path) throw BindError("unix socket path too long");
    std::memcpy(addr.sun_path, path.c_str(), path.size() + 1);
    ::unlink(path.c_str());
    if (::bind(s.fd(), reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0)
        throw BindError(errno_text(("bind " + path).c_str()));
    if (::listen(s.fd(), 16) != 0) throw BindError(errno_text("listen"));
    Listener l;
    l.sock_ = std::move(s);
    return l;
}

Socket Listener::accept() {
    while (true) {
        int fd = ::accept4(sock_.fd(), nullptr, nullptr, SOCK_CLOEXEC);
        if (fd >= 0) {
            int one = 1;
            ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
            return Socket(fd);
        }
        if (errno == EINTR || errno == ECONNABORTED) continue;
        throw NetError(errno_text("accept"));
    }
}

TcpService::TcpService(Listener listener, Handler handler)
    : listener_(std::move(listener)), handler_(std::move(handler)), port_(listener_.port()) {
    if (::pipe2(wake_, O_CLOEXEC) != 0) throw NetError(errno_text("pipe"));
    acceptor_ = std::thread([this] { accept_loop(); });
}

TcpService::~TcpService() {
    stop();
    for (int fd : wake_)
        if (fd >= 0) ::close(fd);
}

void TcpService::close_listener() {
    std::lock_guard lock(stop_mu_);
    if (!stopping_.exchange(true)) {
        char b = 'x';
        [[maybe_unused]] auto n = ::write(wake_[1], &b, 1);
    }
    if (acceptor_.joinable()) acceptor_.join();
    listener_.close();
}

std::size_t TcpService::active_connections() {
    reap(false);
    std::lock_guard lock(mu_);
    return conns_.size();
}

void TcpService::stop() {
    close_listener();
    {
        std::lock_guard lock(mu_);
        for (auto& c : conns_)
            if (!c.done) c.sock.shutdown_both();
    }
    reap(true);
}

void TcpService::accept_loop() {
    while (!stopping_.load()) {
        pollfd fds[2] = {{listener_.fd(), POLLIN, 0}, {wake_[0], POLLIN, 0}};
        int pr = ::poll(fds, 2, 500);
        if (pr < 0) {
            if (errno == EINTR) continue;
            spdlog::error("poll on listener: {}", std::strerror(errno));
            return;
        }
        reap(false);
        if (fds[1].revents != 0 || stopping_.load()) return;
        if ((fds[0].revents & POLLIN) == 0) continue;
        Socket s;
        try {
            s = listener_.accept();
        } catch (const NetError& e) {
            spdlog::warn("{}", e.what());
            continue;
        }
        ++accepted_;
        std::lock_guard lock(mu_);
        auto& conn = conns_.emplace_back();
        conn.sock = std::move(s);
        Connection* c = &conn;
        c->thread = std::thread([this, c] {
            try {
                handler_(c->sock);
            } catch (const std::exception& e) {
                spdlog::debug("connection handler: {}", e.what());
            }
            std::lock_guard lock(mu_);
            c->sock.close();
            c->done = true;
        });
    }
}

void TcpService::reap(bool all) {
    std::list<Connection> finished;
    {
        std::lock_guard lock(mu_);
        for (auto it = conns_.begin(); it != conns_.end();) {
            if (all || it->done) {
                auto next = std::next(it);
                finished.splice(finished.end(), conns_, it);
                it = next;
            } else {
                ++it;
            }
        }
    }
    for (auto& c : finished)
        if (c.thread.joinable()) c.thread.join();
}

void relay(Socket& a, Socket& b) {
    bool a_open = true;  // a -> b direction still flowing
    bool b_open = true;  // b -> a
    char buf[32768];
    while (a_open || b_open) {
        pollfd fds[2] = {{a_open ? a.fd() : -1, POLLIN, 0}, {b_open ? b.fd() : -1, POLLIN, 0}};
        int pr = ::poll(fds, 2, -1);
        if (pr < 0) {
            if (errno == EINTR) continue;
            break;
        }
        try {
            if (a_open && (fds[0].revents & (POLLIN | POLLHUP | POLLERR))) {
                std::size_t n = a.read_some(buf);
                if (n == 0) {
                    a_open = false;
                    b.shutdown_write();
                } else {
                    b.write_all({buf, n});
                }
            }
            if (b_open && (fds[1].revents & (POLLIN | POLLHUP | POLLERR))) {
                std::size_t n = b.read_some(buf);
                if (n == 0) {
                    b_open = false;
                    a.shutdown_write();
                } else {
                    a.write_all({buf, n});
                }
            }
        } catch (const NetError&) {
            break;
        }
    }
    a.shutdown_both();
    b.shutdown_both();
}

}  // namespace dacs::net
