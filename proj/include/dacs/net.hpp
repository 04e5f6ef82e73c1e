#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <functional>
#include <list>
#include <memory>
#include <mutex>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <thread>

namespace dacs::net {

class NetError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ConnectError : public NetError {
public:
    using NetError::NetError;
};

class BindError : public NetError {
public:
    using NetError::NetError;
};

/// Owning wrapper around a connected TCP (or unix) socket descriptor.
class Socket {
public:
    Socket() = default;
    explicit Socket(int fd) : fd_(fd) {}
    ~Socket() { close(); }
    Socket(Socket&& other) noexcept : fd_(std::exchange(other.fd_, -1)) {}
    Socket& operator=(Socket&& other) noexcept;
    Socket(const Socket&) = delete;
    Socket& operator=(const Socket&) = delete;

    int fd() const { return fd_; }
    bool valid() const { return fd_ >= 0; }

    /// Returns 0 at end of stream. Throws NetError on socket errors.
    std::size_t read_some(std::span<char> buf);
    /// Reads until `buf` is full. Returns false on a clean EOF before that.
    bool read_exact(std::span<char> buf);
    /// Reads one LF-terminated line (LF stripped). Returns false on EOF or
    /// when `max` bytes pass without a LF. Reads byte by byte so nothing past
    /// the line is consumed.
    bool read_line(std::string& line, std::size_t max = 4096);
    std::string read_to_end(std::size_t max = 64u << 20);
    void write_all(std::string_view data);

    void shutdown_write();
    void shutdown_both();
    void close();
    void set_recv_timeout(std::chrono::milliseconds timeout);

    std::string peer_ip() const;

private:
    int fd_ = -1;
};

struct Endpoint {
    std::string host;
    int port = 0;

    /// Parses `host:port`; throws NetError on bad syntax.
    static Endpoint parse(std::string_view text);
    std::string str() const { return host + ":" + std::to_string(port); }
    bool operator==(const Endpoint&) const = default;
};

Socket connect_tcp(const std::string& host, int port,
                   std::chrono::milliseconds timeout = std::chrono::seconds(5));
inline Socket connect_tcp(const Endpoint& ep,
                          std::chrono::milliseconds timeout = std::chrono::seconds(5)) {
    return connect_tcp(ep.host, ep.port, timeout);
}

Socket connect_unix(const std::string& path);

class Listener {
public:
    Listener() = default;
    /// Binds and listens; port 0 picks an ephemeral port.
    static Listener bind(const std::string& ip, int port, int backlog = 256);
    static Listener bind_unix(const std::string& path);

    int port() const { return port_; }
    int fd() const { return sock_.fd(); }
    bool valid() const { return sock_.valid(); }
    Socket accept();
    void close() { sock_.close(); }

private:
    Socket sock_;
    int port_ = 0;
};

/// Accept loop on a background thread with one thread per connection.
/// stop() closes the listener, shuts down live connections and joins
/// everything; the destructor calls it.
class TcpService {
public:
    using Handler = std::function<void(Socket&)>;

    TcpService(Listener listener, Handler handler);
    ~TcpService();
    TcpService(const TcpService&) = delete;
    TcpService& operator=(const TcpService&) = delete;

    int port() const { return port_; }
    std::uint64_t accepted() const { return accepted_.load(); }
    std::size_t active_connections();
    /// Stops accepting and releases the port; live connections carry on.
    void close_listener();
    void stop();

private:
    struct Connection {
        Socket sock;
        std::thread thread;
        bool done = false;
    };

    void accept_loop();
    void reap(bool all);

    Listener listener_;
    Handler handler_;
    int port_ = 0;
    int wake_[2] = {-1, -1};
    std::atomic<bool> stopping_{false};
    std::atomic<std::uint64_t> accepted_{0};
    std::mutex stop_mu_;
    std::mutex mu_;
    std::list<Connection> conns_;
    std::thread acceptor_;
};

/// Copies bytes both ways until both directions reach EOF (half-closes are
/// propagated) or either side errors.
void relay(Socket& a, Socket& b);

}  // namespace dacs::net
