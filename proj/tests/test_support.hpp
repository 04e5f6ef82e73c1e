#pragma once

#include <atomic>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "dacs/net.hpp"

namespace testing {

namespace fs = std::filesystem;

class TempDir {
public:
    TempDir() {
        std::string tmpl = (fs::temp_directory_path() / "dacs-test-XXXXXX").string();
        if (::mkdtemp(tmpl.data()) == nullptr) throw std::runtime_error("mkdtemp failed");
        path_ = tmpl;
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const fs::path& path() const { return path_; }
    fs::path operator/(const std::string& rel) const { return path_ / rel; }

private:
    fs::path path_;
};

inline void write_file(const fs::path& p, const std::string& content) {
    fs::create_directories(p.parent_path());
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    out << content;
}

inline std::string read_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

/// First port of `n` consecutive loopback ports that were bindable a moment ago.
inline int free_port_range(int n) {
    static std::mt19937 rng(static_cast<unsigned>(std::chrono::steady_clock::now().time_since_epoch().count()));
    for (int attempt = 0; attempt < 200; ++attempt) {
        int base = 20000 + static_cast<int>(rng() % 30000);
        std::vector<dacs::net::Listener> held;
        try {
            for (int i = 0; i < n; ++i) held.push_back(dacs::net::Listener::bind("127.0.0.1", base + i));
            return base;
        } catch (const dacs::net::BindError&) {
        }
    }
    throw std::runtime_error("no free port range");
}

inline int free_port() { return free_port_range(1); }

/// Echoes every byte back; counts accepted connections.
class EchoServer {
public:
    EchoServer()
        : service_(dacs::net::Listener::bind("127.0.0.1", 0), [](dacs::net::Socket& s) {
              char buf[16384];
              while (true) {
                  std::size_t n = s.read_some(buf);
                  if (n == 0) break;
                  s.write_all({buf, n});
              }
          }) {}
    int port() const { return service_.port(); }
    std::uint64_t accepted() const { return service_.accepted(); }

private:
    dacs::net::TcpService service_;
};

/// Writes a fixed reply to every connection and closes.
class ReplyServer {
public:
    explicit ReplyServer(std::string reply)
        : reply_(std::move(reply)),
          service_(dacs::net::Listener::bind("127.0.0.1", 0),
                   [this](dacs::net::Socket& s) { s.write_all(reply_); }) {}
    int port() const { return service_.port(); }
    std::uint64_t accepted() const { return service_.accepted(); }

private:
    std::string reply_;
    dacs::net::TcpService service_;
};

/// Records whatever arrives on each connection.
class Recorder {
public:
    Recorder()
        : service_(dacs::net::Listener::bind("127.0.0.1", 0), [this](dacs::net::Socket& s) {
              auto data = s.read_to_end();
              std::lock_guard lock(mu_);
              received_.push_back(std::move(data));
          }) {}
    int port() const { return service_.port(); }
    std::vector<std::string> received() {
        std::lock_guard lock(mu_);
        return received_;
    }

private:
    std::mutex mu_;
    std::vector<std::string> received_;
    dacs::net::TcpService service_;
};

/// Forwards every connection to a loopback port, keeping a copy of the bytes
/// seen each way. With `flip_at` set, inverts the low bit of that byte offset
/// of the client-to-target stream of each connection.
class TapProxy {
public:
    explicit TapProxy(int target_port, std::optional<std::size_t> flip_at = std::nullopt)
        : target_port_(target_port),
          flip_at_(flip_at),
          service_(dacs::net::Listener::bind("127.0.0.1", 0), [this](dacs::net::Socket& s) { serve(s); }) {}
    int port() const { return service_.port(); }
    std::string upstream() {
        std::lock_guard lock(mu_);
        return up_;
    }
    std::string downstream() {
        std::lock_guard lock(mu_);
        return down_;
    }

private:
    void serve(dacs::net::Socket& client) {
        auto target = dacs::net::connect_tcp("127.0.0.1", target_port_);
        std::thread up([&] {
            char buf[16384];
            std::size_t offset = 0;
            try {
                while (std::size_t n = client.read_some(buf)) {
                    if (flip_at_ && *flip_at_ >= offset && *flip_at_ < offset + n) buf[*flip_at_ - offset] ^= 1;
                    offset += n;
                    {
                        std::lock_guard lock(mu_);
                        up_.append(buf, n);
                    }
                    target.write_all({buf, n});
                }
                target.shutdown_write();
            } catch (const dacs::net::NetError&) {
                target.shutdown_both();
            }
        });
        char buf[16384];
        try {
            while (std::size_t n = target.read_some(buf)) {
                {
                    std::lock_guard lock(mu_);
                    down_.append(buf, n);
                }
                client.write_all({buf, n});
            }
            client.shutdown_write();
        } catch (const dacs::net::NetError&) {
            client.shutdown_both();
        }
        up.join();
    }

    int target_port_;
    std::optional<std::size_t> flip_at_;
    std::mutex mu_;
    std::string up_, down_;
    dacs::net::TcpService service_;
};

inline std::string random_bytes(std::size_t n, unsigned seed) {
    std::mt19937 rng(seed);
    std::string out(n, '\0');
    for (auto& c : out) c = static_cast<char>(rng());
    return out;
}

/// Polls `pred` until it holds or `timeout` passes.
template <class Pred>
bool eventually(Pred pred, std::chrono::milliseconds timeout = std::chrono::seconds(5)) {
    auto deadline = std::chrono::steady_clock::now() + timeout;
    while (std::chrono::steady_clock::now() < deadline) {
        if (pred()) return true;
        std::this_thread::sleep_for(std::chrono::milliseconds(5));
    }
    return pred();
}

inline std::string exchange(dacs::net::Socket& s, const std::string& payload) {
    s.write_all(payload);
    s.shutdown_write();
    return s.read_to_end();
}

}  // namespace testing
