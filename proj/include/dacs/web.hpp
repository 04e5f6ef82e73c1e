#pragma once

#include <chrono>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <shared_mutex>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "dacs/net.hpp"
#include "dacs/wire.hpp"

namespace dacs::web {

namespace fs = std::filesystem;

/// One listening socket and the directory it serves.
struct VHostBinding {
    net::Endpoint socket;
    fs::path docroot;
    bool preamble_expected = false;
    /// Audience of this binding; only checked when group enforcement is on.
    std::optional<std::string> group;
    bool operator==(const VHostBinding&) const = default;
};

class VHostError : public std::runtime_error {
public:
    VHostError(int line, const std::string& what)
        : std::runtime_error(line > 0 ? "line " + std::to_string(line) + ": " + what : what), line_(line) {}
    int line() const { return line_; }

private:
    int line_;
};

/// `bind=<ip>:<port> docroot=<path> preamble=<on|off> [group=<name>]` per
/// line; `#` lines and blank lines are skipped. Relative docroots resolve
/// against `base`.
std::vector<VHostBinding> parse_vhosts(std::string_view text, const fs::path& base = {});
std::vector<VHostBinding> load_vhosts(const fs::path& path);
std::string format_vhost(const VHostBinding& b);

struct Identity {
    std::string user;
    std::vector<std::string> groups;
    bool operator==(const Identity&) const = default;
};

/// Client address to logged-in user, fed by the policy server. The newest
/// notice for an address wins.
class IdentityRegistry {
public:
    void ingest(const wire::IdentityNotice& notice);
    std::optional<Identity> lookup(const std::string& ip) const;
    std::map<std::string, Identity> entries() const;

private:
    mutable std::shared_mutex mu_;
    std::map<std::string, Identity> by_ip_;
};

struct HttpRequest {
    std::string method;
    std::string target;  // as sent: path plus optional ?query
    std::string version;  // HTTP/1.0 or HTTP/1.1
    std::vector<std::pair<std::string, std::string>> headers;  // names lower-cased
    std::string body;

    std::optional<std::string> header(std::string_view name) const;
};

struct HttpResponse {
    int status = 200;
    std::vector<std::pair<std::string, std::string>> headers;
    std::string body;

    std::optional<std::string> header(std::string_view name) const;
};

class HttpError : public std::runtime_error {
public:
    HttpError(int status, const std::string& what) : std::runtime_error(what), status_(status) {}
    int status() const { return status_; }

private:
    int status_;
};

constexpr std::size_t kMaxHeaderBytes = 64 * 1024;
constexpr std::size_t kMaxBodyBytes = 8 * 1024 * 1024;

/// Reads one request. Throws HttpError (400, 413, 431, 501) or net::NetError.
HttpRequest read_request(net::Socket& sock);
std::string serialize(const HttpResponse& r);
const char* reason_phrase(int status);

/// Client side, for tools and tests: sends one request and reads the whole
/// response (the server always closes).
HttpResponse fetch(net::Socket& sock, const std::string& method, const std::string& target,
                   const std::string& host, const std::string& body = {});
HttpResponse parse_response(std::string_view raw);

/// Maps a request path onto docroot-relative segments: percent-decoded,
/// `.` and empty segments dropped. Nullopt for any `..` segment, NUL byte
/// or a path not starting with `/`.
std::optional<std::vector<std::string>> confine_path(std::string_view path);

struct WebOptions {
    std::chrono::milliseconds cgi_timeout{10000};
    /// Refuse (403) requests on a binding with a group unless the registry
    /// puts the client in that group.
    bool enforce_groups = false;
};

/// Environment handed to a CGI program, `NAME=value` each.
std::vector<std::string> cgi_environment(const VHostBinding& binding, const HttpRequest& req,
                                         const std::string& script_name, const std::string& remote_addr,
                                         const std::optional<Identity>& identity);

/// Runs `script` with `env`, cwd set to its directory and `body` on stdin,
/// and turns its output into a response: 500 for a nonzero exit or a bad
/// header block, 504 after `timeout` (the child is killed).
HttpResponse run_cgi(const fs::path& script, const std::vector<std::string>& env, std::string_view body,
                     std::chrono::milliseconds timeout);

/// Whole request handling for one binding, minus the socket.
HttpResponse handle_request(const VHostBinding& binding, const HttpRequest& req, const std::string& remote_addr,
                            const IdentityRegistry& registry, const WebOptions& options);

/// Virtual-host web server: one listener per binding plus the identity
/// listener. Construction fails with net::BindError or VHostError and then
/// nothing stays bound.
class WebServer {
public:
    WebServer(std::vector<VHostBinding> bindings, std::optional<net::Endpoint> identity_listen,
              WebOptions options = {});
    ~WebServer();
    WebServer(const WebServer&) = delete;
    WebServer& operator=(const WebServer&) = delete;

    IdentityRegistry& registry() { return registry_; }
    const std::vector<VHostBinding>& bindings() const { return bindings_; }
    /// Bound ports in binding order (useful when a binding asked for port 0).
    std::vector<int> ports() const;
    int identity_port() const;

private:
    void serve(std::size_t index, net::Socket& sock);
    void ingest(net::Socket& sock);

    std::vector<VHostBinding> bindings_;
    WebOptions options_;
    IdentityRegistry registry_;
    std::vector<std::unique_ptr<net::TcpService>> sites_;
    std::unique_ptr<net::TcpService> identity_;
};

}  // namespace dacs::web
