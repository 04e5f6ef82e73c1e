#include "dacs/web.hpp"

#include <unistd.h>

#include <algorithm>
#include <cctype>
#include <fstream>
#include <iterator>
#include <set>
#include <sstream>

#include <spdlog/spdlog.h>

#include "dacs/rules.hpp"

namespace dacs::web {

namespace {

std::string lower(std::string_view s) {
    std::string out(s);
    for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return out;
}

std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
}

std::optional<std::string> find_header(const std::vector<std::pair<std::string, std::string>>& headers,
                                       std::string_view name) {
    auto key = lower(name);
    for (const auto& [k, v] : headers)
        if (lower(k) == key) return v;
    return std::nullopt;
}

int hex_digit(char c) {
    if (c >= '0' && c <= '9') return c - '0';
    if (c >= 'a' && c <= 'f') return c - 'a' + 10;
    if (c >= 'A' && c <= 'F') return c - 'A' + 10;
    return -1;
}

std::optional<std::size_t> parse_size(std::string_view s) {
    if (s.empty() || s.size() > 12) return std::nullopt;
    std::size_t v = 0;
    for (char c : s) {
        if (c < '0' || c > '9') return std::nullopt;
        v = v * 10 + static_cast<std::size_t>(c - '0');
    }
    return v;
}

HttpResponse error_response(int status) {
    HttpResponse r;
    r.status = status;
    r.headers = {{"Content-Type", "text/plain"}};
    r.body = std::to_string(status) + " " + reason_phrase(status) + "\n";
    return r;
}

std::string content_type_for(const fs::path& p) {
    static const std::map<std::string, std::string> types = {
        {".html", "text/html"},        {".htm", "text/html"},  {".txt", "text/plain"},
        {".css", "text/css"},          {".js", "text/javascript"}, {".json", "application/json"},
        {".png", "image/png"},         {".jpg", "image/jpeg"}, {".gif", "image/gif"},
        {".pdf", "application/pdf"},
    };
    auto it = types.find(lower(p.extension().string()));
    return it == types.end() ? "application/octet-stream" : it->second;
}

/// Splits header lines off `raw` up to the blank line. Returns the offset
/// of the body, or npos when there is no blank line.
std::size_t split_head(std::string_view raw, std::vector<std::string_view>& lines) {
    std::size_t pos = 0;
    while (pos < raw.size()) {
        auto nl = raw.find('\n', pos);
        if (nl == std::string_view::npos) return std::string_view::npos;
        auto line = raw.substr(pos, nl - pos);
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        pos = nl + 1;
        if (line.empty()) return pos;
        lines.push_back(line);
    }
    return std::string_view::npos;
}

}  // namespace

std::optional<std::string> HttpRequest::header(std::string_view name) const { return find_header(headers, name); }
std::optional<std::string> HttpResponse::header(std::string_view name) const { return find_header(headers, name); }

const char* reason_phrase(int status) {
    switch (status) {
        case 200: return "OK";
        case 302: return "Found";
        case 400: return "Bad Request";
        case 403: return "Forbidden";
        case 404: return "Not Found";
        case 405: return "Method Not Allowed";
        case 413: return "Content Too Large";
        case 431: return "Request Header Fields Too Large";
        case 500: return "Internal Server Error";
        case 501: return "Not Implemented";
        case 502: return "Bad Gateway";
        case 504: return "Gateway Timeout";
        default: return "Unknown";
    }
}

// --- vhosts file -----------------------------------------------------------

std::vector<VHostBinding> parse_vhosts(std::string_view text, const fs::path& base) {
    std::vector<VHostBinding> out;
    std::set<std::pair<std::string, int>> seen;
    std::istringstream in{std::string(text)};
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        auto body = trim(line);
        if (body.empty() || body.front() == '#') continue;
        std::istringstream words{std::string(body)};
        std::string word;
        VHostBinding b;
        bool have_bind = false, have_root = false;
        while (words >> word) {
            auto eq = word.find('=');
            if (eq == std::string::npos) throw VHostError(lineno, "expected key=value, got '" + word + "'");
            auto key = word.substr(0, eq), value = word.substr(eq + 1);
            if (key == "bind") {
                auto hp = parse_host_port(value);
                if (!hp || !is_ipv4_literal(hp->host) || hp->port < 0 || hp->port > 65535)
                    throw VHostError(lineno, "bind needs <ipv4>:<port>");
                b.socket = {hp->host, hp->port};
                have_bind = true;
            } else if (key == "docroot") {
                if (value.empty()) throw VHostError(lineno, "empty docroot");
                b.docroot = fs::path(value).is_absolute() || base.empty() ? fs::path(value) : base / value;
                have_root = true;
            } else if (key == "group") {
                if (!is_valid_group_name(value)) throw VHostError(lineno, "bad group name '" + value + "'");
                b.group = value;
            } else if (key == "preamble") {
                if (value != "on" && value != "off") throw VHostError(lineno, "preamble must be on or off");
                b.preamble_expected = value == "on";
            } else {
                throw VHostError(lineno, "unknown key '" + key + "'");
            }
        }
        if (!have_bind || !have_root) throw VHostError(lineno, "bind= and docroot= are required");
        if (b.socket.port != 0 && !seen.insert({b.socket.host, b.socket.port}).second)
            throw VHostError(lineno, "socket " + b.socket.str() + " listed twice");
        out.push_back(std::move(b));
    }
    return out;
}

std::vector<VHostBinding> load_vhosts(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw VHostError(0, "cannot read " + path.string());
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return parse_vhosts(text, path.parent_path());
}

std::string format_vhost(const VHostBinding& b) {
    return "bind=" + b.socket.str() + " docroot=" + b.docroot.string() +
           " preamble=" + (b.preamble_expected ? "on" : "off") + (b.group ? " group=" + *b.group : "");
}

// --- identity registry -----------------------------------------------------

void IdentityRegistry::ingest(const wire::IdentityNotice& notice) {
    std::unique_lock lock(mu_);
    by_ip_[notice.client_ip] = Identity{notice.user, notice.groups};
}

std::optional<Identity> IdentityRegistry::lookup(const std::string& ip) const {
    std::shared_lock lock(mu_);
    auto it = by_ip_.find(ip);
    if (it == by_ip_.end()) return std::nullopt;
    return it->second;
}

std::map<std::string, Identity> IdentityRegistry::entries() const {
    std::shared_lock lock(mu_);
    return by_ip_;
}

// --- HTTP framing ----------------------------------------------------------

HttpRequest read_request(net::Socket& sock) {
    std::string buf;
    std::size_t head_end = std::string::npos;
    char chunk[4096];
    while (true) {
        auto crlf = buf.find("\r\n\r\n");
        auto lf = buf.find("\n\n");
        if (crlf != std::string::npos && (lf == std::string::npos || crlf < lf)) {
            head_end = crlf + 4;
            break;
        }
        if (lf != std::string::npos) {
            head_end = lf + 2;
            break;
        }
        if (buf.size() > kMaxHeaderBytes) throw HttpError(431, "header block too large");
        std::size_t n = sock.read_some(chunk);
        if (n == 0) throw HttpError(400, "connection closed inside the request head");
        buf.append(chunk, n);
    }
    if (head_end > kMaxHeaderBytes) throw HttpError(431, "header block too large");

    std::vector<std::string_view> lines;
    split_head(std::string_view(buf).substr(0, head_end), lines);
    if (lines.empty()) throw HttpError(400, "empty request");

    HttpRequest req;
    auto first = lines[0];
    auto sp1 = first.find(' ');
    auto sp2 = sp1 == std::string_view::npos ? sp1 : first.find(' ', sp1 + 1);
    if (sp2 == std::string_view::npos || first.find(' ', sp2 + 1) != std::string_view::npos)
        throw HttpError(400, "bad request line");
    req.method = std::string(first.substr(0, sp1));
    req.target = std::string(first.substr(sp1 + 1, sp2 - sp1 - 1));
    req.version = std::string(first.substr(sp2 + 1));
    if (req.version != "HTTP/1.0" && req.version != "HTTP/1.1") throw HttpError(400, "unsupported version");
    if (req.target.empty()) throw HttpError(400, "empty target");
    if (req.method != "GET" && req.method != "POST") throw HttpError(501, "method " + req.method);

    for (std::size_t i = 1; i < lines.size(); ++i) {
        auto line = lines[i];
        auto colon = line.find(':');
        if (colon == std::string_view::npos || colon == 0 || line.front() == ' ' || line.front() == '\t')
            throw HttpError(400, "bad header line");
        req.headers.emplace_back(lower(trim(line.substr(0, colon))), std::string(trim(line.substr(colon + 1))));
    }
    if (req.header("transfer-encoding")) throw HttpError(501, "transfer codings are not supported");

    std::size_t length = 0;
    if (auto cl = req.header("content-length")) {
        auto v = parse_size(*cl);
        if (!v) throw HttpError(400, "bad Content-Length");
        length = *v;
    }
    if (length > kMaxBodyBytes) throw HttpError(413, "body too large");
    req.body = buf.substr(head_end);
    if (req.body.size() > length) req.body.resize(length);
    while (req.body.size() < length) {
        std::size_t n = sock.read_some(chunk);
        if (n == 0) throw HttpError(400, "connection closed inside the body");
        req.body.append(chunk, std::min(n, length - req.body.size()));
    }
    return req;
}

std::string serialize(const HttpResponse& r) {
    std::string out = "HTTP/1.1 " + std::to_string(r.status) + " " + reason_phrase(r.status) + "\r\n";
    for (const auto& [k, v] : r.headers) {
        auto key = lower(k);
        if (key == "content-length" || key == "connection") continue;
        out += k + ": " + v + "\r\n";
    }
    out += "Content-Length: " + std::to_string(r.body.size()) + "\r\n";
    out += "Connection: close\r\n\r\n";
    out += r.body;
    return out;
}

HttpResponse parse_response(std::string_view raw) {
    std::vector<std::string_view> lines;
    auto body_at = split_head(raw, lines);
    if (body_at == std::string_view::npos || lines.empty()) throw HttpError(502, "truncated response head");
    auto status_line = lines[0];
    if (status_line.substr(0, 5) != "HTTP/" || status_line.size() < 12) throw HttpError(502, "bad status line");
    HttpResponse r;
    auto code = parse_size(status_line.substr(9, 3));
    if (!code) throw HttpError(502, "bad status code");
    r.status = static_cast<int>(*code);
    for (std::size_t i = 1; i < lines.size(); ++i) {
        auto colon = lines[i].find(':');
        if (colon == std::string_view::npos) throw HttpError(502, "bad header line");
        r.headers.emplace_back(std::string(trim(lines[i].substr(0, colon))),
                               std::string(trim(lines[i].substr(colon + 1))));
    }
    r.body = std::string(raw.substr(body_at));
    return r;
}

HttpResponse fetch(net::Socket& sock, const std::string& method, const std::string& target,
                   const std::string& host, const std::string& body) {
    std::string req = method + " " + target + " HTTP/1.0\r\nHost: " + host + "\r\n";
    if (!body.empty() || method == "POST") {
        req += "Content-Type: application/x-www-form-urlencoded\r\n";
        req += "Content-Length: " + std::to_string(body.size()) + "\r\n";
    }
    req += "\r\n" + body;
    sock.write_all(req);
    sock.shutdown_write();
    return parse_response(sock.read_to_end());
}

// --- request handling --------------------------------------------------------

std::optional<std::vector<std::string>> confine_path(std::string_view path) {
    if (path.empty() || path.front() != '/') return std::nullopt;
    std::string decoded;
    for (std::size_t i = 0; i < path.size(); ++i) {
        if (path[i] == '%') {
            if (i + 2 >= path.size() || hex_digit(path[i + 1]) < 0 || hex_digit(path[i + 2]) < 0)
                return std::nullopt;
            decoded += static_cast<char>(hex_digit(path[i + 1]) * 16 + hex_digit(path[i + 2]));
            i += 2;
        } else {
            decoded += path[i];
        }
    }
    if (decoded.find('\0') != std::string::npos || decoded.find('\\') != std::string::npos) return std::nullopt;
    std::vector<std::string> segs;
    std::string_view rest(decoded);
    while (!rest.empty()) {
        auto slash = rest.find('/');
        auto seg = rest.substr(0, slash);
        rest.remove_prefix(slash == std::string_view::npos ? rest.size() : slash + 1);
        if (seg.empty() || seg == ".") continue;
        if (seg == "..") return std::nullopt;
        segs.emplace_back(seg);
    }
    return segs;
}

std::vector<std::string> cgi_environment(const VHostBinding& binding, const HttpRequest& req,
                                         const std::string& script_name, const std::string& remote_addr,
                                         const std::optional<Identity>& identity) {
    auto q = req.target.find('?');
    std::string server_name = binding.socket.host;
    if (auto host = req.header("host"); host && !host->empty()) server_name = host->substr(0, host->rfind(':'));

    std::vector<std::string> env = {
        "GATEWAY_INTERFACE=CGI/1.1",
        "REQUEST_METHOD=" + req.method,
        "QUERY_STRING=" + (q == std::string::npos ? std::string() : req.target.substr(q + 1)),
        "SCRIPT_NAME=" + script_name,
        "SERVER_NAME=" + server_name,
        "SERVER_PORT=" + std::to_string(binding.socket.port),
        "SERVER_PROTOCOL=" + req.version,
        "REMOTE_ADDR=" + remote_addr,
    };
    if (!req.body.empty() || req.header("content-length")) {
        env.push_back("CONTENT_LENGTH=" + std::to_string(req.body.size()));
        if (auto ct = req.header("content-type")) env.push_back("CONTENT_TYPE=" + *ct);
    }
    if (identity) {
        env.push_back("REMOTE_USER=" + identity->user);
        std::string groups;
        for (const auto& g : identity->groups) groups += (groups.empty() ? "" : ",") + g;
        env.push_back("X_DACS_GROUPS=" + groups);
    }
    return env;
}

HttpResponse handle_request(const VHostBinding& binding, const HttpRequest& req, const std::string& remote_addr,
                            const IdentityRegistry& registry, const WebOptions& options) {
    if (options.enforce_groups && binding.group) {
        auto who = registry.lookup(remote_addr);
        if (!who || std::find(who->groups.begin(), who->groups.end(), *binding.group) == who->groups.end())
            return error_response(403);
    }
    auto q = req.target.find('?');
    auto segs = confine_path(std::string_view(req.target).substr(0, q));
    if (!segs) return error_response(403);

    std::error_code ec;
    auto root = fs::canonical(binding.docroot, ec);
    if (ec) return error_response(500);
    fs::path target = root;
    for (const auto& s : *segs) target /= s;

    auto inside = [&](const fs::path& p) {
        auto real = fs::canonical(p, ec);
        if (ec) return false;
        auto rel = real.lexically_relative(root);
        return !rel.empty() && *rel.begin() != "..";
    };

    if (!segs->empty() && (*segs)[0] == "cgi-bin") {
        if (segs->size() != 2) return error_response(404);
        if (!fs::exists(target, ec)) return error_response(404);
        if (!inside(target) || !fs::is_regular_file(target, ec) || ::access(target.c_str(), X_OK) != 0)
            return error_response(403);
        auto identity = registry.lookup(remote_addr);
        auto env = cgi_environment(binding, req, "/cgi-bin/" + (*segs)[1], remote_addr, identity);
        return run_cgi(fs::canonical(target, ec), env, req.body, options.cgi_timeout);
    }

    if (req.method != "GET") return error_response(405);
    if (!fs::exists(target, ec)) return error_response(404);
    if (!inside(target) && target != root) return error_response(403);
    if (fs::is_directory(target, ec)) target /= "index.html";
    if (!fs::is_regular_file(target, ec)) return error_response(404);
    if (!inside(target)) return error_response(403);

    std::ifstream in(target, std::ios::binary);
    if (!in) return error_response(403);
    HttpResponse r;
    r.headers = {{"Content-Type", content_type_for(target)}};
    r.body.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
    return r;
}

// --- server --------------------------------------------------------------------

WebServer::WebServer(std::vector<VHostBinding> bindings, std::optional<net::Endpoint> identity_listen,
                     WebOptions options)
    : bindings_(std::move(bindings)), options_(options) {
    std::set<std::pair<std::string, int>> seen;
    for (const auto& b : bindings_) {
        if (b.socket.port != 0 && !seen.insert({b.socket.host, b.socket.port}).second)
            throw VHostError(0, "socket " + b.socket.str() + " listed twice");
        std::error_code ec;
        if (!fs::is_directory(b.docroot, ec)) throw VHostError(0, "docroot " + b.docroot.string() + " is not a directory");
    }
    for (std::size_t i = 0; i < bindings_.size(); ++i) {
        auto listener = net::Listener::bind(bindings_[i].socket.host, bindings_[i].socket.port);
        sites_.push_back(std::make_unique<net::TcpService>(std::move(listener),
                                                           [this, i](net::Socket& s) { serve(i, s); }));
        spdlog::info("dacsweb: {}:{} -> {}{}", bindings_[i].socket.host, sites_.back()->port(),
                     bindings_[i].docroot.string(), bindings_[i].preamble_expected ? " (preamble)" : "");
    }
    if (identity_listen) {
        identity_ = std::make_unique<net::TcpService>(net::Listener::bind(identity_listen->host, identity_listen->port),
                                                      [this](net::Socket& s) { ingest(s); });
        spdlog::info("dacsweb: identity notices on {}:{}", identity_listen->host, identity_->port());
    }
}

WebServer::~WebServer() {
    if (identity_) identity_->stop();
    for (auto& s : sites_) s->stop();
}

std::vector<int> WebServer::ports() const {
    std::vector<int> out;
    for (const auto& s : sites_) out.push_back(s->port());
    return out;
}

int WebServer::identity_port() const { return identity_ ? identity_->port() : 0; }

void WebServer::serve(std::size_t index, net::Socket& sock) {
    auto binding = bindings_[index];
    binding.socket.port = sites_[index]->port();
    std::string remote = sock.peer_ip();
    HttpResponse resp;
    std::string summary = "-";
    try {
        sock.set_recv_timeout(std::chrono::seconds(10));
        if (binding.preamble_expected) {
            std::string line;
            if (!sock.read_line(line, 64)) return;
            auto ip = wire::parse_preamble(line);
            if (!ip) throw HttpError(400, "missing or malformed preamble");
            remote = *ip;
        }
        auto req = read_request(sock);
        summary = req.method + " " + req.target;
        resp = handle_request(binding, req, remote, registry_, options_);
    } catch (const HttpError& e) {
        spdlog::info("dacsweb: {} rejected: {}", remote, e.what());
        resp = error_response(e.status());
    } catch (const net::NetError& e) {
        spdlog::debug("dacsweb: {}: {}", remote, e.what());
        return;
    }
    spdlog::info("dacsweb: {}:{} {} \"{}\" {}", binding.socket.host, binding.socket.port, remote, summary,
                 resp.status);
    try {
        sock.write_all(serialize(resp));
        sock.shutdown_write();
    } catch (const net::NetError& e) {
        spdlog::debug("dacsweb: {}: {}", remote, e.what());
    }
}

void WebServer::ingest(net::Socket& sock) {
    wire::FrameReader reader(sock);
    wire::Message msg;
    try {
        while (reader.next(msg)) {
            if (auto* n = std::get_if<wire::IdentityNotice>(&msg)) {
                registry_.ingest(*n);
                spdlog::info("dacsweb: {} is {}", n->client_ip, n->user);
            } else {
                spdlog::warn("dacsweb: ignoring {} on the identity listener", wire::verb_of(msg));
            }
        }
    } catch (const std::exception& e) {
        spdlog::warn("dacsweb: identity frame dropped: {}", e.what());
    }
}

}  // namespace dacs::web
