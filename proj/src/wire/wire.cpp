#include "dacs/wire.hpp"

#include <charconv>

#include "dacs/net.hpp"
#include "dacs/rules.hpp"

namespace dacs::wire {

namespace {

constexpr std::size_t kMaxField = 64u << 10;
constexpr std::size_t kMaxHeaderDigits = 7;  // 1048576 has 7 digits

template <class... Ts>
struct overloaded : Ts... {
    using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

[[noreturn]] void illegal(const std::string& what) {
    throw EncodeError(EncodeError::Kind::IllegalCharacter, what);
}

void check_length(std::string_view field, const char* name) {
    if (field.size() > kMaxField)
        throw EncodeError(EncodeError::Kind::FieldTooLong, std::string(name) + " exceeds 64 KiB");
}

void check_name(std::string_view v, const char* name) {
    check_length(v, name);
    if (!is_valid_name(v)) illegal(std::string("illegal ") + name + " '" + std::string(v) + "'");
}

void check_ip(std::string_view v, const char* name) {
    check_length(v, name);
    if (!is_ipv4_literal(v)) illegal(std::string(name) + " is not an IPv4 literal");
}

bool is_canonical_rule(std::string_view line) {
    try {
        return format_rule(parse_rule(line)) == line;
    } catch (const RuleError&) {
        return false;
    }
}

bool parse_u64(std::string_view s, std::uint64_t& out) {
    if (s.empty() || (s.size() > 1 && s[0] == '0')) return false;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
    return ec == std::errc{} && ptr == s.data() + s.size();
}

std::string join_groups(const std::vector<std::string>& groups) {
    std::string out;
    for (std::size_t i = 0; i < groups.size(); ++i) {
        if (i) out += ',';
        out += groups[i];
    }
    return out;
}

// Line cursor over a payload whose last byte is LF.
class Lines {
public:
    explicit Lines(std::string_view payload) : rest_(payload) {}

    bool empty() const { return rest_.empty(); }

    std::string_view next() {
        auto lf = rest_.find('\n');
        auto line = rest_.substr(0, lf);
        rest_.remove_prefix(lf + 1);
        return line;
    }

    std::string_view peek() const { return rest_.substr(0, rest_.find('\n')); }

private:
    std::string_view rest_;
};

struct Failure {
    DecodeStatus status;
    std::string detail;
};

std::string_view take_field(Lines& lines, std::string_view key) {
    if (lines.empty()) throw Failure{DecodeStatus::MissingField, "missing " + std::string(key)};
    auto line = lines.peek();
    if (line.size() <= key.size() || line.substr(0, key.size()) != key ||
        line[key.size()] != '=') {
        throw Failure{DecodeStatus::MissingField, "expected " + std::string(key) + "="};
    }
    lines.next();
    return line.substr(key.size() + 1);
}

void malformed_unless(bool ok, const std::string& detail) {
    if (!ok) throw Failure{DecodeStatus::MalformedFrame, detail};
}

Message parse_payload(std::string_view payload) {
    malformed_unless(!payload.empty() && payload.back() == '\n', "payload must end with LF");
    malformed_unless(payload.find('\r') == std::string_view::npos, "CR inside frame");
    Lines lines(payload);
    auto verb = lines.next();

    Message msg;
    if (verb == "LOGIN") {
        Login m;
        m.user = take_field(lines, "user");
        m.client_ip = take_field(lines, "client_ip");
        malformed_unless(is_valid_name(m.user), "bad user");
        malformed_unless(is_ipv4_literal(m.client_ip), "bad client_ip");
        msg = std::move(m);
    } else if (verb == "RULESET") {
        RuleSetMsg m;
        malformed_unless(parse_u64(take_field(lines, "version"), m.version), "bad version");
        while (!lines.empty()) {
            auto line = lines.next();
            malformed_unless(line.substr(0, 5) == "rule=", "unexpected line in RULESET");
            auto rule = line.substr(5);
            malformed_unless(is_canonical_rule(rule), "bad rule line");
            m.rules.emplace_back(rule);
        }
        msg = std::move(m);
    } else if (verb == "PUSH") {
        msg = PushNotice{};
    } else if (verb == "IDENTITY") {
        IdentityNotice m;
        m.user = take_field(lines, "user");
        m.client_ip = take_field(lines, "client_ip");
        auto groups = take_field(lines, "groups");
        malformed_unless(is_valid_name(m.user), "bad user");
        malformed_unless(is_ipv4_literal(m.client_ip), "bad client_ip");
        if (!groups.empty()) {
            std::size_t pos = 0;
            while (true) {
                auto comma = groups.find(',', pos);
                auto g = groups.substr(pos, comma == std::string_view::npos ? groups.npos : comma - pos);
                malformed_unless(is_valid_group_name(g), "bad group name");
                m.groups.emplace_back(g);
                if (comma == std::string_view::npos) break;
                pos = comma + 1;
            }
        }
        msg = std::move(m);
    } else if (verb == "ACK") {
        Ack m;
        malformed_unless(parse_u64(take_field(lines, "ref_version"), m.ref_version),
                         "bad ref_version");
        msg = m;
    } else if (verb == "ERROR") {
        ErrorMsg m;
        m.code = take_field(lines, "code");
        m.detail = take_field(lines, "detail");
        malformed_unless(is_valid_name(m.code), "bad error code");
        msg = std::move(m);
    } else {
        throw Failure{DecodeStatus::UnknownVerb, "unknown verb '" + std::string(verb.substr(0, 32)) + "'"};
    }
    malformed_unless(lines.empty(), "trailing lines after message");
    return msg;
}

}  // namespace

std::string encode(const Message& msg) {
    std::string payload;
    std::visit(overloaded{
                   [&](const Login& m) {
                       check_name(m.user, "user");
                       check_ip(m.client_ip, "client_ip");
                       payload = "LOGIN\nuser=" + m.user + "\nclient_ip=" + m.client_ip + "\n";
                   },
                   [&](const RuleSetMsg& m) {
                       payload = "RULESET\nversion=" + std::to_string(m.version) + "\n";
                       for (const auto& r : m.rules) {
                           check_length(r, "rule");
                           if (!is_canonical_rule(r)) illegal("not a canonical rule line: " + r);
                           payload += "rule=" + r + "\n";
                       }
                   },
                   [&](const PushNotice&) { payload = "PUSH\n"; },
                   [&](const IdentityNotice& m) {
                       check_name(m.user, "user");
                       check_ip(m.client_ip, "client_ip");
                       for (const auto& g : m.groups)
                           if (!is_valid_group_name(g)) illegal("illegal group name '" + g + "'");
                       auto groups = join_groups(m.groups);
                       check_length(groups, "groups");
                       payload = "IDENTITY\nuser=" + m.user + "\nclient_ip=" + m.client_ip +
                                 "\ngroups=" + groups + "\n";
                   },
                   [&](const Ack& m) { payload = "ACK\nref_version=" + std::to_string(m.ref_version) + "\n"; },
                   [&](const ErrorMsg& m) {
                       check_name(m.code, "code");
                       check_length(m.detail, "detail");
                       if (m.detail.find_first_of("\r\n") != std::string::npos)
                           illegal("line break in error detail");
                       payload = "ERROR\ncode=" + m.code + "\ndetail=" + m.detail + "\n";
                   },
               },
               msg);
    if (payload.size() > kMaxPayload)
        throw EncodeError(EncodeError::Kind::FieldTooLong, "frame exceeds 1 MiB");
    return "L:" + std::to_string(payload.size()) + "\n" + payload;
}

DecodeResult decode(std::string_view bytes) {
    DecodeResult r;
    auto fail = [&](DecodeStatus s, std::string detail) {
        r.status = s;
        r.detail = std::move(detail);
        return r;
    };

    constexpr std::string_view magic = "L:";
    if (bytes.size() < magic.size()) {
        if (magic.substr(0, bytes.size()) == bytes) return fail(DecodeStatus::Incomplete, {});
        return fail(DecodeStatus::MalformedFrame, "bad frame header");
    }
    if (bytes.substr(0, 2) != magic) return fail(DecodeStatus::MalformedFrame, "bad frame header");

    std::size_t i = 2;
    std::size_t length = 0;
    while (i < bytes.size() && bytes[i] != '\n') {
        char c = bytes[i];
        if (c < '0' || c > '9') return fail(DecodeStatus::MalformedFrame, "non-decimal length");
        if (i == 3 && bytes[2] == '0') return fail(DecodeStatus::MalformedFrame, "leading zero in length");
        if (i - 2 >= kMaxHeaderDigits) return fail(DecodeStatus::OversizeFrame, "length exceeds 1 MiB");
        length = length * 10 + static_cast<std::size_t>(c - '0');
        ++i;
    }
    if (i == bytes.size()) return fail(DecodeStatus::Incomplete, {});
    if (i == 2) return fail(DecodeStatus::MalformedFrame, "empty length");
    if (length > kMaxPayload) return fail(DecodeStatus::OversizeFrame, "length exceeds 1 MiB");

    std::size_t header = i + 1;
    if (bytes.size() - header < length) return fail(DecodeStatus::Incomplete, {});

    try {
        r.message = parse_payload(bytes.substr(header, length));
    } catch (const Failure& f) {
        return fail(f.status, f.detail);
    }
    r.status = DecodeStatus::Ok;
    r.consumed = header + length;
    return r;
}

const char* to_string(DecodeStatus status) {
    switch (status) {
        case DecodeStatus::Ok: return "Ok";
        case DecodeStatus::Incomplete: return "Incomplete";
        case DecodeStatus::MalformedFrame: return "MalformedFrame";
        case DecodeStatus::UnknownVerb: return "UnknownVerb";
        case DecodeStatus::MissingField: return "MissingField";
        case DecodeStatus::OversizeFrame: return "OversizeFrame";
    }
    return "?";
}

const char* verb_of(const Message& msg) {
    static constexpr const char* verbs[] = {"LOGIN", "RULESET", "PUSH", "IDENTITY", "ACK", "ERROR"};
    return verbs[msg.index()];
}

bool FrameReader::next(Message& out) {
    char chunk[8192];
    while (true) {
        if (!buf_.empty()) {
            auto r = decode(buf_);
            if (r.ok()) {
                out = std::move(r.message);
                buf_.erase(0, r.consumed);
                return true;
            }
            if (r.status != DecodeStatus::Incomplete)
                throw ProtocolError(std::string(to_string(r.status)) + ": " + r.detail);
        }
        std::size_t n = sock_.read_some(chunk);
        if (n == 0) {
            if (buf_.empty()) return false;
            throw ProtocolError("connection closed mid-frame");
        }
        buf_.append(chunk, n);
    }
}

void send(net::Socket& sock, const Message& msg) { sock.write_all(encode(msg)); }

std::string make_preamble(const std::string& client_ip) {
    if (!is_ipv4_literal(client_ip)) illegal("preamble needs an IPv4 literal");
    return "DACS1 " + client_ip + "\n";
}

std::optional<std::string> parse_preamble(std::string_view line) {
    constexpr std::string_view prefix = "DACS1 ";
    if (line.substr(0, prefix.size()) != prefix) return std::nullopt;
    auto ip = line.substr(prefix.size());
    if (!is_ipv4_literal(ip)) return std::nullopt;
    return std::string(ip);
}

}  // namespace dacs::wire
