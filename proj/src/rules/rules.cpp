#include "dacs/rules.hpp"

#include <algorithm>
#include <charconv>
#include <set>

namespace dacs {

namespace {

bool has_space(std::string_view s) {
    return std::any_of(s.begin(), s.end(), [](unsigned char c) {
        return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' || c == '\f';
    });
}

bool has_any(std::string_view s, std::string_view chars) {
    return s.find_first_of(chars) != std::string_view::npos;
}

std::optional<int> parse_port(std::string_view s) {
    if (s.empty() || s.size() > 5) return std::nullopt;
    int value = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
    if (ec != std::errc{} || ptr != s.data() + s.size()) return std::nullopt;
    return value;
}

template <class... Ts>
struct overloaded : Ts... {
    using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

void validate_match(const MatchKey& match, std::vector<std::string>& out) {
    if (match.host.empty())
        out.emplace_back("empty match host");
    else if (!match.is_wildcard() && !is_valid_host(match.host))
        out.emplace_back("illegal character in match host");
    if (!is_valid_port(match.port)) out.emplace_back("port out of range");
}

void validate_action(const RuleAction& action, std::vector<std::string>& out) {
    if (const auto* rw = std::get_if<RewriteAction>(&action)) {
        if (!is_ipv4_literal(rw->new_dst.host) && rw->new_dst.host != "localhost")
            out.emplace_back("rewrite target must be an IPv4 literal or localhost");
        if (!is_valid_port(rw->new_dst.port)) out.emplace_back("rewrite port out of range");
    }
}

}  // namespace

DuplicateMatchKey::DuplicateMatchKey(const MatchKey& key)
    : RuleError("duplicate match key " + to_string(key)), key_(key) {}

bool is_ipv4_literal(std::string_view s) {
    int parts = 0;
    std::size_t pos = 0;
    while (true) {
        std::size_t end = s.find('.', pos);
        std::string_view octet = s.substr(pos, end == std::string_view::npos ? s.npos : end - pos);
        if (octet.empty() || octet.size() > 3) return false;
        if (octet.size() > 1 && octet[0] == '0') return false;
        int value = 0;
        auto [ptr, ec] = std::from_chars(octet.data(), octet.data() + octet.size(), value);
        if (ec != std::errc{} || ptr != octet.data() + octet.size() || value > 255) return false;
        ++parts;
        if (end == std::string_view::npos) break;
        pos = end + 1;
    }
    return parts == 4;
}

bool is_valid_host(std::string_view s) {
    return !s.empty() && !has_space(s) && !has_any(s, "|:");
}

bool is_valid_port(int port) { return port >= 1 && port <= 65535; }

bool is_valid_name(std::string_view s) {
    return !s.empty() && !has_space(s) && !has_any(s, "|=");
}

bool is_valid_group_name(std::string_view s) {
    return is_valid_name(s) && s.find(',') == std::string_view::npos;
}

std::vector<std::string> validate_rule(const Rule& rule) {
    std::vector<std::string> out;
    validate_match(rule.match, out);
    validate_action(rule.action, out);
    return out;
}

std::vector<std::string> validate_rule(const DacsRule& rule) {
    std::vector<std::string> out;
    std::visit(overloaded{
                   [&](const UserSubject& u) {
                       if (u.name.empty())
                           out.emplace_back("empty user name");
                       else if (!is_valid_name(u.name))
                           out.emplace_back("illegal character in user name");
                   },
                   [&](const ClientSubject& c) {
                       if (!is_ipv4_literal(c.ip)) out.emplace_back("client ip is not an IPv4 literal");
                   },
               },
               rule.subject);
    validate_match(rule.match, out);
    validate_action(rule.action, out);
    return out;
}

Decision decide(const RuleSet& rules, const Destination& dst) {
    const Rule* wildcard = nullptr;
    for (const auto& rule : rules.rules) {
        if (rule.match.port != dst.port) continue;
        if (rule.match.host == dst.host) {
            return std::visit([](const auto& a) -> Decision { return a; }, rule.action);
        }
        if (rule.match.is_wildcard() && wildcard == nullptr) wildcard = &rule;
    }
    if (wildcard != nullptr)
        return std::visit([](const auto& a) -> Decision { return a; }, wildcard->action);
    return PassDecision{};
}

RuleSet merge_rules(const std::vector<DacsRule>& user_rules,
                    const std::vector<DacsRule>& client_rules, PriorityPolicy policy,
                    std::uint64_t version) {
    auto check = [](const std::vector<DacsRule>& list) {
        std::set<MatchKey> seen;
        for (const auto& r : list)
            if (!seen.insert(r.match).second) throw DuplicateMatchKey(r.match);
    };
    check(user_rules);
    check(client_rules);

    auto find_client = [&](const MatchKey& key) -> const DacsRule* {
        for (const auto& c : client_rules)
            if (c.match == key) return &c;
        return nullptr;
    };
    auto find_user = [&](const MatchKey& key) -> const DacsRule* {
        for (const auto& u : user_rules)
            if (u.match == key) return &u;
        return nullptr;
    };

    RuleSet out;
    out.version = version;
    for (const auto& u : user_rules) {
        const DacsRule* c = find_client(u.match);
        if (c == nullptr || c->action == u.action || policy == PriorityPolicy::UserPriority)
            out.rules.push_back(u.directive());
    }
    for (const auto& c : client_rules) {
        const DacsRule* u = find_user(c.match);
        if (u == nullptr || (u->action != c.action && policy == PriorityPolicy::ClientPriority))
            out.rules.push_back(c.directive());
    }
    return out;
}

void check_unique(const std::vector<Rule>& rules) {
    std::set<MatchKey> seen;
    for (const auto& r : rules)
        if (!seen.insert(r.match).second) throw DuplicateMatchKey(r.match);
}

std::string format_rule(const Rule& rule) {
    return std::visit(overloaded{
                          [&](const RewriteAction& rw) {
                              return "rewrite|" + to_string(rule.match) + "|" + to_string(rw.new_dst);
                          },
                          [&](const BlockAction&) { return "block|" + to_string(rule.match); },
                      },
                      rule.action);
}

std::optional<Destination> parse_host_port(std::string_view text) {
    auto colon = text.rfind(':');
    if (colon == std::string_view::npos) return std::nullopt;
    auto port = parse_port(text.substr(colon + 1));
    if (!port) return std::nullopt;
    return Destination{std::string(text.substr(0, colon)), *port};
}

Rule parse_rule(std::string_view text) {
    std::vector<std::string_view> fields;
    std::size_t pos = 0;
    while (true) {
        auto bar = text.find('|', pos);
        fields.push_back(text.substr(pos, bar == std::string_view::npos ? text.npos : bar - pos));
        if (bar == std::string_view::npos) break;
        pos = bar + 1;
    }
    auto syntax = [&](const char* what) {
        return RuleError("malformed rule '" + std::string(text) + "': " + what);
    };
    if (fields.empty()) throw syntax("empty");

    Rule rule;
    auto match = parse_host_port(fields[0] == "rewrite" || fields[0] == "block"
                                     ? (fields.size() > 1 ? fields[1] : std::string_view{})
                                     : std::string_view{});
    if (fields[0] == "rewrite") {
        if (fields.size() != 3) throw syntax("rewrite takes a match and a target");
        auto target = parse_host_port(fields[2]);
        if (!match || !target) throw syntax("expected host:port");
        rule.match = MatchKey{match->host, match->port};
        rule.action = RewriteAction{*target};
    } else if (fields[0] == "block") {
        if (fields.size() != 2) throw syntax("block takes a match only");
        if (!match) throw syntax("expected host:port");
        rule.match = MatchKey{match->host, match->port};
        rule.action = BlockAction{};
    } else {
        throw syntax("unknown action");
    }

    auto violations = validate_rule(rule);
    if (!violations.empty()) throw syntax(violations.front().c_str());
    return rule;
}

DacsRule parse_rule(std::string_view text, Subject subject) {
    Rule r = parse_rule(text);
    return DacsRule{std::move(subject), std::move(r.match), std::move(r.action)};
}

std::string to_string(const Destination& dst) {
    return dst.host + ":" + std::to_string(dst.port);
}

std::string to_string(const MatchKey& key) {
    return key.host + ":" + std::to_string(key.port);
}

std::string to_string(const Decision& decision) {
    return std::visit(overloaded{
                          [](const PassDecision&) { return std::string("pass"); },
                          [](const RewriteAction& rw) { return "rewrite->" + to_string(rw.new_dst); },
                          [](const BlockAction&) { return std::string("block"); },
                      },
                      decision);
}

std::string to_string(PriorityPolicy policy) {
    return policy == PriorityPolicy::UserPriority ? "user" : "client";
}

}  // namespace dacs
