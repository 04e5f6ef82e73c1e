#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace dacs {

/// A concrete (host, port) a client application addresses.
struct Destination {
    std::string host;
    int port = 0;

    bool operator==(const Destination&) const = default;
};

/// What a rule matches on: a literal host (or `*`) and an exact port.
struct MatchKey {
    std::string host;
    int port = 0;

    bool is_wildcard() const { return host == "*"; }
    bool operator==(const MatchKey&) const = default;
    auto operator<=>(const MatchKey&) const = default;
};

struct RewriteAction {
    Destination new_dst;
    bool operator==(const RewriteAction&) const = default;
};

struct BlockAction {
    bool operator==(const BlockAction&) const = default;
};

using RuleAction = std::variant<RewriteAction, BlockAction>;

struct UserSubject {
    std::string name;
    bool operator==(const UserSubject&) const = default;
};

struct ClientSubject {
    std::string ip;
    bool operator==(const ClientSubject&) const = default;
};

using Subject = std::variant<UserSubject, ClientSubject>;

/// A subject-free directive as installed on an agent. This is exactly what
/// the rule text grammar encodes.
struct Rule {
    MatchKey match;
    RuleAction action;

    bool operator==(const Rule&) const = default;
};

/// A rule as stored in the repository, attributed to a user or a client.
struct DacsRule {
    Subject subject;
    MatchKey match;
    RuleAction action;

    Rule directive() const { return Rule{match, action}; }
    bool operator==(const DacsRule&) const = default;
};

enum class PriorityPolicy { UserPriority, ClientPriority };

struct RuleSet {
    std::uint64_t version = 0;
    std::vector<Rule> rules;

    bool operator==(const RuleSet&) const = default;
};

struct PassDecision {
    bool operator==(const PassDecision&) const = default;
};

using Decision = std::variant<PassDecision, RewriteAction, BlockAction>;

class RuleError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Raised by merge_rules when one input list repeats a MatchKey.
class DuplicateMatchKey : public RuleError {
public:
    explicit DuplicateMatchKey(const MatchKey& key);
    const MatchKey& key() const { return key_; }

private:
    MatchKey key_;
};

// Lexical predicates shared with the repository, wire and web modules.
bool is_ipv4_literal(std::string_view s);
bool is_valid_host(std::string_view s);
bool is_valid_port(int port);
/// Non-empty, no whitespace, no `|` and no `=`.
bool is_valid_name(std::string_view s);
/// As is_valid_name, and no `,` either.
bool is_valid_group_name(std::string_view s);

/// Empty result means the rule is valid; otherwise one entry per violated
/// invariant.
std::vector<std::string> validate_rule(const DacsRule& rule);
std::vector<std::string> validate_rule(const Rule& rule);

/// Looks up the rule matching `dst`. An exact host beats `*` at the same
/// port. The returned decision is final: callers never feed a rewrite back in.
Decision decide(const RuleSet& rules, const Destination& dst);

/// Combines one user's rules with one client's rules. Rules conflict iff
/// their MatchKeys are equal; the policy picks the survivor. Output order is
/// surviving user rules, then client-only rules, both in input order.
RuleSet merge_rules(const std::vector<DacsRule>& user_rules,
                    const std::vector<DacsRule>& client_rules,
                    PriorityPolicy policy, std::uint64_t version = 0);

/// Throws RuleError if two rules share a MatchKey.
void check_unique(const std::vector<Rule>& rules);

// Rule text grammar:
//   rewrite|<match_host>:<match_port>|<new_ip>:<new_port>
//   block|<match_host>:<match_port>
std::string format_rule(const Rule& rule);
inline std::string format_rule(const DacsRule& rule) { return format_rule(rule.directive()); }

/// Parses one rule line. Throws RuleError on grammar errors or invariant
/// violations.
Rule parse_rule(std::string_view text);
DacsRule parse_rule(std::string_view text, Subject subject);

/// Splits `host:port` at the last colon. The host is returned unvalidated;
/// the port must be 1-5 decimal digits.
std::optional<Destination> parse_host_port(std::string_view text);

std::string to_string(const Destination& dst);
std::string to_string(const MatchKey& key);
std::string to_string(const Decision& decision);
std::string to_string(PriorityPolicy policy);

}  // namespace dacs
