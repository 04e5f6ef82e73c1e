#pragma once

#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "dacs/rules.hpp"

namespace dacs {

/// The policy server's rule store, loaded from one flat file:
///
///   [policy]
///   priority=user            # or: client
///   [user userA]
///   rewrite|wwwserver:80|127.0.0.1:3000
///   [client 192.168.10.5]
///   block|*:25
///   [groups]
///   userA=GroupA
///   userB=GroupB,GroupC
///
/// `#` starts a comment anywhere on a line. A missing [policy] section means
/// user priority. Sections may repeat; their rules append.
struct Repository {
    PriorityPolicy policy = PriorityPolicy::UserPriority;
    std::map<std::string, std::vector<DacsRule>> user_rules;
    std::map<std::string, std::vector<DacsRule>> client_rules;
    std::map<std::string, std::vector<std::string>> groups;

    bool operator==(const Repository&) const = default;
};

class RepositoryError : public std::runtime_error {
public:
    enum class Kind { ParseError, InvariantViolation, IoError };

    RepositoryError(Kind kind, int line, const std::string& what);
    Kind kind() const { return kind_; }
    /// 1-based line number, 0 when not tied to a line.
    int line() const { return line_; }

private:
    Kind kind_;
    int line_;
};

Repository parse_repository(std::string_view text);
Repository load_repository(const std::filesystem::path& path);

/// Groups of `user` in file order; empty for unknown users.
std::vector<std::string> get_groups(const Repository& repo, const std::string& user);

/// merge_rules over the user's and the client's lists (either may be absent).
RuleSet compose_rules(const Repository& repo, const std::string& user,
                      const std::string& client_ip, std::uint64_t version);

}  // namespace dacs
