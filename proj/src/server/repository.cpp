#include "dacs/repository.hpp"

#include <fstream>
#include <set>
#include <sstream>

namespace dacs {

namespace {

std::string_view trim(std::string_view s) {
    auto first = s.find_first_not_of(" \t\r");
    if (first == std::string_view::npos) return {};
    auto last = s.find_last_not_of(" \t\r");
    return s.substr(first, last - first + 1);
}

enum class Section { None, Policy, User, Client, Groups };

}  // namespace

RepositoryError::RepositoryError(Kind kind, int line, const std::string& what)
    : std::runtime_error(line > 0 ? "line " + std::to_string(line) + ": " + what : what),
      kind_(kind),
      line_(line) {}

Repository parse_repository(std::string_view text) {
    Repository repo;
    Section section = Section::None;
    std::string subject;
    int lineno = 0;

    auto parse_error = [&](const std::string& what) {
        return RepositoryError(RepositoryError::Kind::ParseError, lineno, what);
    };
    auto violation = [&](const std::string& what) {
        return RepositoryError(RepositoryError::Kind::InvariantViolation, lineno, what);
    };

    std::size_t pos = 0;
    while (pos <= text.size()) {
        auto lf = text.find('\n', pos);
        auto raw = text.substr(pos, lf == std::string_view::npos ? text.npos : lf - pos);
        pos = lf == std::string_view::npos ? text.size() + 1 : lf + 1;
        ++lineno;

        auto hash = raw.find('#');
        auto line = trim(hash == std::string_view::npos ? raw : raw.substr(0, hash));
        if (line.empty()) continue;

        if (line.front() == '[') {
            if (line.back() != ']') throw parse_error("unterminated section header");
            auto header = trim(line.substr(1, line.size() - 2));
            auto space = header.find(' ');
            auto kind = header.substr(0, space);
            auto arg = space == std::string_view::npos ? std::string_view{} : trim(header.substr(space + 1));
            if (kind == "policy" && arg.empty()) {
                section = Section::Policy;
            } else if (kind == "groups" && arg.empty()) {
                section = Section::Groups;
            } else if (kind == "user" && !arg.empty()) {
                if (!is_valid_name(arg)) throw violation("invalid user name '" + std::string(arg) + "'");
                section = Section::User;
                subject = arg;
                repo.user_rules[subject];
            } else if (kind == "client" && !arg.empty()) {
                if (!is_ipv4_literal(arg)) throw violation("client is not an IPv4 literal: " + std::string(arg));
                section = Section::Client;
                subject = arg;
                repo.client_rules[subject];
            } else {
                throw parse_error("unknown section [" + std::string(header) + "]");
            }
            continue;
        }

        switch (section) {
            case Section::None:
                throw parse_error("content outside any section");
            case Section::Policy: {
                if (line == "priority=user")
                    repo.policy = PriorityPolicy::UserPriority;
                else if (line == "priority=client")
                    repo.policy = PriorityPolicy::ClientPriority;
                else
                    throw parse_error("expected priority=user or priority=client");
                break;
            }
            case Section::User:
            case Section::Client: {
                Subject subj = section == Section::User ? Subject{UserSubject{subject}}
                                                        : Subject{ClientSubject{subject}};
                DacsRule rule;
                try {
                    rule = parse_rule(line, subj);
                } catch (const RuleError& e) {
                    throw parse_error(e.what());
                }
                auto& list = section == Section::User ? repo.user_rules[subject] : repo.client_rules[subject];
                for (const auto& existing : list)
                    if (existing.match == rule.match)
                        throw violation("duplicate match key " + to_string(rule.match) + " for " + subject);
                list.push_back(std::move(rule));
                break;
            }
            case Section::Groups: {
                auto eq = line.find('=');
                if (eq == std::string_view::npos) throw parse_error("expected user=group[,group...]");
                std::string user(trim(line.substr(0, eq)));
                auto list = trim(line.substr(eq + 1));
                if (!is_valid_name(user)) throw violation("invalid user name '" + user + "'");
                if (repo.groups.count(user)) throw violation("duplicate groups entry for " + user);
                std::vector<std::string> groups;
                std::set<std::string> seen;
                std::size_t start = 0;
                while (true) {
                    auto comma = list.find(',', start);
                    std::string g(trim(list.substr(start, comma == std::string_view::npos ? list.npos : comma - start)));
                    if (!is_valid_group_name(g)) throw violation("invalid group name '" + g + "'");
                    if (!seen.insert(g).second) throw violation("group " + g + " listed twice for " + user);
                    groups.push_back(std::move(g));
                    if (comma == std::string_view::npos) break;
                    start = comma + 1;
                }
                repo.groups[user] = std::move(groups);
                break;
            }
        }
    }
    return repo;
}

Repository load_repository(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw RepositoryError(RepositoryError::Kind::IoError, 0, "cannot read " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    if (in.bad()) throw RepositoryError(RepositoryError::Kind::IoError, 0, "read failed: " + path.string());
    return parse_repository(ss.str());
}

std::vector<std::string> get_groups(const Repository& repo, const std::string& user) {
    auto it = repo.groups.find(user);
    return it == repo.groups.end() ? std::vector<std::string>{} : it->second;
}

RuleSet compose_rules(const Repository& repo, const std::string& user,
                      const std::string& client_ip, std::uint64_t version) {
    static const std::vector<DacsRule> none;
    auto u = repo.user_rules.find(user);
    auto c = repo.client_rules.find(client_ip);
    return merge_rules(u == repo.user_rules.end() ? none : u->second,
                       c == repo.client_rules.end() ? none : c->second, repo.policy, version);
}

}  // namespace dacs
