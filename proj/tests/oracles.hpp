#pragma once

// Independent reference implementations used only by tests. They are written
// against the contracts, not by reusing library code paths.

#include <algorithm>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "dacs/rules.hpp"

namespace oracle {

/// Scores every rule against dst (2 = exact host, 1 = wildcard host, 0 = no
/// match) and returns the action of the unique best-scoring rule.
inline dacs::Decision decide(const dacs::RuleSet& rs, const dacs::Destination& dst) {
    int best = 0;
    std::optional<dacs::RuleAction> action;
    for (const auto& r : rs.rules) {
        int score = 0;
        if (r.match.port == dst.port) score = r.match.host == dst.host ? 2 : (r.match.host == "*" ? 1 : 0);
        if (score > best) {
            best = score;
            action = r.action;
        }
    }
    if (!action) return dacs::PassDecision{};
    if (auto* rw = std::get_if<dacs::RewriteAction>(&*action)) return *rw;
    return dacs::BlockAction{};
}

/// Partition-by-MatchKey merge. Returns nullopt where the library must throw
/// DuplicateMatchKey.
inline std::optional<dacs::RuleSet> merge(const std::vector<dacs::DacsRule>& user,
                                          const std::vector<dacs::DacsRule>& client,
                                          dacs::PriorityPolicy policy) {
    struct Partition {
        std::vector<std::size_t> user_idx;
        std::vector<std::size_t> client_idx;
    };
    std::map<std::tuple<std::string, int>, Partition> parts;
    for (std::size_t i = 0; i < user.size(); ++i)
        parts[{user[i].match.host, user[i].match.port}].user_idx.push_back(i);
    for (std::size_t i = 0; i < client.size(); ++i)
        parts[{client[i].match.host, client[i].match.port}].client_idx.push_back(i);

    // (section, index): section 0 = user list, 1 = client list
    std::vector<std::pair<int, std::size_t>> winners;
    for (const auto& [key, p] : parts) {
        if (p.user_idx.size() > 1 || p.client_idx.size() > 1) return std::nullopt;
        if (p.client_idx.empty()) {
            winners.emplace_back(0, p.user_idx[0]);
        } else if (p.user_idx.empty()) {
            winners.emplace_back(1, p.client_idx[0]);
        } else {
            const auto& u = user[p.user_idx[0]];
            const auto& c = client[p.client_idx[0]];
            bool same = u.action == c.action;
            if (same || policy == dacs::PriorityPolicy::UserPriority)
                winners.emplace_back(0, p.user_idx[0]);
            else
                winners.emplace_back(1, p.client_idx[0]);
        }
    }
    std::sort(winners.begin(), winners.end());
    dacs::RuleSet rs;
    for (auto [section, idx] : winners) {
        const auto& r = section == 0 ? user[idx] : client[idx];
        rs.rules.push_back(dacs::Rule{r.match, r.action});
    }
    return rs;
}

// Function alpha over a records.txt store; membership is fixed.
inline const std::map<std::string, std::vector<std::string>> kMembership = {
    {"userA", {"GroupA"}}, {"userB", {"GroupB", "GroupC"}}, {"userC", {"GroupC"}}};

/// Line-by-line filter; nullopt stands for 403.
inline std::optional<std::vector<std::string>> alpha_oracle(const std::string& store_text, int function,
                                                     const std::optional<std::string>& user,
                                                     const std::optional<std::string>& group_param) {
    if (function != 3 && !user) return std::nullopt;
    std::vector<std::string> mine = user ? kMembership.at(*user) : std::vector<std::string>{};
    auto member = [&](const std::string& g) { return std::count(mine.begin(), mine.end(), g) > 0; };
    if (function == 2 && group_param && !member(*group_param)) return std::nullopt;

    std::vector<std::string> out;
    std::istringstream in(store_text);
    std::string line;
    while (std::getline(in, line)) {
        auto a = line.find('|'), b = line.find('|', a + 1);
        std::string owner = line.substr(0, a), group = line.substr(a + 1, b - a - 1), payload = line.substr(b + 1);
        bool take = function == 3 || (function == 1 && owner == *user) ||
                    (function == 2 && (group_param ? group == *group_param : member(group)));
        if (take) out.push_back(payload);
    }
    return out;
}

}  // namespace oracle
