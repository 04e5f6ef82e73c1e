#include <doctest.h>

#include <map>
#include <random>

#include "dacs/rules.hpp"
#include "oracles.hpp"

using namespace dacs;

namespace {

DacsRule user_rewrite(std::string user, std::string host, int port, std::string ip, int to) {
    return DacsRule{UserSubject{std::move(user)}, MatchKey{std::move(host), port},
                    RewriteAction{Destination{std::move(ip), to}}};
}

Rule rewrite(std::string host, int port, std::string ip, int to) {
    return Rule{MatchKey{std::move(host), port}, RewriteAction{Destination{std::move(ip), to}}};
}

Rule block(std::string host, int port) { return Rule{MatchKey{std::move(host), port}, BlockAction{}}; }

}  // namespace

TEST_CASE("validate_rule accepts the provisioned group rewrite") {
    auto rule = user_rewrite("userA", "wwwserver", 80, "192.168.1.1", 3000);
    CHECK(validate_rule(rule).empty());
}

TEST_CASE("validate_rule names each violated invariant") {
    SUBCASE("port zero") {
        auto rule = user_rewrite("userA", "wwwserver", 0, "192.168.1.1", 3000);
        auto v = validate_rule(rule);
        REQUIRE(v.size() == 1);
        CHECK(v[0] == "port out of range");
    }
    SUBCASE("empty user") {
        auto rule = user_rewrite("", "wwwserver", 80, "192.168.1.1", 3000);
        auto v = validate_rule(rule);
        REQUIRE(v.size() == 1);
        CHECK(v[0] == "empty user name");
    }
    SUBCASE("several at once") {
        DacsRule rule{ClientSubject{"300.1.1.1"}, MatchKey{"a b", 70000},
                      RewriteAction{Destination{"example.com", 80}}};
        CHECK(validate_rule(rule).size() == 4);
    }
    SUBCASE("user names reject separators") {
        CHECK_FALSE(validate_rule(user_rewrite("a|b", "h", 1, "1.2.3.4", 1)).empty());
        CHECK_FALSE(validate_rule(user_rewrite("a=b", "h", 1, "1.2.3.4", 1)).empty());
    }
    SUBCASE("rewrite to localhost is allowed, wildcard match host too") {
        Rule r = rewrite("*", 9000, "localhost", 15000);
        CHECK(validate_rule(r).empty());
    }
}

TEST_CASE("ipv4 literal syntax") {
    CHECK(is_ipv4_literal("192.168.10.5"));
    CHECK(is_ipv4_literal("0.0.0.0"));
    CHECK_FALSE(is_ipv4_literal("192.168.10"));
    CHECK_FALSE(is_ipv4_literal("192.168.010.5"));
    CHECK_FALSE(is_ipv4_literal("256.1.1.1"));
    CHECK_FALSE(is_ipv4_literal("1.2.3.4."));
    CHECK_FALSE(is_ipv4_literal("a.b.c.d"));
}

TEST_CASE("decide") {
    SUBCASE("wildcard rewrite") {
        RuleSet rs{1, {rewrite("*", 80, "192.168.1.1", 3001)}};
        CHECK(decide(rs, {"wwwserver", 80}) == Decision{RewriteAction{{"192.168.1.1", 3001}}});
    }
    SUBCASE("empty set passes") {
        CHECK(decide(RuleSet{}, {"anything", 443}) == Decision{PassDecision{}});
    }
    SUBCASE("exact beats wildcard at the same port") {
        RuleSet rs{1, {block("*", 25), rewrite("mail-host", 25, "10.0.0.9", 25)}};
        CHECK(decide(rs, {"mail-host", 25}) == Decision{RewriteAction{{"10.0.0.9", 25}}});
        CHECK(decide(rs, {"other", 25}) == Decision{BlockAction{}});
        CHECK(decide(rs, {"other", 26}) == Decision{PassDecision{}});
    }
    SUBCASE("no chaining") {
        RuleSet rs{1, {rewrite("a", 80, "10.0.0.1", 81), rewrite("10.0.0.1", 81, "10.0.0.2", 82)}};
        CHECK(decide(rs, {"a", 80}) == Decision{RewriteAction{{"10.0.0.1", 81}}});
    }
}

TEST_CASE("decide agrees with the brute-force matcher over a 3-host x 2-port universe") {
    const std::vector<std::string> hosts = {"mail-host", "other", "third"};
    const std::vector<int> ports = {25, 80};
    std::vector<MatchKey> keys;
    for (auto& h : hosts)
        for (int p : ports) keys.push_back({h, p});
    for (int p : ports) keys.push_back({"*", p});
    const std::vector<RuleAction> actions = {BlockAction{}, RewriteAction{{"10.0.0.9", 25}}};

    // every subset of keys (2^8) with a per-key action choice drawn from a seed
    std::mt19937 rng(7);
    for (unsigned mask = 0; mask < (1u << keys.size()); ++mask) {
        RuleSet rs;
        for (std::size_t k = 0; k < keys.size(); ++k)
            if (mask & (1u << k)) rs.rules.push_back(Rule{keys[k], actions[rng() % actions.size()]});
        std::shuffle(rs.rules.begin(), rs.rules.end(), rng);
        for (auto& h : hosts)
            for (int p : ports) {
                Destination dst{h, p};
                CHECK(decide(rs, dst) == oracle::decide(rs, dst));
                CHECK(decide(rs, dst) == decide(rs, dst));
            }
    }
}

TEST_CASE("merge_rules basics") {
    auto A = RewriteAction{{"10.0.0.1", 80}};
    auto B = RewriteAction{{"10.0.0.2", 80}};
    DacsRule u{UserSubject{"userA"}, {"w", 80}, A};
    DacsRule c{ClientSubject{"192.168.10.5"}, {"w", 80}, B};

    SUBCASE("empty client side is identity") {
        auto rs = merge_rules({u}, {}, PriorityPolicy::ClientPriority, 3);
        CHECK(rs.version == 3);
        CHECK(rs.rules == std::vector<Rule>{u.directive()});
    }
    SUBCASE("user priority keeps the user's rule") {
        auto rs = merge_rules({u}, {c}, PriorityPolicy::UserPriority);
        CHECK(rs.rules == std::vector<Rule>{u.directive()});
    }
    SUBCASE("policy flip swaps the survivor") {
        auto rs = merge_rules({u}, {c}, PriorityPolicy::ClientPriority);
        CHECK(rs.rules == std::vector<Rule>{c.directive()});
    }
    SUBCASE("identical pair keeps one copy") {
        DacsRule same{ClientSubject{"192.168.10.5"}, {"w", 80}, A};
        for (auto p : {PriorityPolicy::UserPriority, PriorityPolicy::ClientPriority})
            CHECK(merge_rules({u}, {same}, p).rules == std::vector<Rule>{u.directive()});
    }
    SUBCASE("exact and wildcard keys are not a conflict") {
        DacsRule wild{ClientSubject{"192.168.10.5"}, {"*", 80}, BlockAction{}};
        auto rs = merge_rules({u}, {wild}, PriorityPolicy::ClientPriority);
        CHECK(rs.rules.size() == 2);
    }
    SUBCASE("duplicate key within one list is rejected") {
        CHECK_THROWS_AS(merge_rules({u, u}, {}, PriorityPolicy::UserPriority), DuplicateMatchKey);
        CHECK_THROWS_AS(merge_rules({}, {c, c}, PriorityPolicy::UserPriority), DuplicateMatchKey);
    }
}

TEST_CASE("merge_rules properties over random inputs") {
    std::mt19937 rng(2024);
    const std::vector<std::string> hosts = {"a", "b", "*", "c"};
    const std::vector<int> ports = {25, 80, 443};
    auto random_list = [&](Subject subject) {
        std::vector<DacsRule> out;
        std::map<MatchKey, bool> used;
        int n = static_cast<int>(rng() % 6);
        for (int i = 0; i < n; ++i) {
            MatchKey key{hosts[rng() % hosts.size()], ports[rng() % ports.size()]};
            if (used[key]) continue;
            used[key] = true;
            RuleAction action = rng() % 3 == 0 ? RuleAction{BlockAction{}}
                                               : RuleAction{RewriteAction{{"10.0.0." + std::to_string(rng() % 3 + 1), 80}}};
            out.push_back(DacsRule{subject, key, action});
        }
        return out;
    };
    for (int iter = 0; iter < 2000; ++iter) {
        auto u = random_list(UserSubject{"u"});
        auto c = random_list(ClientSubject{"10.1.1.1"});
        for (auto p : {PriorityPolicy::UserPriority, PriorityPolicy::ClientPriority}) {
            auto rs = merge_rules(u, c, p);
            CHECK_NOTHROW(check_unique(rs.rules));
            auto expected = oracle::merge(u, c, p);
            REQUIRE(expected);
            CHECK(rs == *expected);

            std::vector<Rule> only_u, only_c;
            for (auto& r : u) only_u.push_back(r.directive());
            for (auto& r : c) only_c.push_back(r.directive());
            CHECK(merge_rules(u, {}, p).rules == only_u);
            CHECK(merge_rules({}, c, p).rules == only_c);
        }
    }
}

TEST_CASE("rule text round trip") {
    std::mt19937 rng(99);
    for (int i = 0; i < 500; ++i) {
        Rule r;
        r.match = MatchKey{i % 5 == 0 ? "*" : "host" + std::to_string(rng() % 100),
                           static_cast<int>(rng() % 65535) + 1};
        if (rng() % 2)
            r.action = BlockAction{};
        else
            r.action = RewriteAction{{std::to_string(rng() % 256) + ".0.0." + std::to_string(rng() % 256),
                                      static_cast<int>(rng() % 65535) + 1}};
        auto text = format_rule(r);
        CHECK(parse_rule(text) == r);
    }
    CHECK(format_rule(rewrite("wwwserver", 80, "192.168.1.1", 3000)) ==
          "rewrite|wwwserver:80|192.168.1.1:3000");
    CHECK(format_rule(block("*", 25)) == "block|*:25");
}

TEST_CASE("rule text rejects malformed lines") {
    for (const char* bad : {"", "rewrite", "rewrite|a:80", "block|a:80|1.2.3.4:5", "allow|a:80",
                            "block|a", "block|a:0", "rewrite|a:80|host:80", "block|a b:80",
                            "rewrite|a:80|1.2.3.4:99999", "block|:80"}) {
        CAPTURE(bad);
        CHECK_THROWS_AS(parse_rule(bad), RuleError);
    }
}
