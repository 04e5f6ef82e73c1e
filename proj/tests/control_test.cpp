#include <doctest.h>

#include <future>
#include <map>
#include <mutex>
#include <random>

#include "dacs/agent.hpp"
#include "dacs/server.hpp"
#include "dacs/wire.hpp"
#include "test_support.hpp"

using namespace dacs;
using namespace std::chrono_literals;
using testing::EchoServer;
using testing::Recorder;
using testing::TempDir;

namespace {

AgentConfig config_for(std::string ip) {
    AgentConfig cfg;
    cfg.client_ip = std::move(ip);
    return cfg;
}

Rule rewrite(std::string host, int port, std::string ip, int to) {
    return Rule{MatchKey{std::move(host), port}, RewriteAction{Destination{std::move(ip), to}}};
}

Rule block(std::string host, int port) { return Rule{MatchKey{std::move(host), port}, BlockAction{}}; }

bool port_is_bound(int port) {
    try {
        net::connect_tcp("127.0.0.1", port, 500ms);
        return true;
    } catch (const net::ConnectError&) {
        return false;
    }
}

}  // namespace

TEST_CASE("install_ruleset") {
    Agent agent(config_for("10.0.0.1"));
    EchoServer echo;

    SUBCASE("initial install activates every rule") {
        agent.install_ruleset({1, {rewrite("svc", 80, "127.0.0.1", echo.port()), block("*", 25)}});
        CHECK(agent.version() == 1);
        CHECK(agent.redirectors().size() == 1);
        CHECK(std::holds_alternative<BlockAction>(agent.resolve({"mail", 25}).decision));
    }
    SUBCASE("installing the same rules twice keeps the listeners") {
        RuleSet rs{1, {rewrite("svc", 80, "127.0.0.1", echo.port())}};
        agent.install_ruleset(rs);
        auto before = agent.redirectors();
        rs.version = 2;
        agent.install_ruleset(rs);
        auto after = agent.redirectors();
        REQUIRE(after.size() == 1);
        CHECK(after[0].listen == before[0].listen);
        CHECK(agent.version() == 2);
    }
    SUBCASE("wildcard and non-intercepted hosts get no redirector") {
        auto cfg = config_for("10.0.0.1");
        cfg.intercept_hosts = std::set<std::string>{"wwwserver"};
        Agent picky(cfg);
        picky.install_ruleset({1, {rewrite("*", 80, "127.0.0.1", 1), rewrite("other", 80, "127.0.0.1", 2),
                                   rewrite("wwwserver", 80, "127.0.0.1", 3)}});
        REQUIRE(picky.redirectors().size() == 1);
        CHECK(picky.redirectors()[0].key.host == "wwwserver");
    }
    SUBCASE("duplicate keys are refused") {
        CHECK_THROWS_AS(agent.install_ruleset({1, {block("a", 1), block("a", 1)}}), InstallError);
        CHECK(agent.version() == 0);
    }
    SUBCASE("unbindable redirector leaves the previous snapshot active") {
        agent.install_ruleset({1, {block("*", 25)}});
        auto cfg = config_for("10.0.0.1");
        cfg.redirect_bind_ip = "203.0.113.7";  // not a local address
        Agent stuck(cfg);
        stuck.install_ruleset({1, {block("*", 25)}});
        CHECK_THROWS_AS(stuck.install_ruleset({2, {rewrite("svc", 80, "127.0.0.1", 1)}}), PortExhausted);
        CHECK(stuck.version() == 1);
        CHECK(stuck.redirectors().empty());
    }
}

TEST_CASE("open_connection") {
    EchoServer echo;

    SUBCASE("rewrite reaches the stand-in server") {
        Agent agent(config_for("10.0.0.1"));
        agent.install_ruleset({1, {rewrite("wwwserver", 80, "127.0.0.1", echo.port())}});
        auto conn = agent.open_connection({"wwwserver", 80});
        CHECK(conn.dial.effective == Destination{"127.0.0.1", echo.port()});
        CHECK(testing::exchange(conn.stream, "GET / HTTP/1.0\r\n\r\n") == "GET / HTTP/1.0\r\n\r\n");
    }
    SUBCASE("block never touches the wire") {
        EchoServer canary;
        Agent agent(config_for("10.0.0.1"));
        agent.install_ruleset({1, {block("127.0.0.1", canary.port())}});
        for (int i = 0; i < 10; ++i)
            CHECK_THROWS_AS(agent.open_connection({"127.0.0.1", canary.port()}), BlockedError);
        std::this_thread::sleep_for(50ms);
        CHECK(canary.accepted() == 0);
    }
    SUBCASE("pass connects directly and bytes round-trip unmodified") {
        Agent agent(config_for("10.0.0.1"));
        std::mt19937 rng(3);
        std::string payload(200000, '\0');
        for (auto& c : payload) c = static_cast<char>(rng());
        auto conn = agent.open_connection({"127.0.0.1", echo.port()});
        CHECK(std::holds_alternative<PassDecision>(conn.dial.decision));
        CHECK(testing::exchange(conn.stream, payload) == payload);
    }
    SUBCASE("blocked and unreachable are distinguishable") {
        Agent agent(config_for("10.0.0.1"));
        int dead = testing::free_port();
        agent.install_ruleset({1, {block("x", 1)}});
        CHECK_THROWS_AS(agent.open_connection({"x", 1}), BlockedError);
        CHECK_THROWS_AS(agent.open_connection({"127.0.0.1", dead}), net::ConnectError);
    }
    SUBCASE("preamble precedes application bytes") {
        Recorder rec;
        auto cfg = config_for("10.0.0.2");
        cfg.preamble = true;
        Agent agent(cfg);
        {
            auto conn = agent.open_connection({"127.0.0.1", rec.port()});
            conn.stream.write_all("hello");
        }
        REQUIRE(testing::eventually([&] { return rec.received().size() == 1; }));
        CHECK(rec.received()[0] == "DACS1 10.0.0.2\nhello");
    }
}

TEST_CASE("redirectors carry unmodified tools through the control layer") {
    EchoServer echo;
    Agent agent(config_for("10.0.0.1"));
    agent.install_ruleset({1, {rewrite("wwwserver", 80, "127.0.0.1", echo.port())}});
    auto r = agent.redirectors();
    REQUIRE(r.size() == 1);
    auto sock = net::connect_tcp(r[0].listen);
    CHECK(testing::exchange(sock, "through the redirector") == "through the redirector");

    SUBCASE("teardown after an empty rule set") {
        int port = r[0].listen.port;
        agent.install_ruleset({2, {}});
        CHECK(agent.redirectors().empty());
        CHECK_FALSE(port_is_bound(port));
    }
}

TEST_CASE("established connections keep their destination across installs") {
    EchoServer first, second;
    Agent agent(config_for("10.0.0.1"));
    agent.install_ruleset({1, {rewrite("svc", 80, "127.0.0.1", first.port())}});
    auto conn = agent.open_connection({"svc", 80});
    agent.install_ruleset({2, {rewrite("svc", 80, "127.0.0.1", second.port())}});
    CHECK(testing::exchange(conn.stream, "old") == "old");
    CHECK(first.accepted() == 1);
    CHECK(agent.open_connection({"svc", 80}).dial.effective->port == second.port());
}

TEST_CASE("agent login and push") {
    TempDir dir;
    EchoServer target_a, target_b;
    auto repo = dir / "repo";
    auto write_repo = [&](int port, bool with_block) {
        std::string text = "[policy]\npriority=user\n[user userA]\nrewrite|wwwserver:80|127.0.0.1:" +
                           std::to_string(port) + "\n";
        if (with_block) text += "rewrite|ftp:21|127.0.0.1:" + std::to_string(port) + "\n";
        testing::write_file(repo, text);
    };
    write_repo(target_a.port(), true);
    DacsServer server(repo, std::nullopt);
    server.start({"127.0.0.1", 0}, {"127.0.0.1", 0});
    net::Endpoint endpoint{"127.0.0.1", server.agent_port()};

    Agent agent(config_for("10.0.0.1"));
    agent.login(endpoint, "userA");
    CHECK(agent.redirectors().size() == 2);
    CHECK(agent.open_connection({"wwwserver", 80}).dial.effective->port == target_a.port());
    auto v1 = agent.version();
    REQUIRE(testing::eventually([&] { return server.session("10.0.0.1")->acked_version == v1; }));

    SUBCASE("push replaces the rules and tears down removed redirectors") {
        int ftp_port = 0;
        for (auto& r : agent.redirectors())
            if (r.key.host == "ftp") ftp_port = r.listen.port;
        write_repo(target_b.port(), false);
        CHECK(request_push({"127.0.0.1", server.control_port()}) == 1);
        REQUIRE(agent.wait_for_version(v1 + 1, 1s));
        CHECK(agent.open_connection({"wwwserver", 80}).dial.effective->port == target_b.port());
        CHECK(agent.redirectors().size() == 1);
        CHECK_FALSE(port_is_bound(ftp_port));
        auto v2 = agent.version();
        CHECK(testing::eventually([&] { return server.session("10.0.0.1")->acked_version == v2; }));
    }
    SUBCASE("unknown user gets an empty rule set") {
        Agent other(config_for("10.0.0.9"));
        other.login(endpoint, "nobody");
        CHECK(other.snapshot()->rules.empty());
        CHECK(other.redirectors().empty());
        CHECK(std::holds_alternative<PassDecision>(other.resolve({"wwwserver", 80}).decision));
    }
    SUBCASE("corrupt push changes nothing") {
        testing::write_file(repo, "[user userA\n");
        CHECK_THROWS_AS(request_push({"127.0.0.1", server.control_port()}), ReloadError);
        std::this_thread::sleep_for(100ms);
        CHECK(agent.version() == v1);
    }
}

TEST_CASE("every dial sees one whole snapshot while installs race") {
    EchoServer old_target, new_target;
    Agent agent(config_for("10.0.0.1"));
    const std::uint64_t n = 41;
    std::map<std::uint64_t, int> expected_port = {{n, old_target.port()}, {n + 1, new_target.port()}};
    agent.install_ruleset({n, {rewrite("svc", 80, "127.0.0.1", old_target.port())}});

    std::mutex mu;
    std::vector<VirtualDial> dials;
    std::atomic<bool> go{false};
    std::vector<std::thread> threads;
    for (int t = 0; t < 8; ++t) {
        threads.emplace_back([&] {
            while (!go) std::this_thread::yield();
            for (int i = 0; i < 125; ++i) {
                auto conn = agent.open_connection({"svc", 80});
                std::lock_guard lock(mu);
                dials.push_back(conn.dial);
            }
        });
    }
    go = true;
    agent.install_ruleset({n + 1, {rewrite("svc", 80, "127.0.0.1", new_target.port())}});
    for (auto& t : threads) t.join();

    CHECK(dials.size() == 1000);
    for (const auto& d : dials) {
        REQUIRE(expected_port.count(d.version) == 1);
        CHECK(d.effective->port == expected_port[d.version]);
    }
}

TEST_CASE("control socket answers status and dial") {
    TempDir dir;
    EchoServer echo, canary;
    Agent agent(config_for("10.0.0.1"));
    agent.install_ruleset({5, {rewrite("svc", 80, "127.0.0.1", echo.port()), block("mail", 25)}});
    auto path = (dir / "agent.sock").string();
    AgentControlServer control(agent, path);

    {
        auto s = net::connect_unix(path);
        auto status = testing::exchange(s, "STATUS\n");
        CHECK(status.find("version=5\n") != std::string::npos);
        CHECK(status.find("rule=block|mail:25\n") != std::string::npos);
        CHECK(status.find("redirect=svc:80 127.0.0.1:") != std::string::npos);
    }
    {
        auto s = net::connect_unix(path);
        auto reply = testing::exchange(s, "DIAL svc:80\nping");
        CHECK(reply == "OK 127.0.0.1:" + std::to_string(echo.port()) + "\nping");
    }
    {
        auto s = net::connect_unix(path);
        CHECK(testing::exchange(s, "DIAL mail:25\n") == "BLOCKED\n");
    }
}
