#include <doctest.h>

#include <sys/wait.h>

#include <cerrno>
#include <sstream>

#include "dacs/experiment.hpp"
#include "dacs/net.hpp"
#include "test_support.hpp"

using namespace dacs;
using namespace dacs::experiment;
using testing::TempDir;

namespace {

ExperimentConfig local_config(const TempDir& dir) {
    ExperimentConfig cfg;
    cfg.bin_dir = DACS_TOOLS_DIR;
    cfg.template_dir = DACS_COUNTER_APP;
    cfg.workdir = dir / "work";
    return cfg;
}

bool no_children_left() {
    errno = 0;
    return ::waitpid(-1, nullptr, WNOHANG) == -1 && errno == ECHILD;
}

}  // namespace

TEST_CASE("config file") {
    auto cfg = parse_config("# run\nserver_listen=7000\nbase_port = 4100\n"
                            "users=u1:G1:10.1.0.1,u2:G2:10.1.0.2,u3:G1:10.1.0.3\nseed=\nenforce=on\n");
    CHECK(cfg.server_listen == 7000);
    CHECK(cfg.base_port == 4100);
    CHECK(cfg.users == std::vector<SimUser>{{"u1", "G1", "10.1.0.1"}, {"u2", "G2", "10.1.0.2"}, {"u3", "G1", "10.1.0.3"}});
    CHECK(cfg.seed.empty());
    CHECK(cfg.enforce);

    auto defaults = parse_config("");
    CHECK(defaults.seed == std::map<std::string, long>{{"GroupA", 10}, {"GroupB", 4}});
    CHECK(defaults.users.size() == 2);

    for (const char* bad : {"colour=red", "base_port=70000", "users=userA:GroupA", "users=a:G:1.2.3.4,a:H:1.2.3.5",
                            "users=a:G:host", "seed=GroupA", "enforce=yes", "nonsense"})
        CHECK_THROWS_AS(parse_config(bad), ConfigError);
}

TEST_CASE("seeded run reproduces 11 and 5") {
    TempDir dir;
    std::ostringstream out;
    auto report = run_experiment(local_config(dir), out);
    INFO(out.str());
    CHECK(report.ok());
    CHECK(report.bodies == std::map<std::string, std::string>{{"userA", "11"}, {"userB", "5"}});
    CHECK(report.lines.back().rfind("SUMMARY PASS", 0) == 0);
    CHECK(out.str().find("MAP original 192.168.1.1:3000 (GroupA)") != std::string::npos);
    CHECK(no_children_left());
}

TEST_CASE("fresh state and a shared group") {
    TempDir dir;
    auto cfg = local_config(dir);
    cfg.seed.clear();
    cfg.users.push_back({"userC", "GroupA", "10.0.0.3"});
    std::ostringstream out;
    auto report = run_experiment(cfg, out);
    INFO(out.str());
    CHECK(report.ok());
    CHECK(report.bodies == std::map<std::string, std::string>{{"userA", "1"}, {"userB", "1"}, {"userC", "2"}});
}

TEST_CASE("enforcement access matrix") {
    TempDir dir;
    auto cfg = local_config(dir);
    cfg.enforce = true;
    cfg.users.push_back({"userC", "GroupC", "10.0.0.3"});
    std::ostringstream out;
    auto report = run_experiment(cfg, out);
    INFO(out.str());
    CHECK(report.ok());
    CHECK(out.str().find("ASSERT access_matrix PASS 9/9 cells") != std::string::npos);
}

TEST_CASE("setup failures name the component") {
    TempDir dir;
    auto cfg = local_config(dir);

    SUBCASE("missing binary") {
        cfg.bin_dir = dir / "nowhere";
        try {
            std::ostringstream out;
            run_experiment(cfg, out);
            FAIL("expected SetupError");
        } catch (const SetupError& e) {
            CHECK(e.component() == "dacsd");
        }
    }
    SUBCASE("web server cannot bind") {
        auto held = net::Listener::bind("127.0.0.1", 0);
        cfg.base_port = held.port();
        try {
            std::ostringstream out;
            run_experiment(cfg, out);
            FAIL("expected SetupError");
        } catch (const SetupError& e) {
            CHECK(e.component() == "dacsweb");
        }
    }
    SUBCASE("seed for a group nobody is in") {
        cfg.seed["GroupQ"] = 1;
        std::ostringstream out;
        CHECK_THROWS_AS(run_experiment(cfg, out), SetupError);
    }
    CHECK(no_children_left());
}
