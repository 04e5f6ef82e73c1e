#include "dacs/experiment.hpp"

#include <fcntl.h>
#include <signal.h>
#include <stdlib.h>
#include <sys/prctl.h>
#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <fstream>
#include <iterator>
#include <mutex>
#include <ostream>
#include <set>
#include <sstream>
#include <thread>

#include "dacs/agent.hpp"
#include "dacs/net.hpp"
#include "dacs/provision.hpp"
#include "dacs/rules.hpp"
#include "dacs/web.hpp"

namespace dacs::experiment {

namespace {

using Clock = std::chrono::steady_clock;
using namespace std::chrono_literals;

int parse_int(const std::string& key, const std::string& value, int lo, int hi) {
    try {
        std::size_t used = 0;
        long v = std::stol(value, &used);
        if (used == value.size() && v >= lo && v <= hi) return static_cast<int>(v);
    } catch (const std::exception&) {
    }
    throw ConfigError(key + ": expected an integer in [" + std::to_string(lo) + ", " + std::to_string(hi) + "]");
}

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    if (s.empty()) return out;
    std::size_t start = 0;
    while (true) {
        auto pos = s.find(sep, start);
        out.push_back(s.substr(start, pos - start));
        if (pos == std::string::npos) return out;
        start = pos + 1;
    }
}

std::string trim(std::string s) {
    auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return {};
    auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

/// dacsd or dacsweb running as a child; terminated and reaped on destruction.
class Child {
public:
    Child(std::string name, const std::vector<std::string>& args, const fs::path& log) : name_(std::move(name)), log_(log) {
        std::vector<char*> argv;
        for (const auto& a : args) argv.push_back(const_cast<char*>(a.c_str()));
        argv.push_back(nullptr);
        std::string log_path = log.string();
        pid_t parent = ::getpid();
        pid_ = ::fork();
        if (pid_ < 0) throw SetupError(name_, "fork failed");
        if (pid_ == 0) {
            ::prctl(PR_SET_PDEATHSIG, SIGTERM);
            if (::getppid() != parent) ::_exit(127);
            int fd = ::open(log_path.c_str(), O_WRONLY | O_CREAT | O_TRUNC, 0644);
            int null = ::open("/dev/null", O_RDONLY);
            if (fd >= 0) {
                ::dup2(fd, 1);
                ::dup2(fd, 2);
            }
            if (null >= 0) ::dup2(null, 0);
            ::execv(argv[0], argv.data());
            ::_exit(127);
        }
    }
    ~Child() {
        if (pid_ <= 0 || reaped_) return;
        ::kill(pid_, SIGTERM);
        auto deadline = Clock::now() + 3s;
        while (Clock::now() < deadline) {
            if (::waitpid(pid_, nullptr, WNOHANG) == pid_) return;
            std::this_thread::sleep_for(10ms);
        }
        ::kill(pid_, SIGKILL);
        ::waitpid(pid_, nullptr, 0);
    }
    Child(const Child&) = delete;
    Child& operator=(const Child&) = delete;

    bool running() {
        if (reaped_) return false;
        int status = 0;
        if (::waitpid(pid_, &status, WNOHANG) == pid_) {
            reaped_ = true;
            return false;
        }
        return true;
    }

    /// Waits until every port accepts a connection.
    void wait_listening(const std::vector<int>& ports, std::chrono::milliseconds limit = 5000ms) {
        auto deadline = Clock::now() + limit;
        std::size_t next = 0;
        while (next < ports.size()) {
            if (!running()) throw SetupError(name_, "exited during startup; log " + log_.string() + ":\n" + tail());
            if (Clock::now() > deadline)
                throw SetupError(name_, "not listening on port " + std::to_string(ports[next]) + " after " +
                                            std::to_string(limit.count()) + " ms");
            try {
                net::connect_tcp("127.0.0.1", ports[next], 200ms);
                ++next;
            } catch (const net::NetError&) {
                std::this_thread::sleep_for(20ms);
            }
        }
    }

    std::string tail() const {
        auto text = slurp(log_);
        return text.size() > 2000 ? text.substr(text.size() - 2000) : text;
    }

private:
    std::string name_;
    fs::path log_;
    pid_t pid_ = -1;
    bool reaped_ = false;
};

int free_port() {
    return net::Listener::bind("127.0.0.1", 0).port();
}

/// First of `n` consecutive ports that could all be bound just now.
int free_port_range(int n) {
    for (int attempt = 0; attempt < 200; ++attempt) {
        int base = free_port();
        if (base + n - 1 > 65535) continue;
        try {
            std::vector<net::Listener> held;
            for (int i = 0; i < n; ++i) held.push_back(net::Listener::bind("127.0.0.1", base + i));
            return base;
        } catch (const net::BindError&) {
        }
    }
    throw SetupError("ports", "no free range of " + std::to_string(n) + " ports");
}

fs::path self_dir() {
    std::error_code ec;
    auto exe = fs::read_symlink("/proc/self/exe", ec);
    return ec ? fs::current_path() : exe.parent_path();
}

class Printer {
public:
    Printer(std::ostream& out, Report& report) : out_(out), report_(report) {}
    void line(const std::string& text) {
        out_ << text << "\n" << std::flush;
        report_.lines.push_back(text);
    }
    void check(const std::string& name, bool pass, const std::string& detail) {
        report_.checks.push_back({name, pass, detail});
        line("ASSERT " + name + (pass ? " PASS " : " FAIL ") + detail);
    }

private:
    std::ostream& out_;
    Report& report_;
};

struct Fetch {
    int status = 0;
    std::string body;
    VirtualDial dial;
};

Fetch fetch_via(Agent& agent, const Destination& dst, const std::string& target) {
    auto conn = agent.open_connection(dst, 2s);
    conn.stream.set_recv_timeout(10s);
    auto resp = web::fetch(conn.stream, "GET", target, dst.host);
    return {resp.status, resp.body, conn.dial};
}

}  // namespace

bool Report::ok() const {
    return !checks.empty() && std::all_of(checks.begin(), checks.end(), [](const Check& c) { return c.pass; });
}

ExperimentConfig parse_config(std::string_view text) {
    ExperimentConfig cfg;
    std::istringstream in{std::string(text)};
    std::string raw;
    int lineno = 0;
    while (std::getline(in, raw)) {
        ++lineno;
        auto hash = raw.find('#');
        auto line = trim(raw.substr(0, hash));
        if (line.empty()) continue;
        auto eq = line.find('=');
        if (eq == std::string::npos) throw ConfigError("line " + std::to_string(lineno) + ": expected key=value");
        auto key = trim(line.substr(0, eq));
        auto value = trim(line.substr(eq + 1));
        try {
            if (key == "server_listen") {
                cfg.server_listen = parse_int(key, value, 0, 65535);
            } else if (key == "server_control") {
                cfg.server_control = parse_int(key, value, 0, 65535);
            } else if (key == "web_identity_listen") {
                cfg.web_identity_listen = parse_int(key, value, 0, 65535);
            } else if (key == "base_port") {
                cfg.base_port = parse_int(key, value, 0, 65535);
            } else if (key == "vhost_port") {
                cfg.vhost_port = parse_int(key, value, 1, 65535);
            } else if (key == "vhost_name") {
                if (!is_valid_host(value) || value == "*") throw ConfigError("vhost_name: bad host");
                cfg.vhost_name = value;
            } else if (key == "users") {
                cfg.users.clear();
                std::set<std::string> names;
                for (const auto& item : split(value, ',')) {
                    auto f = split(item, ':');
                    if (f.size() != 3 || !is_valid_name(f[0]) || !is_valid_group_name(f[1]) || !is_ipv4_literal(f[2]))
                        throw ConfigError("users: expected user:group:ipv4, got '" + item + "'");
                    if (!names.insert(f[0]).second) throw ConfigError("users: " + f[0] + " listed twice");
                    cfg.users.push_back({f[0], f[1], f[2]});
                }
            } else if (key == "seed") {
                cfg.seed.clear();
                for (const auto& item : split(value, ',')) {
                    auto colon = item.find(':');
                    if (colon == std::string::npos) throw ConfigError("seed: expected group:count, got '" + item + "'");
                    cfg.seed[item.substr(0, colon)] = parse_int(key, item.substr(colon + 1), 0, 1000000000);
                }
            } else if (key == "enforce") {
                if (value != "on" && value != "off") throw ConfigError("enforce: on or off");
                cfg.enforce = value == "on";
            } else if (key == "workdir") {
                cfg.workdir = value;
            } else if (key == "template") {
                cfg.template_dir = value;
            } else if (key == "bin_dir") {
                cfg.bin_dir = value;
            } else {
                throw ConfigError("unknown key '" + key + "'");
            }
        } catch (const ConfigError& e) {
            throw ConfigError("line " + std::to_string(lineno) + ": " + e.what());
        }
    }
    return cfg;
}

Report run_experiment(const ExperimentConfig& config, std::ostream& out) {
    auto started = Clock::now();
    Report report;
    Printer print(out, report);

    if (config.users.empty()) throw SetupError("config", "no users");
    std::vector<std::string> groups;
    std::map<std::string, std::string> user_group;
    for (const auto& u : config.users) {
        if (std::find(groups.begin(), groups.end(), u.group) == groups.end()) groups.push_back(u.group);
        user_group[u.name] = u.group;
    }
    for (const auto& [g, n] : config.seed)
        if (std::find(groups.begin(), groups.end(), g) == groups.end())
            throw SetupError("config", "seed for " + g + ", which no user belongs to");

    auto bin_dir = config.bin_dir.empty() ? self_dir() : config.bin_dir;
    auto template_dir = config.template_dir.empty() ? self_dir() / ".." / "fucgip" / "counter-app" : config.template_dir;
    for (const char* tool : {"dacsd", "dacsweb"})
        if (::access((bin_dir / tool).c_str(), X_OK) != 0)
            throw SetupError(tool, "no executable at " + (bin_dir / tool).string());

    fs::path workdir = config.workdir;
    if (workdir.empty()) {
        char tmpl[] = "/tmp/dacs-sim-XXXXXX";
        if (::mkdtemp(tmpl) == nullptr) throw SetupError("workdir", "mkdtemp failed");
        workdir = tmpl;
        report.scratch = true;
    }
    report.workdir = workdir;
    fs::create_directories(workdir);
    print.line("WORKDIR " + workdir.string());

    // Step 1 and 2: clone per group, map each clone to its own socket.
    provision::ProvisionPlan plan;
    plan.app_name = "counter";
    plan.source_dir = template_dir;
    plan.groups = groups;
    plan.base_ip = "127.0.0.1";
    plan.base_port = config.base_port != 0 ? config.base_port : free_port_range(static_cast<int>(groups.size()));
    plan.virtual_host_name = config.vhost_name;
    plan.virtual_port = config.vhost_port;
    plan.out_dir = workdir / "sites";
    plan.preamble = true;
    provision::ProvisionResult sites;
    try {
        sites = provision::provision(plan);
    } catch (const provision::ProvisionError& e) {
        throw SetupError("provision", e.what());
    }
    for (const auto& w : sites.warnings) print.line("WARN " + w);
    for (const auto& [g, n] : config.seed) {
        std::ofstream(sites.site(g)->dir / "cgi-bin" / "count.txt", std::ios::trunc) << n << "\n";
    }
    auto repo_path = workdir / "repository.conf";
    std::ofstream(repo_path, std::ios::trunc) << "[policy]\npriority=user\n"
                                              << provision::gen_repo_fragment(sites, user_group);

    int identity_port = config.web_identity_listen != 0 ? config.web_identity_listen : free_port();
    int listen_port = config.server_listen != 0 ? config.server_listen : free_port();
    int control_port = config.server_control != 0 ? config.server_control : free_port();
    auto local = [](int port) { return "127.0.0.1:" + std::to_string(port); };

    std::vector<std::string> web_args{(bin_dir / "dacsweb").string(), "serve", "--vhosts", sites.vhosts_file.string(),
                                      "--identity-listen", local(identity_port)};
    if (config.enforce) web_args.push_back("--enforce");
    Child web("dacsweb", web_args, workdir / "dacsweb.log");
    web.wait_listening({identity_port});

    Child server("dacsd",
                 {(bin_dir / "dacsd").string(), "serve", "--repo", repo_path.string(), "--listen", local(listen_port),
                  "--control", local(control_port), "--web-identity", local(identity_port)},
                 workdir / "dacsd.log");
    server.wait_listening({control_port});

    print.line("MAP original web server 192.168.1.1 -> testbed 127.0.0.1 (one loopback web server process)");
    for (std::size_t i = 0; i < sites.sites.size(); ++i) {
        const auto& s = sites.sites[i];
        print.line("MAP original 192.168.1.1:" + std::to_string(3000 + i) + " (" + s.group + ") -> testbed " +
                   s.binding.socket.str() + " docroot " + s.dir.string());
    }
    for (const auto& u : config.users)
        print.line("MAP original client of " + u.name + " -> simulated " + u.client_ip + " (preamble on loopback)");
    print.line("MAP original URL http://" + config.vhost_name + "/ -> virtual destination " + config.vhost_name + ":" +
               std::to_string(config.vhost_port) + " (rewritten before any lookup)");
    print.line("MAP dacsd agents " + local(listen_port) + " control " + local(control_port) + ", dacsweb identity " +
               local(identity_port));

    struct Observed {
        std::string user;
        VirtualDial dial;
    };
    std::mutex seen_mu;
    std::vector<Observed> seen;

    std::vector<std::unique_ptr<Agent>> agents;
    for (const auto& u : config.users) {
        AgentConfig ac;
        ac.client_ip = u.client_ip;
        ac.preamble = true;
        ac.intercept_hosts = std::set<std::string>{config.vhost_name};
        auto agent = std::make_unique<Agent>(ac);
        agent->set_dial_observer([&seen, &seen_mu, name = u.name](const VirtualDial& d) {
            std::lock_guard lock(seen_mu);
            seen.push_back({name, d});
        });
        try {
            agent->login({"127.0.0.1", listen_port}, u.name);
        } catch (const std::exception& e) {
            throw SetupError("agent " + u.name, e.what());
        }
        agents.push_back(std::move(agent));
    }

    const Destination shared{config.vhost_name, config.vhost_port};
    const std::string counter_url = "/cgi-bin/counter";

    // The web tier learns identities asynchronously; under enforcement a
    // request can race the notice, so the first page is retried briefly.
    for (std::size_t i = 0; i < agents.size(); ++i) {
        Fetch f;
        std::string error;
        auto deadline = Clock::now() + 3s;
        do {
            try {
                f = fetch_via(*agents[i], shared, "/");
                error.clear();
            } catch (const std::exception& e) {
                error = e.what();
            }
            if (f.status == 200) break;
            std::this_thread::sleep_for(20ms);
        } while (Clock::now() < deadline);
        print.check("reach_" + config.users[i].name, f.status == 200,
                    error.empty() ? "GET / -> " + std::to_string(f.status) : error);
    }
    {
        std::lock_guard lock(seen_mu);
        seen.clear();
    }

    // The experiment proper: every user, in order, opens the same URL.
    std::map<std::string, long> expected_count;
    for (const auto& g : groups) expected_count[g] = config.seed.count(g) ? config.seed.at(g) : 0;
    std::map<std::string, int> requests_by_group;
    std::map<std::string, std::string> effective_by_user;
    for (std::size_t i = 0; i < agents.size(); ++i) {
        const auto& u = config.users[i];
        std::string want = std::to_string(++expected_count[u.group]);
        ++requests_by_group[u.group];
        try {
            auto f = fetch_via(*agents[i], shared, counter_url);
            report.bodies[u.name] = f.body;
            effective_by_user[u.name] = f.dial.effective ? to_string(*f.dial.effective) : "-";
            print.line("RESULT " + u.name + " GET http://" + to_string(shared) + counter_url + " -> " +
                       effective_by_user[u.name] + " status " + std::to_string(f.status) + " body \"" + f.body + "\"");
            print.check("body_" + u.name, f.status == 200 && f.body == want,
                        "got \"" + f.body + "\" want \"" + want + "\"");
        } catch (const std::exception& e) {
            print.check("body_" + u.name, false, e.what());
        }
    }

    {
        std::lock_guard lock(seen_mu);
        bool same = seen.size() == agents.size();
        for (const auto& o : seen) same = same && o.dial.requested == shared;
        print.check("same_url", same,
                    std::to_string(seen.size()) + " dials, requested " + (seen.empty() ? "-" : to_string(seen[0].dial.requested)) +
                        " path " + counter_url);
    }

    {
        bool ok = effective_by_user.size() == config.users.size();
        std::string detail;
        for (const auto& a : config.users) {
            for (const auto& b : config.users) {
                if (a.name >= b.name || !effective_by_user.count(a.name) || !effective_by_user.count(b.name)) continue;
                bool same_target = effective_by_user[a.name] == effective_by_user[b.name];
                ok = ok && same_target == (a.group == b.group);
            }
            detail += (detail.empty() ? "" : " ") + a.name + "->" +
                      (effective_by_user.count(a.name) ? effective_by_user[a.name] : "?");
        }
        print.check("rewrite_per_group", ok, detail);
    }

    {
        bool ok = true;
        long total = 0, want_total = 0;
        std::string detail;
        for (const auto& s : sites.sites) {
            auto text = trim(slurp(s.dir / "cgi-bin" / "count.txt"));
            long want = (config.seed.count(s.group) ? config.seed.at(s.group) : 0) + requests_by_group[s.group];
            long got = -1;
            try {
                got = std::stol(text);
            } catch (const std::exception&) {
            }
            ok = ok && got == want;
            total += got;
            want_total += want;
            detail += (detail.empty() ? "" : " ") + s.group + "=" + text + "/" + std::to_string(want);
        }
        print.check("isolation", ok && total == want_total, detail);
    }

    {
        auto redirectors = agents[0]->redirectors();
        auto it = std::find_if(redirectors.begin(), redirectors.end(),
                               [&](const RedirectorInfo& r) { return r.key == MatchKey{shared.host, shared.port}; });
        if (it == redirectors.end()) {
            print.check("redirector", false, "no redirector for " + to_string(shared));
        } else {
            try {
                auto sock = net::connect_tcp(it->listen, 2s);
                sock.set_recv_timeout(10s);
                auto resp = web::fetch(sock, "GET", "/", shared.host);
                print.check("redirector", resp.status == 200,
                            config.users[0].name + " via " + it->listen.str() + " GET / -> " + std::to_string(resp.status));
            } catch (const std::exception& e) {
                print.check("redirector", false, e.what());
            }
        }
    }

    if (config.enforce) {
        // Bypass attempt: each user dials every group's socket directly.
        int cells = 0, right = 0;
        std::string wrong;
        for (std::size_t i = 0; i < agents.size(); ++i) {
            for (const auto& s : sites.sites) {
                int want = config.users[i].group == s.group ? 200 : 403;
                int got = 0;
                try {
                    got = fetch_via(*agents[i], Destination{s.binding.socket.host, s.binding.socket.port}, "/").status;
                } catch (const std::exception&) {
                }
                ++cells;
                if (got == want)
                    ++right;
                else
                    wrong += " " + config.users[i].name + "@" + s.group + "=" + std::to_string(got);
            }
        }
        print.check("access_matrix", right == cells, std::to_string(right) + "/" + std::to_string(cells) + " cells" + wrong);
    } else {
        print.line("NOTE enforcement off: only the agent-side rewrite separates the groups");
    }

    for (auto& a : agents) a->disconnect();
    agents.clear();

    auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(Clock::now() - started).count();
    std::size_t passed = std::count_if(report.checks.begin(), report.checks.end(), [](const Check& c) { return c.pass; });
    print.line(std::string("SUMMARY ") + (report.ok() ? "PASS " : "FAIL ") + std::to_string(passed) + "/" +
               std::to_string(report.checks.size()) + " checks in " + std::to_string(ms) + " ms");
    return report;
}

}  // namespace dacs::experiment
