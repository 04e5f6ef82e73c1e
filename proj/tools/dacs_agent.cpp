#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include <fstream>
#include <iostream>
#include <iterator>

#include "dacs/agent.hpp"
#include "dacs/log.hpp"
#include "tool_util.hpp"

using namespace dacs;

namespace {

std::string exchange(const std::string& path, const std::string& request, const std::string& payload, bool dial) {
    auto sock = net::connect_unix(path);
    sock.write_all(request + "\n");
    if (!dial) return sock.read_to_end();
    std::string reply;
    if (!sock.read_line(reply)) throw std::runtime_error("agent closed the control connection");
    if (reply.rfind("OK", 0) != 0) throw std::runtime_error(reply);
    std::cerr << reply << "\n";
    sock.write_all(payload);
    sock.shutdown_write();
    return sock.read_to_end();
}

}  // namespace

int main(int argc, char** argv) {
    tools::block_shutdown_signals();
    init_logging();

    CLI::App app{"DACS client agent"};
    app.require_subcommand(1);
    std::string socket_path = tools::default_agent_socket();
    app.add_option("--socket", socket_path, "control socket (env DACS_AGENT_SOCKET)")->capture_default_str();

    std::string user, server = "127.0.0.1:7000", client_ip;
    bool preamble = false;
    auto* login = app.add_subcommand("login", "log in and enforce the delivered rules until interrupted");
    login->add_option("user", user)->required();
    login->add_option("--server", server, "policy server ip:port")->capture_default_str();
    login->add_option("--client-ip", client_ip, "this client's address as the server should see it")->required();
    login->add_flag("--preamble", preamble, "announce client-ip to servers at the start of every connection");

    auto* status = app.add_subcommand("status", "print the installed snapshot");

    std::string target, send_file;
    auto* dial = app.add_subcommand("dial", "open a connection through the agent and print the reply");
    dial->add_option("destination", target, "host:port")->required();
    dial->add_option("--send", send_file, "bytes to send first")->check(CLI::ExistingFile);

    CLI11_PARSE(app, argc, argv);

    try {
        if (*login) {
            AgentConfig cfg;
            cfg.client_ip = client_ip;
            cfg.preamble = preamble;
            Agent agent(cfg);
            agent.login(net::Endpoint::parse(server), user);
            AgentControlServer control(agent, socket_path);
            std::cout << format_status(agent) << std::flush;
            tools::wait_for_shutdown();
            agent.disconnect();
            return 0;
        }
        if (*status) {
            std::cout << exchange(socket_path, "STATUS", {}, false);
            return 0;
        }
        std::string payload;
        if (!send_file.empty()) {
            std::ifstream in(send_file, std::ios::binary);
            payload.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
        }
        std::cout << exchange(socket_path, "DIAL " + target, payload, true) << std::flush;
        return 0;
    } catch (const std::exception& e) {
        std::cerr << "dacs-agent: " << e.what() << "\n";
        return 1;
    }
}
