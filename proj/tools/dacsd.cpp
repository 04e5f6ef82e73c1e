#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include <iostream>

#include "dacs/log.hpp"
#include "dacs/server.hpp"
#include "tool_util.hpp"

using namespace dacs;

int main(int argc, char** argv) {
    tools::block_shutdown_signals();
    init_logging();

    CLI::App app{"DACS policy server"};
    app.require_subcommand(1);

    std::string repo, listen = "127.0.0.1:7000", control = "127.0.0.1:7001", identity = "none";
    auto* serve = app.add_subcommand("serve", "run the server in the foreground");
    serve->add_option("--repo", repo, "repository file")->required()->check(CLI::ExistingFile);
    serve->add_option("--listen", listen, "agent listener ip:port")->capture_default_str();
    serve->add_option("--control", control, "admin control ip:port")->capture_default_str();
    serve->add_option("--web-identity", identity, "dacsweb identity listener ip:port, or none")->capture_default_str();

    std::string push_control = "127.0.0.1:7001";
    auto* push = app.add_subcommand("push", "reload the repository on a running server and redistribute");
    push->add_option("--control", push_control, "admin control ip:port")->capture_default_str();

    CLI11_PARSE(app, argc, argv);

    try {
        if (*serve) {
            std::optional<net::Endpoint> web;
            if (identity != "none") web = net::Endpoint::parse(identity);
            DacsServer server(repo, web);
            server.start(net::Endpoint::parse(listen), net::Endpoint::parse(control));
            int sig = tools::wait_for_shutdown();
            spdlog::info("dacsd: signal {}, stopping", sig);
            server.stop();
            return 0;
        }
        auto n = request_push(net::Endpoint::parse(push_control));
        std::cout << "pushed to " << n << " agent(s)\n";
        return 0;
    } catch (const ReloadError& e) {
        std::cerr << "dacsd: push rejected, old rules stay active: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "dacsd: " << e.what() << "\n";
        return 1;
    }
}
