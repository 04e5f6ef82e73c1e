#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include <iostream>
#include <memory>

#include "dacs/log.hpp"
#include "dacs/secure_channel.hpp"
#include "tool_util.hpp"

using namespace dacs;

int main(int argc, char** argv) {
    tools::block_shutdown_signals();
    init_logging();

    CLI::App app{"secure channel ends"};
    app.require_subcommand(1);

    int local = 0;
    std::string remote, key_file;
    auto* client = app.add_subcommand("client", "plain 127.0.0.1:<local> in, secure to <remote>");
    client->add_option("--local", local, "loopback port to accept on")->required()->check(CLI::Range(1, 65535));
    client->add_option("--remote", remote, "tunnel server ip:port")->required();
    client->add_option("--key", key_file, "pre-shared key file")->required()->check(CLI::ExistingFile);

    std::string listen, forward;
    auto* server = app.add_subcommand("server", "secure in on <listen>, plain out to <forward>");
    server->add_option("--listen", listen, "ip:port")->required();
    server->add_option("--forward", forward, "service ip:port")->required();
    server->add_option("--key", key_file, "pre-shared key file")->required()->check(CLI::ExistingFile);

    CLI11_PARSE(app, argc, argv);

    try {
        auto key = tunnel::load_key(key_file);
        if (*client) {
            tunnel::TunnelClient c(local, net::Endpoint::parse(remote), key);
            spdlog::info("dacs-sctl: 127.0.0.1:{} -> {}", c.port(), remote);
            tools::wait_for_shutdown();
            return 0;
        }
        tunnel::TunnelServer s(net::Endpoint::parse(listen), net::Endpoint::parse(forward), key);
        spdlog::info("dacs-sctl: {} -> {}", listen, forward);
        tools::wait_for_shutdown();
        return 0;
    } catch (const std::exception& e) {
        std::cerr << "dacs-sctl: " << e.what() << "\n";
        return 1;
    }
}
