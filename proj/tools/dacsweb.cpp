#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include <iostream>

#include "dacs/log.hpp"
#include "dacs/web.hpp"
#include "tool_util.hpp"

using namespace dacs;

int main(int argc, char** argv) {
    tools::block_shutdown_signals();
    init_logging();

    CLI::App app{"virtual-host web server with CGI"};
    app.require_subcommand(1);

    std::string vhosts, identity = "none";
    bool enforce = false;
    int timeout_ms = 10000;
    auto* serve = app.add_subcommand("serve", "run in the foreground");
    serve->add_option("--vhosts", vhosts, "vhosts file")->required()->check(CLI::ExistingFile);
    serve->add_option("--identity-listen", identity, "ip:port for identity notices, or none")->capture_default_str();
    serve->add_flag("--enforce", enforce, "answer 403 unless the client is in the binding's group");
    serve->add_option("--cgi-timeout", timeout_ms, "CGI time limit in ms")->capture_default_str()->check(CLI::PositiveNumber);

    CLI11_PARSE(app, argc, argv);

    try {
        std::optional<net::Endpoint> id;
        if (identity != "none") id = net::Endpoint::parse(identity);
        web::WebOptions options;
        options.cgi_timeout = std::chrono::milliseconds(timeout_ms);
        options.enforce_groups = enforce;
        web::WebServer server(web::load_vhosts(vhosts), id, options);
        tools::wait_for_shutdown();
        return 0;
    } catch (const std::exception& e) {
        std::cerr << "dacsweb: " << e.what() << "\n";
        return 1;
    }
}
