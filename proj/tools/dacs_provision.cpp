#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <map>

#include "dacs/log.hpp"
#include "dacs/provision.hpp"
#include "dacs/rules.hpp"

using namespace dacs;

int main(int argc, char** argv) {
    init_logging();

    CLI::App app{"clone a CGI application per group and map each clone to its own socket"};
    provision::ProvisionPlan plan;
    std::vector<std::string> users;
    app.add_option("--app", plan.app_name, "application name")->required();
    app.add_option("--source", plan.source_dir, "application directory")->required();
    app.add_option("--groups", plan.groups, "g1,g2,...")->required()->delimiter(',');
    app.add_option("--ip", plan.base_ip, "IPv4 address the clones listen on")->required();
    app.add_option("--base-port", plan.base_port, "port of the first group")->required();
    app.add_option("--vhost-name", plan.virtual_host_name, "host name in the shared URL")->required();
    app.add_option("--vhost-port", plan.virtual_port, "port in the shared URL")->capture_default_str();
    app.add_option("--out", plan.out_dir, "output directory")->required();
    app.add_option("--users", users, "user:group,... to put in the repository fragment")->delimiter(',');
    app.add_flag("--preamble", plan.preamble, "clones expect the agent preamble");
    app.add_flag("--add", plan.keep_existing, "keep clones that already exist (adding groups)");
    CLI11_PARSE(app, argc, argv);

    try {
        std::map<std::string, std::string> user_group;
        for (const auto& u : users) {
            auto colon = u.find(':');
            if (colon == std::string::npos) throw std::invalid_argument("--users: expected user:group, got " + u);
            user_group[u.substr(0, colon)] = u.substr(colon + 1);
        }
        auto result = provision::provision(plan);
        auto fragment = provision::gen_repo_fragment(result, user_group);
        if (!user_group.empty()) std::ofstream(result.fragment_file, std::ios::trunc) << fragment;
        for (const auto& w : result.warnings) std::cerr << "warning: " << w << "\n";
        for (const auto& s : result.sites) {
            std::cout << s.group << "\t" << s.binding.socket.str() << "\t" << s.dir.string()
                      << (s.existed ? "\t(kept)" : "") << "\n";
        }
        std::cout << "vhosts: " << result.vhosts_file.string() << "\n"
                  << "fragment: " << result.fragment_file.string() << "\n";
        return 0;
    } catch (const std::exception& e) {
        std::cerr << "dacs-provision: " << e.what() << "\n";
        return 1;
    }
}
