#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include <fstream>
#include <iostream>
#include <iterator>

#include "dacs/experiment.hpp"
#include "dacs/log.hpp"
#include "tool_util.hpp"

using namespace dacs;

int main(int argc, char** argv) {
    signal(SIGPIPE, SIG_IGN);
    init_logging();
    if (std::getenv("DACS_LOG") == nullptr) spdlog::set_level(spdlog::level::warn);

    CLI::App app{"desk-scale experiment driver"};
    app.require_subcommand(1);
    std::string config_file;
    bool enforce = false;
    auto* run = app.add_subcommand("run-experiment", "two users, one URL, one counter per group");
    run->add_option("--config", config_file, "key=value file")->check(CLI::ExistingFile);
    run->add_flag("--enforce", enforce, "web server checks the binding's group");
    CLI11_PARSE(app, argc, argv);

    experiment::ExperimentConfig cfg;
    try {
        if (!config_file.empty()) {
            std::ifstream in(config_file);
            cfg = experiment::parse_config(std::string(std::istreambuf_iterator<char>(in), {}));
        }
    } catch (const experiment::ConfigError& e) {
        std::cerr << "dacs-sim: " << config_file << ": " << e.what() << "\n";
        return 2;
    }
    if (enforce) cfg.enforce = true;

    try {
        auto report = experiment::run_experiment(cfg, std::cout);
        if (report.ok() && report.scratch) {
            std::error_code ec;
            std::filesystem::remove_all(report.workdir, ec);
        }
        return report.ok() ? 0 : 1;
    } catch (const experiment::SetupError& e) {
        std::cout << "SETUP FAIL " << e.what() << "\n";
        std::cout << "SUMMARY FAIL setup (" << e.component() << ")\n";
        return 2;
    } catch (const std::exception& e) {
        std::cout << "SUMMARY FAIL " << e.what() << "\n";
        return 2;
    }
}
