#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace dacs::experiment {

namespace fs = std::filesystem;

struct SimUser {
    std::string name;
    std::string group;
    std::string client_ip;  // simulated; carried in the preamble
    bool operator==(const SimUser&) const = default;
};

/// run-experiment settings. Port 0 means "pick a free one".
struct ExperimentConfig {
    int server_listen = 0;
    int server_control = 0;
    int web_identity_listen = 0;
    int base_port = 0;
    std::vector<SimUser> users{{"userA", "GroupA", "10.0.0.1"}, {"userB", "GroupB", "10.0.0.2"}};
    /// Initial count.txt per group; groups not listed start at 0.
    std::map<std::string, long> seed{{"GroupA", 10}, {"GroupB", 4}};
    std::string vhost_name = "wwwserver";
    int vhost_port = 80;
    bool enforce = false;
    /// Scratch directory; a fresh one under /tmp when empty.
    fs::path workdir;
    /// Counter application to clone; defaults next to the binaries.
    fs::path template_dir;
    /// Where dacsd and dacsweb live.
    fs::path bin_dir;
};

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// key=value lines, `#` comments. Unknown keys are an error.
ExperimentConfig parse_config(std::string_view text);

/// A component did not come up.
class SetupError : public std::runtime_error {
public:
    SetupError(const std::string& component, const std::string& what)
        : std::runtime_error(component + ": " + what), component_(component) {}
    const std::string& component() const { return component_; }

private:
    std::string component_;
};

struct Check {
    std::string name;
    bool pass = false;
    std::string detail;
};

struct Report {
    std::vector<std::string> lines;  // everything printed, in order
    std::vector<Check> checks;
    std::map<std::string, std::string> bodies;  // user -> counter response body
    fs::path workdir;
    bool scratch = false;  // workdir was created for this run
    bool ok() const;
};

/// Provisions the counter per group, starts dacsd and dacsweb as child
/// processes, logs the users in through in-process agents and has each
/// fetch the shared counter URL in config order. Lines are written to `out`
/// as they are produced. Children are always reaped. Throws SetupError.
Report run_experiment(const ExperimentConfig& config, std::ostream& out);

}  // namespace dacs::experiment
