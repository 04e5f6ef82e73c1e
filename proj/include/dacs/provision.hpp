#pragma once

#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "dacs/rules.hpp"
#include "dacs/web.hpp"

namespace dacs::provision {

namespace fs = std::filesystem;

/// Per-clone state reset instructions, read from `provision.manifest` in the
/// source tree: one `reset=<relpath>:<content>` line each.
constexpr const char* kManifestName = "provision.manifest";

struct ProvisionPlan {
    std::string app_name;
    fs::path source_dir;
    std::vector<std::string> groups;  // order fixes the port sequence
    std::string base_ip;
    int base_port = 0;
    std::string virtual_host_name;
    int virtual_port = 80;
    fs::path out_dir;
    bool preamble = false;
    /// Leave clones that already exist alone instead of failing.
    bool keep_existing = false;
};

struct GroupSite {
    std::string group;
    fs::path dir;
    web::VHostBinding binding;
    Rule rule;  // rewrite virtual_host:virtual_port -> base_ip:base_port+index
    bool existed = false;
};

struct ProvisionResult {
    std::vector<GroupSite> sites;  // plan group order
    std::vector<std::string> warnings;
    fs::path vhosts_file;
    fs::path fragment_file;

    const GroupSite* site(const std::string& group) const;
};

class ProvisionError : public std::runtime_error {
public:
    enum class Kind { SourceMissing, DestExists, PortRangeOverflow, UnknownGroup, InvalidPlan, IoError };
    ProvisionError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
    Kind kind() const { return kind_; }

private:
    Kind kind_;
};

struct ResetEntry {
    std::string relpath;
    std::string content;
    bool operator==(const ResetEntry&) const = default;
};

/// Throws ProvisionError(InvalidPlan) on a bad line or an escaping path.
std::vector<ResetEntry> parse_manifest(std::string_view text);

/// `<app_name>__<group>`.
std::string clone_name(const std::string& app_name, const std::string& group);

/// Copies `from` to `to` (which must not exist) keeping permission bits and
/// symlinks. `skip` names top-level entries to leave out.
void copy_tree(const fs::path& from, const fs::path& to, const std::vector<std::string>& skip = {});

/// Clones the source per group, resets state files, and writes vhosts.conf
/// and repository.fragment (with no users) into out_dir.
ProvisionResult provision(const ProvisionPlan& plan);

/// Repository text giving each user their group's rule, users in name order,
/// then the [groups] section. Throws ProvisionError(UnknownGroup).
std::string gen_repo_fragment(const ProvisionResult& result, const std::map<std::string, std::string>& users);

std::string format_vhosts(const ProvisionResult& result);

}  // namespace dacs::provision
