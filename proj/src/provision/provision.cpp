#include "dacs/provision.hpp"

#include <sys/stat.h>

#include <algorithm>
#include <fstream>
#include <iterator>
#include <set>
#include <sstream>

#include <spdlog/spdlog.h>

namespace dacs::provision {

namespace {

using Kind = ProvisionError::Kind;

std::string read_text(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw ProvisionError(Kind::IoError, "cannot read " + p.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_text(const fs::path& p, const std::string& text) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    out << text;
    if (!out) throw ProvisionError(Kind::IoError, "cannot write " + p.string());
}

bool safe_relpath(const std::string& rel) {
    if (rel.empty() || rel.front() == '/') return false;
    for (const auto& part : fs::path(rel))
        if (part == ".." || part == ".") return false;
    return true;
}

bool has_cgi(const fs::path& source) {
    std::error_code ec;
    auto bin = source / "cgi-bin";
    if (!fs::is_directory(bin, ec)) return false;
    for (const auto& e : fs::directory_iterator(bin, ec)) {
        if (!e.is_regular_file(ec)) continue;
        if ((e.status(ec).permissions() & fs::perms::owner_exec) != fs::perms::none) return true;
    }
    return false;
}

std::vector<ResetEntry> default_resets(const fs::path& source) {
    std::vector<ResetEntry> out;
    for (const auto& e : fs::recursive_directory_iterator(source)) {
        if (e.is_regular_file() && e.path().filename() == "count.txt")
            out.push_back({e.path().lexically_relative(source).string(), "0"});
    }
    std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.relpath < b.relpath; });
    return out;
}

}  // namespace

const GroupSite* ProvisionResult::site(const std::string& group) const {
    for (const auto& s : sites)
        if (s.group == group) return &s;
    return nullptr;
}

std::vector<ResetEntry> parse_manifest(std::string_view text) {
    std::vector<ResetEntry> out;
    std::istringstream in{std::string(text)};
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line[0] == '#') continue;
        auto where = "manifest line " + std::to_string(lineno);
        if (line.rfind("reset=", 0) != 0) throw ProvisionError(Kind::InvalidPlan, where + ": expected reset=<path>:<content>");
        auto body = line.substr(6);
        auto colon = body.find(':');
        if (colon == std::string::npos) throw ProvisionError(Kind::InvalidPlan, where + ": missing ':'");
        ResetEntry e{body.substr(0, colon), body.substr(colon + 1)};
        if (!safe_relpath(e.relpath)) throw ProvisionError(Kind::InvalidPlan, where + ": path must stay inside the app");
        out.push_back(std::move(e));
    }
    return out;
}

std::string clone_name(const std::string& app_name, const std::string& group) { return app_name + "__" + group; }

void copy_tree(const fs::path& from, const fs::path& to, const std::vector<std::string>& skip) {
    fs::create_directory(to, from);
    fs::permissions(to, fs::status(from).permissions());
    for (auto it = fs::recursive_directory_iterator(from); it != fs::recursive_directory_iterator(); ++it) {
        const auto& src = it->path();
        auto rel = src.lexically_relative(from);
        if (it.depth() == 0 && std::find(skip.begin(), skip.end(), rel.string()) != skip.end()) {
            if (it->is_directory()) it.disable_recursion_pending();
            continue;
        }
        auto dst = to / rel;
        if (it->is_symlink()) {
            fs::copy_symlink(src, dst);
            if (it->is_directory()) it.disable_recursion_pending();
        } else if (it->is_directory()) {
            fs::create_directory(dst, src);
            fs::permissions(dst, it->status().permissions());
        } else if (it->is_regular_file()) {
            fs::copy_file(src, dst);
            fs::permissions(dst, it->status().permissions());
        } else {
            spdlog::warn("provision: skipping special file {}", src.string());
        }
    }
}

std::string format_vhosts(const ProvisionResult& result) {
    std::string out;
    for (const auto& s : result.sites) out += web::format_vhost(s.binding) + "\n";
    return out;
}

ProvisionResult provision(const ProvisionPlan& plan) {
    if (plan.app_name.empty() || plan.app_name.find('/') != std::string::npos || plan.app_name == "." ||
        plan.app_name == "..")
        throw ProvisionError(Kind::InvalidPlan, "bad app name '" + plan.app_name + "'");
    if (plan.groups.empty()) throw ProvisionError(Kind::InvalidPlan, "no groups");
    std::set<std::string> distinct;
    for (const auto& g : plan.groups) {
        if (!is_valid_group_name(g)) throw ProvisionError(Kind::InvalidPlan, "bad group name '" + g + "'");
        if (!distinct.insert(g).second) throw ProvisionError(Kind::InvalidPlan, "group " + g + " listed twice");
    }
    if (!is_ipv4_literal(plan.base_ip)) throw ProvisionError(Kind::InvalidPlan, "--ip must be an IPv4 literal");
    if (!is_valid_host(plan.virtual_host_name) || !is_valid_port(plan.virtual_port))
        throw ProvisionError(Kind::InvalidPlan, "bad virtual host " + plan.virtual_host_name);
    if (!is_valid_port(plan.base_port)) throw ProvisionError(Kind::InvalidPlan, "bad base port");
    if (plan.base_port + static_cast<long>(plan.groups.size()) - 1 > 65535)
        throw ProvisionError(Kind::PortRangeOverflow, std::to_string(plan.groups.size()) + " groups from port " +
                                                          std::to_string(plan.base_port) + " pass 65535");

    std::error_code ec;
    if (!fs::is_directory(plan.source_dir, ec))
        throw ProvisionError(Kind::SourceMissing, "source " + plan.source_dir.string() + " is not a directory");
    auto source = fs::canonical(plan.source_dir);

    ProvisionResult result;
    if (!has_cgi(source)) {
        result.warnings.push_back("NotExecutable: no executable under " + (source / "cgi-bin").string() +
                                  " (fine for static documents)");
    }

    std::vector<ResetEntry> resets;
    if (fs::exists(source / kManifestName))
        resets = parse_manifest(read_text(source / kManifestName));
    else
        resets = default_resets(source);

    fs::create_directories(plan.out_dir);
    auto out = fs::canonical(plan.out_dir);
    for (std::size_t i = 0; i < plan.groups.size(); ++i) {
        const auto& g = plan.groups[i];
        int port = plan.base_port + static_cast<int>(i);
        GroupSite s{g,
                    out / clone_name(plan.app_name, g),
                    {{plan.base_ip, port}, {}, plan.preamble, g},
                    Rule{MatchKey{plan.virtual_host_name, plan.virtual_port},
                         RewriteAction{Destination{plan.base_ip, port}}},
                    false};
        s.binding.docroot = s.dir;
        if (fs::exists(fs::symlink_status(s.dir, ec))) {
            if (!plan.keep_existing || !fs::is_directory(s.dir, ec))
                throw ProvisionError(Kind::DestExists, s.dir.string() + " already exists");
            s.existed = true;
        }
        result.sites.push_back(std::move(s));
    }

    try {
        for (auto& s : result.sites) {
            if (s.existed) continue;
            copy_tree(source, s.dir, {kManifestName});
            for (const auto& r : resets) {
                auto target = s.dir / r.relpath;
                fs::create_directories(target.parent_path());
                write_text(target, r.content);
            }
        }
        result.vhosts_file = out / "vhosts.conf";
        result.fragment_file = out / "repository.fragment";
        write_text(result.vhosts_file, format_vhosts(result));
        write_text(result.fragment_file, gen_repo_fragment(result, {}));
    } catch (const fs::filesystem_error& e) {
        throw ProvisionError(Kind::IoError, e.what());
    }
    return result;
}

std::string gen_repo_fragment(const ProvisionResult& result, const std::map<std::string, std::string>& users) {
    std::string out;
    for (const auto& s : result.sites) out += "# group " + s.group + " -> " + format_rule(s.rule) + "\n";
    for (const auto& [user, group] : users) {
        if (!is_valid_name(user)) throw ProvisionError(Kind::InvalidPlan, "bad user name '" + user + "'");
        const auto* s = result.site(group);
        if (s == nullptr) throw ProvisionError(Kind::UnknownGroup, "user " + user + ": group " + group + " was not provisioned");
        out += "[user " + user + "]\n" + format_rule(s->rule) + "\n";
    }
    out += "[groups]\n";
    for (const auto& [user, group] : users) out += user + "=" + group + "\n";
    return out;
}

}  // namespace dacs::provision
