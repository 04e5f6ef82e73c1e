#pragma once

#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <utility>
#include <vector>

#include "dacs/wire.hpp"

namespace golden {

/// Checked-in frame files under tests/golden and the message each holds.
inline std::vector<std::pair<std::string, dacs::wire::Message>> vectors() {
    using namespace dacs::wire;
    return {
        {"01_login.frame", Login{"userA", "192.168.10.5"}},
        {"02_ruleset_single.frame", RuleSetMsg{1, {"rewrite|wwwserver:80|192.168.1.1:3000"}}},
        {"03_ruleset_empty.frame", RuleSetMsg{0, {}}},
        {"04_ruleset_mixed.frame",
         RuleSetMsg{17, {"rewrite|wwwserver:80|192.168.1.1:3001", "block|*:25", "rewrite|svc:9000|127.0.0.1:15000"}}},
        {"05_push.frame", PushNotice{}},
        {"06_identity_one_group.frame", IdentityNotice{"userA", "10.0.0.1", {"GroupA"}}},
        {"07_identity_two_groups.frame", IdentityNotice{"userB", "10.0.0.2", {"GroupB", "GroupC"}}},
        {"08_identity_no_groups.frame", IdentityNotice{"guest", "192.168.10.77", {}}},
        {"09_ack.frame", Ack{0}},
        {"10_error.frame", ErrorMsg{"ReloadError", "line 3: unknown section [bogus]"}},
    };
}

inline std::string load(const std::string& name) {
    std::ifstream in(std::filesystem::path(DACS_GOLDEN_DIR) / name, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace golden
