#include "dacs/records.hpp"

#include <algorithm>

namespace dacs::records {

namespace {

bool clean_field(std::string_view s) { return s.find_first_of("|\n\r") == std::string_view::npos; }

int hex_digit(char c) {
    if (c >= '0' && c <= '9') return c - '0';
    if (c >= 'a' && c <= 'f') return c - 'a' + 10;
    if (c >= 'A' && c <= 'F') return c - 'A' + 10;
    return -1;
}

std::string form_decode(std::string_view s) {
    std::string out;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (s[i] == '+') {
            out += ' ';
        } else if (s[i] == '%' && i + 2 < s.size() && hex_digit(s[i + 1]) >= 0 && hex_digit(s[i + 2]) >= 0) {
            out += static_cast<char>(hex_digit(s[i + 1]) * 16 + hex_digit(s[i + 2]));
            i += 2;
        } else {
            out += s[i];
        }
    }
    return out;
}

}  // namespace

std::vector<Record> parse_store(std::string_view text) {
    std::vector<Record> out;
    int lineno = 0;
    while (!text.empty()) {
        auto nl = text.find('\n');
        auto line = text.substr(0, nl);
        text.remove_prefix(nl == std::string_view::npos ? text.size() : nl + 1);
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        if (line.empty()) continue;
        auto a = line.find('|');
        auto b = a == std::string_view::npos ? a : line.find('|', a + 1);
        if (b == std::string_view::npos || line.find('|', b + 1) != std::string_view::npos)
            throw StoreError(lineno, "expected user|group|payload");
        Record r{std::string(line.substr(0, a)), std::string(line.substr(a + 1, b - a - 1)),
                 std::string(line.substr(b + 1))};
        if (r.owner_user.empty() || r.owner_group.empty()) throw StoreError(lineno, "empty user or group");
        out.push_back(std::move(r));
    }
    return out;
}

std::string format_store(const std::vector<Record>& records) {
    std::string out;
    for (const auto& r : records) {
        if (!clean_field(r.owner_user) || !clean_field(r.owner_group) || !clean_field(r.payload))
            throw std::invalid_argument("record field holds '|' or a line break");
        out += r.owner_user + "|" + r.owner_group + "|" + r.payload + "\n";
    }
    return out;
}

std::vector<std::string> extract_records(const std::vector<Record>& store, const Scope& scope,
                                         const std::optional<Requester>& requester) {
    using Kind = Scope::Kind;
    if (scope.kind != Kind::All && !requester)
        throw AccessDenied(AccessDenied::Reason::Unidentified, "requester is not logged in");

    std::vector<std::string> allowed_groups;
    if (scope.kind == Kind::Group) {
        const auto& mine = requester->groups;
        if (scope.group) {
            if (std::find(mine.begin(), mine.end(), *scope.group) == mine.end())
                throw AccessDenied(AccessDenied::Reason::GroupForbidden,
                                   requester->user + " is not a member of " + *scope.group);
            allowed_groups = {*scope.group};
        } else {
            allowed_groups = mine;
        }
    }

    std::vector<std::string> out;
    for (const auto& r : store) {
        bool take = false;
        switch (scope.kind) {
            case Kind::User: take = r.owner_user == requester->user; break;
            case Kind::Group:
                take = std::find(allowed_groups.begin(), allowed_groups.end(), r.owner_group) != allowed_groups.end();
                break;
            case Kind::All: take = true; break;
        }
        if (take) out.push_back(r.payload);
    }
    return out;
}

int function_of(std::string_view script_name) {
    auto slash = script_name.rfind('/');
    auto base = slash == std::string_view::npos ? script_name : script_name.substr(slash + 1);
    if (base == "func1") return 1;
    if (base == "func2") return 2;
    if (base == "func3") return 3;
    return 0;
}

std::optional<std::string> query_param(std::string_view query, std::string_view key) {
    while (!query.empty()) {
        auto amp = query.find('&');
        auto pair = query.substr(0, amp);
        query.remove_prefix(amp == std::string_view::npos ? query.size() : amp + 1);
        auto eq = pair.find('=');
        if (form_decode(pair.substr(0, eq)) != key) continue;
        return eq == std::string_view::npos ? std::string() : form_decode(pair.substr(eq + 1));
    }
    return std::nullopt;
}

}  // namespace dacs::records
