// Data extraction CGI. Installed as func1 (the caller's own records), func2
// (records of a group, ?group=<name>, or of all the caller's groups) and
// func3 (every record). Reads records.txt from its working directory and
// takes the caller from REMOTE_USER / X_DACS_GROUPS set by the web server.

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <iterator>

#include "dacs/records.hpp"

using namespace dacs::records;

namespace {

std::string env_or_empty(const char* name) {
    const char* v = std::getenv(name);
    return v ? v : "";
}

void reply(const char* status, const std::string& body) {
    if (status) std::cout << "Status: " << status << "\r\n";
    std::cout << "Content-Type: text/plain\r\n\r\n" << body;
}

}  // namespace

int main() {
    int function = function_of(env_or_empty("SCRIPT_NAME"));
    if (function == 0) {
        reply("404 Not Found", "unknown function\n");
        return 0;
    }

    std::optional<Requester> requester;
    if (const char* user = std::getenv("REMOTE_USER"); user && *user) {
        requester = Requester{user, {}};
        std::string groups = env_or_empty("X_DACS_GROUPS");
        for (std::size_t pos = 0; pos < groups.size();) {
            auto comma = groups.find(',', pos);
            if (comma == std::string::npos) comma = groups.size();
            if (comma > pos) requester->groups.push_back(groups.substr(pos, comma - pos));
            pos = comma + 1;
        }
    }

    Scope scope;
    scope.kind = function == 1 ? Scope::Kind::User : function == 2 ? Scope::Kind::Group : Scope::Kind::All;
    if (function == 2) scope.group = query_param(env_or_empty("QUERY_STRING"), "group");

    std::ifstream in("records.txt");
    if (!in) {
        std::fprintf(stderr, "records: cannot read records.txt\n");
        return 1;
    }
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    try {
        auto store = parse_store(text);
        std::string body;
        for (const auto& p : extract_records(store, scope, requester)) body += p + "\n";
        reply(nullptr, body);
    } catch (const AccessDenied& e) {
        reply("403 Forbidden", std::string(e.what()) + "\n");
    } catch (const StoreError& e) {
        std::fprintf(stderr, "records: records.txt %s\n", e.what());
        return 1;
    }
    return 0;
}
