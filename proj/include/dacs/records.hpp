#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace dacs::records {

/// One line of the flat store: `user|group|payload`.
struct Record {
    std::string owner_user;
    std::string owner_group;
    std::string payload;
    bool operator==(const Record&) const = default;
};

class StoreError : public std::runtime_error {
public:
    StoreError(int line, const std::string& what)
        : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line) {}
    int line() const { return line_; }

private:
    int line_;
};

/// Blank lines are skipped. Throws StoreError.
std::vector<Record> parse_store(std::string_view text);
std::string format_store(const std::vector<Record>& records);

struct Scope {
    enum class Kind { User, Group, All };
    Kind kind = Kind::All;
    /// Requested group for Kind::Group; unset means every group of the user.
    std::optional<std::string> group;
};

class AccessDenied : public std::runtime_error {
public:
    enum class Reason { Unidentified, GroupForbidden };
    AccessDenied(Reason reason, const std::string& what) : std::runtime_error(what), reason_(reason) {}
    Reason reason() const { return reason_; }

private:
    Reason reason_;
};

/// The requester as the identity registry knows it; unset when the client
/// address has no entry.
struct Requester {
    std::string user;
    std::vector<std::string> groups;
};

/// Payloads visible under `scope`, in store order. User scope always means
/// the registry user. Throws AccessDenied.
std::vector<std::string> extract_records(const std::vector<Record>& store, const Scope& scope,
                                         const std::optional<Requester>& requester);

/// Function number (1, 2, 3) from a CGI script name such as
/// `/cgi-bin/func2`; 0 when the name is not one of them.
int function_of(std::string_view script_name);

/// Value of `key` in an undecoded query string. Percent escapes and `+`
/// are decoded.
std::optional<std::string> query_param(std::string_view query, std::string_view key);

}  // namespace dacs::records
