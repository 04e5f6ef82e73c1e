#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace dacs::net {
class Socket;
}

namespace dacs::wire {

// Frame: "L:" <decimal payload length> LF <payload>. The payload is a verb
// line followed by key=value lines in a fixed order, each LF-terminated.

inline constexpr std::size_t kMaxPayload = 1u << 20;

struct Login {
    std::string user;
    std::string client_ip;
    bool operator==(const Login&) const = default;
};

struct RuleSetMsg {
    std::uint64_t version = 0;
    std::vector<std::string> rules;  // rule grammar lines
    bool operator==(const RuleSetMsg&) const = default;
};

struct PushNotice {
    bool operator==(const PushNotice&) const = default;
};

struct IdentityNotice {
    std::string user;
    std::string client_ip;
    std::vector<std::string> groups;
    bool operator==(const IdentityNotice&) const = default;
};

struct Ack {
    std::uint64_t ref_version = 0;
    bool operator==(const Ack&) const = default;
};

struct ErrorMsg {
    std::string code;
    std::string detail;
    bool operator==(const ErrorMsg&) const = default;
};

using Message = std::variant<Login, RuleSetMsg, PushNotice, IdentityNotice, Ack, ErrorMsg>;

/// Thrown by encode when a field cannot be represented.
class EncodeError : public std::runtime_error {
public:
    enum class Kind { FieldTooLong, IllegalCharacter };
    EncodeError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
    Kind kind() const { return kind_; }

private:
    Kind kind_;
};

std::string encode(const Message& msg);

enum class DecodeStatus {
    Ok,
    Incomplete,
    MalformedFrame,
    UnknownVerb,
    MissingField,
    OversizeFrame,
};

struct DecodeResult {
    DecodeStatus status = DecodeStatus::Incomplete;
    Message message;
    std::size_t consumed = 0;  // bytes of the frame; 0 unless status is Ok
    std::string detail;

    bool ok() const { return status == DecodeStatus::Ok; }
};

/// Decodes at most one frame from the front of `bytes`. Never reads past that
/// frame; the caller drops `consumed` bytes and keeps the rest.
DecodeResult decode(std::string_view bytes);

const char* to_string(DecodeStatus status);
const char* verb_of(const Message& msg);

class ProtocolError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Reassembles frames from one socket. Not shared between connections.
class FrameReader {
public:
    explicit FrameReader(net::Socket& sock) : sock_(sock) {}

    /// Blocks for the next message. Returns false on clean EOF at a frame
    /// boundary; throws ProtocolError on malformed input or mid-frame EOF.
    bool next(Message& out);

private:
    net::Socket& sock_;
    std::string buf_;
};

void send(net::Socket& sock, const Message& msg);

// Simulated source identity: exactly "DACS1 " + dotted quad + LF, written by
// the control layer before any application byte.
std::string make_preamble(const std::string& client_ip);
/// Parses a preamble line with its LF already stripped.
std::optional<std::string> parse_preamble(std::string_view line);

}  // namespace dacs::wire
