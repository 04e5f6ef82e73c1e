#pragma once

#include <array>
#include <atomic>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "dacs/net.hpp"
#include "dacs/rules.hpp"

namespace dacs::tunnel {

// Session setup, both directions in the clear then sealed:
//
//   client -> server   16-byte client nonce
//   server -> client   16-byte server nonce
//   client -> server   confirm record (sealed with the c2s key)
//   server -> client   confirm record (sealed with the s2c key)
//
// Direction keys are BLAKE2b-256 keyed with the pre-shared key over
// "dacs-c2s" or "dacs-s2c" followed by both nonces. Every record is a 2-byte
// big-endian ciphertext length and a ChaCha20-Poly1305 (IETF) ciphertext;
// the record nonce is the per-direction record counter, little-endian, in
// the first 8 of 12 bytes. An empty record ends the direction, so a TCP
// EOF without one is treated as truncation.

using Key = std::array<unsigned char, 32>;

constexpr std::size_t kNonceBytes = 16;
constexpr std::size_t kTagBytes = 16;
constexpr std::size_t kMaxRecordPlaintext = 0xffff - kTagBytes;
constexpr std::string_view kConfirm = "dacs-confirm";
/// Bytes the client writes before its first application record.
constexpr std::size_t kClientHandshakeBytes = kNonceBytes + 2 + kConfirm.size() + kTagBytes;

class HandshakeError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A record failed authentication or the stream was cut mid-record.
class IntegrityError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class KeyError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// 32 raw bytes, or 64 hex digits and a LF.
Key parse_key(std::string_view contents);
Key load_key(const std::filesystem::path& path);

/// An authenticated-encrypted stream over a connected socket, which the
/// caller keeps alive. One thread may write while another reads.
class SecureStream {
public:
    /// Both throw HandshakeError on a key mismatch or a peer that does not
    /// speak the protocol, and net::NetError on socket failures.
    static SecureStream client(net::Socket& sock, const Key& psk);
    static SecureStream server(net::Socket& sock, const Key& psk);

    void write(std::string_view data);
    /// Sends the end record and half-closes the socket.
    void close_write();
    /// Plaintext of the next record, empty at a proper end of stream.
    /// Throws IntegrityError.
    std::string read_record();

    net::Socket& socket() { return *sock_; }

private:
    struct Direction {
        std::array<unsigned char, 32> key{};
        std::uint64_t counter = 0;
    };

    explicit SecureStream(net::Socket& sock) : sock_(&sock) {}
    void derive(const unsigned char* client_nonce, const unsigned char* server_nonce, bool is_client,
                const Key& psk);
    void seal_and_send(std::string_view plain);
    void confirm_peer();

    net::Socket* sock_;
    Direction send_;
    Direction recv_;
};

/// Pumps `plain` into `secure` and back until both directions end. An
/// integrity failure tears both sockets down without delivering the bad
/// record. Returns false in that case.
bool relay_secure(net::Socket& plain, SecureStream& secure);

struct TunnelSpec {
    MatchKey service_match;
    int local_port = 0;  // 127.0.0.1
    Destination remote_endpoint;
    std::string key_id;
};

struct TunnelStats {
    std::atomic<std::uint64_t> established{0};
    std::atomic<std::uint64_t> handshake_failures{0};
    std::atomic<std::uint64_t> unreachable{0};
    std::atomic<std::uint64_t> integrity_failures{0};
};

/// Client end: accepts plain connections on 127.0.0.1:local_port and carries
/// each through its own secure session to the remote tunnel listener.
class TunnelClient {
public:
    TunnelClient(int local_port, net::Endpoint remote, const Key& psk);
    int port() const { return service_->port(); }
    const TunnelStats& stats() const { return stats_; }

private:
    void serve(net::Socket& local);

    net::Endpoint remote_;
    Key psk_;
    TunnelStats stats_;
    std::unique_ptr<net::TcpService> service_;
};

/// Server end: accepts secure sessions and relays the plaintext to
/// `forward_to`, which is only dialed after a good handshake.
class TunnelServer {
public:
    TunnelServer(net::Endpoint listen, net::Endpoint forward_to, const Key& psk);
    int port() const { return service_->port(); }
    const TunnelStats& stats() const { return stats_; }

private:
    void serve(net::Socket& peer);

    net::Endpoint forward_to_;
    Key psk_;
    TunnelStats stats_;
    std::unique_ptr<net::TcpService> service_;
};

struct Inconsistency {
    enum class Kind { OrphanedTunnel, DanglingLocalRewrite, BlockConflict, DuplicateLocalPort };
    Kind kind;
    std::string subject;  // tunnel key or rule text

    bool operator==(const Inconsistency&) const = default;
    auto operator<=>(const Inconsistency&) const = default;
};

std::string to_string(Inconsistency::Kind kind);

/// Checks the pairing between Control rewrites and tunnels: each tunnel's
/// key must be rewritten to 127.0.0.1:local_port and each loopback rewrite
/// must land on a tunnel for the same key. Sorted; empty means consistent.
std::vector<Inconsistency> tunnel_policy_check(const RuleSet& control_rules,
                                               const std::vector<TunnelSpec>& tunnels);

}  // namespace dacs::tunnel
