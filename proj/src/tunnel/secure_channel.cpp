#include "dacs/secure_channel.hpp"

#include <sodium.h>

#include <algorithm>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <set>
#include <thread>

#include <spdlog/spdlog.h>

namespace dacs::tunnel {

namespace {

void ensure_sodium() {
    static const int rc = sodium_init();
    if (rc < 0) throw std::runtime_error("libsodium failed to initialize");
}

int hex_value(char c) {
    if (c >= '0' && c <= '9') return c - '0';
    if (c >= 'a' && c <= 'f') return c - 'a' + 10;
    if (c >= 'A' && c <= 'F') return c - 'A' + 10;
    return -1;
}

bool is_loopback(const std::string& host) { return host == "127.0.0.1" || host == "localhost"; }

}  // namespace

Key parse_key(std::string_view contents) {
    Key key{};
    if (contents.size() == key.size()) {
        std::memcpy(key.data(), contents.data(), key.size());
        return key;
    }
    if (contents.size() == 2 * key.size() + 1 && contents.back() == '\n') {
        for (std::size_t i = 0; i < key.size(); ++i) {
            int hi = hex_value(contents[2 * i]);
            int lo = hex_value(contents[2 * i + 1]);
            if (hi < 0 || lo < 0) throw KeyError("key file: bad hex digit");
            key[i] = static_cast<unsigned char>(hi * 16 + lo);
        }
        return key;
    }
    throw KeyError("key file must hold 32 raw bytes or 64 hex digits and a newline");
}

Key load_key(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw KeyError("cannot read key file " + path.string());
    std::string contents((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return parse_key(contents);
}

void SecureStream::derive(const unsigned char* client_nonce, const unsigned char* server_nonce,
                          bool is_client, const Key& psk) {
    auto kdf = [&](std::string_view label, std::array<unsigned char, 32>& out) {
        std::string msg(label);
        msg.append(reinterpret_cast<const char*>(client_nonce), kNonceBytes);
        msg.append(reinterpret_cast<const char*>(server_nonce), kNonceBytes);
        crypto_generichash(out.data(), out.size(), reinterpret_cast<const unsigned char*>(msg.data()),
                           msg.size(), psk.data(), psk.size());
    };
    kdf("dacs-c2s", is_client ? send_.key : recv_.key);
    kdf("dacs-s2c", is_client ? recv_.key : send_.key);
}

void SecureStream::seal_and_send(std::string_view plain) {
    unsigned char nonce[crypto_aead_chacha20poly1305_IETF_NPUBBYTES] = {};
    for (int i = 0; i < 8; ++i) nonce[i] = static_cast<unsigned char>(send_.counter >> (8 * i));
    ++send_.counter;

    std::string frame(2 + plain.size() + kTagBytes, '\0');
    auto* ct = reinterpret_cast<unsigned char*>(frame.data() + 2);
    unsigned long long ct_len = 0;
    crypto_aead_chacha20poly1305_ietf_encrypt(ct, &ct_len, reinterpret_cast<const unsigned char*>(plain.data()),
                                              plain.size(), nullptr, 0, nullptr, nonce, send_.key.data());
    frame[0] = static_cast<char>(ct_len >> 8);
    frame[1] = static_cast<char>(ct_len & 0xff);
    sock_->write_all(frame);
}

void SecureStream::write(std::string_view data) {
    while (!data.empty()) {
        auto n = std::min(data.size(), kMaxRecordPlaintext);
        seal_and_send(data.substr(0, n));
        data.remove_prefix(n);
    }
}

void SecureStream::close_write() {
    seal_and_send({});
    sock_->shutdown_write();
}

std::string SecureStream::read_record() {
    unsigned char header[2];
    if (!sock_->read_exact({reinterpret_cast<char*>(header), 2}))
        throw IntegrityError("stream ended without an end record");
    std::size_t len = (std::size_t{header[0]} << 8) | header[1];
    if (len < kTagBytes) throw IntegrityError("record shorter than its tag");
    std::string ct(len, '\0');
    if (!sock_->read_exact(ct)) throw IntegrityError("stream ended inside a record");

    unsigned char nonce[crypto_aead_chacha20poly1305_IETF_NPUBBYTES] = {};
    for (int i = 0; i < 8; ++i) nonce[i] = static_cast<unsigned char>(recv_.counter >> (8 * i));
    std::string plain(len - kTagBytes, '\0');
    unsigned long long plain_len = 0;
    if (crypto_aead_chacha20poly1305_ietf_decrypt(
            reinterpret_cast<unsigned char*>(plain.data()), &plain_len, nullptr,
            reinterpret_cast<const unsigned char*>(ct.data()), ct.size(), nullptr, 0, nonce,
            recv_.key.data()) != 0)
        throw IntegrityError("record " + std::to_string(recv_.counter) + " failed authentication");
    ++recv_.counter;
    return plain;
}

void SecureStream::confirm_peer() {
    std::string got;
    try {
        got = read_record();
    } catch (const IntegrityError&) {
        throw HandshakeError("peer failed key confirmation (wrong key or not a tunnel peer)");
    }
    if (got != kConfirm) throw HandshakeError("unexpected confirmation record");
}

SecureStream SecureStream::client(net::Socket& sock, const Key& psk) {
    ensure_sodium();
    unsigned char cn[kNonceBytes], sn[kNonceBytes];
    randombytes_buf(cn, sizeof cn);
    sock.write_all({reinterpret_cast<char*>(cn), sizeof cn});
    if (!sock.read_exact({reinterpret_cast<char*>(sn), sizeof sn}))
        throw HandshakeError("peer closed during the handshake");
    SecureStream s(sock);
    s.derive(cn, sn, true, psk);
    s.seal_and_send(kConfirm);
    s.confirm_peer();
    return s;
}

SecureStream SecureStream::server(net::Socket& sock, const Key& psk) {
    ensure_sodium();
    unsigned char cn[kNonceBytes], sn[kNonceBytes];
    if (!sock.read_exact({reinterpret_cast<char*>(cn), sizeof cn}))
        throw HandshakeError("peer closed during the handshake");
    randombytes_buf(sn, sizeof sn);
    sock.write_all({reinterpret_cast<char*>(sn), sizeof sn});
    SecureStream s(sock);
    s.derive(cn, sn, false, psk);
    s.confirm_peer();
    s.seal_and_send(kConfirm);
    return s;
}

bool relay_secure(net::Socket& plain, SecureStream& secure) {
    std::atomic<bool> failed{false};
    auto tear_down = [&] {
        plain.shutdown_both();
        secure.socket().shutdown_both();
    };

    std::thread outbound([&] {
        char buf[kMaxRecordPlaintext];
        try {
            while (true) {
                std::size_t n = plain.read_some(buf);
                if (n == 0) break;
                secure.write({buf, n});
            }
            secure.close_write();
        } catch (const net::NetError& e) {
            spdlog::debug("tunnel outbound: {}", e.what());
            tear_down();
        }
    });

    try {
        while (true) {
            auto rec = secure.read_record();
            if (rec.empty()) break;
            plain.write_all(rec);
        }
        plain.shutdown_write();
    } catch (const IntegrityError& e) {
        spdlog::warn("tunnel session dropped: {}", e.what());
        failed = true;
        tear_down();
    } catch (const net::NetError& e) {
        spdlog::debug("tunnel inbound: {}", e.what());
        tear_down();
    }
    outbound.join();
    return !failed;
}

TunnelClient::TunnelClient(int local_port, net::Endpoint remote, const Key& psk)
    : remote_(std::move(remote)), psk_(psk) {
    ensure_sodium();
    service_ = std::make_unique<net::TcpService>(net::Listener::bind("127.0.0.1", local_port),
                                                 [this](net::Socket& s) { serve(s); });
}

void TunnelClient::serve(net::Socket& local) {
    net::Socket remote;
    try {
        remote = net::connect_tcp(remote_);
    } catch (const net::NetError& e) {
        ++stats_.unreachable;
        spdlog::warn("tunnel to {}: {}", remote_.str(), e.what());
        return;
    }
    try {
        remote.set_recv_timeout(std::chrono::seconds(5));
        auto secure = SecureStream::client(remote, psk_);
        remote.set_recv_timeout(std::chrono::milliseconds(0));
        ++stats_.established;
        if (!relay_secure(local, secure)) ++stats_.integrity_failures;
    } catch (const HandshakeError& e) {
        ++stats_.handshake_failures;
        spdlog::warn("tunnel to {}: {}", remote_.str(), e.what());
    } catch (const net::NetError& e) {
        ++stats_.handshake_failures;
        spdlog::warn("tunnel to {}: {}", remote_.str(), e.what());
    }
}

TunnelServer::TunnelServer(net::Endpoint listen, net::Endpoint forward_to, const Key& psk)
    : forward_to_(std::move(forward_to)), psk_(psk) {
    ensure_sodium();
    service_ = std::make_unique<net::TcpService>(net::Listener::bind(listen.host, listen.port),
                                                 [this](net::Socket& s) { serve(s); });
}

void TunnelServer::serve(net::Socket& peer) {
    std::optional<SecureStream> secure;
    try {
        peer.set_recv_timeout(std::chrono::seconds(5));
        secure.emplace(SecureStream::server(peer, psk_));
        peer.set_recv_timeout(std::chrono::milliseconds(0));
    } catch (const std::exception& e) {
        ++stats_.handshake_failures;
        spdlog::warn("tunnel session from {}: {}", peer.peer_ip(), e.what());
        return;
    }
    net::Socket upstream;
    try {
        upstream = net::connect_tcp(forward_to_);
    } catch (const net::NetError& e) {
        ++stats_.unreachable;
        spdlog::warn("tunnel forward to {}: {}", forward_to_.str(), e.what());
        return;
    }
    ++stats_.established;
    if (!relay_secure(upstream, *secure)) ++stats_.integrity_failures;
}

std::string to_string(Inconsistency::Kind kind) {
    switch (kind) {
        case Inconsistency::Kind::OrphanedTunnel: return "orphaned tunnel";
        case Inconsistency::Kind::DanglingLocalRewrite: return "dangling localhost rewrite";
        case Inconsistency::Kind::BlockConflict: return "block and tunnel on one service";
        case Inconsistency::Kind::DuplicateLocalPort: return "duplicate local port";
    }
    return "?";
}

std::vector<Inconsistency> tunnel_policy_check(const RuleSet& control_rules,
                                               const std::vector<TunnelSpec>& tunnels) {
    using Kind = Inconsistency::Kind;
    std::map<MatchKey, const RuleAction*> by_key;
    for (const auto& r : control_rules.rules) by_key.emplace(r.match, &r.action);

    std::set<Inconsistency> found;
    std::map<int, int> port_use;
    for (const auto& t : tunnels) {
        if (++port_use[t.local_port] == 2)
            found.insert({Kind::DuplicateLocalPort, "127.0.0.1:" + std::to_string(t.local_port)});
        auto it = by_key.find(t.service_match);
        if (it != by_key.end() && std::holds_alternative<BlockAction>(*it->second)) {
            found.insert({Kind::BlockConflict, to_string(t.service_match)});
            continue;
        }
        const auto* rw = it == by_key.end() ? nullptr : std::get_if<RewriteAction>(it->second);
        if (rw == nullptr || !is_loopback(rw->new_dst.host) || rw->new_dst.port != t.local_port)
            found.insert({Kind::OrphanedTunnel, to_string(t.service_match)});
    }
    for (const auto& r : control_rules.rules) {
        const auto* rw = std::get_if<RewriteAction>(&r.action);
        if (rw == nullptr || !is_loopback(rw->new_dst.host)) continue;
        bool paired = std::any_of(tunnels.begin(), tunnels.end(), [&](const TunnelSpec& t) {
            return t.service_match == r.match && t.local_port == rw->new_dst.port;
        });
        if (!paired) found.insert({Kind::DanglingLocalRewrite, format_rule(r)});
    }
    return {found.begin(), found.end()};
}

}  // namespace dacs::tunnel
