#pragma once

#include <random>
#include <string>

#include "dacs/wire.hpp"

namespace gen {

inline std::string name(std::mt19937& rng, const char* prefix = "u") {
    static const char alphabet[] = "abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789_-.";
    std::string s = prefix;
    int n = static_cast<int>(rng() % 12);
    for (int i = 0; i < n; ++i) s += alphabet[rng() % (sizeof alphabet - 1)];
    return s;
}

inline std::string ip(std::mt19937& rng) {
    return std::to_string(rng() % 256) + "." + std::to_string(rng() % 256) + "." +
           std::to_string(rng() % 256) + "." + std::to_string(rng() % 256);
}

inline int port(std::mt19937& rng) { return static_cast<int>(rng() % 65535) + 1; }

inline std::string rule_line(std::mt19937& rng) {
    std::string host = rng() % 4 == 0 ? "*" : name(rng, "h");
    if (rng() % 3 == 0) return "block|" + host + ":" + std::to_string(port(rng));
    std::string target = rng() % 5 == 0 ? "localhost" : ip(rng);
    return "rewrite|" + host + ":" + std::to_string(port(rng)) + "|" + target + ":" +
           std::to_string(port(rng));
}

inline dacs::wire::Message message(std::mt19937& rng) {
    using namespace dacs::wire;
    switch (rng() % 6) {
        case 0: return Login{name(rng), ip(rng)};
        case 1: {
            RuleSetMsg m{rng(), {}};
            int n = static_cast<int>(rng() % 6);
            for (int i = 0; i < n; ++i) m.rules.push_back(rule_line(rng));
            return m;
        }
        case 2: return PushNotice{};
        case 3: {
            IdentityNotice m{name(rng), ip(rng), {}};
            int n = static_cast<int>(rng() % 4);
            for (int i = 0; i < n; ++i) m.groups.push_back(name(rng, "G"));
            return m;
        }
        case 4: return Ack{static_cast<std::uint64_t>(rng()) * 7919u};
        default: {
            std::string detail;
            int n = static_cast<int>(rng() % 40);
            for (int i = 0; i < n; ++i) detail += static_cast<char>(' ' + rng() % 95);
            return ErrorMsg{name(rng, "E"), detail};
        }
    }
}

}  // namespace gen
