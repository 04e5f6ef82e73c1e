#include <doctest.h>

#include <random>
#include <set>

#include "dacs/wire.hpp"
#include "generators.hpp"
#include "golden_vectors.hpp"

using namespace dacs::wire;

TEST_CASE("encode golden vectors") {
    CHECK(encode(Login{"userA", "192.168.10.5"}) ==
          "L:40\nLOGIN\nuser=userA\nclient_ip=192.168.10.5\n");
    CHECK(encode(RuleSetMsg{1, {"rewrite|wwwserver:80|192.168.1.1:3000"}}) ==
          "L:61\nRULESET\nversion=1\nrule=rewrite|wwwserver:80|192.168.1.1:3000\n");
    CHECK(encode(Ack{0}) == "L:18\nACK\nref_version=0\n");
    CHECK(encode(PushNotice{}) == "L:5\nPUSH\n");
}

TEST_CASE("checked-in frames") {
    std::set<std::string> verbs;
    for (const auto& [file, want] : golden::vectors()) {
        CAPTURE(file);
        auto bytes = golden::load(file);
        REQUIRE_FALSE(bytes.empty());
        auto r = decode(bytes);
        REQUIRE(r.ok());
        CHECK(r.consumed == bytes.size());
        CHECK(r.message == want);
        CHECK(encode(r.message) == bytes);
        verbs.insert(verb_of(r.message));
    }
    CHECK(verbs.size() == 6);
}

TEST_CASE("encode rejects fields that break the grammar") {
    CHECK_THROWS_AS(encode(Login{"user A", "1.2.3.4"}), EncodeError);
    CHECK_THROWS_AS(encode(Login{"userA", "1.2.3"}), EncodeError);
    CHECK_THROWS_AS(encode(RuleSetMsg{1, {"allow|x:1"}}), EncodeError);
    CHECK_THROWS_AS(encode(IdentityNotice{"u", "1.2.3.4", {"a,b"}}), EncodeError);
    CHECK_THROWS_AS(encode(ErrorMsg{"E", "two\nlines"}), EncodeError);
    try {
        encode(ErrorMsg{"E", std::string(70000, 'x')});
        FAIL("expected FieldTooLong");
    } catch (const EncodeError& e) {
        CHECK(e.kind() == EncodeError::Kind::FieldTooLong);
    }
}

TEST_CASE("decode error kinds") {
    CHECK(decode("L:abc\nLOGIN\n").status == DecodeStatus::MalformedFrame);
    CHECK(decode("X:5\nPUSH\n").status == DecodeStatus::MalformedFrame);
    CHECK(decode("L:05\nPUSH\n").status == DecodeStatus::MalformedFrame);
    CHECK(decode("L:\nPUSH\n").status == DecodeStatus::MalformedFrame);
    CHECK(decode("").status == DecodeStatus::Incomplete);
    CHECK(decode("L").status == DecodeStatus::Incomplete);
    CHECK(decode("L:12").status == DecodeStatus::Incomplete);
    CHECK(decode("L:40\nLOGIN\n").status == DecodeStatus::Incomplete);
    CHECK(decode("L:1048577\n").status == DecodeStatus::OversizeFrame);
    CHECK(decode("L:99999999").status == DecodeStatus::OversizeFrame);
    CHECK(decode("L:5\nHELO\n").status == DecodeStatus::UnknownVerb);
    CHECK(decode("L:17\nLOGIN\nuser=userA\n").status == DecodeStatus::MissingField);
    CHECK(decode("L:24\nLOGIN\nclient_ip=1.2.3.4\n").status == DecodeStatus::MissingField);
    CHECK(decode("L:9\nPUSH\nx=1\n").status == DecodeStatus::MalformedFrame);
    CHECK(decode("L:6\nPUSH\r\n").status == DecodeStatus::MalformedFrame);
    CHECK(decode("L:4\nPUSH").status == DecodeStatus::MalformedFrame);
}

TEST_CASE("decode leaves the suffix untouched") {
    std::string a = encode(Ack{5});
    std::string b = encode(Login{"userB", "10.0.0.2"});
    std::string stream = a + b + "L:3";
    auto r1 = decode(stream);
    REQUIRE(r1.ok());
    CHECK(r1.consumed == a.size());
    CHECK(std::get<Ack>(r1.message).ref_version == 5);
    auto r2 = decode(std::string_view(stream).substr(r1.consumed));
    REQUIRE(r2.ok());
    CHECK(std::get<Login>(r2.message) == Login{"userB", "10.0.0.2"});
    CHECK(decode(std::string_view(stream).substr(r1.consumed + r2.consumed)).status ==
          DecodeStatus::Incomplete);
}

TEST_CASE("round trip of 200 pipelined random messages") {
    std::mt19937 rng(11);
    std::vector<Message> sent;
    std::string stream;
    for (int i = 0; i < 200; ++i) {
        sent.push_back(gen::message(rng));
        auto frame = encode(sent.back());
        CHECK(frame == encode(sent.back()));
        stream += frame;
    }
    std::string_view rest = stream;
    for (const auto& expected : sent) {
        auto r = decode(rest);
        REQUIRE(r.ok());
        CHECK(r.message == expected);
        rest.remove_prefix(r.consumed);
    }
    CHECK(rest.empty());
}

TEST_CASE("decode survives random garbage and mutated frames") {
    std::mt19937 rng(5);
    for (int i = 0; i < 20000; ++i) {
        std::string input;
        if (i % 2 == 0) {
            input = encode(gen::message(rng));
            int flips = 1 + static_cast<int>(rng() % 3);
            for (int f = 0; f < flips; ++f) input[rng() % input.size()] = static_cast<char>(rng());
        } else {
            input.resize(rng() % 64);
            for (auto& c : input) c = static_cast<char>(rng());
            if (rng() % 2) input = "L:" + std::to_string(input.size()) + "\n" + input;
        }
        auto r = decode(input);
        if (r.ok()) CHECK(r.consumed <= input.size());
        else CHECK(r.consumed == 0);
    }
}
