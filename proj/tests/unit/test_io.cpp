#include "doctest.h"

#include <random>

#include "metastab/io.hpp"
#include "support/random_chains.hpp"

using namespace metastab;
using namespace testsupport;

namespace {

ErrorCode code_of(const std::string& text) {
    try {
        parse_chain_spec(text);
    } catch (const Error& e) {
        return e.code();
    }
    return ErrorCode::SolverFailure;
}

}  // namespace

TEST_CASE("chain spec parsing") {
    const auto spec = parse_chain_spec(R"({
        "states": ["1", "2", "3"],
        "rates": [["1","2",1], ["2","1",1], ["2","3",1], ["3","2",1]],
        "partition": {"valleys": [["1"], ["3"]], "delta": ["2"]}
    })");
    CHECK(spec.chain.size() == 3);
    CHECK(spec.chain.rate(1, 2) == 1.0);
    REQUIRE(spec.partition.has_value());
    CHECK(spec.partition->valley_count() == 2);
    CHECK(spec.partition->delta().size() == 1);

    const auto bare = parse_chain_spec(R"({"states":["a","b"],"rates":[["a","b",2.0],["b","a",3.0]]})");
    CHECK_FALSE(bare.partition.has_value());

    CHECK(code_of("{") == ErrorCode::ParseError);
    CHECK(code_of("[]") == ErrorCode::ParseError);
    CHECK(code_of(R"({"states":["a","b"]})") == ErrorCode::ParseError);
    CHECK(code_of(R"({"states":["a","b"],"rates":[["a","b"]]})") == ErrorCode::ParseError);
    CHECK(code_of(R"({"states":["a","b"],"rates":[["a","b","2"]]})") == ErrorCode::ParseError);
    CHECK(code_of(R"({"states":["a","b"],"rates":[],"extra":1})") == ErrorCode::ParseError);
    CHECK(code_of(R"({"states":["a",1],"rates":[]})") == ErrorCode::ParseError);
    CHECK(code_of(R"({"states":["a","b"],"rates":[["a","c",1]]})") == ErrorCode::UnknownLabel);
    CHECK(code_of(R"({"states":["a","b"],"rates":[["a","b",1]]})") == ErrorCode::NotIrreducible);
    CHECK(code_of(R"({"states":["a","b"],"rates":[["a","b",1],["b","a",-1]]})") == ErrorCode::NonPositiveRate);
    CHECK(code_of(R"({"states":["a","b"],"rates":[["a","b",1],["b","a",1]],
                      "partition":{"valleys":[["a"],["a"]]}})") == ErrorCode::BadPartition);
}

TEST_CASE("partition files") {
    const Chain c = birth_death(3);
    const auto p = parse_partition(c, R"({"valleys": [["1"], ["3"]]})");
    CHECK(p.delta().size() == 1);
    CHECK(p.delta()[0] == 1);
    const auto wrapped = parse_partition(c, R"({"partition": {"valleys": [["1"], ["2", "3"]]}})");
    CHECK(wrapped.delta().empty());
    CHECK_THROWS_AS(parse_partition(c, R"({"valleys": [["1"]], "bogus": []})"), Error);
}

TEST_CASE("round trip is exact") {
    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 40; ++trial) {
        const Index n = std::uniform_int_distribution<Index>(2, 30)(rng);
        const Chain c = random_chain(rng, n);
        const auto valleys = random_valleys(rng, n, 2);
        const auto part = Partition::from_indices(n, valleys);
        const std::string text = emit_chain_spec(c, part);
        const auto back = parse_chain_spec(text);
        REQUIRE(back.chain.size() == c.size());
        bool same = back.chain.labels() == c.labels();
        for (Index x = 0; x < n; ++x) {
            const auto a = c.transitions(x);
            const auto b = back.chain.transitions(x);
            same = same && a.size() == b.size();
            for (std::size_t k = 0; same && k < a.size(); ++k) same = a[k].to == b[k].to && a[k].rate == b[k].rate;
        }
        CHECK(same);
        CHECK(back.partition->valleys() == part.valleys());
        CHECK(emit_chain_spec(back.chain, back.partition) == text);
        CHECK(fingerprint(back.chain, back.partition) == fingerprint(c, part));
    }
}

TEST_CASE("fnv1a64 reference values") {
    CHECK(fnv1a64("") == 0xcbf29ce484222325ULL);
    CHECK(fnv1a64("a") == 0xaf63dc4c8601ec8cULL);
    CHECK(fnv1a64("foobar") == 0x85944171f73967e8ULL);
    const Chain c = birth_death(3);
    const auto f = fingerprint(c);
    CHECK(f.rfind("fnv1a64:", 0) == 0);
    CHECK(f.size() == 8 + 16);
    CHECK(f != fingerprint(birth_death(4)));
}
