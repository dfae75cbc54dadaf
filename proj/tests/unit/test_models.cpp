#include "doctest.h"

#include <cmath>
#include <numeric>
#include <sstream>

#include "metastab/models.hpp"
#include "metastab/reduction.hpp"

using namespace metastab;

namespace {

std::vector<int> parse_ints(const std::string& s) {
    std::vector<int> out;
    std::stringstream ss(s);
    std::string part;
    while (std::getline(ss, part, '_')) out.push_back(std::stoi(part));
    return out;
}

// Label of (cube, coords) after resolving glued corners to the owning cube.
std::string cube_label(int k, const std::vector<int>& c, int n) {
    const bool low = std::all_of(c.begin(), c.end(), [](int v) { return v == 1; });
    const bool high = std::all_of(c.begin(), c.end(), [&](int v) { return v == n; });
    int kk = k;
    std::vector<int> cc = c;
    if (low && k > 0) {
        kk = k - 1;
        std::fill(cc.begin(), cc.end(), n);
    } else if (high && k == 3) {
        kk = 0;
        std::fill(cc.begin(), cc.end(), 1);
    }
    std::string out = "k" + std::to_string(kk);
    for (int v : cc) out += "_" + std::to_string(v);
    return out;
}

}  // namespace

TEST_CASE("glued cubes geometry") {
    const auto m = glued_cubes(2, 4, 1);
    CHECK(m.chain.size() == 60);
    const auto pi = stationary(m.chain);
    CHECK((pi.weights() - m.pi.weights()).cwiseAbs().maxCoeff() <= 1e-12);
    CHECK(is_reversible(m.chain, m.pi));

    // pi proportional to degree
    for (Index x = 0; x < m.chain.size(); ++x) {
        const auto deg = static_cast<double>(m.chain.transitions(x).size());
        CHECK(m.pi[x] / deg == doctest::Approx(m.pi[0] / m.chain.transitions(0).size()).epsilon(1e-12));
        CHECK(deg >= 2);
    }

    const auto m3 = glued_cubes(3, 3, 1);
    CHECK(m3.chain.size() == 4 * (27 - 1));
    CHECK(*m3.theta == 27.0);

    const auto big = glued_cubes(2, 8, 2);
    REQUIRE(big.partition.has_value());
    CHECK(big.partition->valley_count() == 4);
    for (std::size_t k = 0; k < 4; ++k) CHECK(big.partition->valley(k).size() == 16);
    CHECK(*big.theta == doctest::Approx(64.0 * std::log(8.0)));

    // exactly four glued corners, each of degree 2d
    int glued = 0;
    for (Index x = 0; x < big.chain.size(); ++x) {
        if (big.chain.transitions(x).size() == 4) {
            const auto c = parse_ints(big.chain.label(x).substr(3));
            const bool corner = (c[0] == 1 || c[0] == 8) && (c[1] == 1 || c[1] == 8);
            glued += corner;
        }
    }
    CHECK(glued == 4);

    // rotation of the cubes is a graph automorphism
    bool automorphism = true;
    for (Index x = 0; x < big.chain.size(); ++x) {
        const auto& label = big.chain.label(x);
        const int k = label[1] - '0';
        const auto c = parse_ints(label.substr(3));
        const Index fx = big.chain.index_of(cube_label((k + 1) % 4, c, 8));
        for (const auto& t : big.chain.transitions(x)) {
            const auto& lt = big.chain.label(t.to);
            const auto ct = parse_ints(lt.substr(3));
            // a neighbor may sit in the adjacent cube only through the glued corner
            const int kt = lt[1] - '0';
            const Index fy = big.chain.index_of(cube_label((kt + 1) % 4, ct, 8));
            automorphism = automorphism && big.chain.rate(fx, fy) == t.rate;
        }
    }
    CHECK(automorphism);

    CHECK_THROWS_AS(glued_cubes(1, 4, 1), Error);
    CHECK_THROWS_AS(glued_cubes(2, 4, 2), Error);
}

TEST_CASE("glued squares reduction structure") {
    const auto m = glued_cubes(2, 8, 2);
    const auto model = coarse_rates(m.chain, m.pi, *m.partition, m.theta);
    for (Index j = 0; j < 4; ++j) {
        const double next = model.rates(j, (j + 1) % 4);
        const double prev = model.rates(j, (j + 3) % 4);
        const double opposite = model.rates(j, (j + 2) % 4);
        CHECK(std::abs(next - prev) <= 1e-9 * next);
        CHECK(opposite < next);
    }
    const auto ts = timescales(m.chain, m.pi, *m.partition);
    CHECK(ts.spread == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("zero-range process") {
    CHECK(zero_range_g(0, 3.0) == 0.0);
    CHECK(zero_range_g(1, 3.0) == 1.0);
    CHECK(zero_range_g(2, 3.0) == doctest::Approx(8.0));

    const auto m = zero_range(3, 2, 3.0, 0.5);
    CHECK(m.chain.size() == 6);
    CHECK(stationarity_residual(m.chain, m.pi.weights()) <= 1e-10);
    const auto pi = stationary(m.chain);
    CHECK((pi.weights() - m.pi.weights()).cwiseAbs().maxCoeff() <= 1e-10);

    const auto t = zero_range(4, 7, 2.5, 0.8);
    CHECK(t.chain.size() == 120);  // C(10, 3)
    CHECK((stationary(t.chain).weights() - t.pi.weights()).cwiseAbs().maxCoeff() <= 1e-10);
    CHECK_FALSE(is_reversible(t.chain, t.pi));
    // particle conservation
    for (Index x = 0; x < t.chain.size(); ++x) {
        const auto a = parse_ints(t.chain.label(x));
        for (const auto& e : t.chain.transitions(x)) {
            const auto b = parse_ints(t.chain.label(e.to));
            CHECK(std::accumulate(a.begin(), a.end(), 0) == std::accumulate(b.begin(), b.end(), 0));
        }
    }
    const auto totally = zero_range(3, 5, 2.0, 1.0);
    CHECK((stationary(totally.chain).weights() - totally.pi.weights()).cwiseAbs().maxCoeff() <= 1e-10);

    // default ell = 4, 4, 5: timescale grows, valley mass gap is not monotone
    double prev_ts = 0.0;
    for (int n : {10, 15, 20}) {
        const auto z = zero_range(3, n, 3.0, 0.5);
        const double ts = timescale(z.chain, z.pi, *z.partition, 0);
        CHECK(ts > prev_ts);
        prev_ts = ts;
    }
    const auto z15 = zero_range(3, 15, 3.0, 0.5);
    const auto z20 = zero_range(3, 20, 3.0, 0.5);
    CHECK(std::abs(z20.pi.mass(z20.partition->valley(0)) - 1.0 / 3.0) <
          std::abs(z15.pi.mass(z15.partition->valley(0)) - 1.0 / 3.0));

    CHECK_THROWS_AS(zero_range(2, 5, 3.0, 0.5), Error);
    CHECK_THROWS_AS(zero_range(3, 5, 1.0, 0.5), Error);
    CHECK_THROWS_AS(zero_range(3, 5, 3.0, 0.3), Error);
    CHECK_THROWS_AS(zero_range(3, 10, 3.0, 0.5, 5), Error);
    CHECK_THROWS_AS(zero_range(20, 40, 3.0, 0.5), Error);
}

TEST_CASE("random walk in a potential") {
    Grid g;
    g.points = 21;
    const auto m = potential_rw(g, named_potential("double_well"), 8.0);
    REQUIRE(m.partition.has_value());
    CHECK(m.partition->valley_count() == 2);
    const auto model = coarse_rates(m.chain, m.pi, *m.partition);
    CHECK(std::abs(model.rates(0, 1) - model.rates(1, 0)) <= 1e-9 * model.rates(0, 1));
    CHECK((stationary(m.chain).weights() - m.pi.weights()).cwiseAbs().maxCoeff() <= 1e-10);

    const auto flat = potential_rw(g, named_potential("flat"), 8.0);
    CHECK_FALSE(flat.partition.has_value());
    for (Index x = 0; x < flat.chain.size(); ++x) {
        CHECK(flat.pi[x] == doctest::Approx(1.0 / 21.0));
        for (const auto& t : flat.chain.transitions(x)) CHECK(t.rate == 1.0);
    }

    double prev = 0.0;
    for (double n : {4.0, 8.0, 12.0}) {
        const auto w = potential_rw(g, named_potential("double_well"), n);
        const double ts = timescale(w.chain, w.pi, *w.partition, 0);
        CHECK(ts > prev);
        prev = ts;
    }

    Grid g2;
    g2.dim = 2;
    g2.points = 9;
    const auto four = potential_rw(g2, named_potential("four_well"), 6.0);
    REQUIRE(four.partition.has_value());
    CHECK(four.partition->valley_count() == 4);
    CHECK(is_reversible(four.chain, four.pi, 1e-10));
}

TEST_CASE("model strings") {
    CHECK(parse_model("glued_cubes:d=2,N=4,ell=1").chain.size() == 60);
    CHECK(parse_model("zero_range:L=3,N=2,alpha=3,p=0.5").chain.size() == 6);
    const auto p = parse_model("potential_rw:F=double_well,points=21,N=8");
    CHECK(p.chain.size() == 21);
    CHECK(p.params.at("F") == "double_well");

    auto code_of = [](const std::string& s) {
        try {
            parse_model(s);
        } catch (const Error& e) {
            return e.code();
        }
        return ErrorCode::SolverFailure;
    };
    CHECK(code_of("glued_cubes:d=2,N=4,bogus=1") == ErrorCode::ParseError);
    CHECK(code_of("glued_cubes:d=2") == ErrorCode::ParseError);
    CHECK(code_of("glued_cubes:d=two,N=4") == ErrorCode::ParseError);
    CHECK(code_of("glued_cubes:d=2,N=4,N=5") == ErrorCode::ParseError);
    CHECK(code_of("cubes:N=4") == ErrorCode::ParseError);
    CHECK(code_of("glued_cubes:d=2,N=4,ell=3") == ErrorCode::BadParams);
    CHECK(code_of("potential_rw:F=nope,N=2") == ErrorCode::BadParams);
}
