#include <catch_amalgamated.hpp>

#include <algorithm>
#include <set>

#include <decentbva/rng.hpp>

using namespace decentbva;

TEST_CASE("same seed gives the same stream") {
    RngStream a(42), b(42);
    for (int i = 0; i < 100; ++i) REQUIRE(a.next_u64() == b.next_u64());
}

TEST_CASE("different seeds diverge") {
    RngStream a(1), b(2);
    int same = 0;
    for (int i = 0; i < 64; ++i) same += a.next_u64() == b.next_u64();
    REQUIRE(same == 0);
}

TEST_CASE("uniform stays in [0,1) and fills the range") {
    RngStream rng(7);
    double lo = 1.0, hi = 0.0;
    for (int i = 0; i < 10000; ++i) {
        double u = rng.uniform();
        REQUIRE(u >= 0.0);
        REQUIRE(u < 1.0);
        lo = std::min(lo, u);
        hi = std::max(hi, u);
    }
    REQUIRE(lo < 0.01);
    REQUIRE(hi > 0.99);
}

TEST_CASE("uniform(lo,hi) respects bounds") {
    RngStream rng(9);
    for (int i = 0; i < 1000; ++i) {
        double u = rng.uniform(-0.3, 0.3);
        REQUIRE(u >= -0.3);
        REQUIRE(u <= 0.3);
    }
}

TEST_CASE("normal has roughly standard moments") {
    RngStream rng(11);
    double sum = 0.0, sq = 0.0;
    const int n = 50000;
    for (int i = 0; i < n; ++i) {
        double v = rng.normal();
        sum += v;
        sq += v * v;
    }
    REQUIRE(std::abs(sum / n) < 0.03);
    REQUIRE(std::abs(sq / n - 1.0) < 0.05);
}

TEST_CASE("shuffle permutes") {
    RngStream rng(13);
    std::vector<std::size_t> v(50);
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = i;
    auto original = v;
    rng.shuffle(v);
    REQUIRE(v != original); // astronomically unlikely to be identity
    std::sort(v.begin(), v.end());
    REQUIRE(v == original);
}

TEST_CASE("sample_without_replacement yields k distinct ids below n") {
    RngStream rng(17);
    auto s = rng.sample_without_replacement(100, 10);
    REQUIRE(s.size() == 10);
    std::set<std::size_t> uniq(s.begin(), s.end());
    REQUIRE(uniq.size() == 10);
    for (std::size_t id : s) REQUIRE(id < 100);
}

TEST_CASE("sample of everything is a permutation") {
    RngStream rng(19);
    auto s = rng.sample_without_replacement(8, 8);
    std::sort(s.begin(), s.end());
    for (std::size_t i = 0; i < 8; ++i) REQUIRE(s[i] == i);
}

TEST_CASE("derived streams differ by tag and are reproducible") {
    RngStream a = derive_stream(5, 1, 2);
    RngStream a2 = derive_stream(5, 1, 2);
    RngStream b = derive_stream(5, 1, 3);
    RngStream c = derive_stream(5, 2, 2);
    const std::uint64_t va = a.next_u64();
    REQUIRE(va == a2.next_u64());
    REQUIRE(va != b.next_u64());
    REQUIRE(va != c.next_u64());
}

TEST_CASE("bernoulli respects the rate at the extremes") {
    RngStream rng(23);
    for (int i = 0; i < 100; ++i) {
        REQUIRE_FALSE(rng.bernoulli(0.0));
        REQUIRE(rng.bernoulli(1.0));
    }
}
