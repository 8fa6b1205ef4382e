#include <doctest.h>

#include <cmath>

#include "moerlab/rng.hpp"

using namespace moerlab;

TEST_CASE("equal seeds give equal streams") {
    Rng a(123), b(123);
    for (int i = 0; i < 10000; ++i)
        REQUIRE(a.next_u64() == b.next_u64());
    Rng c(123), d(123);
    for (int i = 0; i < 10000; ++i)
        REQUIRE(c.normal() == d.normal());
}

TEST_CASE("different seeds give different streams") {
    Rng a(1), b(2);
    int equal = 0;
    for (int i = 0; i < 64; ++i)
        equal += a.next_u64() == b.next_u64();
    CHECK(equal < 4);
}

TEST_CASE("uniform stays in [0, 1) with the right mean") {
    Rng rng(7);
    double sum = 0.0;
    for (int i = 0; i < 10000; ++i) {
        const double u = rng.uniform();
        REQUIRE(u >= 0.0);
        REQUIRE(u < 1.0);
        sum += u;
    }
    CHECK(std::abs(sum / 10000 - 0.5) < 0.02);
}

TEST_CASE("uniform_index covers its range and nothing else") {
    Rng rng(8);
    const std::uint64_t n = 7;
    std::vector<int> hits(n, 0);
    for (int i = 0; i < 7000; ++i) {
        const std::uint64_t v = rng.uniform_index(n);
        REQUIRE(v < n);
        ++hits[v];
    }
    for (std::uint64_t v = 0; v < n; ++v)
        CHECK(hits[v] > 0);
    for (int i = 0; i < 100; ++i)
        CHECK(rng.uniform_index(1) == 0);
}

TEST_CASE("normal moments") {
    Rng rng(9);
    const int n = 20000;
    double sum = 0.0, sumsq = 0.0;
    for (int i = 0; i < n; ++i) {
        const double z = rng.normal();
        REQUIRE(std::isfinite(z));
        sum += z;
        sumsq += z * z;
    }
    const double mean = sum / n;
    const double var = sumsq / n - mean * mean;
    CHECK(std::abs(mean) < 0.05);
    CHECK(std::abs(var - 1.0) < 0.1);

    Rng shifted(10);
    double s = 0.0;
    for (int i = 0; i < n; ++i)
        s += shifted.normal(3.0, 0.5);
    CHECK(std::abs(s / n - 3.0) < 0.05);
}

TEST_CASE("kaiming init variance tracks 2/fan_in") {
    Rng rng(11);
    const Matrix w = kaiming_init(1000, 100, rng);
    double sum = 0.0, sumsq = 0.0;
    for (double v : w.flat()) {
        sum += v;
        sumsq += v * v;
    }
    const double n = static_cast<double>(w.size());
    const double mean = sum / n;
    const double var = sumsq / n - mean * mean;
    CHECK(std::abs(var - 0.02) < 0.002);  // 2/100, within 10%

    Rng tiny(12);
    const Matrix one = kaiming_init(1, 1, tiny);
    CHECK(std::isfinite(one(0, 0)));

    Rng s1(13), s2(13);
    CHECK(kaiming_init(8, 8, s1) == kaiming_init(8, 8, s2));
}

TEST_CASE("normal_init uses the requested stddev") {
    Rng rng(14);
    const Matrix w = normal_init(200, 100, 0.02, rng);
    double sumsq = 0.0;
    for (double v : w.flat())
        sumsq += v * v;
    const double var = sumsq / static_cast<double>(w.size());
    CHECK(std::abs(var - 4e-4) < 5e-5);
}
