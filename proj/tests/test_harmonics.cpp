#include <catch_amalgamated.hpp>

#include <boost/math/special_functions/gegenbauer.hpp>

#include <cmath>
#include <numbers>
#include <random>
#include <set>
#include <thread>
#include <vector>

#include "ntklab/harmonics.hpp"
#include "oracles.hpp"

using namespace ntklab;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

TEST_CASE("quadrature rule is a normalized colatitude marginal", "[harmonics][quadrature]") {
    for (int d : {2, 3, 5, 10}) {
        const auto rule = QuadratureRule::colatitude(d);
        CHECK(rule.size() >= 64);
        CHECK_NOTHROW(rule.validate());
        CHECK_THAT(rule.integrate([](double) { return 1.0; }), WithinAbs(1.0, 1e-12));
    }
    // E[cos^2 theta] = 1/d under the marginal with density proportional to sin^{d-2}.
    for (int d : {3, 4, 7}) {
        const auto rule = QuadratureRule::colatitude(d);
        CHECK_THAT(rule.integrate([](double t) { return std::cos(t) * std::cos(t); }), WithinAbs(1.0 / d, 1e-12));
    }
    CHECK_THROWS_AS(QuadratureRule::colatitude(3, 32), DomainError);
}

TEST_CASE("gegenbauer anchors", "[harmonics][gegenbauer]") {
    for (double t : {-1.0, -0.3, 0.0, 0.7, 1.0}) CHECK(gegenbauer(0, 1.5, t) == 1.0);
    CHECK_THAT(gegenbauer(1, 1.0, 0.3), WithinAbs(0.6, 1e-15));
    CHECK_THAT(gegenbauer(2, 1.0, 1.0), WithinAbs(3.0, 1e-14));
    CHECK_THROWS_AS(gegenbauer(2, 0.0, 0.5), DomainError);
    CHECK_THROWS_AS(gegenbauer(2, -1.0, 0.5), DomainError);
    // C_i^1(cos theta) = sin((i+1) theta) / sin(theta).
    for (int i = 0; i <= 12; ++i) {
        const double th = 0.7;
        CHECK_THAT(gegenbauer(i, 1.0, std::cos(th)), WithinAbs(std::sin((i + 1) * th) / std::sin(th), 1e-12));
    }
}

TEST_CASE("recursion agrees with the explicit sum and Boost", "[harmonics][gegenbauer][property]") {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (double lambda : {0.5, 1.0, 1.5, 4.0}) {
        for (int trial = 0; trial < 50; ++trial) {
            const double t = u(rng);
            for (int i = 0; i <= 20; ++i) {
                const double rec = gegenbauer(i, lambda, t);
                const double series = gegenbauer_series(i, lambda, t);
                const double boost = boost::math::gegenbauer(static_cast<unsigned>(i), lambda, t);
                const double scale = std::max(1.0, std::abs(boost));
                CHECK(std::abs(rec - series) <= 1e-9 * scale);
                CHECK(std::abs(rec - boost) <= 1e-9 * scale);
            }
        }
    }
}

TEST_CASE("axis harmonics", "[harmonics]") {
    for (int d : {3, 4, 8}) CHECK_THAT(harmonic_axis({0, d}, 0.37), WithinAbs(1.0, 1e-12));
    CHECK_THAT(harmonic_axis({1, 3}, 1.0), WithinAbs(std::sqrt(3.0), 1e-12));
    CHECK_THROWS_AS(harmonic_axis({1, 2}, 0.5), DimensionError);

    const auto rule = QuadratureRule::colatitude(3);
    const double cross = rule.integrate([](double t) {
        return harmonic_axis({1, 3}, std::cos(t)) * harmonic_axis({2, 3}, std::cos(t));
    });
    CHECK_THAT(cross, WithinAbs(0.0, 1e-10));
}

TEST_CASE("axis harmonics are orthonormal", "[harmonics][property]") {
    for (int d : {3, 5}) {
        const auto rule = QuadratureRule::colatitude(d);
        for (int l = 0; l <= 8; ++l) {
            for (int m = 0; m <= 8; ++m) {
                const double v = rule.integrate([&](double t) {
                    return harmonic_axis({l, d}, std::cos(t)) * harmonic_axis({m, d}, std::cos(t));
                });
                CHECK_THAT(v, WithinAbs(l == m ? 1.0 : 0.0, 1e-8));
            }
        }
    }
}

TEST_CASE("normalization cache is safe under concurrent first use", "[harmonics][concurrency]") {
    std::vector<double> out(64);
    std::vector<std::thread> pool;
    for (int t = 0; t < 8; ++t) {
        pool.emplace_back([&, t] {
            for (int k = 0; k < 8; ++k) out[static_cast<std::size_t>(t * 8 + k)] = harmonic_normalization({k + 11, 6});
        });
    }
    for (auto& th : pool) th.join();
    for (int t = 1; t < 8; ++t)
        for (int k = 0; k < 8; ++k) CHECK(out[static_cast<std::size_t>(t * 8 + k)] == out[static_cast<std::size_t>(k)]);
}

TEST_CASE("filter coefficients vanish exactly at odd degrees above one", "[harmonics][ch]") {
    for (int d : {3, 5}) {
        const auto rule = QuadratureRule::colatitude(d);
        for (int l : {3, 5, 7}) {
            const double c = c_h_coefficient(l, d, rule);
            CHECK(std::abs(c) < 1e-8);
            CHECK(classified_zero(c));
        }
        for (int l : {0, 1, 2, 4, 6}) {
            const double c = c_h_coefficient(l, d, rule);
            CHECK(c > 1e-4);
            CHECK_FALSE(classified_zero(c));
        }
    }
    // Independent check of the l = 0 coefficient for d = 3: E[h(cos theta)] with density sin(theta)/2.
    const double direct =
        oracle::simpson([](double t) { return oracle::kernel(std::cos(t)) * std::sin(t) / 2.0; }, 0.0, std::numbers::pi, 20000);
    CHECK_THAT(c_h_coefficient(0, 3, QuadratureRule::colatitude(3)), WithinAbs(direct, 1e-10));
    CHECK_THROWS_AS(c_h_coefficient(2, 5, QuadratureRule::colatitude(3)), DimensionError);
}

TEST_CASE("d = 2 Fourier coefficients of the kernel", "[harmonics][fourier]") {
    CHECK(fourier_ch_closed(1) == 0.125);
    CHECK(fourier_ch_closed(-1) == 0.125);
    CHECK(fourier_ch_closed(3) == 0.0);
    CHECK_THAT(fourier_ch_closed(0), WithinRel(1.0 / (std::numbers::pi * std::numbers::pi), 1e-14));
    for (int k = -9; k <= 9; ++k) {
        CHECK_THAT(fourier_ch_closed(k), WithinAbs(fourier_ch_quadrature(k), 1e-8));
        // (1/2pi) integral of h(cos theta) cos(k theta) over the full circle, by Simpson.
        const double direct = oracle::simpson(
                                  [k](double t) { return oracle::kernel(std::cos(t)) * std::cos(k * t); },
                                  -std::numbers::pi, std::numbers::pi, 40000) /
                              (2.0 * std::numbers::pi);
        CHECK_THAT(fourier_ch_closed(k), WithinAbs(direct, 1e-8));
    }
}

TEST_CASE("moment table Q(a, b)", "[harmonics][q]") {
    const auto r3 = QuadratureRule::colatitude(3);
    CHECK_THAT(q_moment(0, 2, 3, r3), WithinAbs(0.0, 1e-10));
    CHECK(q_moment(2, 2, 3, r3) > 0.0);
    for (int d : {3, 6}) CHECK_THAT(q_moment(0, 0, d, QuadratureRule::colatitude(d)), WithinAbs(1.0, 1e-12));
}

TEST_CASE("Q-table sign law", "[harmonics][q][property]") {
    const auto rule = QuadratureRule::colatitude(3);
    for (int k = 0; k <= 5; ++k) {
        for (int m = 0; m <= 5; ++m) {
            const double q = q_moment(2 * k, 2 * m, 3, rule);
            if (m <= k) CHECK(q > 0.0);
            else CHECK(std::abs(q) <= 1e-10);
        }
    }
}

TEST_CASE("sign pattern bound", "[harmonics][sign]") {
    CHECK(sign_pattern_bound(2, 1) == 2);
    CHECK(sign_pattern_bound(2, 3) == 6);
    CHECK(sign_pattern_bound(3, 3) == 8);
    CHECK(sign_pattern_bound(3, 5) == 2 * (1 + 4 + 6));
    CHECK_THROWS_AS(sign_pattern_bound(1, 3), DomainError);
    CHECK_THROWS_AS(sign_pattern_bound(2, 0), DomainError);
}

TEST_CASE("empirical sign patterns never exceed the bound", "[harmonics][sign][property]") {
    std::mt19937_64 rng(99);
    std::uniform_int_distribution<int> kdist(1, 8);
    for (int trial = 0; trial < 20; ++trial) {
        const int d = 2 + trial % 2;
        const int k = kdist(rng);
        std::vector<Eigen::VectorXd> dirs;
        for (int j = 0; j < k; ++j) dirs.push_back(oracle::unit(d, rng));
        std::set<unsigned> patterns;
        for (int s = 0; s < 100000; ++s) {
            const Eigen::VectorXd x = oracle::unit(d, rng);
            unsigned code = 0;
            for (int j = 0; j < k; ++j) code |= (x.dot(dirs[static_cast<std::size_t>(j)]) > 0.0 ? 1u : 0u) << j;
            patterns.insert(code);
        }
        CHECK(patterns.size() <= sign_pattern_bound(d, k));
    }
}
