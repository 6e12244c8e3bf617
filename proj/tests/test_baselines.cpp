#include <catch_amalgamated.hpp>

#include <cmath>
#include <numbers>
#include <random>

#include "ntklab/baselines.hpp"
#include "ntklab/experiment.hpp"
#include "oracles.hpp"

using namespace ntklab;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

std::vector<double> random_angles(std::size_t n, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(-std::numbers::pi, std::numbers::pi);
    std::vector<double> a(n);
    for (auto& v : a) v = u(rng);
    return a;
}

Eigen::VectorXd random_vector(Eigen::Index n, std::mt19937_64& rng) {
    std::normal_distribution<double> g;
    Eigen::VectorXd v(n);
    for (Eigen::Index i = 0; i < n; ++i) v(i) = g(rng);
    return v;
}

}  // namespace

TEST_CASE("Fourier design columns", "[baselines][design]") {
    const FourierDesign design({0.3, -1.2, 2.0}, 6);
    const Eigen::MatrixXd a = design.matrix();
    REQUIRE(a.rows() == 3);
    REQUIRE(a.cols() == 6);
    CHECK(FourierDesign::frequency(0) == 0);
    CHECK(FourierDesign::frequency(1) == 1);
    CHECK(FourierDesign::frequency(2) == 1);
    CHECK(FourierDesign::frequency(5) == 3);
    CHECK(a(1, 0) == 1.0);
    CHECK_THAT(a(1, 1), WithinAbs(std::cos(-1.2), 1e-15));
    CHECK_THAT(a(1, 2), WithinAbs(std::sin(-1.2), 1e-15));
    CHECK_THAT(a(2, 3), WithinAbs(std::cos(4.0), 1e-15));
    CHECK_THAT(a(2, 4), WithinAbs(std::sin(4.0), 1e-15));
    CHECK_THAT(a(0, 5), WithinAbs(std::cos(0.9), 1e-15));
    CHECK_THROWS_AS(FourierDesign({0.1}, 0), DomainError);
    CHECK_THROWS_AS(FourierDesign({}, 3), DomainError);
}

TEST_CASE("min-l2 anchors", "[baselines][l2]") {
    // Equispaced angles make the square design orthogonal with column norms n, n/2, ...
    const std::size_t n = 5;
    std::vector<double> ang(n);
    for (std::size_t i = 0; i < n; ++i) ang[i] = 2.0 * std::numbers::pi * static_cast<double>(i) / n;
    const FourierDesign design(ang, n);
    const Eigen::MatrixXd a = design.matrix();
    std::mt19937_64 rng(1);
    const Eigen::VectorXd y = random_vector(n, rng);
    const Eigen::VectorXd beta = fourier_min_l2(design, y);
    const Eigen::VectorXd expected = (a.transpose() * y).cwiseQuotient(a.colwise().squaredNorm().transpose());
    CHECK((beta - expected).lpNorm<Eigen::Infinity>() <= 1e-12);

    const FourierDesign wide(random_angles(7, rng), 40);
    CHECK(fourier_min_l2(wide, Eigen::VectorXd::Zero(7)).isZero(0.0));
    CHECK_THROWS_AS(fourier_min_l2(wide, Eigen::VectorXd::Zero(6)), DimensionError);

    // Repeated angles: rank-deficient rows.
    const FourierDesign dup({0.4, 0.4, 1.0}, 10);
    CHECK_THROWS_AS(fourier_min_l2(dup, Eigen::Vector3d(1.0, 2.0, 3.0)), RankDeficiencyError);
}

TEST_CASE("min-l2 interpolates and matches the pseudo-inverse", "[baselines][l2][property]") {
    std::mt19937_64 rng(2);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t n = 3 + static_cast<std::size_t>(trial % 10);
        const std::size_t p = n + 1 + static_cast<std::size_t>(trial * 7 % 60);
        const FourierDesign design(random_angles(n, rng), p);
        const Eigen::VectorXd y = random_vector(static_cast<Eigen::Index>(n), rng);
        const Eigen::VectorXd beta = fourier_min_l2(design, y);
        const Eigen::MatrixXd a = design.matrix();
        CHECK((a * beta - y).lpNorm<Eigen::Infinity>() <= 1e-6 * std::max(1.0, y.lpNorm<Eigen::Infinity>()));
        const Eigen::VectorXd ref = oracle::pinv(a) * y;
        CHECK((beta - ref).norm() <= 1e-6 * std::max(1.0, ref.norm()));
    }
}

TEST_CASE("min-l1 anchors", "[baselines][l1]") {
    std::mt19937_64 rng(3);
    // Square invertible design: the unique interpolator.
    const FourierDesign square(random_angles(5, rng), 5);
    const Eigen::VectorXd y = random_vector(5, rng);
    const L1Result sq = fourier_min_l1(square, y);
    const Eigen::VectorXd exact = square.matrix().fullPivLu().solve(y);
    CHECK((sq.beta - exact).lpNorm<Eigen::Infinity>() <= 1e-6 * std::max(1.0, exact.lpNorm<Eigen::Infinity>()));

    // y generated by one column: 1-sparse recovery.
    const FourierDesign design(random_angles(5, rng), 21);
    const Eigen::MatrixXd a = design.matrix();
    const Eigen::VectorXd y1 = 1.7 * a.col(4);
    const L1Result r = fourier_min_l1(design, y1);
    CHECK_THAT(r.beta(4), WithinAbs(1.7, 1e-6));
    for (Eigen::Index j = 0; j < r.beta.size(); ++j)
        if (j != 4) CHECK(std::abs(r.beta(j)) <= 1e-6);

    CHECK(fourier_min_l1(design, Eigen::VectorXd::Zero(5)).beta.isZero(1e-12));
    CHECK_THROWS_AS(basis_pursuit(Eigen::MatrixXd::Ones(4, 3), Eigen::VectorXd::Ones(4)), DomainError);
}

TEST_CASE("min-l1 agrees with the vertex-enumeration LP oracle", "[baselines][l1][property]") {
    std::mt19937_64 rng(4);
    int compared = 0;
    for (int trial = 0; trial < 30; ++trial) {
        Eigen::MatrixXd a(4, 8);
        for (Eigen::Index j = 0; j < 8; ++j) a.col(j) = random_vector(4, rng);
        const Eigen::VectorXd y = random_vector(4, rng);
        const auto best = oracle::l1_vertex_enumeration(a, y);
        REQUIRE(best.has_value());
        const L1Result r = basis_pursuit(a, y);
        CHECK((a * r.beta - y).lpNorm<Eigen::Infinity>() <= 1e-6 * std::max(1.0, y.lpNorm<Eigen::Infinity>()));
        CHECK_THAT(r.beta.lpNorm<1>(), WithinAbs(*best, 1e-6));
        ++compared;
    }
    CHECK(compared == 30);
}

TEST_CASE("min-l1 dominates min-l2 in l1 norm and interpolates", "[baselines][l1][property]") {
    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 10; ++trial) {
        const std::size_t n = 6 + static_cast<std::size_t>(trial);
        const FourierDesign design(random_angles(n, rng), 4 * n + 1);
        const Eigen::VectorXd y = random_vector(static_cast<Eigen::Index>(n), rng);
        const L1Result r = fourier_min_l1(design, y);
        const Eigen::VectorXd l2 = fourier_min_l2(design, y);
        CHECK((design.matrix() * r.beta - y).lpNorm<Eigen::Infinity>() <=
              1e-6 * std::max(1.0, y.lpNorm<Eigen::Infinity>()));
        CHECK(r.objective <= l2.lpNorm<1>() * (1.0 + 1e-9));
        CHECK_THAT(r.objective, WithinRel(r.beta.lpNorm<1>(), 1e-12));
    }
}

TEST_CASE("min-l1 reports the iteration cap", "[baselines][l1]") {
    std::mt19937_64 rng(6);
    const FourierDesign design(random_angles(20, rng), 200);
    const Eigen::VectorXd y = random_vector(20, rng);
    L1Options opt;
    opt.max_iter = 5;
    opt.crossover_after = 0;
    CHECK_THROWS_AS(fourier_min_l1(design, y, opt), ConvergenceError);
}

TEST_CASE("min-l2 test error rises to the null risk", "[baselines][l2][slow]") {
    const Trial t = make_trial(figure1a_target(), 2, 50, 1, 512);
    const Eigen::VectorXd y = t.truth + fixed_norm_noise(t, 0.01);
    const FourierDesign design(angles_of(t.train), 10000);
    const Eigen::VectorXd beta = fourier_min_l2(design, y);
    const double mse = test_mse(design.evaluate(beta, angles_of(t.test)), t.test_truth).mse;
    std::printf("min-l2 test MSE at p = 1e4: %.4f\n", mse);
    CHECK(mse >= 3.2);
    CHECK(mse <= 4.8);
}

TEST_CASE("Gaussian-feature MSE formula", "[baselines][gaussian]") {
    CHECK_THAT(gaussian_mse_formula(4.0, 50, 102, 0.0), WithinAbs(4.0 * (1.0 - 50.0 / 102.0), 1e-14));
    CHECK_THAT(gaussian_mse_formula(4.0, 50, 102, 0.0), WithinAbs(2.03922, 1e-5));
    CHECK_THAT(gaussian_mse_formula(4.0, 50, 100000000, 0.0), WithinAbs(4.0, 1e-5));
    CHECK_THAT(gaussian_mse_formula(0.0, 50, 100000000, 0.3), WithinAbs(0.0, 1e-5));
    CHECK_THAT(gaussian_mse_formula(0.0, 50, 101, 0.3), WithinAbs(0.3, 1e-15));
    CHECK_THROWS_AS(gaussian_mse_formula(4.0, 50, 51, 0.0), DomainError);
    CHECK_THROWS_AS(gaussian_mse_formula(-1.0, 50, 200, 0.0), DomainError);
    CHECK_THROWS_AS(gaussian_mse_formula(1.0, 50, 200, -0.1), DomainError);
}

TEST_CASE("Gaussian-feature MSE monotonicity in p", "[baselines][gaussian][property]") {
    // d/dp = f n / p^2 - s n / (p - n - 1)^2: decreasing exactly when s > f (p - n - 1)^2 / p^2.
    for (double f : {0.0, 1.0, 4.0}) {
        for (double s : {0.0, 0.01, 0.16, 1.0, 10.0}) {
            for (std::size_t n : {10u, 50u}) {
                for (std::size_t p = n + 3; p < 40 * n; p += 7) {
                    const double pp = static_cast<double>(p), nn = static_cast<double>(n);
                    const double diff = gaussian_mse_formula(f, n, p + 1, s) - gaussian_mse_formula(f, n, p, s);
                    const double hi = f * (pp - nn) * (pp - nn) / ((pp + 1.0) * (pp + 1.0));
                    const double lo = f * (pp - nn - 1.0) * (pp - nn - 1.0) / (pp * pp);
                    if (s > hi * 1.001) CHECK(diff < 0.0);
                    if (s < lo * 0.999 && f > 0.0) CHECK(diff > 0.0);
                }
            }
        }
    }
}
