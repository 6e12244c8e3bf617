#include <catch_amalgamated.hpp>

#include <cmath>
#include <numbers>
#include <random>

#include "ntklab/ground_truth.hpp"
#include "ntklab/ntk_core.hpp"
#include "oracles.hpp"

using namespace ntklab;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

Eigen::MatrixXd random_inputs(int d, std::size_t n, std::uint64_t seed) {
    RandomSource src(seed);
    return sample_unit_columns(d, n, src);
}

Eigen::VectorXd random_vector(Eigen::Index n, std::uint64_t seed) {
    RandomSource src(seed);
    Eigen::VectorXd v(n);
    for (Eigen::Index i = 0; i < n; ++i) v(i) = src.gaussian();
    return v;
}

Dataset random_dataset(int d, std::size_t n, std::uint64_t seed) {
    return Dataset::noiseless(random_inputs(d, n, seed), random_vector(static_cast<Eigen::Index>(n), seed + 1000));
}

NeuronBank bank_from(const Eigen::MatrixXd& dirs) {
    NeuronBank b;
    b.directions = dirs;
    b.top_signs.assign(static_cast<std::size_t>(dirs.cols()), 1);
    return b;
}

}  // namespace

TEST_CASE("build_bank", "[ntk][bank]") {
    const NeuronBank b = build_bank(3, 2, 7);
    REQUIRE(b.size() == 3);
    for (Eigen::Index j = 0; j < 3; ++j) CHECK_THAT(b.directions.col(j).norm(), WithinAbs(1.0, 1e-12));
    const NeuronBank again = build_bank(3, 2, 7);
    CHECK(again.directions == b.directions);
    CHECK(again.top_signs == b.top_signs);
    CHECK_THROWS_AS(build_bank(0, 2, 1), DomainError);
    CHECK_THROWS_AS(build_bank(5, 1, 1), DimensionError);

    const NeuronBank big = build_bank(100000, 3, 11);
    double plus = 0.0;
    for (int s : big.top_signs) plus += (s == 1);
    CHECK_THAT(plus / 100000.0, WithinAbs(0.5, 0.01));
}

TEST_CASE("Dataset keeps truth and noise separate", "[ntk][data]") {
    const Eigen::MatrixXd x = random_inputs(3, 4, 1);
    const Eigen::VectorXd t = random_vector(4, 2), e = random_vector(4, 3);
    const Dataset data = Dataset::make(x, t, e);
    CHECK(data.labels == t + e);
    CHECK_THROWS_AS(Dataset::make(2.0 * x, t, e), DomainError);
    CHECK_THROWS_AS(Dataset::make(x, random_vector(3, 1), e), DimensionError);
}

TEST_CASE("activation_count", "[ntk][activation]") {
    Eigen::MatrixXd dirs(2, 3);
    dirs << 1, -1, 0,
            0, 0, 1;
    const NeuronBank b = bank_from(dirs);
    const UnitVector e1 = UnitVector::basis(2, 0);
    Eigen::Vector2d m(-1.0, 0.0);
    CHECK(activation_count(b, e1, e1) == 1);
    CHECK(activation_count(b, e1, UnitVector::from_unit(m)) == 0);
    CHECK_THROWS_AS(activation_count(b, UnitVector::basis(3, 0), UnitVector::basis(3, 1)), DimensionError);

    const NeuronBank big = build_bank(100000, 4, 3);
    RandomSource src(5);
    const UnitVector x = sample_unit(4, src);
    CHECK_THAT(static_cast<double>(activation_count(big, x, x)) / 1e5, WithinAbs(0.5, 0.02));
}

TEST_CASE("gram matches the dense oracle", "[ntk][gram]") {
    const NeuronBank b = build_bank(50, 2, 21);
    const Dataset data = random_dataset(2, 5, 22);
    const GramMatrix g = gram(b, data);
    const Eigen::MatrixXd h = oracle::dense_features(b.directions, data.inputs);
    CHECK((g.entries - h * h.transpose()).cwiseAbs().maxCoeff() <= 1e-12);
    for (std::size_t i = 0; i < 5; ++i)
        CHECK(g.entries(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(i)) ==
              static_cast<double>(activation_count(b, data.input(i), data.input(i))));

    const NeuronBank b2 = build_bank(100, 3, 23);
    const GramMatrix g2 = gram(b2, random_dataset(3, 10, 24));
    CHECK(g2.entries == g2.entries.transpose());
    CHECK(g2.entries.cwiseAbs().maxCoeff() <= 100.0);
}

TEST_CASE("Gram matrices are PSD", "[ntk][gram][property]") {
    for (std::uint64_t s = 0; s < 50; ++s) {
        const int d = 2 + static_cast<int>(s % 4);
        const std::size_t p = 20 + 37 * s;
        const NeuronBank b = build_bank(p, d, 100 + s);
        const GramMatrix g = gram(b, random_dataset(d, 5 + s % 20, 200 + s));
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(g.entries);
        CHECK(es.eigenvalues().minCoeff() >= -1e-9 * static_cast<double>(p));
    }
}

TEST_CASE("kernel_inf", "[ntk][kernel]") {
    CHECK_THAT(kernel_inf(1.0), WithinAbs(0.5, 1e-15));
    CHECK_THAT(kernel_inf(0.0), WithinAbs(0.0, 1e-15));
    CHECK_THAT(kernel_inf(0.5), WithinAbs(1.0 / 6.0, 1e-15));
    CHECK(std::isfinite(kernel_inf(-1.0 - 1e-15)));
    const Dataset data = random_dataset(3, 6, 9);
    const Eigen::MatrixXd hinf = gram_inf(data);
    for (Eigen::Index i = 0; i < 6; ++i) {
        CHECK(hinf(i, i) == 0.5);
        for (Eigen::Index j = 0; j < 6; ++j)
            CHECK_THAT(hinf(i, j), WithinAbs(oracle::kernel(data.inputs.col(i).dot(data.inputs.col(j))), 1e-15));
    }
}

TEST_CASE("kernel_inf is rotation invariant", "[ntk][kernel][property]") {
    std::mt19937_64 rng(17);
    for (int trial = 0; trial < 20; ++trial) {
        const int d = 2 + trial % 5;
        Eigen::MatrixXd m(d, d);
        std::normal_distribution<double> g;
        for (int i = 0; i < d; ++i)
            for (int j = 0; j < d; ++j) m(i, j) = g(rng);
        const Eigen::MatrixXd rot = Eigen::HouseholderQR<Eigen::MatrixXd>(m).householderQ();
        const Eigen::VectorXd x = oracle::unit(d, rng), z = oracle::unit(d, rng);
        const Eigen::VectorXd rx = rot * x, rz = rot * z;
        CHECK_THAT(kernel_inf(UnitVector::normalized(rx), UnitVector::normalized(rz)),
                   WithinAbs(kernel_inf(UnitVector::from_unit(x), UnitVector::from_unit(z)), 1e-14));
    }
}

TEST_CASE("Gram over p converges to the infinite-width kernel", "[ntk][gram][property]") {
    for (std::uint64_t s = 0; s < 6; ++s) {
        const int d = 2 + static_cast<int>(s % 3);
        const std::size_t p = s < 3 ? 5000 : 40000;
        const NeuronBank b = build_bank(p, d, 300 + s);
        const Dataset data = random_dataset(d, 50, 400 + s);
        const Eigen::MatrixXd diff = gram(b, data).entries / static_cast<double>(p) - gram_inf(data);
        const double pp = static_cast<double>(p);
        CHECK(diff.cwiseAbs().maxCoeff() <= 3.0 * std::sqrt(std::log(pp) / pp));
    }
}

TEST_CASE("feature rows have norm at most sqrt(p)", "[ntk][property]") {
    const NeuronBank b = build_bank(40, 3, 5);
    const Eigen::MatrixXd h = oracle::dense_features(b.directions, random_inputs(3, 30, 6));
    for (Eigen::Index i = 0; i < h.rows(); ++i) CHECK(h.row(i).norm() <= std::sqrt(40.0) + 1e-12);
}

TEST_CASE("solve_min_norm", "[ntk][solve]") {
    SECTION("single sample") {
        const NeuronBank b = build_bank(30, 3, 1);
        const Dataset data = random_dataset(3, 1, 2);
        const DualModel m = solve_min_norm(b, data);
        CHECK_THAT(m.alpha()(0), WithinRel(data.labels(0) / gram(b, data).entries(0, 0), 1e-14));
    }
    SECTION("zero labels") {
        const NeuronBank b = build_bank(60, 2, 3);
        const Dataset data = Dataset::noiseless(random_inputs(2, 8, 4), Eigen::VectorXd::Zero(8));
        const DualModel m = solve_min_norm(b, data);
        CHECK(m.alpha().isZero(0.0));
        CHECK(m.primal().isZero(0.0));
        CHECK(m.predict(UnitVector::basis(2, 1)) == 0.0);
    }
    SECTION("dense pseudo-inverse oracle") {
        const NeuronBank b = build_bank(60, 2, 5);
        const Dataset data = random_dataset(2, 8, 6);
        const DualModel m = solve_min_norm(b, data);
        const Eigen::MatrixXd h = oracle::dense_features(b.directions, data.inputs);
        const Eigen::VectorXd expected = oracle::pinv(h) * data.labels;
        CHECK((oracle::stack(m.primal()) - expected).cwiseAbs().maxCoeff() <= 1e-8);
    }
    SECTION("interpolation and primal/dual consistency") {
        const NeuronBank b = build_bank(2000, 4, 7);
        const Dataset data = random_dataset(4, 40, 8);
        const DualModel m = solve_min_norm(b, data);
        const double tol = 1e-8 * std::max(1.0, data.labels.lpNorm<Eigen::Infinity>());
        CHECK((m.predict_many(data.inputs) - data.labels).lpNorm<Eigen::Infinity>() <= tol);
        for (std::size_t i = 0; i < 5; ++i) CHECK_THAT(m.predict(data.input(i)), WithinAbs(data.labels(static_cast<Eigen::Index>(i)), tol));
        Eigen::MatrixXd rebuilt = Eigen::MatrixXd::Zero(4, 2000);
        for (Eigen::Index j = 0; j < 2000; ++j)
            for (Eigen::Index i = 0; i < 40; ++i)
                if (data.inputs.col(i).dot(b.directions.col(j)) > 0.0) rebuilt.col(j) += m.alpha()(i) * data.inputs.col(i);
        CHECK((rebuilt - m.primal()).cwiseAbs().maxCoeff() <= 1e-10 * std::max(1.0, m.primal().cwiseAbs().maxCoeff()));
    }
    SECTION("rank deficiency is reported with the rank") {
        // Two copies of the same input make the Gram matrix singular.
        Eigen::MatrixXd x = random_inputs(3, 4, 9);
        x.col(3) = x.col(0);
        const NeuronBank b = build_bank(200, 3, 10);
        const Dataset data = Dataset::noiseless(x, random_vector(4, 11));
        try {
            (void)solve_min_norm(b, data);
            FAIL("expected a rank-deficiency error");
        } catch (const RankDeficiencyError& e) {
            CHECK(e.estimated_rank == 3);
            CHECK(e.dimension == 4);
        }
        const MinNormSolver fallback(b, data, true);
        CHECK(fallback.rank_deficient());
        CHECK(fallback.rank() == 3);
    }
}

TEST_CASE("predict approaches the infinite-width limit", "[ntk][limit]") {
    const Dataset data = random_dataset(2, 50, 31);
    const NeuronBank b = build_bank(100000, 2, 32);
    const DualModel m = solve_min_norm(b, data);
    const Eigen::MatrixXd test = random_inputs(2, 200, 33);
    const Eigen::VectorXd diff = m.predict_many(test) - InfiniteWidthModel(data).predict_many(test);
    CHECK(diff.cwiseAbs().mean() <= 0.05);
}

TEST_CASE("gd_train_ntk", "[ntk][gd]") {
    const NeuronBank b = build_bank(20, 2, 41);
    const Dataset data = random_dataset(2, 5, 42);
    const Eigen::MatrixXd h = oracle::dense_features(b.directions, data.inputs);

    SECTION("one step from zero") {
        const double gamma = 0.01;
        const GdResult r = gd_train_ntk(b, data, 1, gamma);
        const Eigen::VectorXd expected = gamma * h.transpose() * data.labels;
        CHECK((oracle::stack(r.primal) - expected).cwiseAbs().maxCoeff() <= 1e-14);
    }
    SECTION("zero labels stay at zero") {
        const Dataset zero = Dataset::noiseless(data.inputs, Eigen::VectorXd::Zero(5));
        CHECK(gd_train_ntk(b, zero, 50).primal.isZero(0.0));
    }
    SECTION("dual recursion reproduces primal GD step by step") {
        const double gamma = 0.5 / (h * h.transpose()).eigenvalues().real().maxCoeff();
        Eigen::VectorXd dv = Eigen::VectorXd::Zero(h.cols());
        for (std::size_t k = 1; k <= 30; ++k) {
            dv -= gamma * h.transpose() * (h * dv - data.labels);
            const GdResult r = gd_train_ntk(b, data, k, gamma);
            CHECK((oracle::stack(r.primal) - dv).cwiseAbs().maxCoeff() <= 1e-12);
        }
    }
    SECTION("divergence is detected") {
        const double gamma = 10.0 / (h * h.transpose()).eigenvalues().real().maxCoeff();
        CHECK_THROWS_AS(gd_train_ntk(b, data, 1000, gamma), DivergenceError);
    }
}

TEST_CASE("variance term", "[ntk][variance]") {
    const NeuronBank b = build_bank(500, 3, 51);
    const Dataset data = random_dataset(3, 12, 52);
    const UnitVector x = data.input(4);
    CHECK(variance_term(b, data, x, Eigen::VectorXd::Zero(12)) == 0.0);
    CHECK_THAT(variance_term(b, data, x, Eigen::VectorXd::Unit(12, 4)), WithinAbs(1.0, 1e-8));

    for (std::uint64_t s = 0; s < 50; ++s) {
        const int d = 2 + static_cast<int>(s % 3);
        const std::size_t n = 4 + s % 29, p = 200 + 40 * s;
        const NeuronBank bb = build_bank(p, d, 600 + s);
        const Dataset dd = random_dataset(d, n, 700 + s);
        RandomSource src(800 + s);
        const UnitVector q = sample_unit(d, src);
        const Eigen::VectorXd eps = 0.1 * random_vector(static_cast<Eigen::Index>(n), 900 + s);
        const Eigen::MatrixXd h = oracle::dense_features(bb.directions, dd.inputs);
        const double lmin = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(h * h.transpose()).eigenvalues()(0);
        const double cap = std::sqrt(static_cast<double>(p)) * eps.norm() / std::sqrt(lmin);
        CHECK(std::abs(variance_term(bb, dd, q, eps)) <= cap);
    }
}

TEST_CASE("projection residual", "[ntk][projection]") {
    const NeuronBank b = build_bank(300, 3, 61);
    const Dataset data = random_dataset(3, 10, 62);
    const MinNormSolver solver(b, data);
    const Eigen::VectorXd a = random_vector(10, 63);
    const ActivationMatrix act(b, data.inputs);
    const Eigen::MatrixXd in_rows = features_transpose_apply(act, data.inputs, a);
    CHECK(solver.projection_residual(in_rows) <= 1e-8 * std::max(1.0, in_rows.norm()));

    // Dirac g at a training input: dV* is row 1 of H scaled by 1/p.
    DiracMixtureG g{{DiracAtom{data.input(0), 1.0}}};
    const Eigen::MatrixXd dv = dv_star(g, b).blocks;
    CHECK(solver.projection_residual(dv) <= 1e-8);

    // Dense oracle: distance to the row space via the SVD projector.
    const Eigen::MatrixXd h = oracle::dense_features(b.directions, data.inputs);
    const Eigen::VectorXd w = random_vector(3 * 300, 64);
    const Eigen::VectorXd proj = h.transpose() * (oracle::pinv(h.transpose()) * w);
    Eigen::MatrixXd wm = Eigen::Map<const Eigen::MatrixXd>(w.data(), 3, 300);
    CHECK_THAT(solver.projection_residual(wm), WithinRel((proj - w).norm(), 1e-8));
}

TEST_CASE("constant-g projection residual shrinks with n", "[ntk][projection]") {
    const std::vector<std::size_t> ns{8, 16, 32, 64, 128, 256};
    std::vector<double> mean(ns.size(), 0.0);
    const int seeds = 5;
    for (int s = 0; s < seeds; ++s) {
        const NeuronBank b = build_bank(20000, 2, 1000 + static_cast<std::uint64_t>(s));
        const Eigen::MatrixXd dv = dv_star(ConstantG{1.0}, b).blocks;
        for (std::size_t k = 0; k < ns.size(); ++k) {
            const Eigen::MatrixXd x = random_inputs(2, ns[k], 2000 + 10 * static_cast<std::uint64_t>(s) + k);
            mean[k] += MinNormSolver(b, x, true).projection_residual(dv) / seeds;
        }
    }
    for (std::size_t k = 1; k < ns.size(); ++k) CHECK(mean[k] < mean[k - 1]);
}
