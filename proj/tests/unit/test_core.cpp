#include <doctest.h>

#include "bsdelab/core/error.hpp"
#include "bsdelab/core/brownian.hpp"
#include "bsdelab/core/conditional.hpp"
#include "bsdelab/core/norms.hpp"
#include "bsdelab/core/parallel.hpp"
#include "bsdelab/core/rng.hpp"
#include "bsdelab/core/tensor.hpp"
#include "bsdelab/oracle/tree.hpp"

#include <cmath>
#include <sstream>

using namespace bsdelab;

TEST_SUITE("core") {

TEST_CASE("counter streams are pure functions of key and counter") {
    CounterStream a(derive_key(5, 1)), b(derive_key(5, 1)), c(derive_key(5, 2));
    for (int i = 0; i < 100; ++i) {
        const double x = a.normal();
        CHECK(x == b.normal());
        CHECK(x != c.normal());
    }
    CHECK(counter_normal(42, 7) == counter_normal(42, 7));
    for (std::uint64_t i = 0; i < 1000; ++i) {
        const double u = counter_uniform(9, i);
        CHECK(u > 0.0);
        CHECK(u < 1.0);
    }
}

TEST_CASE("single-step increments have mean 0 and variance dt over 1e6 paths") {
    const std::size_t M = 1000000;
    const PathEnsemble p = generate_brownian(TimeGrid::uniform(1.0, 1), 1, M, 2024, false);
    double s = 0.0, s2 = 0.0;
    double dB = 0.0;
    for (std::size_t m = 0; m < M; ++m) {
        p.increment(m, 0, &dB);
        s += dB;
        s2 += dB * dB;
    }
    const double mean = s / M, var = s2 / M - mean * mean;
    CHECK(std::abs(mean) < 4.0 / std::sqrt(double(M)));
    // sd of the sample variance of N(0,1) is sqrt(2/M)
    CHECK(std::abs(var - 1.0) < 4.0 * std::sqrt(2.0 / M));
    CHECK(std::abs(var - 1.0) < 0.01);
}

TEST_CASE("ensembles are bit-identical across seeds, materialization and thread counts") {
    const TimeGrid g = TimeGrid::uniform(2.0, 16);
    set_thread_count(1);
    const PathEnsemble a = generate_brownian(g, 2, 300, 77);
    set_thread_count(4);
    const PathEnsemble b = generate_brownian(g, 2, 300, 77);
    const PathEnsemble lazy = generate_brownian(g, 2, 300, 77, false);
    set_thread_count(0);
    double x[2], y[2];
    for (std::size_t m = 0; m < 300; m += 7)
        for (std::size_t k = 0; k < 16; ++k) {
            lazy.increment(m, k, x);
            b.increment(m, k, y);
            CHECK(a.increment_ptr(m, k)[0] == x[0]);
            CHECK(a.increment_ptr(m, k)[1] == y[1]);
            CHECK(x[1] == y[1]);
        }
    std::ostringstream s1, s2;
    a.write_binary(s1);
    b.write_binary(s2);
    CHECK(s1.str() == s2.str());
}

TEST_CASE("coarsened ensembles observe the same paths") {
    const PathEnsemble fine = generate_brownian(TimeGrid::uniform(1.0, 8), 1, 50, 3);
    const PathEnsemble coarse = fine.coarsened(4);
    REQUIRE(coarse.steps() == 2);
    for (std::size_t m = 0; m < 50; ++m) {
        CHECK(coarse.state(m, 1).x(0) == doctest::Approx(fine.state(m, 4).x(0)).epsilon(1e-14));
        CHECK(coarse.state(m, 2).x(0) == doctest::Approx(fine.state(m, 8).x(0)).epsilon(1e-14));
        CHECK(coarse.state(m, 2).max_abs(0) >= std::abs(coarse.state(m, 2).x(0)));
    }
    CHECK_THROWS_AS(fine.coarsened(3), ConfigError);
}

TEST_CASE("parallel_chunks covers every index exactly once") {
    set_thread_count(3);
    std::vector<int> hits(1000, 0);
    parallel_chunks(1000, [&](std::size_t b, std::size_t e) {
        for (std::size_t i = b; i < e; ++i) ++hits[i];
    });
    set_thread_count(0);
    for (int h : hits) CHECK(h == 1);
}

TEST_CASE("contraction A z") {
    MatD A(2, 1);
    A.component(0) << 1, 2, 3, 4;
    VecD z(2, 1);
    z << 5, 6;
    const Eigen::VectorXd r = contract_AZ(A, z);
    CHECK(r(0) == 17.0);
    CHECK(r(1) == 39.0);
    MatD zero(2, 1);
    CHECK(contract_AZ(zero, z).isZero());

    MatD B(1, 2);
    B.set_entry(0, 0, Eigen::Vector2d(1, 0));
    VecD w(1, 2);
    w << 0, 1;
    CHECK(contract_AZ(B, w)(0) == 0.0);
}

TEST_CASE("regression reproduces polynomial targets and tree estimator is exact") {
    const PathEnsemble p = generate_brownian(TimeGrid::uniform(1.0, 4), 1, 4000, 8);
    const RegressionEstimator est = RegressionEstimator::from_ensemble(p);
    // E_2[B_4^2] = B_2^2 + 2 dt
    Eigen::MatrixXd target(4000, 1), exact(4000, 1);
    for (std::size_t m = 0; m < 4000; ++m) {
        const double b2 = p.state(m, 2).x(0);
        target(m, 0) = std::pow(p.state(m, 4).x(0), 2);
        exact(m, 0) = b2 * b2 + 0.5;
    }
    const Eigen::MatrixXd err = est.project(2, target) - exact;
    CHECK(std::sqrt(err.squaredNorm() / 4000.0) < 0.05);
    CHECK(est.degree_used(0) == 0);

    const BinaryTree tree(3, 1, 1.0);
    const PathEnsemble tp = tree.ensemble();
    const ExactTreeEstimator te(tp);
    Eigen::MatrixXd leaf(tree.leaves(), 1);
    for (std::size_t i = 0; i < tree.leaves(); ++i) leaf(i, 0) = std::pow(tree.state(3, i)(0), 3);
    const Eigen::MatrixXd node = discrete_conditional_expectation(tree, leaf, 1);
    const Eigen::MatrixXd proj = te.project(1, leaf);
    for (std::size_t i = 0; i < tree.leaves(); ++i) CHECK(proj(i, 0) == doctest::Approx(node(tree.node_of(i, 1), 0)));
}

TEST_CASE("norms of constant processes match closed forms") {
    const PathEnsemble p = generate_brownian(TimeGrid::uniform(1.0, 20), 1, 500, 1);
    const RegressionEstimator est = RegressionEstimator::from_ensemble(p);
    SampledProcess Z(p.grid(), 500, 1);
    for (std::size_t m = 0; m < 500; ++m)
        for (std::size_t k = 0; k <= 20; ++k) Z.at(m, k)[0] = 1.0;
    CHECK(estimate_norm(NormKind::bmo, Z, &est).value == doctest::Approx(1.0));
    CHECK(estimate_norm(NormKind::l2q, Z, nullptr, 2.0).value == doctest::Approx(1.0));
    SampledProcess beta = Z;
    beta *= 0.3;
    CHECK(estimate_norm(NormKind::bmo_half, beta, &est).value == doctest::Approx(0.3));

    // positive homogeneity on a random process
    SampledProcess X(p.grid(), 500, 2);
    for (std::size_t m = 0; m < 500; ++m)
        for (std::size_t k = 0; k <= 20; ++k) {
            X.at(m, k)[0] = p.state(m, k).x(0);
            X.at(m, k)[1] = std::sin(p.state(m, k).x(0));
        }
    SampledProcess Y = X;
    Y *= -2.5;
    for (NormKind kind : {NormKind::bmo, NormKind::sup_p, NormKind::l2q}) {
        const double a = estimate_norm(kind, X, &est, 3.0).value, b = estimate_norm(kind, Y, &est, 3.0).value;
        CHECK(b == doctest::Approx(2.5 * a).epsilon(1e-12));
    }
}

} // TEST_SUITE
