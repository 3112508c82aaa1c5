#include <doctest.h>

#include "bsdelab/core/error.hpp"
#include "bsdelab/oracle/equivalence.hpp"
#include "bsdelab/oracle/tree.hpp"

#include <cmath>

using namespace bsdelab;

namespace {

NodeField constant_field(const BinaryTree& t, const MatD& a) {
    NodeField A(t.steps());
    for (std::size_t k = 0; k < t.steps(); ++k) A[k].assign(t.nodes(k), a);
    return A;
}

// Independent enumeration: S along leaf i as the ordered product of (I + A dB).
Eigen::MatrixXd leaf_product(const BinaryTree& t, const NodeField& A, std::size_t leaf, std::size_t n) {
    Eigen::MatrixXd S = Eigen::MatrixXd::Identity(n, n);
    for (std::size_t k = 0; k < t.steps(); ++k) {
        const std::size_t v = t.node_of(leaf, k), child = t.node_of(leaf, k + 1);
        std::vector<double> dB(t.dim());
        for (std::size_t l = 0; l < t.dim(); ++l) dB[l] = t.increment(k, child, l);
        S = S * (Eigen::MatrixXd::Identity(n, n) + A[k][v].against(dB.data()));
    }
    return S;
}

} // namespace

TEST_SUITE("oracle") {

TEST_CASE("conditional expectations on the tree") {
    const BinaryTree t(3, 1);
    const Eigen::MatrixXd c = Eigen::MatrixXd::Constant(t.leaves(), 2, 4.5);
    CHECK(discrete_conditional_expectation(t, c, 1).isApproxToConstant(4.5));

    const BinaryTree one(1, 1);
    Eigen::MatrixXd pm(2, 1);
    pm << -1, 1;
    CHECK(discrete_conditional_expectation(one, pm, 0)(0, 0) == 0.0);

    Eigen::MatrixXd x(t.leaves(), 1);
    for (std::size_t i = 0; i < t.leaves(); ++i) x(i, 0) = std::sin(double(i * i));
    const Eigen::MatrixXd e2 = discrete_conditional_expectation(t, x, 2);
    Eigen::MatrixXd e2_leaves(t.leaves(), 1);
    for (std::size_t i = 0; i < t.leaves(); ++i) e2_leaves(i, 0) = e2(t.node_of(i, 2), 0);
    CHECK((discrete_conditional_expectation(t, e2_leaves, 1) - discrete_conditional_expectation(t, x, 1)).norm() < 1e-15);
}

TEST_CASE("discrete exponential is an exact martingale and preserves triangularity") {
    const BinaryTree one(1, 1, 0.25);
    MatD a(1, 1);
    a.component(0)(0, 0) = 0.7;
    const DiscreteExponential e1 = discrete_exponential(one, constant_field(one, a));
    CHECK(e1.S[1][0](0, 0) == doctest::Approx(1.0 - 0.35));
    CHECK(e1.S[1][1](0, 0) == doctest::Approx(1.0 + 0.35));

    const BinaryTree t(2, 1);
    MatD lt(2, 1);
    lt.component(0) << 0.3, 0.0, -0.4, 0.5;
    const NodeField A = constant_field(t, lt);
    const DiscreteExponential e = discrete_exponential(t, A);
    for (std::size_t v = 0; v < t.nodes(2); ++v) CHECK(e.S[2][v](0, 1) == 0.0);
    for (std::size_t i = 0; i < t.leaves(); ++i) CHECK((e.S[2][i] - leaf_product(t, A, i, 2)).norm() < 1e-14);

    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const TreeInstance in = random_tree_instance(seed);
        const DiscreteExponential ex = discrete_exponential(in.tree, in.A);
        for (std::size_t k = 0; k < in.tree.steps(); ++k)
            for (std::size_t v = 0; v < in.tree.nodes(k); ++v) {
                Eigen::MatrixXd mean = Eigen::MatrixXd::Zero(in.n, in.n);
                const std::size_t b = in.tree.branching();
                for (std::size_t c = 0; c < b; ++c) mean += ex.S[k + 1][v * b + c] / double(b);
                CHECK((mean - ex.S[k][v]).norm() <= 1e-12 * (1.0 + ex.S[k][v].norm()));
            }
    }
}

TEST_CASE("linear BSDE on trees: trivial cases and the representation identity") {
    const BinaryTree t(4, 1);
    const NodeField A = constant_field(t, MatD(2, 1));
    Eigen::MatrixXd c = Eigen::MatrixXd::Constant(t.leaves(), 2, 1.5);
    const DiscreteBsdeSolution s = discrete_linear_bsde_solve(t, c, {}, A);
    for (std::size_t k = 0; k <= 4; ++k) CHECK(s.Y[k].isApproxToConstant(1.5));
    for (std::size_t k = 0; k < 4; ++k) CHECK(s.Z[k].cwiseAbs().maxCoeff() < 1e-14);

    // A = 0, xi = B_T: Y = B, Z = 1
    Eigen::MatrixXd xi(t.leaves(), 1);
    for (std::size_t i = 0; i < t.leaves(); ++i) xi(i, 0) = t.state(4, i)(0);
    const DiscreteBsdeSolution sb = discrete_linear_bsde_solve(t, xi, {}, constant_field(t, MatD(1, 1)));
    for (std::size_t v = 0; v < t.nodes(2); ++v) CHECK(sb.Y[2](v, 0) == doctest::Approx(t.state(2, v)(0)));
    CHECK(sb.Z[1].isApproxToConstant(1.0));

    std::size_t checked = 0;
    for (std::uint64_t seed = 100; seed < 140; ++seed) {
        const TreeInstance in = random_tree_instance(seed);
        const DiscreteExponential ex = discrete_exponential(in.tree, in.A);
        if (!ex.invertible()) continue;
        const DiscreteBsdeSolution sol = discrete_linear_bsde_solve(in.tree, in.xi, in.beta, in.A);
        const NodeValues rep = representation_formula(in.tree, ex.S, in.xi, in.beta);
        for (std::size_t k = 0; k <= in.tree.steps(); ++k)
            CHECK((sol.Y[k] - rep[k]).cwiseAbs().maxCoeff() <= 1e-12 * (1.0 + rep[k].cwiseAbs().maxCoeff()));
        CHECK(sol.max_residual < 1e-12);
        ++checked;
    }
    CHECK(checked >= 30);
}

TEST_CASE("reverse Holder on trees: hand example and monotonicity") {
    const BinaryTree one(1, 1, 0.25);
    MatD a(1, 1);
    a.component(0)(0, 0) = 1.0;
    const DiscreteExponential e = discrete_exponential(one, constant_field(one, a));
    // leaves 1 +- 0.5: R_1 = max(1, (0.5 + 1.5)/2), R_2 = max(1, (0.25 + 2.25)/2)
    CHECK(discrete_reverse_holder(one, e.S, 1.0).Rp == doctest::Approx(1.0));
    CHECK(discrete_reverse_holder(one, e.S, 2.0).Rp == 1.25);

    const BinaryTree t(3, 2);
    const DiscreteExponential z = discrete_exponential(t, constant_field(t, MatD(2, 2)));
    CHECK(discrete_reverse_holder(t, z.S, 3.0).Rp == doctest::Approx(1.0));

    for (std::uint64_t seed = 0; seed < 25; ++seed) {
        const TreeInstance in = random_tree_instance(seed);
        const DiscreteExponential ex = discrete_exponential(in.tree, in.A);
        if (!ex.invertible()) continue;
        double prev = 0.0;
        for (double p : {1.0, 1.25, 1.5, 2.0, 3.0, 5.0}) {
            const double r = discrete_reverse_holder(in.tree, ex.S, p).Rp;
            CHECK(r >= prev * (1.0 - 1e-12));
            CHECK(r >= 1.0 - 1e-12);
            prev = r;
        }
    }
}

TEST_CASE("duality lemma") {
    const BinaryTree one(1, 1);
    Eigen::MatrixXd X(2, 2);
    X << 1, 0, 0, 1;
    const DualityResult d = verify_duality_lemma(one, X, 0, 1.0);
    CHECK(d.lhs == doctest::Approx(1.0));
    CHECK(d.rhs == doctest::Approx(1.0));
    CHECK(d.random_max_ratio <= 1.0 + 1e-12);

    const BinaryTree t(3, 1);
    const Eigen::MatrixXd c = Eigen::MatrixXd::Constant(t.leaves(), 3, 2.0);
    const DualityResult dc = verify_duality_lemma(t, c, 1, 2.0);
    CHECK(dc.lhs == doctest::Approx(std::sqrt(12.0)));
    CHECK(dc.rhs == doctest::Approx(dc.lhs));

    for (std::uint64_t seed = 0; seed < 25; ++seed) {
        const TreeInstance in = random_tree_instance(seed);
        for (double p : {1.0, 1.5, 3.0}) {
            const DualityResult r = verify_duality_lemma(in.tree, in.xi, in.tree.steps() / 2, p, 16, seed);
            CHECK(std::abs(r.lhs - r.rhs) <= 1e-9 * (1.0 + r.lhs));
            CHECK(r.random_max_ratio <= r.lhs * (1.0 + 1e-12));
        }
        std::vector<Eigen::MatrixXd> M;
        for (std::size_t l = 0; l < in.tree.leaves(); ++l)
            M.push_back(in.xi.row(l).transpose() * in.xi.row((l * 7) % in.tree.leaves()) +
                        Eigen::MatrixXd::Identity(in.n, in.n));
        CHECK(verify_matrix_duality(in.tree, M, 0, 2.0).holds);
    }
}

TEST_CASE("random instances respect their size limits") {
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        const TreeInstance in = random_tree_instance(seed, 6, 2, 2);
        CHECK(in.tree.steps() <= 6);
        CHECK(in.n <= 2);
        CHECK(in.tree.dim() <= 2);
        CHECK(in.xi.rows() == Eigen::Index(in.tree.leaves()));
    }
}

TEST_CASE("equivalence suite on small trees") {
    const EquivalenceSuite s = run_equivalence_suite(10, 3, 5, 2, 2);
    CHECK(s.all_passed());
    for (const auto& r : s.rows) {
        if (r.singular) continue;
        CHECK(r.op_norm <= r.R1 * (1.0 + 1e-10));
        CHECK(r.R1 <= double(r.n) * r.op_norm * (1.0 + 1e-10));
        CHECK(r.reproduction_error <= 1e-10);
    }
}

} // TEST_SUITE
