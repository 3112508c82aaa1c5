#include <doctest.h>

#include "bsdelab/core/error.hpp"
#include "bsdelab/linear/linear.hpp"
#include "bsdelab/oracle/tree.hpp"

#include <cmath>
#include <sstream>

using namespace bsdelab;

namespace {

struct TreeCase {
    BinaryTree tree;
    PathEnsemble paths;
    ExactTreeEstimator est;
    DiscreteBsdeSolution exact;

    explicit TreeCase(const LinearBsdeSpec& spec, std::size_t K = 8)
        : tree(K, spec.d(), 1.0), paths(tree.ensemble()), est(paths), exact(solve_exact(spec)) {}

    DiscreteBsdeSolution solve_exact(const LinearBsdeSpec& spec) const {
        NodeField A = node_field(tree, spec.A, spec.n());
        if (spec.dA) {
            const NodeField dA = node_field(tree, *spec.dA, spec.n());
            for (std::size_t k = 0; k < A.size(); ++k)
                for (std::size_t v = 0; v < A[k].size(); ++v) A[k][v] += dA[k][v];
        }
        Eigen::MatrixXd xi(tree.leaves(), spec.n());
        for (std::size_t m = 0; m < tree.leaves(); ++m) xi.row(m) = spec.xi(paths, m).transpose();
        NodeValues beta;
        if (spec.beta) {
            beta.resize(tree.steps());
            for (std::size_t k = 0; k < tree.steps(); ++k) {
                beta[k].resize(tree.nodes(k), spec.n());
                for (std::size_t v = 0; v < tree.nodes(k); ++v) {
                    const auto st = tree.node_state(k, v);
                    beta[k].row(v) = spec.beta(k * tree.dt(), st.view(k * tree.dt(), k)).transpose();
                }
            }
        }
        return discrete_linear_bsde_solve(tree, xi, beta, A);
    }

    double max_gap(const SolutionEnsemble& s) const {
        double w = 0.0;
        for (std::size_t k = 0; k <= tree.steps(); ++k) {
            const Eigen::MatrixXd Y = s.Y.slice(k);
            for (std::size_t m = 0; m < tree.leaves(); ++m)
                w = std::max(w, (Y.row(m) - exact.Y[k].row(tree.node_of(m, k))).cwiseAbs().maxCoeff());
        }
        for (std::size_t k = 0; k < tree.steps(); ++k) {
            const Eigen::MatrixXd Z = s.Z.slice(k);
            for (std::size_t m = 0; m < tree.leaves(); ++m)
                w = std::max(w, (Z.row(m) - exact.Z[k].row(tree.node_of(m, k))).cwiseAbs().maxCoeff());
        }
        return w;
    }
};

} // namespace

TEST_SUITE("linear") {

TEST_CASE("every applicable solver reproduces the tree oracle exactly") {
    for (const std::string name : {"scalar-girsanov", "triangular-3", "right-outer-3", "left-outer-3", "generic-2"}) {
        CAPTURE(name);
        const LinearBsdeSpec spec = shipped_linear(name);
        const TreeCase tc(spec);
        CHECK(tc.max_gap(solve_by_representation(spec, tc.paths, tc.est)) < 1e-10);
        CHECK(tc.max_gap(solve_by_regression(spec, tc.paths, tc.est)) < 1e-10);
        if (spec.A.structure() == Structure::generic) continue;
        const SolutionEnsemble st = solve_linear(spec, tc.paths, tc.est, LinearMethod::structural);
        CHECK(tc.max_gap(st) < 1e-10);
        CHECK(st.terminal_mismatch == 0.0);
    }
}

TEST_CASE("perturbed solves match the coupled tree solve") {
    LinearBsdeSpec spec = shipped_linear("triangular-3");
    MatD dA(3, 1);
    dA.component(0).setConstant(0.05);
    spec.dA = CoefficientField::constant("dA", dA);
    const TreeCase tc(spec);
    const SolutionEnsemble s = solve_perturbed(spec, tc.paths, tc.est);
    CHECK(tc.max_gap(s) < 1e-6);
    CHECK(s.iteration_history.size() >= 2);

    LinearBsdeSpec zero = shipped_linear("triangular-3");
    zero.dA = CoefficientField::constant("dA", MatD(3, 1));
    const SolutionEnsemble z = solve_perturbed(zero, tc.paths, tc.est);
    // one sweep plus the sweep that observes a zero update
    CHECK(z.diagnostics.at("picard_iterations") <= 2.0);
}

TEST_CASE("scalar Girsanov closed form Y_t = B_t + a (T - t), Z = 1") {
    const LinearBsdeSpec spec = shipped_linear("scalar-girsanov");
    const PathEnsemble p = generate_brownian(TimeGrid::uniform(1.0, 20), 1, 20000, 5);
    const RegressionEstimator est = RegressionEstimator::from_ensemble(p);
    for (LinearMethod m : {LinearMethod::representation, LinearMethod::regression}) {
        const SolutionEnsemble s = solve_linear(spec, p, est, m);
        CHECK(std::abs(s.Y0(0) - 0.5) <= 3.0 * s.Y0_std_error(0) + 0.005);
        const Eigen::MatrixXd Y10 = s.Y.slice(10), Z10 = s.Z.slice(10);
        double err = 0.0, zerr = 0.0;
        for (std::size_t i = 0; i < 20000; ++i) {
            err += std::pow(Y10(i, 0) - (p.state(i, 10).x(0) + 0.25), 2);
            zerr += std::pow(Z10(i, 0) - 1.0, 2);
        }
        CHECK(std::sqrt(err / 20000) < 0.03);
        CHECK(std::sqrt(zerr / 20000) < 0.1);
    }
}

TEST_CASE("zero coefficient gives Y = E_t[xi]") {
    LinearBsdeSpec spec(shipped_field("zero"));
    spec.xi = terminal_of_state([](const Eigen::VectorXd& b) { return Eigen::VectorXd::Constant(2, b(0)); });
    const PathEnsemble p = generate_brownian(TimeGrid::uniform(1.0, 10), 1, 5000, 1);
    const RegressionEstimator est = RegressionEstimator::from_ensemble(p);
    const SolutionEnsemble s = solve_by_regression(spec, p, est);
    const Eigen::MatrixXd Y5 = s.Y.slice(5);
    double err = 0.0;
    for (std::size_t m = 0; m < 5000; ++m) {
        err += std::pow(Y5(m, 0) - p.state(m, 5).x(0), 2);
        CHECK(Y5(m, 1) == Y5(m, 0));
    }
    // exact up to the sampling error of the fitted coefficients
    CHECK(std::sqrt(err / 5000) < std::sqrt(8 * 0.5 / 5000.0)); // p sigma^2 / M with at most 8 basis functions
}

TEST_CASE("structural and regression solvers agree on Y0") {
    const PathEnsemble p = generate_brownian(TimeGrid::uniform(1.0, 25), 1, 10000, 13);
    const RegressionEstimator est = RegressionEstimator::from_ensemble(p);
    for (const std::string name : {"triangular-3", "right-outer-3", "left-outer-3"}) {
        CAPTURE(name);
        const LinearBsdeSpec spec = shipped_linear(name);
        const SolutionEnsemble a = solve_linear(spec, p, est, LinearMethod::structural);
        const SolutionEnsemble b = solve_by_regression(spec, p, est);
        for (Eigen::Index i = 0; i < 3; ++i)
            CHECK(std::abs(a.Y0(i) - b.Y0(i)) <= 3.0 * std::hypot(a.Y0_std_error(i), b.Y0_std_error(i)));
        if (name == "right-outer-3")
            CHECK(a.diagnostics.at("v_minus_btz_rms") <= a.diagnostics.at("regression_tolerance"));
    }
}

TEST_CASE("Euler products are discrete martingales even for the Emery field") {
    // the refusal rule cannot fire here: the defect only appears in the continuous-time limit
    const LinearBsdeSpec spec = shipped_linear("emery");
    const PathEnsemble p = generate_brownian(TimeGrid::uniform(2.0, 200), 1, 4000, 2);
    const RegressionEstimator est = RegressionEstimator::from_ensemble(p);
    const SolutionEnsemble s = solve_by_representation(spec, p, est);
    CHECK(s.diagnostics.at("martingale_defect") <= 4.0 * s.diagnostics.at("martingale_defect_se") + 1e-12);
}

TEST_CASE("operator norm: constant terminal values give ratio 1 for A = 0") {
    LinearBsdeSpec base(shipped_field("zero"));
    const BinaryTree tree(6, 1);
    const PathEnsemble p = tree.ensemble();
    const ExactTreeEstimator est(p);
    std::vector<LinearBsdeSpec> family;
    for (double c : {1.0, -2.0}) {
        LinearBsdeSpec s = base;
        s.xi = [c](const PathEnsemble&, std::size_t) { return Eigen::VectorXd::Constant(2, c); };
        family.push_back(s);
    }
    const LinearSolver solver = [&](const LinearBsdeSpec& s) { return solve_by_regression(s, p, est); };
    const OperatorNormEstimate on = estimate_solution_operator_norm(solver, 2.0, family, p);
    for (double r : on.ratios) CHECK(r == doctest::Approx(1.0).epsilon(1e-8));
}

TEST_CASE("solution CSV layout") {
    const LinearBsdeSpec spec = shipped_linear("generic-2");
    const BinaryTree t(3, 1);
    const PathEnsemble p = t.ensemble();
    const ExactTreeEstimator est(p);
    std::ostringstream os;
    write_solution_csv(os, solve_by_regression(spec, p, est));
    std::istringstream in(os.str());
    std::string header, line;
    std::getline(in, header);
    CHECK(header == "t,Y1,Y2,Z1,Z2,residual");
    std::size_t rows = 0;
    while (std::getline(in, line)) ++rows;
    CHECK(rows == 4);
    CHECK_THROWS_AS(shipped_linear("nope"), ConfigError);
    CHECK(parse_linear_method("auto") == LinearMethod::automatic);
}

} // TEST_SUITE
