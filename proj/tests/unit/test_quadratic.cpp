#include <doctest.h>

#include "bsdelab/core/error.hpp"
#include "bsdelab/quadratic/quadratic.hpp"

#include <cmath>

using namespace bsdelab;

namespace {

PathState origin_state(std::vector<double>& store, std::size_t d) {
    store.assign(2 * d, 0.0);
    return {0.0, 0, d, store.data(), store.data() + d};
}

} // namespace

TEST_SUITE("quadratic") {

TEST_CASE("driver evaluation examples") {
    std::vector<double> st;
    QuadraticDriver f;
    f.kind = DriverClass::quadratic_linear;
    f.n = 1;
    f.d = 1;
    f.b = Eigen::VectorXd::Constant(1, 0.7);
    Eigen::MatrixXd z1(1, 1);
    z1 << 3.0;
    CHECK(evaluate_driver(f, 0.0, origin_state(st, 1), Eigen::VectorXd::Zero(1), z1)(0) == doctest::Approx(0.7 * 9.0));

    f.n = 2;
    f.b = Eigen::Vector2d(1, 0);
    Eigen::MatrixXd z(2, 1);
    z << 2, 3;
    const Eigen::VectorXd r = evaluate_driver(f, 0.0, origin_state(st, 1), Eigen::VectorXd::Zero(2), z);
    CHECK(r(0) == 4.0);
    CHECK(r(1) == 6.0);

    QuadraticDriver u;
    u.kind = DriverClass::unidirectional;
    u.n = 2;
    u.d = 1;
    u.a = Eigen::Vector2d(1, 1);
    u.h = [](const Eigen::MatrixXd& zz) { return 0.5 * zz.squaredNorm(); };
    Eigen::MatrixXd zu(2, 1);
    zu << 2, 0;
    const Eigen::VectorXd ru = evaluate_driver(u, 0.0, origin_state(st, 1), Eigen::VectorXd::Zero(2), zu);
    CHECK(ru(0) == 2.0);
    CHECK(ru(1) == 2.0);
}

TEST_CASE("truncation map") {
    for (double k : {1.0, 4.0}) {
        const TruncationCheck c = check_truncation_map(k, 2, 2);
        CHECK(c.ok());
        CHECK(c.identity_violation <= 1e-12);
        CHECK(c.lipschitz_ratio <= 1.0 + 1e-9);
    }
    CHECK(truncation_radius(0.5, 1.0) == 0.5);
    CHECK(truncation_radius(10.0, 1.0) == doctest::Approx(1.5));
    // C^1 at both ends: one-sided slopes 1 at k and 0 at 2k
    const double h = 1e-6;
    CHECK((truncation_radius(1.0 + h, 1.0) - 1.0) / h == doctest::Approx(1.0).epsilon(1e-5));
    CHECK((truncation_radius(2.0, 1.0) - truncation_radius(2.0 - h, 1.0)) / h == doctest::Approx(0.0).epsilon(1e-5));
    Eigen::MatrixXd z(1, 2);
    z << 30, 40;
    const Eigen::MatrixXd t = truncation_map(z, 4.0);
    CHECK(t.norm() == doctest::Approx(6.0));
    CHECK((t / t.norm() - z / z.norm()).norm() < 1e-14);
}

TEST_CASE("positive spanning certificates") {
    const std::vector<Eigen::VectorXd> pm = {Eigen::Vector2d(1, 0), Eigen::Vector2d(-1, 0), Eigen::Vector2d(0, 1),
                                             Eigen::Vector2d(0, -1)};
    const std::vector<Eigen::VectorXd> e = {Eigen::Vector2d(1, 0), Eigen::Vector2d(0, 1)};
    const std::vector<Eigen::VectorXd> tri = {Eigen::Vector2d(1, 0), Eigen::Vector2d(-0.5, 0.8),
                                              Eigen::Vector2d(-0.5, -0.8)};
    const std::vector<Eigen::VectorXd> half = {Eigen::Vector2d(1, 0), Eigen::Vector2d(0, 1), Eigen::Vector2d(-1, 0.1)};
    const SpanningCertificate c = positive_spanning(pm);
    CHECK(c.spanning);
    CHECK(c.rank == 2);
    Eigen::Vector2d sum = Eigen::Vector2d::Zero();
    for (std::size_t m = 0; m < pm.size(); ++m) {
        CHECK(c.weights(m) >= 1.0 - 1e-12);
        sum += c.weights(m) * pm[m];
    }
    CHECK(sum.norm() < 1e-10);
    CHECK_FALSE(positive_spanning(e).spanning);
    CHECK(positive_spanning(tri).spanning);
    CHECK_FALSE(positive_spanning(half).spanning);
}

TEST_CASE("(AB) margins are evaluated per sample") {
    QuadraticDriver u;
    u.kind = DriverClass::unidirectional;
    u.n = 2;
    u.d = 1;
    u.a = Eigen::Vector2d(1, 0);
    u.h = [](const Eigen::MatrixXd& z) { return 0.5 * z.squaredNorm(); };
    AbCondition ab;
    ab.rho = [](double, const PathState&) { return 0.5; };
    ab.a = {Eigen::Vector2d(1, 0), Eigen::Vector2d(-1, 0), Eigen::Vector2d(0, 1), Eigen::Vector2d(0, -1)};
    const AbReport r = check_ab_condition(ab, u);
    CHECK(r.spanning.spanning);
    CHECK(r.samples > 0);
    // for a_m = e_1: rho + |z^1|^2/2 - |z|^2/2 = 0.5 - |z^2|^2/2, negative for large z^2
    CHECK(r.worst_margin < 0.0);
    CHECK_FALSE(r.violations.empty());

    const QuadraticSpec shipped = shipped_quadratic("unidirectional-2d");
    REQUIRE(shipped.ab.has_value());
    CHECK(check_ab_condition(*shipped.ab, shipped.driver).worst_margin >= 0.0);
}

TEST_CASE("Lyapunov pairs") {
    const QuadraticSpec z = shipped_quadratic("zero-2d");
    const LyapunovReport ok = check_lyapunov(squared_norm_pair(0.0, 1.0), z.driver);
    CHECK(ok.valid_pair);
    CHECK(ok.worst_margin == 0.0);
    CHECK(ok.lemma_bound == doctest::Approx(2.0));
    LyapunovPair bad = squared_norm_pair(0.0, 1.0);
    bad.h = [](const Eigen::VectorXd& y) { return y.norm(); };
    CHECK_FALSE(check_lyapunov(bad, z.driver).valid_pair);
}

TEST_CASE("Cole-Hopf instances, Picard initializations and the linearized difference") {
    for (const std::string name : {"cole-hopf-1d", "cole-hopf-1d-u"}) {
        CAPTURE(name);
        const QuadraticSpec spec = shipped_quadratic(name);
        const QuadraticSolution s = solve_quadratic(spec, 25, 8000, 3);
        CHECK(std::abs(s.solution.Y0(0) - 0.5) <= 4.0 * s.solution.Y0_std_error(0));
        CHECK(s.k_accepted <= 8.0);
        const RegressionEstimator est = RegressionEstimator::from_ensemble(*s.paths);
        for (double v : cole_hopf_residual(s, 0.5, est)) CHECK(v < 0.1);

        QuadraticConfig other;
        other.init = PicardInit::conditional_terminal;
        const QuadraticSolution s2 = solve_quadratic_on(spec, s.paths, est, other);
        for (std::size_t k = 0; k <= 25; ++k) CHECK((s.solution.Y.slice(k) - s2.solution.Y.slice(k)).cwiseAbs().maxCoeff() < 1e-6);

        CHECK_THROWS_AS(linearized_difference_check(s, s2, spec.driver, est), ConfigError);
    }
}

TEST_CASE("coupled instance: residual of the difference equation") {
    const QuadraticSpec spec = shipped_quadratic("ql-coupled-2d");
    const QuadraticSolution s = solve_quadratic(spec, 20, 4000, 5);
    const RegressionEstimator est = RegressionEstimator::from_ensemble(*s.paths);
    QuadraticSpec s2spec = spec;
    s2spec.xi = [xi = spec.xi](const PathEnsemble& p, std::size_t m) {
        Eigen::VectorXd v = xi(p, m);
        v(0) += 0.05 * std::cos(p.state(m, p.steps()).x(0));
        return v;
    };
    QuadraticConfig fixed;
    fixed.k_schedule = {s.k_accepted};
    const QuadraticSolution s2 = solve_quadratic_on(s2spec, s.paths, est, fixed);
    const LinearizationReport r = linearized_difference_check(s, s2, spec.driver, est);
    CHECK(r.max_residual <= 10.0 * QuadraticConfig{}.step_tolerance);
    CHECK(r.dxi_sup > 0.0);
    CHECK(r.ratio > 0.0);
    CHECK(estimate_lipschitz(spec.driver) <= spec.driver.L);
}

TEST_CASE("registry") {
    for (const auto& name : shipped_quadratic_names()) CHECK(shipped_quadratic(name).name == name);
    CHECK_THROWS_AS(shipped_quadratic("nope"), ConfigError);
}

} // TEST_SUITE
