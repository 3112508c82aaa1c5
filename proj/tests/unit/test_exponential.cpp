#include <doctest.h>

#include "bsdelab/core/error.hpp"
#include "bsdelab/exponential/reverse_holder.hpp"
#include "bsdelab/linear/linear.hpp"

#include <cmath>
#include <random>

using namespace bsdelab;

namespace {

// Strong L2 error at T of the Euler scalar exponential against exp(a B_T - a^2 T / 2).
double scalar_strong_error(std::size_t K, double a, bool inverse) {
    const PathEnsemble p = generate_brownian(TimeGrid::uniform(1.0, K), 1, 4000, 31, false);
    IntegrationOptions o;
    o.record_steps = {0, K};
    o.inverse = inverse;
    const ExponentialEnsemble e = integrate_exponential(CoefficientField::scalar("a", a), p, o);
    double s = 0.0;
    for (std::size_t m = 0; m < p.paths(); ++m) {
        const double exact = std::exp(a * e.state(m, 1)[0] - 0.5 * a * a);
        const double num = inverse ? e.X(m, 1)(0, 0) : e.S(m, 1)(0, 0);
        s += std::pow(num - (inverse ? 1.0 / exact : exact), 2);
    }
    return std::sqrt(s / p.paths());
}

} // namespace

TEST_SUITE("exponential") {

TEST_CASE("zero field gives S = X = I") {
    const PathEnsemble p = generate_brownian(TimeGrid::uniform(1.0, 10), 1, 100, 1);
    const ExponentialEnsemble e = integrate_inverse(shipped_field("zero"), p);
    for (std::size_t m = 0; m < 100; ++m)
        for (std::size_t r = 0; r < e.records(); ++r) {
            CHECK(e.S(m, r).isIdentity(0.0));
            CHECK(e.X(m, r).isIdentity(0.0));
        }
    const DefectReport d = martingale_defect(e);
    CHECK(d.max_defect == 0.0);
}

TEST_CASE("scalar Euler S and X converge to the closed forms") {
    const double e1 = scalar_strong_error(50, 0.5, false), e2 = scalar_strong_error(100, 0.5, false),
                 e3 = scalar_strong_error(200, 0.5, false);
    CHECK(e2 < e1);
    CHECK(e3 < e2);
    const double x1 = scalar_strong_error(50, 0.5, true), x3 = scalar_strong_error(200, 0.5, true);
    CHECK(x3 < x1);
    CHECK(x3 < 0.02);
}

TEST_CASE("bounded scalar field is a martingale within 3 standard errors") {
    const PathEnsemble p = generate_brownian(TimeGrid::uniform(1.0, 100), 1, 20000, 5, false);
    IntegrationOptions o;
    o.record_steps = even_record_steps(100, 5);
    const DefectReport d = martingale_defect(integrate_exponential(shipped_field("scalar-half"), p, o));
    for (std::size_t r = 0; r < d.defect.t.size(); ++r) CHECK(d.defect.estimate[r] <= 3.0 * d.defect.std_error[r] + 1e-12);
}

TEST_CASE("triangular fields keep S lower triangular") {
    const PathEnsemble p = generate_brownian(TimeGrid::uniform(1.0, 40), 1, 50, 9);
    const ExponentialEnsemble e = integrate_exponential(shipped_field("triangular-3"), p);
    for (std::size_t m = 0; m < 50; ++m) {
        const Eigen::MatrixXd S = e.S(m, e.records() - 1);
        CHECK(S(0, 1) == 0.0);
        CHECK(S(0, 2) == 0.0);
        CHECK(S(1, 2) == 0.0);
    }
}

TEST_CASE("inverse residual decreases under refinement") {
    double prev = 1e9;
    for (std::size_t K : {100, 200, 400}) {
        const PathEnsemble p = generate_brownian(TimeGrid::uniform(1.0, K), 1, 500, 3, false);
        IntegrationOptions o;
        o.record_steps = even_record_steps(K, 11);
        const InverseReport r = inverse_report(integrate_inverse(shipped_field("right-outer-3"), p, o));
        CHECK(r.max_mean_residual < prev);
        prev = r.max_mean_residual;
    }
}

TEST_CASE("left-outer S a equals a times the scalar exponential") {
    const CoefficientField A = shipped_field("left-outer-3");
    REQUIRE(A.constant_a().has_value());
    const Eigen::VectorXd a = *A.constant_a();
    const PathEnsemble p = generate_brownian(TimeGrid::uniform(1.0, 200), 1, 200, 4);
    const ExponentialEnsemble e = integrate_exponential(A, p);
    for (std::size_t m = 0; m < 200; m += 13) {
        // scalar Euler exponential of (b^T a) dB along the same path
        double s = 1.0;
        for (std::size_t k = 0; k < 200; ++k) {
            const PathState st = p.state(m, k);
            const double c = A.b_field(p.grid().time(k), st).col(0).dot(a);
            s *= 1.0 + c * p.increment_ptr(m, k)[0];
        }
        const Eigen::VectorXd Sa = e.S(m, e.records() - 1) * a;
        CHECK((Sa - s * a).norm() <= 1e-10 * (1.0 + Sa.norm()));
    }
}

TEST_CASE("reverse Holder: zero field gives 1, scalar field gives the lognormal moment") {
    const PathEnsemble p0 = generate_brownian(TimeGrid::uniform(1.0, 20), 1, 1000, 2, false);
    IntegrationOptions o;
    o.record_steps = even_record_steps(20, 5);
    o.continuation = true;
    ReverseHolderConfig cfg;
    cfg.method = ConditionalMethod::regression;
    const auto r0 = estimate_reverse_holder(integrate_exponential(shipped_field("zero"), p0, o), 3.0, cfg);
    CHECK(r0.Rp_estimate == doctest::Approx(1.0));

    const PathEnsemble p = generate_brownian(TimeGrid::uniform(1.0, 100), 1, 40000, 12, false);
    o.record_steps = even_record_steps(100, 6);
    const ExponentialEnsemble e = integrate_exponential(shipped_field("scalar-half"), p, o);
    const auto r = estimate_reverse_holder(e, 2.0, cfg);
    // E[(S_T/S_t)^2] = exp((p^2 - p) a^2 (T - t) / 2), largest at t = 0
    CHECK(std::abs(r.Rp_estimate - std::exp(0.25)) <= 4.0 * r.std_error + 0.01);
    // the profile ends at t = T where the conditional expectation is exactly 1
    CHECK(r.profile.t.back() == doctest::Approx(1.0));
    CHECK(r.profile.estimate.back() == doctest::Approx(1.0));
    // conditional Holder monotonicity
    const auto r1 = estimate_reverse_holder(e, 1.0, cfg), r3 = estimate_reverse_holder(e, 3.0, cfg);
    CHECK(r1.Rp_estimate <= std::sqrt(r.Rp_estimate) + 3.0 * r.std_error);
    CHECK(r.Rp_estimate <= std::pow(r3.Rp_estimate, 2.0 / 3.0) + 3.0 * r3.std_error);

    const DoobReport doob = doob_sup_check(e, 2.0, r);
    CHECK(doob.factor == doctest::Approx(4.0));
    CHECK(doob.max_ratio <= 1.0);
}

TEST_CASE("nested and regression estimators agree on the scalar field") {
    const PathEnsemble p = generate_brownian(TimeGrid::uniform(1.0, 50), 1, 20000, 21, false);
    IntegrationOptions o;
    o.record_steps = even_record_steps(50, 3);
    o.continuation = true;
    const CoefficientField A = shipped_field("scalar-half");
    const ExponentialEnsemble e = integrate_exponential(A, p, o);
    ReverseHolderConfig nested;
    nested.outer_paths = 20;
    nested.inner_paths = 4000;
    const auto rn = estimate_reverse_holder(e, 2.0, nested, &A);
    CHECK(rn.estimator.find("nested") != std::string::npos);
    CHECK(std::abs(rn.Rp_estimate - std::exp(0.25)) < 0.06);
}

TEST_CASE("divergence diagnostic separates heavy and light tails") {
    std::mt19937_64 gen(5);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<double> heavy, light;
    for (int i = 0; i < 20000; ++i) {
        const double v = 1.0 - u(gen);
        heavy.push_back(std::pow(v, -1.0 / 0.8)); // Pareto, infinite mean
        light.push_back(std::pow(v, -1.0 / 4.0)); // Pareto, four finite moments minus epsilon
    }
    const std::vector<double> levels = {10, 100, 1000, 1e4};
    const DivergenceReport h = divergence_diagnostic(heavy, levels), l = divergence_diagnostic(light, levels);
    CHECK(h.divergent);
    CHECK_FALSE(l.divergent);
    CHECK(h.hill_tail_index == doctest::Approx(0.8).epsilon(0.2));
    CHECK(l.hill_tail_index == doctest::Approx(4.0).epsilon(0.2));
}

TEST_CASE("shipped fields respect their structure tags") {
    for (const auto& name : shipped_field_names()) {
        const CoefficientField A = shipped_field(name);
        const PathEnsemble q = generate_brownian(TimeGrid::uniform(1.0, 4), A.d(), 10, 6);
        for (std::size_t m = 0; m < 10; ++m) CHECK(A.structure_violation(0.5, q.state(m, 2)) <= 1e-12);
    }
    CHECK_THROWS_AS(shipped_field("nope"), ConfigError);
}

} // TEST_SUITE
