#include <doctest.h>

#include "bsdelab/core/error.hpp"
#include "bsdelab/counterexamples/counterexamples.hpp"
#include "bsdelab/exponential/reverse_holder.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

using namespace bsdelab;

TEST_SUITE("counterexamples") {

TEST_CASE("Emery closed form: S_0 = I, scaled rotation, zero diagonal at exit") {
    const PathEnsemble p = generate_brownian(TimeGrid::uniform(8.0, 4000), 1, 300, 17, false);
    const EmeryEnsemble em = emery_closed_form(p, {}, even_record_steps(4000, 9));
    const ExponentialEnsemble& e = em.expo;
    for (std::size_t m = 0; m < 300; ++m) {
        CHECK(e.S(m, 0).isIdentity(0.0));
        for (std::size_t r = 1; r < e.records(); ++r) {
            const Eigen::Matrix2d S = e.S(m, r);
            const double scale = S.col(0).squaredNorm(); // e^{tau ^ t}
            CHECK((S * S.transpose() - scale * Eigen::Matrix2d::Identity()).norm() <= 1e-12 * scale);
            CHECK(S.determinant() == doctest::Approx(scale).epsilon(1e-12));
            CHECK((S * e.X(m, r) - Eigen::Matrix2d::Identity()).norm() <= 1e-12);
        }
        if (std::isfinite(em.exit_time[m])) {
            const Eigen::Matrix2d S = e.S(m, e.records() - 1);
            CHECK(std::abs(S(0, 0)) <= 1e-12 * S.norm());
            CHECK(S.col(0).squaredNorm() == doctest::Approx(std::exp(em.exit_time[m])).epsilon(1e-12));
        }
    }
}

TEST_CASE("Emery: diagonal defect is large once paths have exited") {
    const PathEnsemble p = generate_brownian(TimeGrid::uniform(20.0, 4000), 1, 2000, 3, false);
    const EmeryEnsemble em = emery_closed_form(p, {}, {0, 4000});
    const DefectReport d = martingale_defect(em.expo);
    CHECK(d.diagonal_defect.estimate[1] >= 0.5);
}

TEST_CASE("Emery: Euler scheme approaches the closed form") {
    const ConvergenceReport c = emery_euler_convergence(1.0, {100, 200, 400}, 4000, 9, 10);
    CHECK(c.rmse[2] < c.rmse[0]);
    CHECK(c.order > 0.3);
}

TEST_CASE("exit-time identity at b = pi/4 on a coarse grid") {
    ExitTimeOptions o;
    o.paths = 20000;
    o.dt = 1e-3;
    o.seed = 4;
    const ExitTimeEstimate e = exit_time_exponential(std::numbers::pi / 4, o);
    CHECK(e.exact == doctest::Approx(std::numbers::sqrt2));
    CHECK(std::abs(e.estimate - e.exact) <= 4.0 * e.std_error + 0.01);
    CHECK(e.unexited == 0);
    // E[sigma_b] = b^2
    CHECK(e.mean_exit_time == doctest::Approx(std::pow(std::numbers::pi / 4, 2)).epsilon(0.03));

    ExitTimeOptions small = o;
    small.paths = 4000;
    const double lo = exit_time_exponential(0.3, small).estimate, mid = exit_time_exponential(0.6, small).estimate;
    CHECK(lo < mid);
    CHECK(lo == doctest::Approx(1.0 / std::cos(0.3)).epsilon(0.02));
    CHECK_THROWS_AS(exit_time_exponential(2.0, small), ConfigError);
}

TEST_CASE("nonexistence sequence") {
    const NonexistenceSpec ns;
    CHECK_NOTHROW(check_nonexistence_sequence(ns));
    CHECK(ns.b(1) == doctest::Approx(std::numbers::pi / 3));
    CHECK(ns.term(1) == doctest::Approx(1.0));
    for (std::size_t k = 1; k <= 40; ++k) {
        // cos(b_k) = k / 2^k, independently evaluated
        CHECK(std::cos(ns.b(k)) == doctest::Approx(double(k) / std::ldexp(1.0, int(k))).epsilon(1e-12));
        // cos near pi/2 amplifies rounding by about 2^k / k
        CHECK(ns.term(k) == doctest::Approx(1.0 / double(k)).epsilon(1e-5));
        if (k > 1) CHECK(ns.b(k) >= ns.b(k - 1));
        CHECK(ns.b(k) < std::numbers::pi / 2);
    }
    CHECK(ns.f(0.25) == 0.0);
    CHECK(ns.f(0.75) == doctest::Approx(4.0));
    CHECK(ns.changed_time(0.75) == doctest::Approx(4.0 - 2.0));
    const Eigen::Vector2d xi = nonexistence_terminal(1.234);
    CHECK(xi.norm() == doctest::Approx(1.0));

    ExitTimeOptions o;
    o.paths = 4000;
    o.dt = 1e-3;
    const BlowupReport br = nonexistence_blowup(ns, 2, o);
    REQUIRE(br.rows.size() == 40);
    double harmonic = 0.0;
    for (std::size_t j = 1; j <= 40; ++j) {
        harmonic += 1.0 / double(j);
        CHECK(br.rows[j - 1].partial_sum == doctest::Approx(harmonic).epsilon(1e-6));
    }
    CHECK(br.rows[39].partial_sum > 4.0);
    for (std::size_t j = 1; j <= 2; ++j)
        CHECK(std::abs(br.rows[j - 1].simulated_estimate - br.rows[j - 1].partial_sum) <=
              4.0 * br.rows[j - 1].simulated_std_error + 0.02);
    std::ostringstream os;
    write_blowup_csv(os, br);
    CHECK(os.str().rfind("j,partial_sum,simulated_estimate,remainder_bound\n", 0) == 0);
}

} // TEST_SUITE
