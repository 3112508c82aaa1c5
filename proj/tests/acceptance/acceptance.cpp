// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any fails.
// Usage: acceptance [criterion numbers...]   (no arguments runs all eleven)

#include "bsdelab/counterexamples/counterexamples.hpp"
#include "bsdelab/exponential/reverse_holder.hpp"
#include "bsdelab/linear/linear.hpp"
#include "bsdelab/oracle/tree.hpp"
#include "bsdelab/quadratic/quadratic.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <numbers>
#include <set>
#include <string>

using namespace bsdelab;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

Outcome exit_time_identity() {
    Outcome o{true, ""};
    for (double b : {std::numbers::pi / 4, std::numbers::pi / 3}) {
        const auto t0 = Clock::now();
        ExitTimeOptions opts; // M = 1e5, dt = 1e-4
        opts.seed = 11;
        const ExitTimeEstimate e = exit_time_exponential(b, opts);
        const double rel = std::abs(e.estimate / e.exact - 1.0), secs = seconds_since(t0);
        o.pass = o.pass && rel <= 0.02 && secs <= 120.0;
        o.detail += fmt("b=%.4f: %.4f +- %.4f vs %.4f (rel %.4f, %.0fs) ", b, e.estimate, e.std_error, e.exact, rel, secs);
    }
    return o;
}

Outcome scalar_reverse_holder() {
    const auto t0 = Clock::now();
    const PathEnsemble p = generate_brownian(TimeGrid::uniform(1.0, 200), 1, 100000, 42, false);
    IntegrationOptions io;
    io.record_steps = even_record_steps(200, 11);
    io.continuation = true;
    const ExponentialEnsemble e = integrate_exponential(shipped_field("scalar-half"), p, io);
    ReverseHolderConfig cfg;
    cfg.method = ConditionalMethod::regression;
    const auto r = estimate_reverse_holder(e, 2.0, cfg);
    const double exact = std::exp(0.25), secs = seconds_since(t0);
    const double z = std::abs(r.Rp_estimate - exact) / r.std_error;
    return {z <= 3.0 && secs <= 60.0,
            fmt("R_2 = %.4f +- %.4f vs %.4f (%.2f SE, %.0fs)", r.Rp_estimate, r.std_error, exact, z, secs)};
}

Outcome emery_defect() {
    const std::size_t K = 40000;
    const PathEnsemble p = generate_brownian(TimeGrid::uniform(40.0, K), 1, 10000, 3, false);
    const EmeryEnsemble em = emery_closed_form(p, {}, even_record_steps(K, 41));
    const DefectReport d = martingale_defect(em.expo);
    const std::size_t last = d.diagonal_defect.t.size() - 1;
    const double diag = d.diagonal_defect.estimate[last], se = d.diagonal_defect.std_error[last];
    const double sig = se > 0.0 ? (diag - 0.5) / se : std::numeric_limits<double>::infinity();

    const ConvergenceReport c = emery_euler_convergence(1.0, {200, 400, 800}, 20000, derive_key(3, 0xe0));
    const bool order_ok = c.order >= 0.5 - 2.0 * c.order_se;
    return {diag >= 0.5 && sig >= 5.0 && order_ok,
            fmt("diagonal defect %.4f (se %.2g, %s sigma above 0.5, unexited %zu); Euler order %.4f +- %.4f", diag, se,
                std::isinf(sig) ? "inf" : fmt("%.1f", sig).c_str(), em.unexited, c.order, c.order_se)};
}

Outcome tree_oracle() {
    const auto t0 = Clock::now();
    std::size_t checked = 0, singular = 0;
    double worst_rep = 0.0, worst_dual = 0.0;
    for (std::uint64_t seed = 0; checked < 25; ++seed) {
        const TreeInstance in = random_tree_instance(seed, 8, 3, 2);
        const DiscreteExponential ex = discrete_exponential(in.tree, in.A);
        if (!ex.invertible()) {
            ++singular;
            continue;
        }
        const DiscreteBsdeSolution sol = discrete_linear_bsde_solve(in.tree, in.xi, in.beta, in.A);
        const NodeValues rep = representation_formula(in.tree, ex.S, in.xi, in.beta);
        for (std::size_t k = 0; k <= in.tree.steps(); ++k)
            worst_rep = std::max(worst_rep, (sol.Y[k] - rep[k]).cwiseAbs().maxCoeff());
        for (double q : {1.0, 2.0, 4.0}) {
            const DualityResult d = verify_duality_lemma(in.tree, in.xi, in.tree.steps() / 2, q, 8, seed);
            worst_dual = std::max(worst_dual, std::abs(d.lhs - d.rhs));
        }
        ++checked;
    }
    const double secs = seconds_since(t0);
    return {worst_rep <= 1e-10 && worst_dual <= 1e-9 && secs <= 60.0,
            fmt("%zu trees (%zu singular skipped): max |Y - rep| %.2g, max |lhs - rhs| %.2g, %.1fs", checked, singular,
                worst_rep, worst_dual, secs)};
}

Outcome tree_reverse_holder() {
    const BinaryTree one(1, 1, 0.25);
    NodeField A(1);
    MatD a(1, 1);
    a.component(0)(0, 0) = 1.0;
    A[0].push_back(a);
    const double r2 = discrete_reverse_holder(one, discrete_exponential(one, A).S, 2.0).Rp;
    std::size_t trees = 0, violations = 0;
    for (std::uint64_t seed = 0; seed < 40; ++seed) {
        const TreeInstance in = random_tree_instance(seed);
        const DiscreteExponential ex = discrete_exponential(in.tree, in.A);
        if (!ex.invertible()) continue;
        ++trees;
        double prev = 0.0;
        for (double q : {1.0, 1.5, 2.0, 3.0, 4.0}) {
            const double r = discrete_reverse_holder(in.tree, ex.S, q).Rp;
            if (r < prev * (1.0 - 1e-12)) ++violations;
            prev = r;
        }
    }
    return {r2 == 1.25 && violations == 0,
            fmt("hand example R_2 = %.17g; monotone in p on %zu trees (%zu violations)", r2, trees, violations)};
}

Outcome structural_vs_regression() {
    const PathEnsemble p = generate_brownian(TimeGrid::uniform(1.0, 50), 1, 20000, 11);
    const RegressionEstimator est = RegressionEstimator::from_ensemble(p);
    bool ok = true;
    std::string detail;
    for (const std::string name : {"triangular-3", "left-outer-3", "right-outer-3"}) {
        const LinearBsdeSpec spec = shipped_linear(name);
        const SolutionEnsemble a = solve_linear(spec, p, est, LinearMethod::structural);
        const SolutionEnsemble b = solve_by_regression(spec, p, est);
        double zmax = 0.0;
        for (Eigen::Index i = 0; i < a.Y0.size(); ++i)
            zmax = std::max(zmax, std::abs(a.Y0(i) - b.Y0(i)) / std::hypot(a.Y0_std_error(i), b.Y0_std_error(i)));
        ok = ok && zmax <= 3.0;
        detail += fmt("%s max z %.2f; ", name.c_str(), zmax);
        if (name == "right-outer-3") {
            const double v = a.diagnostics.at("v_minus_btz_rms"), tol = a.diagnostics.at("regression_tolerance");
            ok = ok && v <= tol;
            detail += fmt("V - b'Z rms %.4f <= %.4f", v, tol);
        }
    }
    return {ok, detail};
}

Outcome inverse_dynamics() {
    bool ok = true;
    std::string worst_name;
    double worst = 0.0;
    for (const std::string& name : shipped_field_names()) {
        const CoefficientField f = shipped_field(name);
        std::vector<double> r;
        for (std::size_t K : {200, 400, 800}) {
            const PathEnsemble p = generate_brownian(TimeGrid::uniform(1.0, K), f.d(), 2000, 7, false);
            IntegrationOptions io;
            io.record_steps = even_record_steps(K, 21);
            r.push_back(inverse_report(integrate_inverse(f, p, io)).max_mean_residual);
        }
        const bool decreasing = r[0] == 0.0 || (r[1] < r[0] && r[2] < r[1]);
        ok = ok && r[2] <= 0.05 && decreasing;
        if (r[2] >= worst) {
            worst = r[2];
            worst_name = name;
        }
        if (!decreasing) worst_name += " (not decreasing: " + name + ")";
    }
    return {ok, fmt("max residual at K=800 %.4f (%s); decreasing on all %zu fields", worst, worst_name.c_str(),
                    shipped_field_names().size())};
}

Outcome cole_hopf() {
    const auto t0 = Clock::now();
    bool ok = true;
    std::string detail;
    for (const std::string name : {"cole-hopf-1d", "cole-hopf-1d-u"}) {
        const QuadraticSolution s = solve_quadratic(shipped_quadratic(name), 50, 100000, 11);
        const double y0 = s.solution.Y0(0), rel = std::abs(y0 / 0.5 - 1.0);
        ok = ok && rel <= 0.02 && s.k_accepted <= 8.0;
        detail += fmt("%s Y0 %.4f +- %.4f k %.0f; ", name.c_str(), y0, s.solution.Y0_std_error(0), s.k_accepted);
    }
    const double secs = seconds_since(t0);
    ok = ok && secs <= 300.0;
    return {ok, detail + fmt("%.0fs", secs)};
}

Outcome picard_initializations() {
    bool ok = true;
    double worst = 0.0;
    for (const std::string& name : shipped_quadratic_names()) {
        const QuadraticSpec spec = shipped_quadratic(name);
        const QuadraticSolution a = solve_quadratic(spec, 40, 10000, 21);
        const RegressionEstimator est = RegressionEstimator::from_ensemble(*a.paths);
        QuadraticConfig other;
        other.init = PicardInit::conditional_terminal;
        const QuadraticSolution b = solve_quadratic_on(spec, a.paths, est, other);
        double diff = 0.0;
        for (std::size_t k = 0; k <= a.paths->steps(); ++k)
            diff = std::max(diff, (a.solution.Y.slice(k) - b.solution.Y.slice(k)).cwiseAbs().maxCoeff());
        ok = ok && diff <= 1e-3;
        worst = std::max(worst, diff);
    }
    return {ok, fmt("max S-infinity difference %.3g over %zu instances", worst, shipped_quadratic_names().size())};
}

Outcome lyapunov_and_spanning() {
    const QuadraticSpec z = shipped_quadratic("zero-2d");
    const QuadraticSolution s = solve_quadratic(z, 50, 20000, 11);
    const RegressionEstimator est = RegressionEstimator::from_ensemble(*s.paths);
    const LyapunovReport r = check_lyapunov(squared_norm_pair(0.0, 1.0), z.driver, {}, &s, &est);
    const std::vector<Eigen::VectorXd> pm = {Eigen::Vector2d(1, 0), Eigen::Vector2d(-1, 0), Eigen::Vector2d(0, 1),
                                             Eigen::Vector2d(0, -1)};
    const std::vector<Eigen::VectorXd> e = {Eigen::Vector2d(1, 0), Eigen::Vector2d(0, 1)};
    const bool span_pm = positive_spanning(pm).spanning, span_e = positive_spanning(e).spanning;
    const bool holds = r.lemma_holds.value_or(false);
    return {r.valid_pair && r.worst_margin >= 0.0 && holds && span_pm && !span_e,
            fmt("pair valid %d margin %.3g; bmo^2 %.4f +- %.4f <= bound %.4f: %d; {+-e_i} spanning %d, {e_i} spanning %d",
                r.valid_pair, r.worst_margin, r.bmo_squared.value_or(NAN), r.bmo_squared_se.value_or(NAN), r.lemma_bound,
                holds, span_pm, span_e)};
}

Outcome stability() {
    bool ok = true;
    std::string detail;
    for (const std::string name : {"cole-hopf-1d", "ql-coupled-2d"}) {
        const QuadraticSpec spec = shipped_quadratic(name);
        const QuadraticConfig base;
        const QuadraticSolution s = solve_quadratic(spec, 40, 20000, 11, base);
        const RegressionEstimator est = RegressionEstimator::from_ensemble(*s.paths);
        QuadraticConfig fixed = base;
        fixed.k_schedule = {s.k_accepted};
        double worst_res = 0.0, lo = INFINITY, hi = 0.0;
        for (double eps : {0.1, 0.05, 0.025}) {
            QuadraticSpec pert = spec;
            pert.xi = [xi = spec.xi, eps](const PathEnsemble& p, std::size_t m) {
                Eigen::VectorXd v = xi(p, m);
                v(0) += eps * std::cos(p.state(m, p.steps()).x(0));
                return v;
            };
            const QuadraticSolution s2 = solve_quadratic_on(pert, s.paths, est, fixed);
            const LinearizationReport r = linearized_difference_check(s, s2, spec.driver, est);
            worst_res = std::max(worst_res, r.max_residual);
            lo = std::min(lo, r.ratio);
            hi = std::max(hi, r.ratio);
        }
        const double variation = (hi - lo) / lo;
        ok = ok && worst_res <= 10.0 * base.step_tolerance && variation <= 0.25;
        detail += fmt("%s residual %.2g (tol %.2g), ratio in [%.4f, %.4f] variation %.3f; ", name.c_str(), worst_res,
                      10.0 * base.step_tolerance, lo, hi, variation);
    }
    return {ok, detail};
}

} // namespace

int main(int argc, char** argv) {
    const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria = {
        {"exit-time identity", exit_time_identity},
        {"scalar reverse Holder constant", scalar_reverse_holder},
        {"Emery defect and Euler order", emery_defect},
        {"tree oracle and duality", tree_oracle},
        {"tree reverse Holder", tree_reverse_holder},
        {"structural vs regression", structural_vs_regression},
        {"inverse dynamics", inverse_dynamics},
        {"Cole-Hopf", cole_hopf},
        {"Picard initializations", picard_initializations},
        {"Lyapunov and spanning", lyapunov_and_spanning},
        {"stability", stability},
    };
    std::set<int> only;
    for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));

    int failed = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        const int id = static_cast<int>(i) + 1;
        if (!only.empty() && !only.count(id)) continue;
        const auto t0 = Clock::now();
        Outcome o;
        try {
            o = criteria[i].second();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        if (!o.pass) ++failed;
        std::printf("%s %2d %-32s %s [%.1fs]\n", o.pass ? "PASS" : "FAIL", id, criteria[i].first, o.detail.c_str(),
                    seconds_since(t0));
        std::fflush(stdout);
    }
    return failed == 0 ? 0 : 1;
}
