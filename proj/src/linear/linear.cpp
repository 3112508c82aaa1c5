#include "bsdelab/linear/linear.hpp"

#include "bsdelab/core/error.hpp"
#include "bsdelab/core/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <ostream>

namespace bsdelab {

namespace {

using Index = Eigen::Index;
using Steps = std::vector<Eigen::MatrixXd>; // one paths x width matrix per step

Index ix(std::size_t i) { return static_cast<Index>(i); }

Eigen::Map<const Eigen::VectorXd> state_vec(const PathState& s) { return {s.x_ptr, ix(s.dim)}; }

void require_paths(const PathEnsemble& paths, const ConditionalEstimator& est, std::size_t d) {
    BSDELAB_REQUIRE(paths.materialized(), "linear solvers need a materialized path ensemble");
    BSDELAB_REQUIRE(paths.dim() == d, "path dimension does not match the coefficient");
    BSDELAB_REQUIRE(est.paths() == paths.paths(), "estimator and path ensemble disagree on the path count");
}

Eigen::MatrixXd increments(const PathEnsemble& paths, std::size_t k) {
    Eigen::MatrixXd dB(ix(paths.paths()), ix(paths.dim()));
    std::vector<double> buf(paths.dim());
    for (std::size_t m = 0; m < paths.paths(); ++m) {
        paths.increment(m, k, buf.data());
        for (std::size_t l = 0; l < paths.dim(); ++l) dB(ix(m), ix(l)) = buf[l];
    }
    return dB;
}

// Columns i*d + l hold V^i dB_l.
Eigen::MatrixXd times_increments(const Eigen::MatrixXd& V, const Eigen::MatrixXd& dB) {
    const Index n = V.cols(), d = dB.cols();
    Eigen::MatrixXd out(V.rows(), n * d);
    for (Index i = 0; i < n; ++i)
        for (Index l = 0; l < d; ++l) out.col(i * d + l) = V.col(i).cwiseProduct(dB.col(l));
    return out;
}

Eigen::MatrixXd terminal_matrix(const LinearBsdeSpec& spec, const PathEnsemble& paths) {
    BSDELAB_REQUIRE(static_cast<bool>(spec.xi), "linear BSDE needs a terminal value");
    Eigen::MatrixXd xi(ix(paths.paths()), ix(spec.n()));
    parallel_chunks(paths.paths(), [&](std::size_t b, std::size_t e) {
        for (std::size_t m = b; m < e; ++m) {
            const Eigen::VectorXd v = spec.xi(paths, m);
            BSDELAB_REQUIRE(static_cast<std::size_t>(v.size()) == spec.n(), "terminal value has the wrong size");
            xi.row(ix(m)) = v.transpose();
        }
    });
    return xi;
}

Steps beta_steps(const LinearBsdeSpec& spec, const PathEnsemble& paths) {
    const std::size_t K = paths.steps(), M = paths.paths(), n = spec.n();
    Steps out(K, Eigen::MatrixXd::Zero(ix(M), ix(n)));
    if (!spec.beta) return out;
    parallel_chunks(M, [&](std::size_t b, std::size_t e) {
        for (std::size_t m = b; m < e; ++m)
            for (std::size_t k = 0; k < K; ++k) {
                const Eigen::VectorXd v = spec.beta(paths.grid().time(k), paths.state(m, k));
                BSDELAB_REQUIRE(static_cast<std::size_t>(v.size()) == n, "beta has the wrong size");
                out[k].row(ix(m)) = v.transpose();
            }
    });
    return out;
}

void add_steps(Steps& a, const Steps* b) {
    if (b == nullptr) return;
    for (std::size_t k = 0; k < a.size(); ++k) a[k] += (*b)[k];
}

Eigen::VectorXd column_std_error(const Eigen::MatrixXd& v) {
    const double N = static_cast<double>(v.rows());
    const Eigen::RowVectorXd mean = v.colwise().mean();
    const Eigen::RowVectorXd var = (v.rowwise() - mean).colwise().squaredNorm() / std::max(1.0, N - 1.0);
    return (var / N).cwiseSqrt().transpose();
}

SolutionEnsemble empty_solution(const PathEnsemble& paths, std::size_t n, std::size_t d, std::string tag) {
    SolutionEnsemble sol;
    sol.Y = SampledProcess(paths.grid(), paths.paths(), n);
    sol.Z = SampledProcess(paths.grid(), paths.paths(), n * d);
    sol.solver = std::move(tag);
    return sol;
}

// Y_k = E_k[V_k], Z_k = E_k[V_{k+1} dB_k]/dt for pathwise values V_0..V_K.
void solve_from_values(SolutionEnsemble& sol, const PathEnsemble& paths, const ConditionalEstimator& est,
                       const Steps& V) {
    const std::size_t K = paths.steps();
    sol.Y.set_slice(K, V[K]);
    for (std::size_t k = 0; k < K; ++k) {
        sol.Y.set_slice(k, est.project(k, V[k]));
        sol.Z.set_slice(k, est.project(k, times_increments(V[k + 1], increments(paths, k))) / paths.grid().dt(k));
    }
    sol.Y0 = sol.Y.slice(0).colwise().mean().transpose();
    sol.Y0_std_error = column_std_error(V[0]);
}

// Mean squared standard error of OLS fitted values, sigma^2 p / M, from the fit residuals;
// zero for exact estimators.
double fit_noise(const ConditionalEstimator& est, std::size_t k, const Eigen::MatrixXd& resid, std::size_t d) {
    const auto* reg = dynamic_cast<const RegressionEstimator*>(&est);
    if (reg == nullptr) return 0.0;
    const int deg = reg->degree_used(k);
    double p = 1.0; // binomial(d + deg, d) monomials
    for (int j = 1; j <= deg; ++j) p = p * static_cast<double>(static_cast<int>(d) + j) / j;
    const double M = static_cast<double>(resid.rows());
    return resid.squaredNorm() / (M * static_cast<double>(resid.cols())) * p / M;
}

// Scalar representation: W_K = eta, W_k = (1 + c_k . dB_k) W_{k+1} + g_k dt; U = E[W], V = E[W_{k+1} dB]/dt.
struct ScalarSolution {
    Steps U; // K+1 of paths x 1
    Steps V; // K of paths x d
    Steps W; // pathwise values
    std::vector<double> V_noise; // per step: mean squared error of the fitted V
    double U0_std_error = 0.0;
};

ScalarSolution scalar_representation(const PathEnsemble& paths, const ConditionalEstimator& est, const Steps& coef,
                                     const Eigen::VectorXd& eta, const Steps& inhom) {
    const std::size_t K = paths.steps(), M = paths.paths(), d = paths.dim();
    Steps W(K + 1, Eigen::MatrixXd(ix(M), 1));
    W[K].col(0) = eta;
    for (std::size_t kk = K; kk-- > 0;) {
        const Eigen::MatrixXd dB = increments(paths, kk);
        const double dt = paths.grid().dt(kk);
        W[kk].col(0) = (1.0 + (coef[kk].cwiseProduct(dB)).rowwise().sum().array()).matrix().cwiseProduct(W[kk + 1].col(0)) +
                       inhom[kk].col(0) * dt;
    }
    ScalarSolution s;
    s.U.resize(K + 1);
    s.V.resize(K);
    s.U[K] = W[K];
    for (std::size_t k = 0; k < K; ++k) {
        s.U[k] = est.project(k, W[k]);
        const Eigen::MatrixXd target = times_increments(W[k + 1], increments(paths, k)) / paths.grid().dt(k);
        s.V[k] = est.project(k, target);
        s.V_noise.push_back(fit_noise(est, k, target - s.V[k], d));
    }
    s.U0_std_error = column_std_error(W[0])(0);
    s.W = std::move(W);
    return s;
}

// Per path and step: alpha and the total Z coefficient A (+ dA).
struct Coefficients {
    const LinearBsdeSpec& spec;
    bool include_perturbation;

    MatD A(const PathEnsemble& paths, std::size_t m, std::size_t k) const {
        const double t = paths.grid().time(k);
        const PathState st = paths.state(m, k);
        MatD a(spec.n(), spec.d());
        spec.A.eval(t, st, a);
        if (include_perturbation && spec.dA) {
            MatD da(spec.n(), spec.d());
            spec.dA->eval(t, st, da);
            a += da;
        }
        return a;
    }
    Eigen::MatrixXd alpha(const PathEnsemble& paths, std::size_t m, std::size_t k) const {
        const auto n = ix(spec.n());
        if (!include_perturbation || !spec.alpha) return Eigen::MatrixXd::Zero(n, n);
        return spec.alpha(paths.grid().time(k), paths.state(m, k));
    }
};

Eigen::VectorXd contract(const MatD& A, const double* z, std::size_t n, std::size_t d) {
    Eigen::VectorXd out = Eigen::VectorXd::Zero(ix(n));
    for (std::size_t l = 0; l < d; ++l)
        for (std::size_t j = 0; j < n; ++j) out += A.component(l).col(ix(j)) * z[j * d + l];
    return out;
}

// One-step residual of the equation and the terminal mismatch.
void finish(SolutionEnsemble& sol, const LinearBsdeSpec& spec, const PathEnsemble& paths,
            const ConditionalEstimator& est, const Eigen::MatrixXd& xi, const Steps& beta) {
    const std::size_t K = paths.steps(), M = paths.paths(), n = spec.n(), d = spec.d();
    const Coefficients coef{spec, true};
    sol.residual.assign(K, 0.0);
    sol.max_residual = 0.0;
    for (std::size_t k = 0; k < K; ++k) {
        const Eigen::MatrixXd EY = est.project(k, sol.Y.slice(k + 1));
        const double dt = paths.grid().dt(k);
        std::vector<double> r2(M);
        parallel_chunks(M, [&](std::size_t b, std::size_t e) {
            for (std::size_t m = b; m < e; ++m) {
                const Eigen::Map<const Eigen::VectorXd> y(sol.Y.at(m, k), ix(n));
                Eigen::VectorXd drift = contract(coef.A(paths, m, k), sol.Z.at(m, k), n, d) +
                                        beta[k].row(ix(m)).transpose() + coef.alpha(paths, m, k) * y;
                r2[m] = (y - EY.row(ix(m)).transpose() - drift * dt).squaredNorm();
            }
        });
        double s = 0.0;
        for (double v : r2) s += v;
        sol.residual[k] = std::sqrt(s / static_cast<double>(M));
        sol.max_residual = std::max(sol.max_residual, sol.residual[k]);
    }
    sol.terminal_mismatch = (sol.Y.slice(K) - xi).cwiseAbs().maxCoeff();
}

struct EulerDefect {
    double max_defect = 0.0, max_defect_se = 0.0;
    bool significant = false; // some step exceeds the tolerance by more than 4 standard errors
};

// |E[S_k] - I| per step with fixed path blocks, so the sums do not depend on the thread count.
EulerDefect euler_defect(const CoefficientField& A, const PathEnsemble& paths, double tolerance) {
    const std::size_t K = paths.steps(), M = paths.paths(), n = A.n(), d = A.d();
    constexpr std::size_t block = 256;
    const std::size_t blocks = (M + block - 1) / block;
    const Index nn = ix(n * n);
    std::vector<Eigen::MatrixXd> s1(blocks, Eigen::MatrixXd::Zero(nn, ix(K + 1)));
    std::vector<Eigen::MatrixXd> s2(blocks, Eigen::MatrixXd::Zero(nn, ix(K + 1)));
    parallel_chunks(blocks, [&](std::size_t b, std::size_t e) {
        MatD a(n, d);
        std::vector<double> dB(d);
        for (std::size_t q = b; q < e; ++q)
            for (std::size_t m = q * block; m < std::min(M, (q + 1) * block); ++m) {
                Eigen::MatrixXd S = Eigen::MatrixXd::Identity(ix(n), ix(n));
                for (std::size_t k = 0; k <= K; ++k) {
                    const Eigen::Map<const Eigen::VectorXd> flat(S.data(), nn);
                    s1[q].col(ix(k)) += flat;
                    s2[q].col(ix(k)) += flat.cwiseProduct(flat);
                    if (k == K) break;
                    A.eval(paths.grid().time(k), paths.state(m, k), a);
                    paths.increment(m, k, dB.data());
                    S = S * (Eigen::MatrixXd::Identity(ix(n), ix(n)) + a.against(dB.data()));
                }
            }
    });
    Eigen::MatrixXd t1 = Eigen::MatrixXd::Zero(nn, ix(K + 1)), t2 = t1;
    for (std::size_t q = 0; q < blocks; ++q) {
        t1 += s1[q];
        t2 += s2[q];
    }
    const double N = static_cast<double>(M);
    EulerDefect out;
    const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(ix(n), ix(n));
    for (std::size_t k = 0; k <= K; ++k) {
        const Eigen::VectorXd mean = t1.col(ix(k)) / N;
        const Eigen::VectorXd var = ((t2.col(ix(k)) / N - mean.cwiseProduct(mean)) * N / std::max(1.0, N - 1.0)).cwiseMax(0.0);
        const double defect = operator_norm(Eigen::Map<const Eigen::MatrixXd>(mean.data(), ix(n), ix(n)) - I);
        const double se = std::sqrt(var.sum() / N);
        if (defect > out.max_defect) {
            out.max_defect = defect;
            out.max_defect_se = se;
        }
        if (defect > tolerance && defect > 4.0 * se) out.significant = true;
    }
    return out;
}

SolutionEnsemble representation_impl(const LinearBsdeSpec& spec, const PathEnsemble& paths,
                                     const ConditionalEstimator& est, const LinearSolverOptions& opts,
                                     const Steps* extra) {
    require_paths(paths, est, spec.d());
    const EulerDefect defect = euler_defect(spec.A, paths, opts.defect_tolerance);
    if (defect.significant)
        throw NumericalError("representation invalid: S not a martingale at tolerance");

    const std::size_t K = paths.steps(), M = paths.paths(), n = spec.n(), d = spec.d();
    const Eigen::MatrixXd xi = terminal_matrix(spec, paths);
    Steps beta = beta_steps(spec, paths);
    Steps inhom = beta;
    add_steps(inhom, extra);

    // V_k = G_k V_{k+1} + inhom_k dt equals S_k^{-1}(S_K xi + sum_{j>=k} S_j inhom_j dt) pathwise
    Steps V(K + 1, Eigen::MatrixXd(ix(M), ix(n)));
    V[K] = xi;
    parallel_chunks(M, [&](std::size_t b, std::size_t e) {
        MatD a(n, d);
        std::vector<double> dB(d);
        for (std::size_t m = b; m < e; ++m) {
            Eigen::VectorXd v = xi.row(ix(m)).transpose();
            for (std::size_t kk = K; kk-- > 0;) {
                spec.A.eval(paths.grid().time(kk), paths.state(m, kk), a);
                paths.increment(m, kk, dB.data());
                v = v + a.against(dB.data()) * v + inhom[kk].row(ix(m)).transpose() * paths.grid().dt(kk);
                V[kk].row(ix(m)) = v.transpose();
            }
        }
    });
    SolutionEnsemble sol = empty_solution(paths, n, d, "representation");
    solve_from_values(sol, paths, est, V);
    sol.diagnostics["martingale_defect"] = defect.max_defect;
    sol.diagnostics["martingale_defect_se"] = defect.max_defect_se;
    finish(sol, spec, paths, est, xi, beta);
    return sol;
}

SolutionEnsemble regression_impl(const LinearBsdeSpec& spec, const PathEnsemble& paths,
                                 const ConditionalEstimator& est, const Steps* extra, bool include_perturbation) {
    require_paths(paths, est, spec.d());
    const std::size_t K = paths.steps(), M = paths.paths(), n = spec.n(), d = spec.d();
    const Eigen::MatrixXd xi = terminal_matrix(spec, paths);
    const Steps beta = beta_steps(spec, paths);
    const Coefficients coef{spec, include_perturbation};
    SolutionEnsemble sol = empty_solution(paths, n, d, "regression");
    sol.Y.set_slice(K, xi);
    Eigen::MatrixXd Ynext = xi;
    // xi + sum_k (A_k (Y_{k+1} dB_k) + (beta + alpha Y) dt): its path mean tracks Y_0, so its
    // spread gives the standard error including the noise of the Z fits
    Eigen::MatrixXd P = xi;
    for (std::size_t kk = K; kk-- > 0;) {
        const double dt = paths.grid().dt(kk);
        const Eigen::MatrixXd dB = increments(paths, kk);
        Eigen::MatrixXd target(ix(M), ix(n + n * d));
        target << Ynext, times_increments(Ynext, dB);
        const Eigen::MatrixXd proj = est.project(kk, target);
        const Eigen::MatrixXd Z = proj.rightCols(ix(n * d)) / dt;
        const Eigen::MatrixXd ydB = target.rightCols(ix(n * d));
        Eigen::MatrixXd Y(ix(M), ix(n));
        parallel_chunks(M, [&](std::size_t b, std::size_t e) {
            for (std::size_t m = b; m < e; ++m) {
                const MatD a = coef.A(paths, m, kk);
                Eigen::VectorXd inh = beta[kk].row(ix(m)).transpose();
                if (extra != nullptr) inh += (*extra)[kk].row(ix(m)).transpose();
                Eigen::VectorXd rhs = proj.row(ix(m)).head(ix(n)).transpose() +
                                      (contract(a, Eigen::VectorXd(Z.row(ix(m)).transpose()).data(), n, d) + inh) * dt;
                // alpha enters implicitly: (I - alpha dt) Y_k = rhs
                const Eigen::MatrixXd al = coef.alpha(paths, m, kk);
                if (!al.isZero(0.0)) rhs = (Eigen::MatrixXd::Identity(ix(n), ix(n)) - al * dt).partialPivLu().solve(rhs);
                Y.row(ix(m)) = rhs.transpose();
                P.row(ix(m)) += (contract(a, Eigen::VectorXd(ydB.row(ix(m)).transpose()).data(), n, d) +
                                 (inh + al * rhs) * dt).transpose();
            }
        });
        sol.Y.set_slice(kk, Y);
        // Z rows are stored z^i_l at i*d + l, which is exactly the column layout of times_increments
        sol.Z.set_slice(kk, Z);
        Ynext = Y;
    }
    sol.Y0 = sol.Y.slice(0).colwise().mean().transpose();
    sol.Y0_std_error = column_std_error(P);
    finish(sol, spec, paths, est, xi, beta);
    if (const auto* reg = dynamic_cast<const RegressionEstimator*>(&est); reg && !reg->downgraded_steps().empty()) {
        std::size_t lowered = 0;
        for (std::size_t k : reg->downgraded_steps()) lowered += (k > 0);
        if (lowered > 0) sol.warnings.push_back("regression basis lowered at " + std::to_string(lowered) + " steps");
    }
    return sol;
}

SolutionEnsemble right_outer_impl(const LinearBsdeSpec& spec, const PathEnsemble& paths,
                                  const ConditionalEstimator& est, const Steps* extra) {
    if (spec.A.structure() != Structure::right_outer || !spec.A.constant_b())
        throw ConfigError("solve_right_outer needs a right_outer coefficient field");
    require_paths(paths, est, spec.d());
    const std::size_t K = paths.steps(), M = paths.paths(), n = spec.n(), d = spec.d();
    const Eigen::VectorXd& bvec = *spec.A.constant_b();
    const Eigen::MatrixXd xi = terminal_matrix(spec, paths);
    const Steps beta = beta_steps(spec, paths);
    Steps inhom = beta;
    add_steps(inhom, extra);

    // scalar equation for U = b^T Y with coefficient b^T a
    Steps coef(K, Eigen::MatrixXd(ix(M), ix(d))), g(K, Eigen::MatrixXd(ix(M), 1));
    Steps a_rows(K, Eigen::MatrixXd(ix(M), ix(n * d)));
    parallel_chunks(M, [&](std::size_t b, std::size_t e) {
        for (std::size_t m = b; m < e; ++m)
            for (std::size_t k = 0; k < K; ++k) {
                const VecD a = spec.A.a_field(paths.grid().time(k), paths.state(m, k));
                coef[k].row(ix(m)) = (a.transpose() * bvec).transpose();
                g[k](ix(m), 0) = bvec.dot(inhom[k].row(ix(m)).transpose());
                for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t l = 0; l < d; ++l) a_rows[k](ix(m), ix(i * d + l)) = a(ix(i), ix(l));
            }
    });
    const ScalarSolution us = scalar_representation(paths, est, coef, xi * bvec, g);

    // Y with the known drift (a V)^i = a^i . V
    SolutionEnsemble sol = empty_solution(paths, n, d, "right-outer");
    sol.Y.set_slice(K, xi);
    Eigen::MatrixXd Ynext = xi;
    Eigen::MatrixXd P = xi; // pathwise xi + sum (a (W dB) + beta dt), for the standard error of Y_0
    double gap = 0.0, gap2 = 0.0, noise = 0.0;
    for (std::size_t kk = K; kk-- > 0;) {
        const double dt = paths.grid().dt(kk);
        const Eigen::MatrixXd dB = increments(paths, kk);
        Eigen::MatrixXd target(ix(M), ix(n + n * d));
        target << Ynext, times_increments(Ynext, dB);
        const Eigen::MatrixXd proj = est.project(kk, target);
        const Eigen::MatrixXd Z = proj.rightCols(ix(n * d)) / dt;
        Eigen::MatrixXd drift(ix(M), ix(n));
        for (std::size_t i = 0; i < n; ++i)
            drift.col(ix(i)) = a_rows[kk].middleCols(ix(i * d), ix(d)).cwiseProduct(us.V[kk]).rowwise().sum();
        const Eigen::MatrixXd Y = proj.leftCols(ix(n)) + (drift + inhom[kk]) * dt;
        const Eigen::MatrixXd wdB = times_increments(us.W[kk + 1], dB);
        for (std::size_t i = 0; i < n; ++i)
            P.col(ix(i)) += a_rows[kk].middleCols(ix(i * d), ix(d)).cwiseProduct(wdB).rowwise().sum() + inhom[kk].col(ix(i)) * dt;
        Eigen::MatrixXd bz_resid = Eigen::MatrixXd::Zero(ix(M), ix(d));
        for (std::size_t i = 0; i < n; ++i)
            bz_resid += bvec(ix(i)) * (target.middleCols(ix(n + i * d), ix(d)) / dt - Z.middleCols(ix(i * d), ix(d)));
        noise += us.V_noise[kk] + fit_noise(est, kk, bz_resid, d);
        for (std::size_t m = 0; m < M; ++m)
            for (std::size_t l = 0; l < d; ++l) {
                double btz = 0.0;
                for (std::size_t i = 0; i < n; ++i) btz += bvec(ix(i)) * Z(ix(m), ix(i * d + l));
                const double diff = std::abs(us.V[kk](ix(m), ix(l)) - btz);
                gap = std::max(gap, diff);
                gap2 += diff * diff;
            }
        sol.Y.set_slice(kk, Y);
        sol.Z.set_slice(kk, Z);
        Ynext = Y;
    }
    sol.Y0 = sol.Y.slice(0).colwise().mean().transpose();
    sol.Y0_std_error = column_std_error(P);
    sol.diagnostics["v_minus_btz"] = gap;
    // three standard errors of the two fitted quantities, root mean square over steps
    sol.diagnostics["regression_tolerance"] = 3.0 * std::sqrt(noise / static_cast<double>(K));
    sol.diagnostics["v_minus_btz_rms"] = std::sqrt(gap2 / static_cast<double>(M * K * d));
    sol.diagnostics["U0"] = us.U[0].col(0).mean();
    sol.diagnostics["U0_std_error"] = us.U0_std_error;
    double ugap = 0.0;
    for (std::size_t k = 0; k <= K; ++k) ugap = std::max(ugap, (sol.Y.slice(k) * bvec - us.U[k].col(0)).cwiseAbs().maxCoeff());
    sol.diagnostics["u_minus_bty"] = ugap;
    finish(sol, spec, paths, est, xi, beta);
    return sol;
}

// S_k, X_k = S_k^{-1} along path m for a left outer-product field.
void left_outer_path(const CoefficientField& A, const PathEnsemble& paths, std::size_t m,
                     std::vector<Eigen::MatrixXd>& S, std::vector<Eigen::MatrixXd>& X, bool& singular) {
    const std::size_t K = paths.steps(), n = A.n(), d = A.d();
    const Eigen::VectorXd& a = *A.constant_a();
    const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(ix(n), ix(n));
    S.resize(K + 1);
    X.resize(K + 1);
    S[0] = I;
    X[0] = I;
    Eigen::VectorXd s = a; // S a, a scalar exponential times a
    std::vector<double> dBv(d);
    singular = false;
    for (std::size_t k = 0; k < K; ++k) {
        const VecD b = A.b_field(paths.grid().time(k), paths.state(m, k)); // row j is b^j
        paths.increment(m, k, dBv.data());
        const Eigen::Map<const Eigen::VectorXd> dB(dBv.data(), ix(d));
        const Eigen::VectorXd dM = b * dB;
        const double growth = 1.0 + a.dot(dM);
        S[k + 1] = S[k] + s * dM.transpose();
        s *= growth;
        if (std::abs(growth) < 1e-300) {
            singular = true;
            X[k + 1] = Eigen::MatrixXd::Constant(ix(n), ix(n), std::numeric_limits<double>::quiet_NaN());
        } else {
            X[k + 1] = (I - a * dM.transpose() / growth) * X[k];
        }
    }
}

} // namespace

TerminalFn terminal_of_state(std::function<Eigen::VectorXd(const Eigen::VectorXd&)> g) {
    return [g = std::move(g)](const PathEnsemble& paths, std::size_t m) {
        return g(Eigen::VectorXd(state_vec(paths.state(m, paths.steps()))));
    };
}

void write_solution_csv(std::ostream& os, const SolutionEnsemble& sol) {
    const std::size_t n = sol.Y.width(), w = sol.Z.width(), K = sol.Y.steps();
    os << "t";
    for (std::size_t i = 0; i < n; ++i) os << ",Y" << i + 1;
    for (std::size_t j = 0; j < w; ++j) os << ",Z" << j + 1;
    os << ",residual\n" << std::setprecision(17);
    for (std::size_t k = 0; k <= K; ++k) {
        os << sol.Y.grid().time(k);
        const Eigen::RowVectorXd y = sol.Y.slice(k).colwise().mean();
        const Eigen::RowVectorXd z = sol.Z.slice(k).colwise().mean();
        for (Index i = 0; i < y.size(); ++i) os << ',' << y(i);
        for (Index j = 0; j < z.size(); ++j) os << ',' << z(j);
        os << ',' << (k < sol.residual.size() ? sol.residual[k] : 0.0) << '\n';
    }
}

SolutionEnsemble solve_by_representation(const LinearBsdeSpec& spec, const PathEnsemble& paths,
                                         const ConditionalEstimator& est, const LinearSolverOptions& opts) {
    if (spec.perturbed()) throw ConfigError("the representation solver takes no alpha or dA; use solve_perturbed");
    return representation_impl(spec, paths, est, opts, nullptr);
}

SolutionEnsemble solve_by_regression(const LinearBsdeSpec& spec, const PathEnsemble& paths,
                                     const ConditionalEstimator& est, const LinearSolverOptions&) {
    return regression_impl(spec, paths, est, nullptr, true);
}

SolutionEnsemble solve_right_outer(const LinearBsdeSpec& spec, const PathEnsemble& paths,
                                   const ConditionalEstimator& est, const LinearSolverOptions&) {
    if (spec.perturbed()) throw ConfigError("structural solvers take no alpha or dA; use solve_perturbed");
    return right_outer_impl(spec, paths, est, nullptr);
}

ExponentialEnsemble left_outer_exponential(const CoefficientField& A, const PathEnsemble& paths,
                                           std::vector<std::size_t> record_steps) {
    if (A.structure() != Structure::left_outer || !A.constant_a())
        throw ConfigError("left_outer_exponential needs a left_outer coefficient field");
    BSDELAB_REQUIRE(paths.materialized() && paths.dim() == A.d(), "left outer exponential needs matching paths");
    const std::size_t K = paths.steps(), n = A.n(), d = A.d();
    if (record_steps.empty()) record_steps = even_record_steps(K, std::min<std::size_t>(K, 20));
    ExponentialEnsemble out(paths.grid(), n, d, paths.paths(), record_steps, true, true);
    out.scheme = "left_outer_closed_form";
    out.field_name = A.name();
    out.seed = paths.seed();
    const auto& rec = out.record_steps();
    const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(ix(n), ix(n));
    parallel_chunks(paths.paths(), [&](std::size_t b, std::size_t e) {
        std::vector<Eigen::MatrixXd> S, X;
        for (std::size_t m = b; m < e; ++m) {
            bool singular = false;
            left_outer_path(A, paths, m, S, X, singular);
            if (singular) out.flag(m);
            double worst = 0.0;
            for (std::size_t k = 0; k <= K; ++k) worst = std::max(worst, operator_norm(S[k] * X[k] - I));
            out.inverse_residual(m) = worst;
            for (std::size_t r = 0; r < rec.size(); ++r) {
                const std::size_t k = rec[r];
                out.S(m, r) = S[k];
                out.X(m, r) = X[k];
                out.C(m, r) = X[k] * S[K];
                out.inverse_residual_at(m, r) = operator_norm(S[k] * X[k] - I);
                double sup = 0.0;
                for (std::size_t j = k; j <= K; ++j) sup = std::max(sup, operator_norm(X[k] * S[j]));
                out.sup_continuation(m, r) = sup;
                const PathState st = paths.state(m, k);
                for (std::size_t l = 0; l < d; ++l) {
                    out.state(m, r)[l] = st.x_ptr[l];
                    out.max_abs(m, r)[l] = st.max_abs_ptr[l];
                }
                if (!S[k].allFinite() || !X[k].allFinite()) out.flag(m);
            }
        }
    });
    return out;
}

namespace {

SolutionEnsemble left_outer_impl(const LinearBsdeSpec& spec, const PathEnsemble& paths,
                                 const ConditionalEstimator& est, const Steps* extra) {
    if (spec.A.structure() != Structure::left_outer || !spec.A.constant_a())
        throw ConfigError("solve_left_outer needs a left_outer coefficient field");
    require_paths(paths, est, spec.d());
    const std::size_t K = paths.steps(), M = paths.paths(), n = spec.n(), d = spec.d();
    const Eigen::MatrixXd xi = terminal_matrix(spec, paths);
    const Steps beta = beta_steps(spec, paths);
    Steps inhom = beta;
    add_steps(inhom, extra);

    // V_k = S_k^{-1} (S_K xi + sum_{j>=k} S_j inhom_j dt) with the assembled S and its inverse
    Steps V(K + 1, Eigen::MatrixXd(ix(M), ix(n)));
    std::vector<std::uint8_t> singular(M, 0);
    parallel_chunks(M, [&](std::size_t b, std::size_t e) {
        std::vector<Eigen::MatrixXd> S, X;
        for (std::size_t m = b; m < e; ++m) {
            bool sing = false;
            left_outer_path(spec.A, paths, m, S, X, sing);
            singular[m] = sing;
            Eigen::VectorXd q = S[K] * xi.row(ix(m)).transpose();
            V[K].row(ix(m)) = xi.row(ix(m));
            for (std::size_t kk = K; kk-- > 0;) {
                q += S[kk] * inhom[kk].row(ix(m)).transpose() * paths.grid().dt(kk);
                V[kk].row(ix(m)) = (X[kk] * q).transpose();
            }
        }
    });
    for (auto s : singular)
        if (s) throw NumericalError("left outer-product S is singular on a path");
    SolutionEnsemble sol = empty_solution(paths, n, d, "left-outer");
    solve_from_values(sol, paths, est, V);
    finish(sol, spec, paths, est, xi, beta);
    return sol;
}

SolutionEnsemble triangular_impl(const LinearBsdeSpec& spec, const PathEnsemble& paths,
                                 const ConditionalEstimator& est, const Steps* extra) {
    if (spec.A.structure() != Structure::lower_triangular && spec.A.structure() != Structure::diagonal)
        throw ConfigError("solve_triangular needs a lower_triangular coefficient field");
    require_paths(paths, est, spec.d());
    const std::size_t K = paths.steps(), M = paths.paths(), n = spec.n(), d = spec.d();
    const Eigen::MatrixXd xi = terminal_matrix(spec, paths);
    const Steps beta = beta_steps(spec, paths);
    Steps inhom = beta;
    add_steps(inhom, extra);

    // coefficients per step and path, flattened as A^{ij}_l at (i*n + j)*d + l
    Steps Aflat(K, Eigen::MatrixXd(ix(M), ix(n * n * d)));
    parallel_chunks(M, [&](std::size_t b, std::size_t e) {
        MatD a(n, d);
        for (std::size_t m = b; m < e; ++m)
            for (std::size_t k = 0; k < K; ++k) {
                spec.A.eval(paths.grid().time(k), paths.state(m, k), a);
                for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t j = 0; j < n; ++j)
                        for (std::size_t l = 0; l < d; ++l) Aflat[k](ix(m), ix((i * n + j) * d + l)) = a.component(l)(ix(i), ix(j));
            }
    });

    SolutionEnsemble sol = empty_solution(paths, n, d, "triangular");
    Steps Ycols(K + 1, Eigen::MatrixXd(ix(M), ix(n))), Zcols(K, Eigen::MatrixXd::Zero(ix(M), ix(n * d)));
    sol.Y0_std_error.resize(ix(n));
    for (std::size_t i = 0; i < n; ++i) {
        Steps coef(K), g(K);
        for (std::size_t k = 0; k < K; ++k) {
            coef[k] = Aflat[k].middleCols(ix((i * n + i) * d), ix(d));
            g[k] = inhom[k].col(ix(i));
            for (std::size_t j = 0; j < i; ++j)
                g[k].col(0) += Aflat[k].middleCols(ix((i * n + j) * d), ix(d)).cwiseProduct(Zcols[k].middleCols(ix(j * d), ix(d))).rowwise().sum();
        }
        const ScalarSolution s = scalar_representation(paths, est, coef, xi.col(ix(i)), g);
        for (std::size_t k = 0; k <= K; ++k) Ycols[k].col(ix(i)) = s.U[k].col(0);
        for (std::size_t k = 0; k < K; ++k) Zcols[k].middleCols(ix(i * d), ix(d)) = s.V[k];
        sol.Y0_std_error(ix(i)) = s.U0_std_error;
    }
    for (std::size_t k = 0; k <= K; ++k) sol.Y.set_slice(k, Ycols[k]);
    for (std::size_t k = 0; k < K; ++k) sol.Z.set_slice(k, Zcols[k]);
    sol.Y0 = Ycols[0].colwise().mean().transpose();
    finish(sol, spec, paths, est, xi, beta);
    return sol;
}

bool has_structural_solver(Structure s) {
    return s == Structure::lower_triangular || s == Structure::diagonal || s == Structure::right_outer ||
           s == Structure::left_outer;
}

SolutionEnsemble structural_impl(const LinearBsdeSpec& spec, const PathEnsemble& paths,
                                 const ConditionalEstimator& est, const Steps* extra) {
    switch (spec.A.structure()) {
    case Structure::lower_triangular:
    case Structure::diagonal: return triangular_impl(spec, paths, est, extra);
    case Structure::right_outer: return right_outer_impl(spec, paths, est, extra);
    case Structure::left_outer: return left_outer_impl(spec, paths, est, extra);
    default: throw ConfigError("no structural solver for structure " + to_string(spec.A.structure()));
    }
}

SolutionEnsemble base_solve(const LinearBsdeSpec& spec, const PathEnsemble& paths, const ConditionalEstimator& est,
                            LinearMethod method, const LinearSolverOptions& opts, const Steps* extra) {
    switch (method) {
    case LinearMethod::representation: return representation_impl(spec, paths, est, opts, extra);
    case LinearMethod::regression: return regression_impl(spec, paths, est, extra, false);
    case LinearMethod::structural: return structural_impl(spec, paths, est, extra);
    case LinearMethod::automatic:
        if (has_structural_solver(spec.A.structure())) return structural_impl(spec, paths, est, extra);
        try {
            return representation_impl(spec, paths, est, opts, extra);
        } catch (const NumericalError&) {
            SolutionEnsemble sol = regression_impl(spec, paths, est, extra, false);
            sol.warnings.push_back("representation refused; fell back to regression");
            return sol;
        }
    }
    throw ConfigError("unknown linear method");
}

} // namespace

LeftOuterSolution solve_left_outer(const LinearBsdeSpec& spec, const PathEnsemble& paths,
                                   const ConditionalEstimator& est, const LinearSolverOptions&,
                                   std::vector<std::size_t> record_steps) {
    if (spec.perturbed()) throw ConfigError("structural solvers take no alpha or dA; use solve_perturbed");
    LeftOuterSolution out{left_outer_impl(spec, paths, est, nullptr), left_outer_exponential(spec.A, paths, std::move(record_steps))};
    return out;
}

SolutionEnsemble solve_triangular(const LinearBsdeSpec& spec, const PathEnsemble& paths,
                                  const ConditionalEstimator& est, const LinearSolverOptions&) {
    if (spec.perturbed()) throw ConfigError("structural solvers take no alpha or dA; use solve_perturbed");
    return triangular_impl(spec, paths, est, nullptr);
}

std::string to_string(LinearMethod m) {
    switch (m) {
    case LinearMethod::automatic: return "auto";
    case LinearMethod::representation: return "representation";
    case LinearMethod::regression: return "regression";
    case LinearMethod::structural: return "structural";
    }
    return "auto";
}

LinearMethod parse_linear_method(const std::string& s) {
    for (LinearMethod m : {LinearMethod::automatic, LinearMethod::representation, LinearMethod::regression,
                           LinearMethod::structural})
        if (s == to_string(m)) return m;
    throw ConfigError("unknown linear method '" + s + "' (expected auto, representation, regression or structural)");
}

SolutionEnsemble solve_perturbed(const LinearBsdeSpec& spec, const PathEnsemble& paths,
                                 const ConditionalEstimator& est, LinearMethod base, const LinearSolverOptions& opts) {
    const std::size_t K = paths.steps(), M = paths.paths(), n = spec.n(), d = spec.d();
    if (!spec.perturbed()) {
        SolutionEnsemble sol = base_solve(spec, paths, est, base, opts, nullptr);
        sol.iteration_history.push_back(0.0);
        sol.diagnostics["picard_iterations"] = 1;
        return sol;
    }
    Steps extra(K, Eigen::MatrixXd::Zero(ix(M), ix(n)));
    SolutionEnsemble sol = base_solve(spec, paths, est, base, opts, &extra);
    std::vector<double> history;
    for (std::size_t it = 1; it <= opts.picard_max_iters; ++it) {
        parallel_chunks(M, [&](std::size_t b, std::size_t e) {
            MatD da(n, d);
            for (std::size_t m = b; m < e; ++m)
                for (std::size_t k = 0; k < K; ++k) {
                    const double t = paths.grid().time(k);
                    const PathState st = paths.state(m, k);
                    Eigen::VectorXd v = Eigen::VectorXd::Zero(ix(n));
                    if (spec.alpha) v += spec.alpha(t, st) * Eigen::Map<const Eigen::VectorXd>(sol.Y.at(m, k), ix(n));
                    if (spec.dA) {
                        spec.dA->eval(t, st, da);
                        v += contract(da, sol.Z.at(m, k), n, d);
                    }
                    extra[k].row(ix(m)) = v.transpose();
                }
        });
        SolutionEnsemble next = base_solve(spec, paths, est, base, opts, &extra);
        double diff = 0.0, scale = 0.0;
        for (std::size_t k = 0; k <= K; ++k) {
            diff += (next.Y.slice(k) - sol.Y.slice(k)).squaredNorm();
            scale += next.Y.slice(k).squaredNorm();
        }
        const double rel = std::sqrt(diff / std::max(scale, 1e-300));
        history.push_back(rel);
        sol = std::move(next);
        if (!std::isfinite(rel) || rel > 1e8) break;
        if (rel < opts.picard_tolerance) {
            sol.iteration_history = history;
            sol.diagnostics["picard_iterations"] = static_cast<double>(it + 1);
            sol.solver = "perturbed(" + sol.solver + ")";
            // the base solver measured its residual against A alone
            const Eigen::MatrixXd xi = terminal_matrix(spec, paths);
            finish(sol, spec, paths, est, xi, beta_steps(spec, paths));
            return sol;
        }
    }
    throw NumericalError("perturbation too large (not sliceable at this scale)");
}

SolutionEnsemble solve_linear(const LinearBsdeSpec& spec, const PathEnsemble& paths, const ConditionalEstimator& est,
                              LinearMethod method, const LinearSolverOptions& opts) {
    if (spec.perturbed()) {
        // regression handles the coupled equation directly
        if (method == LinearMethod::regression) return solve_by_regression(spec, paths, est, opts);
        return solve_perturbed(spec, paths, est, method, opts);
    }
    return base_solve(spec, paths, est, method, opts, nullptr);
}

SampledProcess sample_inhomogeneity(const LinearBsdeSpec& spec, const PathEnsemble& paths) {
    SampledProcess out(paths.grid(), paths.paths(), spec.n());
    const Steps beta = beta_steps(spec, paths);
    for (std::size_t k = 0; k < beta.size(); ++k) out.set_slice(k, beta[k]);
    return out;
}

OperatorNormEstimate estimate_solution_operator_norm(const LinearSolver& solver, double q,
                                                     const std::vector<LinearBsdeSpec>& family,
                                                     const PathEnsemble& paths) {
    BSDELAB_REQUIRE(!family.empty(), "operator norm estimate needs a non-empty test family");
    BSDELAB_REQUIRE(q >= 1.0, "operator norm exponent must be at least 1");
    OperatorNormEstimate out;
    out.estimate = -1.0;
    for (std::size_t f = 0; f < family.size(); ++f) {
        const SolutionEnsemble sol = solver(family[f]);
        const NormEstimate ny = estimate_norm(NormKind::sup_p, sol.Y, nullptr, q);
        const NormEstimate nz = estimate_norm(NormKind::l2q, sol.Z, nullptr, q);
        const Eigen::MatrixXd xi = sol.Y.slice(sol.Y.steps());
        const Eigen::VectorXd r = xi.rowwise().norm();
        const double nxi = std::isinf(q) ? r.maxCoeff() : std::pow(r.array().pow(q).mean(), 1.0 / q);
        double nbeta = 0.0;
        if (family[f].beta) nbeta = estimate_norm(NormKind::l1q, sample_inhomogeneity(family[f], paths), nullptr, q).value;
        const double den = nxi + nbeta;
        BSDELAB_REQUIRE(den > 0.0, "test family member has zero data");
        const double ratio = (ny.value + nz.value) / den;
        out.ratios.push_back(ratio);
        if (ratio > out.estimate) {
            out.estimate = ratio;
            out.std_error = (ny.std_error + nz.std_error) / den;
            out.argmax = f;
        }
    }
    return out;
}

std::vector<std::string> shipped_linear_names() {
    return {"scalar-girsanov", "triangular-3", "right-outer-3", "left-outer-3", "generic-2", "emery"};
}

LinearBsdeSpec shipped_linear(const std::string& name) {
    auto bounded3 = [](const Eigen::VectorXd& b) {
        Eigen::VectorXd v(3);
        v << std::sin(b(0)), std::cos(b(0)), std::tanh(b(0));
        return v;
    };
    AdaptedVecFn beta3 = [](double, const PathState& x) {
        Eigen::VectorXd v(3);
        v << 0.1, 0.1 * std::sin(x.x_ptr[0]), -0.05;
        return v;
    };
    if (name == "scalar-girsanov") {
        LinearBsdeSpec s(CoefficientField::scalar("scalar-half", 0.5));
        s.name = name;
        s.xi = terminal_of_state([](const Eigen::VectorXd& b) { return Eigen::VectorXd::Constant(1, b(0)); });
        return s;
    }
    if (name == "triangular-3" || name == "right-outer-3" || name == "left-outer-3") {
        LinearBsdeSpec s(shipped_field(name));
        s.name = name;
        s.xi = terminal_of_state(bounded3);
        s.beta = beta3;
        return s;
    }
    if (name == "generic-2" || name == "emery") {
        LinearBsdeSpec s(shipped_field(name));
        s.name = name;
        s.xi = terminal_of_state([](const Eigen::VectorXd& b) {
            Eigen::VectorXd v(2);
            v << std::cos(b(0)), std::sin(b(0));
            return v;
        });
        return s;
    }
    std::string known;
    for (const auto& n : shipped_linear_names()) known += (known.empty() ? "" : ", ") + n;
    throw ConfigError("unknown linear instance '" + name + "' (known: " + known + ")");
}

} // namespace bsdelab
