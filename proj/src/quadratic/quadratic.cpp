#include "bsdelab/quadratic/quadratic.hpp"

#include "bsdelab/core/error.hpp"
#include "bsdelab/core/parallel.hpp"
#include "bsdelab/core/rng.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace bsdelab {

namespace {

using Index = Eigen::Index;
Index ix(std::size_t i) { return static_cast<Index>(i); }

// Thrown when the per-step Picard iteration fails; solve_quadratic reacts by halving dt.
class StepDivergence : public NumericalError {
public:
    using NumericalError::NumericalError;
};

Eigen::MatrixXd z_of_row(const double* row, std::size_t n, std::size_t d) {
    Eigen::MatrixXd z(ix(n), ix(d));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t l = 0; l < d; ++l) z(ix(i), ix(l)) = row[i * d + l];
    return z;
}

Eigen::MatrixXd random_matrix(CounterStream& rs, std::size_t r, std::size_t c) {
    Eigen::MatrixXd m(ix(r), ix(c));
    for (Index i = 0; i < m.size(); ++i) m.data()[i] = rs.normal();
    return m;
}

// Uniform radius in [0, radius] along a random direction.
Eigen::MatrixXd random_in_ball(CounterStream& rs, std::size_t r, std::size_t c, double radius) {
    Eigen::MatrixXd m = random_matrix(rs, r, c);
    const double nm = m.norm();
    if (nm == 0.0) return m;
    return m * (radius * rs.uniform() / nm);
}

struct SampledState {
    std::vector<double> x, mx;
    PathState view(double t) const { return {t, 0, x.size(), x.data(), mx.data()}; }
};

SampledState random_state(CounterStream& rs, std::size_t d, double t) {
    SampledState s;
    for (std::size_t l = 0; l < d; ++l) {
        s.x.push_back(std::sqrt(t) * rs.normal());
        s.mx.push_back(std::abs(s.x.back()));
    }
    return s;
}

} // namespace

std::string to_string(DriverClass c) {
    switch (c) {
    case DriverClass::lipschitz: return "lipschitz";
    case DriverClass::quadratic_linear: return "quadratic-linear";
    case DriverClass::unidirectional: return "unidirectional";
    }
    return "lipschitz";
}

std::string to_string(PicardInit init) { return init == PicardInit::zero ? "zero" : "conditional-terminal"; }

double truncation_radius(double r, double k) {
    if (r <= k) return r;
    if (r >= 2.0 * k) return 1.5 * k;
    // slope 1 - (3u^2 - 2u^3) falls smoothly from 1 to 0 on u in [0, 1]
    const double u = (r - k) / k;
    return k + k * (u - u * u * u + 0.5 * u * u * u * u);
}

Eigen::MatrixXd truncation_map(const Eigen::MatrixXd& z, double k) {
    const double r = z.norm();
    if (r <= k) return z;
    return z * (truncation_radius(r, k) / r);
}

bool TruncationCheck::ok() const {
    return identity_violation <= 1e-12 && radial_violation <= 1e-12 && lipschitz_ratio <= 1.0 + 1e-9 &&
           growth_violation <= 1e-12 && curvature_jump <= 1e-3;
}

TruncationCheck check_truncation_map(double k, std::size_t n, std::size_t d, std::size_t samples,
                                     std::uint64_t seed) {
    BSDELAB_REQUIRE(k > 0.0, "truncation level must be positive");
    TruncationCheck c;
    CounterStream rs(seed);
    for (std::size_t s = 0; s < samples; ++s) {
        const Eigen::MatrixXd z = random_in_ball(rs, n, d, 3.0 * k);
        const Eigen::MatrixXd w = random_in_ball(rs, n, d, 3.0 * k);
        const Eigen::MatrixXd pz = truncation_map(z, k), pw = truncation_map(w, k);
        if (z.norm() <= k) c.identity_violation = std::max(c.identity_violation, (pz - z).norm());
        if (z.norm() > 0.0 && pz.norm() > 0.0)
            c.radial_violation = std::max(c.radial_violation, (pz / pz.norm() - z / z.norm()).norm());
        if ((z - w).norm() > 1e-12) c.lipschitz_ratio = std::max(c.lipschitz_ratio, (pz - pw).norm() / (z - w).norm());
        c.growth_violation = std::max(c.growth_violation, pz.norm() - z.norm());
    }
    // second differences of the radius on both sides of the junctions
    // one-sided limits by linear extrapolation from 2h and 4h
    const double h = 1e-4 * k;
    auto second = [&](double r) {
        return (truncation_radius(r + h, k) - 2.0 * truncation_radius(r, k) + truncation_radius(r - h, k)) / (h * h);
    };
    for (double r0 : {k, 2.0 * k}) {
        const double right = 2.0 * second(r0 + 2 * h) - second(r0 + 4 * h);
        const double left = 2.0 * second(r0 - 2 * h) - second(r0 - 4 * h);
        c.curvature_jump = std::max(c.curvature_jump, k * std::abs(right - left));
    }
    return c;
}

Eigen::VectorXd evaluate_driver(const QuadraticDriver& f, double t, const PathState& x, const Eigen::VectorXd& y,
                                const Eigen::MatrixXd& z) {
    BSDELAB_REQUIRE(static_cast<std::size_t>(y.size()) == f.n && static_cast<std::size_t>(z.rows()) == f.n &&
                        static_cast<std::size_t>(z.cols()) == f.d,
                    "driver argument shapes do not match (n, d)");
    const Eigen::MatrixXd zz = f.truncation ? truncation_map(z, *f.truncation) : z;
    Eigen::VectorXd out = f.g ? f.g(t, x, y, zz) : Eigen::VectorXd::Zero(ix(f.n));
    switch (f.kind) {
    case DriverClass::quadratic_linear: out += zz * (zz.transpose() * f.b); break;
    case DriverClass::unidirectional: out += f.a * f.h(zz); break;
    case DriverClass::lipschitz: break;
    }
    return out;
}

QuadraticDriver truncate_driver(const QuadraticDriver& f, double k) {
    BSDELAB_REQUIRE(k > 0.0, "truncation level must be positive");
    QuadraticDriver out = f;
    out.truncation = k;
    return out;
}

double estimate_lipschitz(const QuadraticDriver& f, std::size_t samples, std::uint64_t seed) {
    if (!f.g) return 0.0;
    CounterStream rs(seed);
    double worst = 0.0;
    for (std::size_t s = 0; s < samples; ++s) {
        const double t = rs.uniform();
        const SampledState st = random_state(rs, f.d, t);
        const Eigen::VectorXd y1 = 2.0 * random_matrix(rs, f.n, 1), y2 = 2.0 * random_matrix(rs, f.n, 1);
        const Eigen::MatrixXd z1 = 2.0 * random_matrix(rs, f.n, f.d), z2 = 2.0 * random_matrix(rs, f.n, f.d);
        const double num = (f.g(t, st.view(t), y1, z1) - f.g(t, st.view(t), y2, z2)).norm();
        worst = std::max(worst, num / ((y1 - y2).norm() + (z1 - z2).norm()));
    }
    return worst;
}

namespace {

struct OnceStats {
    std::size_t damped = 0;
    std::size_t max_iters = 0;
};

SolutionEnsemble solve_truncated(const QuadraticSpec& spec, const QuadraticDriver& f, const PathEnsemble& paths,
                                 const ConditionalEstimator& est, const QuadraticConfig& cfg, OnceStats& stats) {
    const std::size_t K = paths.steps(), M = paths.paths(), n = f.n, d = f.d;
    SolutionEnsemble sol;
    sol.Y = SampledProcess(paths.grid(), M, n);
    sol.Z = SampledProcess(paths.grid(), M, n * d);
    sol.solver = "quadratic-backward-euler";

    Eigen::MatrixXd xi(ix(M), ix(n));
    for (std::size_t m = 0; m < M; ++m) xi.row(ix(m)) = spec.xi(paths, m).transpose();
    sol.Y.set_slice(K, xi);
    Eigen::MatrixXd Ynext = xi, P = xi; // P: xi + sum f dt, for the Y_0 standard error
    std::vector<double> dBbuf(d);
    sol.residual.assign(K, 0.0);
    for (std::size_t kk = K; kk-- > 0;) {
        const double t = paths.grid().time(kk), dt = paths.grid().dt(kk);
        Eigen::MatrixXd dB(ix(M), ix(d));
        for (std::size_t m = 0; m < M; ++m) {
            paths.increment(m, kk, dBbuf.data());
            for (std::size_t l = 0; l < d; ++l) dB(ix(m), ix(l)) = dBbuf[l];
        }
        // Z from the centred target (Y_{k+1} - E_k[Y_{k+1}]) dB: same conditional mean, far less noise
        const Eigen::MatrixXd proj = est.project(kk, Ynext);
        const Eigen::MatrixXd centred = Ynext - proj;
        Eigen::MatrixXd target(ix(M), ix(n * d));
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t l = 0; l < d; ++l) target.col(ix(i * d + l)) = centred.col(ix(i)).cwiseProduct(dB.col(ix(l)));
        const Eigen::MatrixXd Z = est.project(kk, target) / dt;
        const Eigen::MatrixXd init =
            cfg.init == PicardInit::zero ? Eigen::MatrixXd::Zero(ix(M), ix(n)) : est.project(kk, xi);

        Eigen::MatrixXd Y(ix(M), ix(n));
        std::vector<std::size_t> iters(M, 0);
        std::vector<std::uint8_t> damped(M, 0), failed(M, 0);
        std::vector<double> res2(M, 0.0);
        parallel_chunks(M, [&](std::size_t b, std::size_t e) {
            for (std::size_t m = b; m < e; ++m) {
                const PathState st = paths.state(m, kk);
                const Eigen::MatrixXd z = z_of_row(Z.row(ix(m)).eval().data(), n, d);
                const Eigen::VectorXd E = proj.row(ix(m)).head(ix(n)).transpose();
                Eigen::VectorXd y = init.row(ix(m)).transpose();
                double prev = std::numeric_limits<double>::infinity();
                bool damp = false, ok = false;
                std::size_t it = 0;
                for (; it < cfg.step_max_iters; ++it) {
                    Eigen::VectorXd next = E + evaluate_driver(f, t, st, y, z) * dt;
                    if (damp) next = 0.5 * next + 0.5 * y;
                    const double delta = (next - y).norm();
                    if (!std::isfinite(delta)) break;
                    if (delta > prev && !damp) damp = true; // oscillation or growth
                    y = next;
                    if (delta <= cfg.step_tolerance * (1.0 + y.norm())) {
                        ok = true;
                        break;
                    }
                    prev = delta;
                }
                iters[m] = it + 1;
                damped[m] = damp;
                failed[m] = !ok;
                Y.row(ix(m)) = y.transpose();
                const Eigen::VectorXd fy = evaluate_driver(f, t, st, y, z);
                res2[m] = (y - E - fy * dt).squaredNorm();
                P.row(ix(m)) += (fy * dt).transpose();
            }
        });
        for (std::size_t m = 0; m < M; ++m) {
            if (failed[m]) throw StepDivergence("Picard iteration diverged at step " + std::to_string(kk));
            stats.damped += damped[m];
            stats.max_iters = std::max(stats.max_iters, iters[m]);
        }
        double s = 0.0;
        for (double v : res2) s += v;
        sol.residual[kk] = std::sqrt(s / static_cast<double>(M));
        sol.max_residual = std::max(sol.max_residual, sol.residual[kk]);
        sol.Y.set_slice(kk, Y);
        sol.Z.set_slice(kk, Z);
        Ynext = Y;
    }
    sol.Y0 = sol.Y.slice(0).colwise().mean().transpose();
    const double N = static_cast<double>(M);
    const Eigen::RowVectorXd mean = P.colwise().mean();
    sol.Y0_std_error = ((P.rowwise() - mean).colwise().squaredNorm() / std::max(1.0, N - 1.0) / N).cwiseSqrt().transpose();
    return sol;
}

struct TrimmedSup {
    double trimmed = 0.0, raw = 0.0;
    std::size_t above = 0; // (path, step) pairs with norm > level
};

// sup of |X| over steps and paths, excluding at each step the paths whose state lies in the
// outer trim fraction (where the regression extrapolates).
TrimmedSup trimmed_sup(const SampledProcess& X, const PathEnsemble& paths, std::size_t last_step, double trim,
                       double level) {
    TrimmedSup out;
    const std::size_t M = paths.paths();
    std::vector<double> radius(M);
    for (std::size_t kk = 0; kk <= last_step; ++kk) {
        for (std::size_t m = 0; m < M; ++m) {
            const PathState st = paths.state(m, kk);
            double r = 0.0;
            for (std::size_t l = 0; l < st.dim; ++l) r += st.x_ptr[l] * st.x_ptr[l];
            radius[m] = r;
        }
        std::vector<double> sorted = radius;
        const auto cut = static_cast<std::size_t>(std::floor((1.0 - trim) * static_cast<double>(M - 1)));
        std::nth_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(cut), sorted.end());
        const double threshold = sorted[cut];
        for (std::size_t m = 0; m < M; ++m) {
            const double v = X.norm(m, kk);
            out.raw = std::max(out.raw, v);
            if (radius[m] <= threshold) out.trimmed = std::max(out.trimmed, v);
            if (v > level) ++out.above;
        }
    }
    return out;
}

EscalationEntry z_sup(const SolutionEnsemble& sol, const PathEnsemble& paths, double k, double trim) {
    const TrimmedSup s = trimmed_sup(sol.Z, paths, paths.steps() - 1, trim, k);
    EscalationEntry e;
    e.k = k;
    e.z_sup = s.trimmed;
    e.z_sup_raw = s.raw;
    e.active_fraction = static_cast<double>(s.above) / static_cast<double>(paths.paths() * paths.steps());
    return e;
}

} // namespace

QuadraticSolution solve_quadratic_on(const QuadraticSpec& spec, std::shared_ptr<const PathEnsemble> paths,
                                     const ConditionalEstimator& est, const QuadraticConfig& cfg) {
    BSDELAB_REQUIRE(paths != nullptr && paths->materialized(), "quadratic solver needs a materialized path ensemble");
    BSDELAB_REQUIRE(paths->dim() == spec.driver.d, "path dimension does not match the driver");
    BSDELAB_REQUIRE(static_cast<bool>(spec.xi), "quadratic BSDE needs a terminal value");
    BSDELAB_REQUIRE(!cfg.k_schedule.empty(), "empty truncation schedule");
    if (spec.driver.kind == DriverClass::quadratic_linear)
        BSDELAB_REQUIRE(static_cast<std::size_t>(spec.driver.b.size()) == spec.driver.n, "b must lie in R^n");
    if (spec.driver.kind == DriverClass::unidirectional) {
        BSDELAB_REQUIRE(static_cast<std::size_t>(spec.driver.a.size()) == spec.driver.n && spec.driver.h,
                        "unidirectional driver needs a in R^n and h");
        BSDELAB_REQUIRE(spec.ab.has_value(), "unidirectional driver needs an (AB) condition");
    }
    QuadraticSolution out;
    out.paths = paths;
    std::vector<std::string> warnings;
    if (spec.driver.g) {
        const double lip = estimate_lipschitz(spec.driver, 500);
        if (lip > spec.driver.L * (1.0 + 1e-9))
            warnings.push_back("sampled Lipschitz constant of g (" + std::to_string(lip) + ") exceeds declared L (" +
                               std::to_string(spec.driver.L) + ")");
    }
    for (double k : cfg.k_schedule) {
        OnceStats stats;
        SolutionEnsemble sol = solve_truncated(spec, truncate_driver(spec.driver, k), *paths, est, cfg, stats);
        EscalationEntry e = z_sup(sol, *paths, k, cfg.sup_trim);
        e.accepted = e.z_sup * (1.0 + cfg.inactive_margin) <= k;
        out.escalation.push_back(e);
        out.damped_steps += stats.damped;
        out.max_step_iterations = std::max(out.max_step_iterations, stats.max_iters);
        if (e.accepted) {
            out.k_accepted = k;
            sol.diagnostics["k"] = k;
            sol.diagnostics["z_sup"] = e.z_sup;
            sol.diagnostics["z_sup_raw"] = e.z_sup_raw;
            sol.diagnostics["truncation_active_fraction"] = e.active_fraction;
            if (spec.ab) {
                // (AB) re-checked on the truncated driver, with z reaching into the clamped region
                SampleConfig sc;
                sc.samples = 500;
                sc.z_radius = 3.0 * k;
                sc.T = spec.T;
                const AbReport ab = check_ab_condition(*spec.ab, truncate_driver(spec.driver, k), sc);
                sol.diagnostics["ab_spanning"] = ab.spanning.spanning ? 1.0 : 0.0;
                sol.diagnostics["ab_worst_margin"] = ab.worst_margin;
                if (!ab.spanning.spanning || ab.worst_margin < 0.0)
                    warnings.push_back("(AB) condition fails on samples of the truncated driver");
            }
            sol.warnings.insert(sol.warnings.end(), warnings.begin(), warnings.end());
            out.solution = std::move(sol);
            out.Y_sup_trimmed = trimmed_sup(out.solution.Y, *paths, paths->steps(), cfg.sup_trim, 0.0).trimmed;
            out.Y_sup = estimate_norm(NormKind::sup_p, out.solution.Y, nullptr, std::numeric_limits<double>::infinity());
            out.Z_bmo = estimate_norm(NormKind::bmo, out.solution.Z, &est);
            return out;
        }
    }
    throw NumericalError("no self-consistent truncation level found");
}

QuadraticSolution solve_quadratic(const QuadraticSpec& spec, std::size_t K, std::size_t paths, std::uint64_t seed,
                                  const QuadraticConfig& cfg) {
    BSDELAB_REQUIRE(K >= 1 && paths >= 2, "quadratic solver needs steps and paths");
    for (std::size_t h = 0; h <= cfg.max_halvings; ++h) {
        const TimeGrid grid = TimeGrid::uniform(spec.T, K << h);
        auto ens = std::make_shared<const PathEnsemble>(PathEnsemble::brownian(grid, spec.driver.d, paths, seed));
        const RegressionEstimator est = RegressionEstimator::from_ensemble(*ens, cfg.regression);
        try {
            QuadraticSolution s = solve_quadratic_on(spec, ens, est, cfg);
            s.halvings = h;
            return s;
        } catch (const StepDivergence&) {
            continue;
        }
    }
    throw NumericalError("Picard iteration diverged at a step after " + std::to_string(cfg.max_halvings) +
                         " step halvings");
}

std::vector<double> cole_hopf_residual(const QuadraticSolution& sol, double b, const ConditionalEstimator& est) {
    const SampledProcess& Y = sol.solution.Y;
    BSDELAB_REQUIRE(Y.width() == 1, "the Cole-Hopf check is scalar");
    std::vector<double> out;
    for (std::size_t k = 0; k < Y.steps(); ++k) {
        const Eigen::MatrixXd e1 = (2.0 * b * Y.slice(k + 1).array()).exp().matrix();
        const Eigen::MatrixXd e0 = (2.0 * b * Y.slice(k).array()).exp().matrix();
        // projected increment: basis-independent up to what the estimator can resolve
        const Eigen::MatrixXd diff = est.project(k, e1 - e0);
        out.push_back(std::sqrt(diff.squaredNorm() / static_cast<double>(diff.rows())) / e0.mean());
    }
    return out;
}

namespace {

// Phase I simplex with Bland's rule: is {x >= 0 : A x = b} non-empty? x receives a point.
bool simplex_feasible(Eigen::MatrixXd A, Eigen::VectorXd b, Eigen::VectorXd& x) {
    const Index r = A.rows(), c = A.cols();
    for (Index i = 0; i < r; ++i)
        if (b(i) < 0) {
            A.row(i) *= -1.0;
            b(i) *= -1.0;
        }
    Eigen::MatrixXd T = Eigen::MatrixXd::Zero(r + 1, c + r + 1);
    T.topLeftCorner(r, c) = A;
    T.block(0, c, r, r).setIdentity();
    T.col(c + r).head(r) = b;
    for (Index j = 0; j < c; ++j) T(r, j) = -A.col(j).sum();
    T(r, c + r) = -b.sum();
    std::vector<Index> basis(static_cast<std::size_t>(r));
    for (Index i = 0; i < r; ++i) basis[static_cast<std::size_t>(i)] = c + i;
    const double eps = 1e-12;
    for (int iter = 0; iter < 10000; ++iter) {
        Index enter = -1;
        for (Index j = 0; j < c + r; ++j)
            if (T(r, j) < -eps) {
                enter = j;
                break;
            }
        if (enter < 0) break;
        Index leave = -1;
        double best = std::numeric_limits<double>::infinity();
        for (Index i = 0; i < r; ++i)
            if (T(i, enter) > eps) {
                const double ratio = T(i, c + r) / T(i, enter);
                if (ratio < best - 1e-15 || (std::abs(ratio - best) <= 1e-15 && basis[static_cast<std::size_t>(i)] < basis[static_cast<std::size_t>(leave)])) {
                    best = ratio;
                    leave = i;
                }
            }
        if (leave < 0) break; // unbounded cannot happen in phase I
        T.row(leave) /= T(leave, enter);
        for (Index i = 0; i <= r; ++i)
            if (i != leave && T(i, enter) != 0.0) T.row(i) -= T(i, enter) * T.row(leave);
        basis[static_cast<std::size_t>(leave)] = enter;
    }
    x = Eigen::VectorXd::Zero(c);
    for (Index i = 0; i < r; ++i)
        if (basis[static_cast<std::size_t>(i)] < c) x(basis[static_cast<std::size_t>(i)]) = T(i, c + r);
    return -T(r, c + r) <= 1e-9 * (1.0 + b.lpNorm<1>());
}

} // namespace

SpanningCertificate positive_spanning(const std::vector<Eigen::VectorXd>& a) {
    BSDELAB_REQUIRE(!a.empty(), "need at least one vector");
    const Index n = a[0].size();
    Eigen::MatrixXd A(n, ix(a.size()));
    for (std::size_t m = 0; m < a.size(); ++m) {
        BSDELAB_REQUIRE(a[m].size() == n, "vectors must share a dimension");
        A.col(ix(m)) = a[m];
    }
    SpanningCertificate cert;
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(A);
    qr.setThreshold(1e-10);
    cert.rank = static_cast<std::size_t>(qr.rank());
    if (qr.rank() < n) {
        cert.reason = "vectors do not span R^n linearly";
        return cert;
    }
    // lambda = 1 + mu with mu >= 0 and A mu = -A 1
    Eigen::VectorXd mu;
    const Eigen::VectorXd ones = Eigen::VectorXd::Ones(A.cols());
    if (!simplex_feasible(A, -A * ones, mu)) {
        cert.reason = "no strictly positive combination vanishes (LP infeasible)";
        return cert;
    }
    cert.weights = ones + mu;
    cert.spanning = (A * cert.weights).norm() <= 1e-8 * (1.0 + cert.weights.norm());
    if (!cert.spanning) cert.reason = "LP certificate failed verification";
    return cert;
}

AbReport check_ab_condition(const AbCondition& cond, const QuadraticDriver& f, const SampleConfig& cfg) {
    BSDELAB_REQUIRE(static_cast<bool>(cond.rho), "condition (AB) needs rho");
    AbReport rep;
    rep.spanning = positive_spanning(cond.a);
    rep.worst_margin = std::numeric_limits<double>::infinity();
    CounterStream rs(cfg.seed);
    for (std::size_t s = 0; s < cfg.samples; ++s) {
        const double t = cfg.T * rs.uniform();
        const SampledState st = random_state(rs, f.d, t);
        const Eigen::VectorXd y = random_in_ball(rs, f.n, 1, cfg.y_radius);
        const Eigen::MatrixXd z = random_in_ball(rs, f.n, f.d, cfg.z_radius);
        const Eigen::VectorXd fv = evaluate_driver(f, t, st.view(t), y, z);
        const double rho = cond.rho(t, st.view(t));
        for (std::size_t m = 0; m < cond.a.size(); ++m) {
            const double margin = rho + 0.5 * (z.transpose() * cond.a[m]).squaredNorm() - cond.a[m].dot(fv);
            rep.worst_margin = std::min(rep.worst_margin, margin);
            if (margin < 0.0 && rep.violations.size() < 20) rep.violations.push_back({m, t, margin, y, z});
        }
        ++rep.samples;
    }
    return rep;
}

LyapunovPair squared_norm_pair(double k, double c) {
    LyapunovPair p;
    p.name = "squared-norm";
    p.h = [](const Eigen::VectorXd& y) { return y.squaredNorm(); };
    p.grad = [](const Eigen::VectorXd& y) { return Eigen::VectorXd(2.0 * y); };
    p.hess = [](const Eigen::VectorXd& y) { return Eigen::MatrixXd(2.0 * Eigen::MatrixXd::Identity(y.size(), y.size())); };
    p.k = k;
    p.c = c;
    return p;
}

LyapunovReport check_lyapunov(const LyapunovPair& pair, const QuadraticDriver& f, const SampleConfig& cfg,
                              const QuadraticSolution* solved, const ConditionalEstimator* est) {
    BSDELAB_REQUIRE(pair.h && pair.grad && pair.hess, "Lyapunov pair needs value, gradient and Hessian");
    LyapunovReport rep;
    const Index n = ix(f.n);
    const Eigen::VectorXd zero = Eigen::VectorXd::Zero(n);
    // h(0) = 0, Dh(0) = 0, checked on the callbacks and by one-sided differences (catches kinks such as |y|)
    const double eps = 1e-6;
    double slope = 0.0;
    for (Index i = 0; i < n; ++i)
        for (double sgn : {1.0, -1.0}) {
            Eigen::VectorXd e = zero;
            e(i) = sgn * eps;
            slope = std::max(slope, std::abs(pair.h(e) - pair.h(zero)) / eps);
        }
    if (std::abs(pair.h(zero)) > 1e-12) rep.reason = "h(0) != 0";
    else if (pair.grad(zero).norm() > 1e-9 || slope > 1e-3) rep.reason = "Dh(0) != 0 or h not differentiable at 0";
    else if (pair.k < 0.0) rep.reason = "k must be nonnegative";
    rep.valid_pair = rep.reason.empty();

    CounterStream rs(cfg.seed);
    rep.worst_margin = std::numeric_limits<double>::infinity();
    double sup_h = 0.0;
    for (Index i = 0; i < n; ++i)
        for (double sgn : {1.0, -1.0}) {
            Eigen::VectorXd e = zero;
            e(i) = sgn * pair.c;
            sup_h = std::max(sup_h, pair.h(e));
        }
    for (std::size_t s = 0; s < cfg.samples; ++s) {
        const double t = cfg.T * rs.uniform();
        const SampledState st = random_state(rs, f.d, t);
        const Eigen::VectorXd y = random_in_ball(rs, f.n, 1, pair.c);
        const Eigen::MatrixXd z = random_in_ball(rs, f.n, f.d, cfg.z_radius);
        const double hy = pair.h(y);
        if (hy < -1e-12 && rep.valid_pair) {
            rep.valid_pair = false;
            rep.reason = "h takes negative values";
        }
        sup_h = std::max(sup_h, hy);
        const Eigen::MatrixXd H = pair.hess(y);
        const double quad = 0.5 * H.cwiseProduct(z * z.transpose()).sum();
        const double zz = z.squaredNorm();
        double margin = quad - pair.grad(y).dot(evaluate_driver(f, t, st.view(t), y, z)) - zz + pair.k;
        if (std::abs(margin) <= 1e-12 * (1.0 + zz)) margin = 0.0; // rounding of equal quadratic forms
        rep.worst_margin = std::min(rep.worst_margin, margin);
        ++rep.samples;
    }
    rep.lemma_bound = pair.k * cfg.T + 2.0 * sup_h;
    if (solved != nullptr) {
        BSDELAB_REQUIRE(est != nullptr, "the bmo estimate needs a conditional estimator");
        const NormEstimate bmo = estimate_norm(NormKind::bmo, solved->solution.Z, est);
        rep.bmo_squared = bmo.value * bmo.value;
        rep.bmo_squared_se = 2.0 * bmo.value * bmo.std_error;
        rep.lemma_holds = *rep.bmo_squared <= rep.lemma_bound + 3.0 * *rep.bmo_squared_se;
    }
    return rep;
}

LinearizationReport linearized_difference_check(const QuadraticSolution& s1, const QuadraticSolution& s2,
                                                const QuadraticDriver& f, const ConditionalEstimator& est,
                                                double sup_trim) {
    BSDELAB_REQUIRE(s1.paths && s1.paths == s2.paths, "both solutions must live on the same paths");
    BSDELAB_REQUIRE(s1.k_accepted == s2.k_accepted, "both solutions must use the same truncation level");
    const PathEnsemble& paths = *s1.paths;
    const std::size_t K = paths.steps(), M = paths.paths(), n = f.n, d = f.d;
    const QuadraticDriver fk = truncate_driver(f, s1.k_accepted);
    const SampledProcess &Y1 = s1.solution.Y, &Y2 = s2.solution.Y, &Z1 = s1.solution.Z, &Z2 = s2.solution.Z;

    LinearizationReport rep;
    SampledProcess dY(paths.grid(), M, n), dZ(paths.grid(), M, n * d);
    for (std::size_t k = 0; k <= K; ++k) {
        dY.set_slice(k, Y1.slice(k) - Y2.slice(k));
        if (k < K) dZ.set_slice(k, Z1.slice(k) - Z2.slice(k));
    }
    const TrimmedSup dys = trimmed_sup(dY, paths, K, sup_trim, 0.0);
    rep.dY_sup = dys.trimmed;
    rep.dY_sup_raw = dys.raw;
    rep.dxi_sup = (Y1.slice(K) - Y2.slice(K)).rowwise().norm().maxCoeff();
    rep.dZ_bmo = estimate_norm(NormKind::bmo, dZ, &est).value;
    BSDELAB_REQUIRE(rep.dxi_sup > 0.0, "the terminal values coincide");
    rep.ratio = rep.dY_sup / rep.dxi_sup;
    rep.bmo_ratio = (rep.dY_sup + rep.dZ_bmo) / rep.dxi_sup;

    for (std::size_t k = 0; k < K; ++k) {
        const double t = paths.grid().time(k), dt = paths.grid().dt(k);
        const Eigen::MatrixXd EdY = est.project(k, Y1.slice(k + 1) - Y2.slice(k + 1));
        std::vector<double> r2(M);
        parallel_chunks(M, [&](std::size_t b, std::size_t e) {
            for (std::size_t m = b; m < e; ++m) {
                const PathState st = paths.state(m, k);
                const Eigen::Map<const Eigen::VectorXd> y1(Y1.at(m, k), ix(n)), y2(Y2.at(m, k), ix(n));
                const Eigen::MatrixXd z1 = z_of_row(Z1.at(m, k), n, d), z2 = z_of_row(Z2.at(m, k), n, d);
                const Eigen::MatrixXd dz = z1 - z2;
                const bool inactive = z1.norm() <= s1.k_accepted && z2.norm() <= s1.k_accepted;

                // g part: alpha dY + dA_g dZ by telescoping one coordinate at a time
                Eigen::VectorXd lin = Eigen::VectorXd::Zero(ix(n));
                if (f.g) {
                    auto g = [&](const Eigen::VectorXd& y, const Eigen::MatrixXd& z) {
                        return f.g(t, st, y, inactive ? z : truncation_map(z, s1.k_accepted));
                    };
                    Eigen::VectorXd y = y2;
                    Eigen::MatrixXd z = z2;
                    for (std::size_t j = 0; j < n; ++j) {
                        const double delta = y1(ix(j)) - y2(ix(j));
                        if (delta == 0.0) continue;
                        const Eigen::VectorXd before = g(y, z);
                        y(ix(j)) = y1(ix(j));
                        const Eigen::VectorXd alpha_col = (g(y, z) - before) / delta;
                        lin += alpha_col * delta;
                    }
                    for (Index q = 0; q < z.size(); ++q) {
                        const double delta = z1.data()[q] - z2.data()[q];
                        if (delta == 0.0) continue;
                        const Eigen::VectorXd before = g(y, z);
                        z.data()[q] = z1.data()[q];
                        lin += (g(y, z) - before) / delta * delta;
                    }
                }
                // quadratic part
                if (inactive && f.kind == DriverClass::quadratic_linear) {
                    // A^{ij} = delta_ij (b^T Z1) + b_j Z2^i
                    const Eigen::VectorXd w1 = z1.transpose() * f.b;
                    for (std::size_t i = 0; i < n; ++i) {
                        double v = w1.dot(dz.row(ix(i)));
                        for (std::size_t j = 0; j < n; ++j) v += f.b(ix(j)) * z2.row(ix(i)).dot(dz.row(ix(j)));
                        lin(ix(i)) += v;
                    }
                } else if (inactive && f.kind == DriverClass::unidirectional) {
                    // A^{ij} = a_i (dh/dZ)^j with entrywise telescoped difference quotients of h
                    Eigen::MatrixXd z = z2;
                    double dh = 0.0;
                    for (Index q = 0; q < z.size(); ++q) {
                        const double delta = dz.data()[q];
                        if (delta == 0.0) continue;
                        const double before = f.h(z);
                        z.data()[q] = z1.data()[q];
                        dh += (f.h(z) - before) / delta * delta;
                    }
                    lin += f.a * dh;
                } else if (f.kind != DriverClass::lipschitz) {
                    // truncation active: difference of the truncated quadratic part directly
                    QuadraticDriver q = fk;
                    q.g = nullptr;
                    lin += evaluate_driver(q, t, st, y1, z1) - evaluate_driver(q, t, st, y2, z2);
                }
                r2[m] = ((y1 - y2) - EdY.row(ix(m)).transpose() - lin * dt).squaredNorm();
            }
        });
        double s = 0.0;
        for (double v : r2) s += v;
        rep.residual.push_back(std::sqrt(s / static_cast<double>(M)));
        rep.max_residual = std::max(rep.max_residual, rep.residual.back());
    }
    return rep;
}

std::vector<std::string> shipped_quadratic_names() {
    return {"cole-hopf-1d", "cole-hopf-1d-u", "ql-coupled-2d", "unidirectional-2d", "zero-2d"};
}

QuadraticSpec shipped_quadratic(const std::string& name) {
    QuadraticSpec s;
    s.name = name;
    s.T = 1.0;
    QuadraticDriver& f = s.driver;
    f.name = name;
    auto circle = [](double r1, double r2) {
        return terminal_of_state([r1, r2](const Eigen::VectorXd& b) {
            Eigen::VectorXd v(2);
            v << r1 * std::sin(b(0)), r2 * std::cos(b(0));
            return v;
        });
    };
    if (name == "cole-hopf-1d") {
        f.kind = DriverClass::quadratic_linear;
        f.b = Eigen::VectorXd::Constant(1, 0.5);
        f.L = 0.5;
        s.xi = terminal_of_state([](const Eigen::VectorXd& b) { return Eigen::VectorXd::Constant(1, b(0)); });
    } else if (name == "cole-hopf-1d-u") {
        f.kind = DriverClass::unidirectional;
        f.a = Eigen::VectorXd::Ones(1);
        f.h = [](const Eigen::MatrixXd& z) { return 0.5 * z.squaredNorm(); };
        f.L = 0.5;
        s.xi = terminal_of_state([](const Eigen::VectorXd& b) { return Eigen::VectorXd::Constant(1, b(0)); });
        s.ab = AbCondition{[](double, const PathState&) { return 0.0; },
                           {Eigen::VectorXd::Ones(1), -Eigen::VectorXd::Ones(1)}};
    } else if (name == "ql-coupled-2d") {
        f.kind = DriverClass::quadratic_linear;
        f.n = 2;
        f.b = Eigen::Vector2d(0.3, -0.2);
        f.L = 0.5;
        f.g = [](double, const PathState& x, const Eigen::VectorXd& y, const Eigen::MatrixXd& z) {
            Eigen::VectorXd v(2);
            v << -0.2 * y(1) + 0.1 * std::sin(z(1, 0)), 0.2 * std::sin(y(0)) - 0.1 * z(0, 0) + 0.1 * std::cos(x.x_ptr[0]);
            return v;
        };
        s.xi = circle(1.0, 0.5);
    } else if (name == "unidirectional-2d") {
        f.kind = DriverClass::unidirectional;
        f.n = 2;
        const Eigen::Vector2d a(1.0, -0.5), perp(0.5, 1.0);
        f.a = a;
        // h = |a^T z|^2 / (2 |a|^2), so a^T f <= |g| |a| + |a^T z|^2 / 2 and (AB) holds with a_m = +-a, +-a_perp
        f.h = [a](const Eigen::MatrixXd& z) { return 0.5 * (z.transpose() * a).squaredNorm() / a.squaredNorm(); };
        f.L = 0.5;
        f.g = [](double, const PathState&, const Eigen::VectorXd& y, const Eigen::MatrixXd& z) {
            Eigen::VectorXd v(2);
            v << 0.1 * std::sin(y(1)), -0.1 * std::sin(y(0)) + 0.05 * std::sin(z(0, 0));
            return v;
        };
        s.xi = circle(0.5, 1.0);
        const double gmax = std::sqrt(0.01 + 0.15 * 0.15) * a.norm();
        s.ab = AbCondition{[gmax](double, const PathState&) { return gmax; }, {a, -a, perp, -perp}};
    } else if (name == "zero-2d") {
        f.kind = DriverClass::lipschitz;
        f.n = 2;
        s.xi = circle(1.0, 1.0);
    } else {
        std::string known;
        for (const auto& nm : shipped_quadratic_names()) known += (known.empty() ? "" : ", ") + nm;
        throw ConfigError("unknown quadratic instance '" + name + "' (known: " + known + ")");
    }
    return s;
}

} // namespace bsdelab
