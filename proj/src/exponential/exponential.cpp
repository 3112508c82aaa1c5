#include "bsdelab/exponential/exponential.hpp"

#include "bsdelab/core/error.hpp"
#include "bsdelab/core/parallel.hpp"

#include <algorithm>
#include <cmath>

namespace bsdelab {

ExponentialEnsemble::ExponentialEnsemble(TimeGrid grid, std::size_t n, std::size_t d, std::size_t paths,
                                         std::vector<std::size_t> record_steps, bool with_inverse,
                                         bool with_continuation)
    : grid_(std::move(grid)), n_(n), d_(d), paths_(paths), record_(std::move(record_steps)) {
    BSDELAB_REQUIRE(paths_ >= 1, "exponential ensemble needs at least one path");
    BSDELAB_REQUIRE(!record_.empty() && std::is_sorted(record_.begin(), record_.end()) &&
                        record_.back() <= grid_.steps(),
                    "record steps must be sorted grid indices");
    const std::size_t R = record_.size();
    S_.assign(paths_ * R * n_ * n_, 0.0);
    if (with_inverse) X_.assign(S_.size(), 0.0);
    if (with_continuation) {
        C_.assign(S_.size(), 0.0);
        supC_.assign(paths_ * R, 0.0);
    }
    states_.assign(paths_ * R * d_, 0.0);
    maxabs_.assign(paths_ * R * d_, 0.0);
    inv_resid_.assign(paths_, 0.0);
    inv_resid_at_.assign(paths_ * R, 0.0);
    flags_.assign(paths_, 0);
}

std::size_t ExponentialEnsemble::flagged_count() const {
    return static_cast<std::size_t>(std::count(flags_.begin(), flags_.end(), std::uint8_t{1}));
}

std::size_t ExponentialEnsemble::record_index(std::size_t k) const {
    const auto it = std::lower_bound(record_.begin(), record_.end(), k);
    return (it != record_.end() && *it == k) ? static_cast<std::size_t>(it - record_.begin()) : records();
}

PathState ExponentialEnsemble::path_state(std::size_t m, std::size_t r) const {
    return {grid_.time(record_[r]), record_[r], d_, state(m, r), max_abs(m, r)};
}

std::vector<std::size_t> even_record_steps(std::size_t K, std::size_t count) {
    BSDELAB_REQUIRE(count >= 2, "need at least two record steps");
    std::vector<std::size_t> steps;
    for (std::size_t i = 0; i < count; ++i) {
        const std::size_t k = (K * i + (count - 1) / 2) / (count - 1);
        if (steps.empty() || k > steps.back()) steps.push_back(k);
    }
    steps.back() = K;
    return steps;
}

ExponentialEnsemble integrate_exponential(const CoefficientField& A, const PathEnsemble& paths,
                                          const IntegrationOptions& opts) {
    BSDELAB_REQUIRE(A.d() == paths.dim(), "coefficient field and Brownian dimension differ");
    const TimeGrid& grid = paths.grid();
    const std::size_t K = grid.steps();
    const std::size_t n = A.n();
    const std::size_t d = A.d();
    std::vector<std::size_t> rec = opts.record_steps;
    if (rec.empty())
        for (std::size_t k = 0; k <= K; ++k) rec.push_back(k);

    ExponentialEnsemble out(grid, n, d, paths.paths(), rec, opts.inverse, opts.continuation);
    out.field_name = A.name();
    out.seed = paths.seed();
    const std::size_t R = out.records();
    const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));

    parallel_chunks(paths.paths(), [&](std::size_t begin, std::size_t end) {
        MatD Ak(n, d);
        std::vector<double> dB(d);
        std::vector<Eigen::MatrixXd> factors(opts.continuation ? K : 0);
        Eigen::MatrixXd S(n, n), X(n, n), G(n, n);
        for (std::size_t m = begin; m < end; ++m) {
            PathCursor cur(d);
            S = I;
            X = I;
            bool bad = false;
            double worst = 0.0;
            std::size_t r = 0;
            auto record = [&](std::size_t k) {
                while (r < R && rec[r] == k) {
                    out.S(m, r) = S;
                    if (opts.inverse) {
                        out.X(m, r) = X;
                        out.inverse_residual_at(m, r) = operator_norm(S * X - I);
                    }
                    const PathState st = cur.state();
                    for (std::size_t l = 0; l < d; ++l) {
                        out.state(m, r)[l] = st.x(l);
                        out.max_abs(m, r)[l] = st.max_abs(l);
                    }
                    ++r;
                }
            };
            record(0);
            for (std::size_t k = 0; k < K; ++k) {
                const PathState st = cur.state();
                A.eval(grid.time(k), st, Ak);
                paths.increment(m, k, dB.data());
                const Eigen::MatrixXd AdB = Ak.against(dB.data());
                G = I + AdB;
                if (opts.continuation) factors[k] = G;
                S = S * G;
                if (opts.inverse) {
                    X = (I + Ak.contracted_square() * grid.dt(k) - AdB) * X;
                    worst = std::max(worst, operator_norm(S * X - I));
                }
                if (!bad && !S.allFinite()) bad = true;
                cur.advance(dB.data(), grid.dt(k));
                record(k + 1);
            }
            out.inverse_residual(m) = worst;
            if (bad || !std::isfinite(worst)) out.flag(m);
            if (opts.continuation) {
                for (std::size_t q = 0; q < R; ++q) {
                    Eigen::MatrixXd P = I;
                    double sup = 1.0;
                    for (std::size_t j = rec[q]; j < K; ++j) {
                        P = P * factors[j];
                        sup = std::max(sup, operator_norm(P));
                    }
                    out.C(m, q) = P;
                    out.sup_continuation(m, q) = sup;
                }
            }
        }
    });
    return out;
}

ExponentialEnsemble integrate_inverse(const CoefficientField& A, const PathEnsemble& paths,
                                      IntegrationOptions opts) {
    opts.inverse = true;
    return integrate_exponential(A, paths, opts);
}

InverseReport inverse_report(const ExponentialEnsemble& expo) {
    BSDELAB_REQUIRE(expo.has_inverse(), "ensemble was integrated without the inverse");
    InverseReport rep;
    std::vector<double> path_max;
    for (std::size_t m = 0; m < expo.paths(); ++m)
        if (!expo.flagged(m)) path_max.push_back(expo.inverse_residual(m));
    BSDELAB_REQUIRE(!path_max.empty(), "every path was flagged");
    for (std::size_t r = 0; r < expo.records(); ++r) {
        double s = 0.0;
        for (std::size_t m = 0; m < expo.paths(); ++m)
            if (!expo.flagged(m)) s += expo.inverse_residual_at(m, r);
        const double mean = s / static_cast<double>(path_max.size());
        rep.times.push_back(expo.grid().time(expo.record_steps()[r]));
        rep.mean_residual.push_back(mean);
        rep.max_mean_residual = std::max(rep.max_mean_residual, mean);
    }
    double s = 0.0;
    for (double v : path_max) s += v;
    rep.mean_path_max = s / static_cast<double>(path_max.size());
    std::sort(path_max.begin(), path_max.end());
    rep.quantile99_path_max = path_max[static_cast<std::size_t>(0.99 * static_cast<double>(path_max.size() - 1))];
    rep.max_path_max = path_max.back();
    return rep;
}

} // namespace bsdelab
