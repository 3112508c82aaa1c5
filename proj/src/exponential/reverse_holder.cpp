#include "bsdelab/exponential/reverse_holder.hpp"

#include "bsdelab/core/error.hpp"
#include "bsdelab/core/parallel.hpp"
#include "bsdelab/core/rng.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <ostream>

namespace bsdelab {

void write_profile_csv(std::ostream& os, const Profile& profile) {
    os << "t,estimate,std_error\n" << std::setprecision(17);
    for (std::size_t i = 0; i < profile.t.size(); ++i)
        os << profile.t[i] << ',' << profile.estimate[i] << ',' << profile.std_error[i] << '\n';
}

namespace {

std::vector<std::size_t> good_paths(const ExponentialEnsemble& expo) {
    std::vector<std::size_t> idx;
    for (std::size_t m = 0; m < expo.paths(); ++m)
        if (!expo.flagged(m)) idx.push_back(m);
    BSDELAB_REQUIRE(!idx.empty(), "every path of the exponential ensemble was flagged");
    return idx;
}

RegressionEstimator recorded_regression(const ExponentialEnsemble& expo, const std::vector<std::size_t>& idx,
                                        const RegressionConfig& cfg) {
    std::vector<Eigen::MatrixXd> states(expo.records());
    for (std::size_t r = 0; r < expo.records(); ++r) {
        states[r].resize(static_cast<Eigen::Index>(idx.size()), static_cast<Eigen::Index>(expo.d()));
        for (std::size_t i = 0; i < idx.size(); ++i)
            for (std::size_t l = 0; l < expo.d(); ++l)
                states[r](static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(l)) = expo.state(idx[i], r)[l];
    }
    return RegressionEstimator(std::move(states), cfg);
}

// Mean and standard error of |S_k^{-1} S_T|^p over inner continuations from the state of path m at record r.
std::pair<double, double> nested_point(const CoefficientField& field, const ExponentialEnsemble& expo,
                                       std::size_t m, std::size_t r, double p, const ReverseHolderConfig& cfg) {
    const TimeGrid& grid = expo.grid();
    const std::size_t K = grid.steps();
    const std::size_t k0 = expo.record_steps()[r];
    const std::size_t n = expo.n(), d = expo.d();
    const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
    const std::uint64_t base = derive_key(derive_key(cfg.inner_seed ^ expo.seed, m), k0);
    MatD Ak(n, d);
    std::vector<double> dB(d);
    const PathState start = expo.path_state(m, r);
    double s1 = 0.0, s2 = 0.0;
    for (std::size_t j = 0; j < cfg.inner_paths; ++j) {
        const std::uint64_t key = derive_key(base, j);
        PathCursor cur(std::span<const double>(start.x_ptr, d), start.t, k0);
        cur.reset(std::span<const double>(start.x_ptr, d), std::span<const double>(start.max_abs_ptr, d), start.t, k0);
        Eigen::MatrixXd P = I;
        for (std::size_t k = k0; k < K; ++k) {
            field.eval(grid.time(k), cur.state(), Ak);
            const double sd = std::sqrt(grid.dt(k));
            for (std::size_t l = 0; l < d; ++l) dB[l] = sd * counter_normal(key, (k - k0) * d + l);
            P = P * (I + Ak.against(dB.data()));
            cur.advance(dB.data(), grid.dt(k));
        }
        const double v = std::pow(operator_norm(P), p);
        s1 += v;
        s2 += v * v;
    }
    const auto N = static_cast<double>(cfg.inner_paths);
    const double mean = s1 / N;
    const double var = std::max(0.0, (s2 - N * mean * mean) / std::max(1.0, N - 1.0));
    return {mean, std::sqrt(var / N)};
}

} // namespace

DivergenceReport divergence_diagnostic(const std::vector<double>& samples, const std::vector<double>& levels) {
    BSDELAB_REQUIRE(samples.size() >= 20, "divergence diagnostic needs at least 20 samples");
    DivergenceReport rep;
    rep.levels = levels;
    for (double L : levels) {
        double s = 0.0;
        for (double x : samples) s += std::min(x, L);
        rep.truncated_means.push_back(s / static_cast<double>(samples.size()));
    }
    std::vector<double> sorted = samples;
    std::sort(sorted.begin(), sorted.end(), std::greater<>());
    const std::size_t top = std::max<std::size_t>(10, static_cast<std::size_t>(std::sqrt(static_cast<double>(sorted.size()))));
    const double threshold = sorted[std::min(top, sorted.size() - 1)];
    double s = 0.0;
    for (std::size_t i = 0; i < top && i < sorted.size(); ++i) s += std::log(sorted[i] / threshold);
    rep.hill_tail_index = s > 0.0 ? static_cast<double>(top) / s : std::numeric_limits<double>::infinity();
    rep.divergent = rep.hill_tail_index <= 1.25;
    return rep;
}

ReverseHolderReport estimate_reverse_holder(const ExponentialEnsemble& expo, double p,
                                            const ReverseHolderConfig& cfg, const CoefficientField* field) {
    BSDELAB_REQUIRE(p >= 1.0, "reverse Hoelder exponent must be at least 1");
    ReverseHolderReport rep;
    rep.p = p;
    const std::size_t K = expo.grid().steps();
    const std::vector<std::size_t> idx = good_paths(expo);
    double best = -1.0, best_se = 0.0;
    std::size_t best_step = K;

    auto consider = [&](std::size_t k, double value, double se) {
        rep.profile.push(expo.grid().time(k), value, se);
        if (value > best) {
            best = value;
            best_se = se;
            best_step = k;
        }
    };

    if (cfg.method == ConditionalMethod::regression) {
        BSDELAB_REQUIRE(expo.has_continuation(), "regression R_p needs the continuation products");
        rep.estimator = "regression";
        const RegressionEstimator reg = recorded_regression(expo, idx, cfg.regression);
        for (std::size_t r = 0; r < expo.records(); ++r) {
            const std::size_t k = expo.record_steps()[r];
            if (k == K) {
                consider(k, 1.0, 0.0);
                continue;
            }
            Eigen::VectorXd target(static_cast<Eigen::Index>(idx.size()));
            for (std::size_t i = 0; i < idx.size(); ++i)
                target(static_cast<Eigen::Index>(i)) = std::pow(operator_norm(expo.C(idx[i], r)), p);
            const SupEstimate s = reg.ess_sup(r, target);
            consider(k, s.value, s.std_error);
        }
    } else {
        BSDELAB_REQUIRE(field != nullptr, "nested R_p needs the coefficient field");
        BSDELAB_REQUIRE(cfg.inner_paths >= 2 && cfg.outer_paths >= 1, "nested R_p needs inner and outer paths");
        rep.estimator = "nested";
        const std::size_t outer = std::min(cfg.outer_paths, idx.size());
        for (std::size_t r = 0; r < expo.records(); ++r) {
            const std::size_t k = expo.record_steps()[r];
            if (k == K) {
                consider(k, 1.0, 0.0);
                continue;
            }
            // at k = 0 every outer path sits at the same state, so one point suffices
            const std::size_t points = k == 0 ? 1 : outer;
            std::vector<std::pair<double, double>> vals(points);
            parallel_chunks(points, [&](std::size_t b, std::size_t e) {
                for (std::size_t i = b; i < e; ++i) vals[i] = nested_point(*field, expo, idx[i], r, p, cfg);
            });
            const auto it = std::max_element(vals.begin(), vals.end(),
                                             [](const auto& a, const auto& b) { return a.first < b.first; });
            consider(k, it->first, it->second);
        }
    }
    rep.Rp_estimate = best;
    rep.std_error = best_se;
    rep.attaining_step = best_step;

    if (expo.has_continuation()) {
        std::vector<double> samples;
        const std::size_t r0 = expo.record_index(0);
        if (r0 < expo.records() && idx.size() >= 20) {
            for (std::size_t m : idx) samples.push_back(std::pow(operator_norm(expo.C(m, r0)), p));
            rep.divergence = divergence_diagnostic(samples, cfg.truncation_levels);
        }
    }
    return rep;
}

DefectReport martingale_defect(const ExponentialEnsemble& expo) {
    const std::vector<std::size_t> idx = good_paths(expo);
    const auto N = static_cast<double>(idx.size());
    const std::size_t n = expo.n();
    const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
    DefectReport rep;
    rep.used_paths = idx.size();
    for (std::size_t r = 0; r < expo.records(); ++r) {
        Eigen::MatrixXd s1 = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
        Eigen::MatrixXd s2 = s1;
        for (std::size_t m : idx) {
            const auto S = expo.S(m, r);
            s1 += S;
            s2 += S.cwiseProduct(S);
        }
        const Eigen::MatrixXd mean = s1 / N;
        const Eigen::MatrixXd var =
            ((s2 - N * mean.cwiseProduct(mean)) / std::max(1.0, N - 1.0)).cwiseMax(0.0);
        const Eigen::MatrixXd se = (var / N).cwiseSqrt();
        const double t = expo.grid().time(expo.record_steps()[r]);
        const double defect = operator_norm(mean - I);
        rep.defect.push(t, defect, se.norm());
        Eigen::Index worst = 0;
        (mean.diagonal().array() - 1.0).abs().maxCoeff(&worst);
        rep.diagonal_defect.push(t, std::abs(mean(worst, worst) - 1.0), se(worst, worst));
        rep.mean.push_back(mean);
        rep.std_error.push_back(se);
        rep.max_defect = std::max(rep.max_defect, defect);
    }
    return rep;
}

DoobReport doob_sup_check(const ExponentialEnsemble& expo, double p, const ReverseHolderReport& rp,
                          const RegressionConfig& reg_cfg) {
    BSDELAB_REQUIRE(p > 1.0, "the Doob bound needs p > 1");
    BSDELAB_REQUIRE(expo.has_continuation(), "the Doob check needs the continuation maxima");
    DoobReport rep;
    rep.p = p;
    rep.factor = std::pow(p / (p - 1.0), p);
    const std::size_t K = expo.grid().steps();
    const std::vector<std::size_t> idx = good_paths(expo);
    const RegressionEstimator reg = recorded_regression(expo, idx, reg_cfg);
    const double denom = rep.factor * rp.Rp_estimate;
    for (std::size_t r = 0; r < expo.records(); ++r) {
        const std::size_t k = expo.record_steps()[r];
        double value = 1.0, se = 0.0;
        if (k < K) {
            Eigen::VectorXd target(static_cast<Eigen::Index>(idx.size()));
            for (std::size_t i = 0; i < idx.size(); ++i)
                target(static_cast<Eigen::Index>(i)) = std::pow(expo.sup_continuation(idx[i], r), p);
            const SupEstimate s = reg.ess_sup(r, target);
            value = s.value;
            se = s.std_error;
        }
        rep.ratio.push(expo.grid().time(k), value / denom, se / denom);
        rep.max_ratio = std::max(rep.max_ratio, value / denom);
    }
    return rep;
}

} // namespace bsdelab
