#include "bsdelab/core/norms.hpp"

#include "bsdelab/core/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace bsdelab {

double SampledProcess::norm(std::size_t m, std::size_t k) const {
    const double* v = at(m, k);
    double s = 0.0;
    for (std::size_t c = 0; c < width_; ++c) s += v[c] * v[c];
    return std::sqrt(s);
}

Eigen::MatrixXd SampledProcess::slice(std::size_t k) const {
    Eigen::MatrixXd out(static_cast<Eigen::Index>(paths_), static_cast<Eigen::Index>(width_));
    for (std::size_t m = 0; m < paths_; ++m)
        for (std::size_t c = 0; c < width_; ++c)
            out(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(c)) = at(m, k)[c];
    return out;
}

void SampledProcess::set_slice(std::size_t k, const Eigen::MatrixXd& values) {
    BSDELAB_REQUIRE(static_cast<std::size_t>(values.rows()) == paths_ &&
                        static_cast<std::size_t>(values.cols()) == width_,
                    "slice shape mismatch");
    for (std::size_t m = 0; m < paths_; ++m)
        for (std::size_t c = 0; c < width_; ++c)
            at(m, k)[c] = values(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(c));
}

SampledProcess& SampledProcess::operator*=(double c) {
    for (double& v : data_) v *= c;
    return *this;
}

std::string to_string(NormKind kind) {
    switch (kind) {
    case NormKind::bmo: return "bmo";
    case NormKind::bmo_half: return "bmo_half";
    case NormKind::sup_p: return "sup_p";
    case NormKind::l2q: return "l2q";
    case NormKind::l1q: return "l1q";
    }
    return "unknown";
}

NormKind parse_norm_kind(const std::string& s) {
    for (NormKind k : {NormKind::bmo, NormKind::bmo_half, NormKind::sup_p, NormKind::l2q, NormKind::l1q})
        if (to_string(k) == s) return k;
    throw ConfigError("unknown norm kind '" + s + "'");
}

namespace {

// (E[W^p])^{1/p} with a delta-method standard error; p = inf gives the sample maximum.
std::pair<double, double> moment_norm(const std::vector<double>& w, double p) {
    const auto M = static_cast<double>(w.size());
    if (std::isinf(p)) {
        std::vector<double> s = w;
        std::sort(s.begin(), s.end());
        const double top = s.back();
        const double gap = s.size() > 1 ? top - s[s.size() - 2] : 0.0;
        return {top, gap};
    }
    double mean = 0.0;
    for (double v : w) mean += std::pow(v, p);
    mean /= M;
    double var = 0.0;
    for (double v : w) var += (std::pow(v, p) - mean) * (std::pow(v, p) - mean);
    var /= std::max(1.0, M - 1.0);
    const double value = std::pow(mean, 1.0 / p);
    const double se = mean > 0.0 ? value / (p * mean) * std::sqrt(var / M) : 0.0;
    return {value, se};
}

} // namespace

NormEstimate estimate_norm(NormKind kind, const SampledProcess& process,
                           const ConditionalEstimator* conditional, double p,
                           std::vector<std::size_t> eval_steps) {
    BSDELAB_REQUIRE(process.paths() > 0 && process.width() > 0, "norm of an empty ensemble");
    BSDELAB_REQUIRE(p >= 1.0, "norm exponent must be at least 1");
    const TimeGrid& grid = process.grid();
    const std::size_t K = grid.steps();
    const std::size_t M = process.paths();

    NormEstimate est;
    est.kind = kind;

    if (kind == NormKind::bmo || kind == NormKind::bmo_half) {
        BSDELAB_REQUIRE(conditional != nullptr, "bmo-type norms need a conditional estimator");
        if (eval_steps.empty())
            for (std::size_t k = 0; k < K; ++k) eval_steps.push_back(k);
        const bool quadratic = kind == NormKind::bmo;
        // tail[m] = int_{t_k}^T |Z|^2 dt (left-point rule), accumulated backward
        Eigen::VectorXd tail = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(M));
        std::vector<bool> wanted(K + 1, false);
        for (std::size_t k : eval_steps) {
            BSDELAB_REQUIRE(k <= K, "evaluation step beyond the grid");
            wanted[k] = true;
        }
        double best = 0.0, best_se = 0.0;
        for (std::size_t kk = K + 1; kk-- > 0;) {
            if (kk < K)
                for (std::size_t m = 0; m < M; ++m) {
                    const double r = process.norm(m, kk);
                    tail(static_cast<Eigen::Index>(m)) += (quadratic ? r * r : r) * grid.dt(kk);
                }
            if (!wanted[kk]) continue;
            est.grid_times_used.push_back(grid.time(kk));
            const SupEstimate s = conditional->ess_sup(kk, tail);
            if (s.value > best) {
                best = s.value;
                best_se = s.std_error;
            }
        }
        std::reverse(est.grid_times_used.begin(), est.grid_times_used.end());
        if (quadratic) {
            est.value = std::sqrt(best);
            est.std_error = best > 0.0 ? 0.5 * best_se / est.value : 0.0;
        } else {
            est.value = best;
            est.std_error = best_se;
        }
        return est;
    }

    std::vector<double> w(M, 0.0);
    for (std::size_t m = 0; m < M; ++m) {
        if (kind == NormKind::sup_p) {
            for (std::size_t k = 0; k <= K; ++k) w[m] = std::max(w[m], process.norm(m, k));
        } else {
            for (std::size_t k = 0; k < K; ++k) {
                const double r = process.norm(m, k);
                w[m] += (kind == NormKind::l2q ? r * r : r) * grid.dt(k);
            }
            if (kind == NormKind::l2q) w[m] = std::sqrt(w[m]);
        }
    }
    for (std::size_t k = 0; k <= K; ++k) est.grid_times_used.push_back(grid.time(k));
    const auto [value, se] = moment_norm(w, p);
    est.value = value;
    est.std_error = se;
    return est;
}

} // namespace bsdelab
