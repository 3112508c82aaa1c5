#include "bsdelab/core/conditional.hpp"

#include "bsdelab/core/error.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>

namespace bsdelab {

namespace {

void monomial_exponents(std::size_t d, int degree, std::vector<std::vector<int>>& out) {
    std::vector<int> alpha(d, 0);
    std::function<void(std::size_t, int)> rec = [&](std::size_t pos, int left) {
        if (pos == d) {
            out.push_back(alpha);
            return;
        }
        for (int e = 0; e <= left; ++e) {
            alpha[pos] = e;
            rec(pos + 1, left - e);
        }
        alpha[pos] = 0;
    };
    rec(0, degree);
    std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
        int sa = 0, sb = 0;
        for (int v : a) sa += v;
        for (int v : b) sb += v;
        return sa < sb;
    });
}

} // namespace

Eigen::MatrixXd polynomial_features(const Eigen::MatrixXd& x, int degree) {
    const std::size_t d = static_cast<std::size_t>(x.cols());
    std::vector<std::vector<int>> exps;
    monomial_exponents(d, degree, exps);
    Eigen::MatrixXd X(x.rows(), static_cast<Eigen::Index>(exps.size()));
    for (std::size_t c = 0; c < exps.size(); ++c) {
        Eigen::VectorXd col = Eigen::VectorXd::Ones(x.rows());
        for (std::size_t l = 0; l < d; ++l)
            for (int e = 0; e < exps[c][l]; ++e) col.array() *= x.col(static_cast<Eigen::Index>(l)).array();
        X.col(static_cast<Eigen::Index>(c)) = col;
    }
    return X;
}

RegressionEstimator::RegressionEstimator(std::vector<Eigen::MatrixXd> states, RegressionConfig cfg)
    : states_(std::move(states)), cfg_(cfg) {
    BSDELAB_REQUIRE(cfg_.degree >= 0, "regression degree must be nonnegative");
    for (const auto& s : states_)
        if (s.rows() > 0) {
            BSDELAB_REQUIRE(paths_ == 0 || paths_ == static_cast<std::size_t>(s.rows()),
                            "regression states must share the path count");
            paths_ = static_cast<std::size_t>(s.rows());
        }
    BSDELAB_REQUIRE(paths_ > 0, "regression needs a nonempty ensemble");
    cache_.resize(states_.size());
}

RegressionEstimator RegressionEstimator::from_ensemble(const PathEnsemble& paths, RegressionConfig cfg) {
    BSDELAB_REQUIRE(paths.materialized(), "regression on an ensemble needs stored states");
    std::vector<Eigen::MatrixXd> states(paths.steps() + 1);
    const auto d = static_cast<Eigen::Index>(paths.dim());
    for (std::size_t k = 0; k <= paths.steps(); ++k) {
        states[k].resize(static_cast<Eigen::Index>(paths.paths()), d);
        for (std::size_t m = 0; m < paths.paths(); ++m) {
            const double* x = paths.state_ptr(m, k);
            for (Eigen::Index l = 0; l < d; ++l) states[k](static_cast<Eigen::Index>(m), l) = x[l];
        }
    }
    return RegressionEstimator(std::move(states), cfg);
}

const RegressionEstimator::Design& RegressionEstimator::design(std::size_t k) const {
    BSDELAB_REQUIRE(k < states_.size() && states_[k].rows() > 0, "no regression states at this step");
    if (cache_[k]) return *cache_[k];

    // standardize so the monomials stay well conditioned
    Eigen::MatrixXd x = states_[k];
    for (Eigen::Index l = 0; l < x.cols(); ++l) {
        const double mu = x.col(l).mean();
        const double sd = std::sqrt((x.col(l).array() - mu).square().mean());
        x.col(l).array() -= mu;
        if (sd > 0.0) x.col(l) /= sd;
    }
    auto des = std::make_unique<Design>();
    for (int deg = cfg_.degree; deg >= 0; --deg) {
        des->X = polynomial_features(x, deg);
        des->qr.compute(des->X);
        des->qr.setThreshold(1e-10);
        if (des->qr.rank() == des->X.cols() || deg == 0) {
            des->degree = deg;
            break;
        }
    }
    if (des->degree < cfg_.degree) downgraded_.push_back(k);
    des->gram_inv = (des->X.transpose() * des->X).ldlt().solve(
        Eigen::MatrixXd::Identity(des->X.cols(), des->X.cols()));
    cache_[k] = std::move(des);
    return *cache_[k];
}

int RegressionEstimator::degree_used(std::size_t k) const { return design(k).degree; }

const std::vector<std::size_t>& RegressionEstimator::downgraded_steps() const { return downgraded_; }

Eigen::MatrixXd RegressionEstimator::project(std::size_t k, const Eigen::MatrixXd& target) const {
    BSDELAB_REQUIRE(static_cast<std::size_t>(target.rows()) == paths_, "target has the wrong path count");
    const Design& des = design(k);
    const Eigen::MatrixXd coef = des.qr.solve(target);
    return des.X * coef;
}

SupEstimate RegressionEstimator::ess_sup(std::size_t k, const Eigen::VectorXd& target) const {
    const Design& des = design(k);
    const Eigen::VectorXd coef = des.qr.solve(target);
    const Eigen::VectorXd fit = des.X * coef;
    const double dof = std::max<double>(1.0, static_cast<double>(paths_) - static_cast<double>(des.X.cols()));
    const double sigma2 = (target - fit).squaredNorm() / dof;

    // candidate nodes: paths whose state is not among the most extreme sup_trim fraction
    std::vector<double> radius(paths_);
    for (std::size_t m = 0; m < paths_; ++m) radius[m] = des.X.row(static_cast<Eigen::Index>(m)).squaredNorm();
    double cutoff = std::numeric_limits<double>::infinity();
    if (des.degree > 0 && cfg_.sup_trim > 0.0) {
        std::vector<double> sorted = radius;
        const auto q = static_cast<std::size_t>(std::floor((1.0 - cfg_.sup_trim) * static_cast<double>(paths_ - 1)));
        std::nth_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(q), sorted.end());
        cutoff = sorted[q];
    }
    SupEstimate best{-std::numeric_limits<double>::infinity(), 0.0, 0};
    for (std::size_t m = 0; m < paths_; ++m)
        if (radius[m] <= cutoff && fit(static_cast<Eigen::Index>(m)) > best.value) {
            best.value = fit(static_cast<Eigen::Index>(m));
            best.argmax_path = m;
        }
    const Eigen::VectorXd xm = des.X.row(static_cast<Eigen::Index>(best.argmax_path)).transpose();
    best.std_error = std::sqrt(std::max(0.0, sigma2 * xm.dot(des.gram_inv * xm)));
    return best;
}

ExactTreeEstimator::ExactTreeEstimator(const PathEnsemble& tree)
    : paths_(tree.paths()), steps_(tree.steps()), branching_(std::size_t{1} << tree.dim()) {
    BSDELAB_REQUIRE(tree.enumerated(), "exact conditional expectations need an enumerated tree");
    std::size_t expected = 1;
    for (std::size_t k = 0; k < steps_; ++k) expected *= branching_;
    BSDELAB_REQUIRE(expected == paths_, "enumerated ensemble is not a full product tree");
}

std::size_t ExactTreeEstimator::block_size(std::size_t k) const {
    std::size_t b = 1;
    for (std::size_t j = k; j < steps_; ++j) b *= branching_;
    return b;
}

Eigen::MatrixXd ExactTreeEstimator::project(std::size_t k, const Eigen::MatrixXd& target) const {
    BSDELAB_REQUIRE(k <= steps_, "level beyond the tree depth");
    BSDELAB_REQUIRE(static_cast<std::size_t>(target.rows()) == paths_, "target has the wrong path count");
    const std::size_t b = block_size(k);
    Eigen::MatrixXd out(target.rows(), target.cols());
    for (std::size_t start = 0; start < paths_; start += b) {
        const auto s = static_cast<Eigen::Index>(start);
        const auto len = static_cast<Eigen::Index>(b);
        const Eigen::RowVectorXd avg = target.middleRows(s, len).colwise().mean();
        out.middleRows(s, len).rowwise() = avg;
    }
    return out;
}

SupEstimate ExactTreeEstimator::ess_sup(std::size_t k, const Eigen::VectorXd& target) const {
    const Eigen::MatrixXd fit = project(k, target);
    Eigen::Index arg = 0;
    const double v = fit.col(0).maxCoeff(&arg);
    return {v, 0.0, static_cast<std::size_t>(arg)};
}

} // namespace bsdelab
