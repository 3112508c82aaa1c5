#pragma once

#include "bsdelab/core/brownian.hpp"

#include <Eigen/Dense>

#include <cstddef>
#include <memory>
#include <string>
#include <vector>

namespace bsdelab {

/// Estimated essential supremum over paths of a conditional expectation.
struct SupEstimate {
    double value = 0.0;
    double std_error = 0.0;
    std::size_t argmax_path = 0;
};

/// Maps per-path targets at the terminal side to estimates of E_k[target], path by path.
class ConditionalEstimator {
public:
    virtual ~ConditionalEstimator() = default;

    virtual std::string kind() const = 0;
    virtual std::size_t paths() const = 0;

    /// target is paths() x c; returns the fitted E_k[target] for every path.
    virtual Eigen::MatrixXd project(std::size_t k, const Eigen::MatrixXd& target) const = 0;

    /// ess sup over paths of E_k[target] for a scalar target.
    virtual SupEstimate ess_sup(std::size_t k, const Eigen::VectorXd& target) const = 0;
};

struct RegressionConfig {
    int degree = 3;
    /// Fraction of the most extreme states excluded when taking the supremum of a fit.
    double sup_trim = 0.02;
};

/// Least-squares projection on total-degree polynomials of the Brownian state B_{t_k}.
/// The degree is lowered automatically when the design is rank deficient (e.g. at t = 0).
class RegressionEstimator final : public ConditionalEstimator {
public:
    /// states[k] is paths x d, the state at step k; steps without states cannot be projected.
    RegressionEstimator(std::vector<Eigen::MatrixXd> states, RegressionConfig cfg = {});
    static RegressionEstimator from_ensemble(const PathEnsemble& paths, RegressionConfig cfg = {});

    std::string kind() const override { return "regression"; }
    std::size_t paths() const override { return paths_; }
    Eigen::MatrixXd project(std::size_t k, const Eigen::MatrixXd& target) const override;
    SupEstimate ess_sup(std::size_t k, const Eigen::VectorXd& target) const override;

    /// Degree actually used at step k after rank checks.
    int degree_used(std::size_t k) const;
    /// Steps at which the requested degree had to be lowered.
    const std::vector<std::size_t>& downgraded_steps() const;

private:
    struct Design {
        Eigen::MatrixXd X;
        Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr;
        Eigen::MatrixXd gram_inv;
        int degree = 0;
    };
    const Design& design(std::size_t k) const;

    std::vector<Eigen::MatrixXd> states_;
    RegressionConfig cfg_;
    std::size_t paths_ = 0;
    mutable std::vector<std::unique_ptr<Design>> cache_;
    mutable std::vector<std::size_t> downgraded_;
};

/// Exact conditional expectations on an enumerated tree ensemble: paths are ordered with the
/// first step in the most significant position, so F_k atoms are contiguous blocks.
class ExactTreeEstimator final : public ConditionalEstimator {
public:
    explicit ExactTreeEstimator(const PathEnsemble& tree);

    std::string kind() const override { return "exact-tree"; }
    std::size_t paths() const override { return paths_; }
    Eigen::MatrixXd project(std::size_t k, const Eigen::MatrixXd& target) const override;
    SupEstimate ess_sup(std::size_t k, const Eigen::VectorXd& target) const override;

    std::size_t block_size(std::size_t k) const;

private:
    std::size_t paths_;
    std::size_t steps_;
    std::size_t branching_;
};

/// Monomials x^alpha with |alpha| <= degree in d variables; row m of the result is path m.
Eigen::MatrixXd polynomial_features(const Eigen::MatrixXd& x, int degree);

} // namespace bsdelab
