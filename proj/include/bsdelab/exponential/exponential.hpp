#pragma once

#include "bsdelab/core/brownian.hpp"
#include "bsdelab/exponential/field.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <string>
#include <vector>

namespace bsdelab {

/// Simulated S (and optionally its inverse X) per path, stored at a subset of grid steps.
///
/// Besides S_k and X_k the ensemble can hold the continuation C_k = S_k^{-1} S_T of the
/// same scheme (for Euler the ordered product of the step factors from k to K, so no
/// inversion is involved) and its running maximum sup_{k <= j <= K} |S_k^{-1} S_j|.
class ExponentialEnsemble {
public:
    ExponentialEnsemble() = default;
    ExponentialEnsemble(TimeGrid grid, std::size_t n, std::size_t d, std::size_t paths,
                        std::vector<std::size_t> record_steps, bool with_inverse, bool with_continuation);

    const TimeGrid& grid() const { return grid_; }
    std::size_t n() const { return n_; }
    std::size_t d() const { return d_; }
    std::size_t paths() const { return paths_; }
    const std::vector<std::size_t>& record_steps() const { return record_; }
    std::size_t records() const { return record_.size(); }
    bool has_inverse() const { return !X_.empty(); }
    bool has_continuation() const { return !C_.empty(); }

    Eigen::Map<Eigen::MatrixXd> S(std::size_t m, std::size_t r) { return block(S_, m, r); }
    Eigen::Map<const Eigen::MatrixXd> S(std::size_t m, std::size_t r) const { return block(S_, m, r); }
    Eigen::Map<Eigen::MatrixXd> X(std::size_t m, std::size_t r) { return block(X_, m, r); }
    Eigen::Map<const Eigen::MatrixXd> X(std::size_t m, std::size_t r) const { return block(X_, m, r); }
    Eigen::Map<Eigen::MatrixXd> C(std::size_t m, std::size_t r) { return block(C_, m, r); }
    Eigen::Map<const Eigen::MatrixXd> C(std::size_t m, std::size_t r) const { return block(C_, m, r); }

    /// Brownian state and running max |B| at a recorded step.
    double* state(std::size_t m, std::size_t r) { return states_.data() + (m * records() + r) * d_; }
    const double* state(std::size_t m, std::size_t r) const { return states_.data() + (m * records() + r) * d_; }
    double* max_abs(std::size_t m, std::size_t r) { return maxabs_.data() + (m * records() + r) * d_; }
    const double* max_abs(std::size_t m, std::size_t r) const { return maxabs_.data() + (m * records() + r) * d_; }

    double& sup_continuation(std::size_t m, std::size_t r) { return supC_[m * records() + r]; }
    double sup_continuation(std::size_t m, std::size_t r) const { return supC_[m * records() + r]; }

    /// max over all steps of |S_k X_k - I| along path m.
    double& inverse_residual(std::size_t m) { return inv_resid_[m]; }
    double inverse_residual(std::size_t m) const { return inv_resid_[m]; }
    /// |S_k X_k - I| at recorded step r.
    double& inverse_residual_at(std::size_t m, std::size_t r) { return inv_resid_at_[m * records() + r]; }
    double inverse_residual_at(std::size_t m, std::size_t r) const { return inv_resid_at_[m * records() + r]; }

    /// Paths where a non-finite value appeared; they stay in the ensemble and are skipped by statistics.
    bool flagged(std::size_t m) const { return flags_[m] != 0; }
    void flag(std::size_t m) { flags_[m] = 1; }
    std::size_t flagged_count() const;

    std::string scheme = "euler";
    std::string field_name;
    std::uint64_t seed = 0;

    /// Index of the recorded step equal to k, or records() if k was not recorded.
    std::size_t record_index(std::size_t k) const;
    PathState path_state(std::size_t m, std::size_t r) const;

private:
    Eigen::Map<Eigen::MatrixXd> block(std::vector<double>& v, std::size_t m, std::size_t r) {
        return {v.data() + (m * records() + r) * n_ * n_, static_cast<Eigen::Index>(n_), static_cast<Eigen::Index>(n_)};
    }
    Eigen::Map<const Eigen::MatrixXd> block(const std::vector<double>& v, std::size_t m, std::size_t r) const {
        return {v.data() + (m * records() + r) * n_ * n_, static_cast<Eigen::Index>(n_), static_cast<Eigen::Index>(n_)};
    }

    TimeGrid grid_ = TimeGrid::uniform(1.0, 1);
    std::size_t n_ = 0, d_ = 0, paths_ = 0;
    std::vector<std::size_t> record_;
    std::vector<double> S_, X_, C_, supC_, states_, maxabs_, inv_resid_, inv_resid_at_;
    std::vector<std::uint8_t> flags_;
};

struct IntegrationOptions {
    /// Steps at which S is stored; empty means every step.
    std::vector<std::size_t> record_steps;
    bool inverse = false;
    bool continuation = false;
};

/// Evenly spaced record steps 0 = k_0 < ... < k_{count-1} = K.
std::vector<std::size_t> even_record_steps(std::size_t K, std::size_t count);

/// Euler scheme S_{k+1} = S_k (I + A_k dB_k), S_0 = I, with X_{k+1} = (I + A_k^2 dt - A_k dB_k) X_k
/// for the inverse when requested.
ExponentialEnsemble integrate_exponential(const CoefficientField& A, const PathEnsemble& paths,
                                          const IntegrationOptions& opts = {});

/// Same integration with the inverse always on.
ExponentialEnsemble integrate_inverse(const CoefficientField& A, const PathEnsemble& paths,
                                      IntegrationOptions opts = {});

/// Per recorded step: mean over unflagged paths of |S_k X_k - I| and of the path maxima.
struct InverseReport {
    std::vector<double> times;
    std::vector<double> mean_residual;
    double max_mean_residual = 0.0;     // max over recorded steps of the path mean
    double mean_path_max = 0.0;         // mean over paths of max_k |S_k X_k - I|
    double quantile99_path_max = 0.0;
    double max_path_max = 0.0;
};
InverseReport inverse_report(const ExponentialEnsemble& expo);

} // namespace bsdelab
