#pragma once

#include "bsdelab/core/conditional.hpp"
#include "bsdelab/exponential/exponential.hpp"

#include <iosfwd>
#include <string>
#include <vector>

namespace bsdelab {

/// One row per evaluation time: (t, estimate, std_error).
struct Profile {
    std::vector<double> t, estimate, std_error;
    void push(double time, double value, double se) {
        t.push_back(time);
        estimate.push_back(value);
        std_error.push_back(se);
    }
};

void write_profile_csv(std::ostream& os, const Profile& profile);

enum class ConditionalMethod { regression, nested };

struct ReverseHolderConfig {
    ConditionalMethod method = ConditionalMethod::nested;
    RegressionConfig regression;
    /// Nested simulation: outer paths used as conditioning points and inner paths per point.
    std::size_t outer_paths = 200;
    std::size_t inner_paths = 2000;
    std::uint64_t inner_seed = 0x5eedULL;
    /// Truncation levels L for E[min(|S_k^{-1} S_T|^p, L)].
    std::vector<double> truncation_levels = {1e1, 1e2, 1e3, 1e4, 1e5, 1e6};
};

/// Tail diagnostics used to flag an infinite R_p.
struct DivergenceReport {
    std::vector<double> levels;
    std::vector<double> truncated_means;
    double hill_tail_index = 0.0;
    bool divergent = false;
};

struct ReverseHolderReport {
    double p = 2.0;
    double Rp_estimate = 1.0;
    double std_error = 0.0;
    std::size_t attaining_step = 0;
    Profile profile;
    std::string estimator;
    double doob_sup_estimate = 0.0;
    DivergenceReport divergence;
};

/// R_p = max over recorded steps of the ess sup of E_{t_k}[|S_{t_k}^{-1} S_T|^p] (operator norm).
/// The regression method needs a continuation ensemble; the nested method re-simulates the
/// continuation from the first outer_paths paths and needs the coefficient field.
ReverseHolderReport estimate_reverse_holder(const ExponentialEnsemble& expo, double p,
                                            const ReverseHolderConfig& cfg = {},
                                            const CoefficientField* field = nullptr);

/// Truncation curve E[min(X, L)] and Hill tail index of the samples X (top sqrt(N) order
/// statistics); divergent when the tail index is at most 1.25, i.e. E[X] is not credibly finite.
DivergenceReport divergence_diagnostic(const std::vector<double>& samples, const std::vector<double>& levels);

struct DefectReport {
    Profile defect;          // |E[S_t] - I| in operator norm
    Profile diagonal_defect; // max_i |E[S_t]_ii - 1|
    std::vector<Eigen::MatrixXd> mean;
    std::vector<Eigen::MatrixXd> std_error;
    double max_defect = 0.0;
    std::size_t used_paths = 0;
};

/// Monte Carlo E[S_t] - I per recorded step, skipping flagged paths.
DefectReport martingale_defect(const ExponentialEnsemble& expo);

struct DoobReport {
    double p = 2.0;
    double factor = 4.0;      // (p/(p-1))^p
    double max_ratio = 0.0;   // max over steps of E_k[sup |S_k^{-1} S_j|^p] / (factor * R_p)
    Profile ratio;
};

DoobReport doob_sup_check(const ExponentialEnsemble& expo, double p, const ReverseHolderReport& rp,
                          const RegressionConfig& reg = {});

} // namespace bsdelab
