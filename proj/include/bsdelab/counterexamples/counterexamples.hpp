#pragma once

#include "bsdelab/core/brownian.hpp"
#include "bsdelab/exponential/exponential.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <iosfwd>
#include <limits>
#include <vector>

namespace bsdelab {

struct EmerySpec {
    double level = 1.5707963267948966; // exit level of |B|
    /// Replace the overshooting grid value at exit by +-level, so S is evaluated at the true
    /// boundary. Off when comparing with an Euler path on the same grid.
    bool clamp_exit = true;
};

struct EmeryEnsemble {
    ExponentialEnsemble expo;      // scheme "closed_form"; X is the exact inverse
    std::vector<double> exit_time; // grid exit time, +inf when the path never exits
    std::size_t unexited = 0;
};

/// S_t = exp((tau^t)/2) [[cos B, sin B], [-sin B, cos B]] evaluated at B_{tau^t}, pathwise
/// on the grid of `paths` (d = 1). Paths that do not exit within the horizon are counted.
EmeryEnsemble emery_closed_form(const PathEnsemble& paths, const EmerySpec& spec = {},
                                std::vector<std::size_t> record_steps = {});

struct ConvergenceReport {
    std::vector<std::size_t> steps;
    std::vector<double> rmse, rmse_se;
    double order = 0.0;    // minus the least-squares slope of log rmse on log K
    double order_se = 0.0; // batch means
};

/// RMSE at T of the Euler S against the unclamped closed form on coupled coarsenings of one
/// ensemble; every entry of `steps` must divide the largest.
ConvergenceReport emery_euler_convergence(double T, std::vector<std::size_t> steps, std::size_t paths,
                                          std::uint64_t seed, std::size_t batches = 20);

struct ExitTimeOptions {
    std::size_t paths = 100000;
    double dt = 1e-4;
    double max_time = 50.0;        // truncation horizon in changed time
    bool bridge_correction = true; // Brownian-bridge crossing test between grid nodes
    std::uint64_t seed = 1;
};

struct ExitTimeEstimate {
    double b = 0.0;
    double estimate = 0.0;
    double std_error = 0.0;
    double exact = 0.0;            // 1 / cos(b)
    double mean_exit_time = 0.0;
    std::size_t unexited = 0;
    bool heavy_tail_warning = false;
};

/// Monte Carlo E[exp(sigma_b / 2)] for sigma_b the exit time of |W| from b; 0 < b < pi/2.
ExitTimeEstimate exit_time_exponential(double b, const ExitTimeOptions& opts = {});

/// Admissible level sequence with cos(b_k) = k / 2^k, so 1/(2^k cos b_k) = 1/k.
struct NonexistenceSpec {
    double T = 1.0;
    std::size_t prefix = 40;       // length of the analytic prefix
    double b(std::size_t k) const; // k >= 1
    double term(std::size_t k) const { return 1.0 / (std::ldexp(1.0, static_cast<int>(k)) * std::cos(b(k))); }
    /// f(s) = 0 on [0, T/2], 1/(T - s) on [T/2, T).
    double f(double s) const;
    /// Changed time u(s) = int_0^s f^2.
    double changed_time(double s) const;
};

/// Numerical check of the three sequence conditions over the prefix; throws ConfigError on failure.
void check_nonexistence_sequence(const NonexistenceSpec& spec);

/// xi = (cos N_tau, sin N_tau).
Eigen::Vector2d nonexistence_terminal(double n_tau);

struct BlowupRow {
    std::size_t j = 0;
    double partial_sum = 0.0;
    double simulated_estimate = std::numeric_limits<double>::quiet_NaN();
    double simulated_std_error = std::numeric_limits<double>::quiet_NaN();
    double remainder_bound = 0.0;
};

struct BlowupReport {
    std::vector<BlowupRow> rows;
    bool bias_flag = false;        // some stratum had unexited paths
};

/// Partial sums sum_{k<=j} 2^{-k}/cos(b_k) for j <= spec.prefix, the simulated estimate for
/// j <= j_sim (stratified over the events A_k), and the bound 1/(2^j cos b_j).
BlowupReport nonexistence_blowup(const NonexistenceSpec& spec, std::size_t j_sim, const ExitTimeOptions& opts);

void write_blowup_csv(std::ostream& os, const BlowupReport& rep);

} // namespace bsdelab
