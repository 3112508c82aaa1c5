#pragma once

#include "bsdelab/core/brownian.hpp"
#include "bsdelab/core/conditional.hpp"
#include "bsdelab/core/norms.hpp"
#include "bsdelab/exponential/exponential.hpp"
#include "bsdelab/exponential/field.hpp"

#include <Eigen/Dense>

#include <functional>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace bsdelab {

using TerminalFn = std::function<Eigen::VectorXd(const PathEnsemble& paths, std::size_t m)>;
using AdaptedVecFn = std::function<Eigen::VectorXd(double t, const PathState& x)>;
using AdaptedMatFn = std::function<Eigen::MatrixXd(double t, const PathState& x)>;

/// Terminal value g(B_T).
TerminalFn terminal_of_state(std::function<Eigen::VectorXd(const Eigen::VectorXd&)> g);

/// Y = xi + int (alpha Y + (A + dA) Z + beta) dt - int Z dB on the grid of a path ensemble.
struct LinearBsdeSpec {
    explicit LinearBsdeSpec(CoefficientField A_) : A(std::move(A_)) {}

    std::string name;
    TerminalFn xi;
    AdaptedVecFn beta;  // empty: zero
    AdaptedMatFn alpha; // empty: zero
    CoefficientField A;
    std::optional<CoefficientField> dA;

    std::size_t n() const { return A.n(); }
    std::size_t d() const { return A.d(); }
    bool homogeneous() const { return !beta; }
    bool perturbed() const { return dA.has_value() || static_cast<bool>(alpha); }
};

struct SolutionEnsemble {
    SampledProcess Y;                // width n
    SampledProcess Z;                // width n d, z^i_l at i*d + l; step K unused
    std::string solver;
    std::vector<double> residual;    // per step: RMS over paths of the one-step equation residual
    double max_residual = 0.0;
    double terminal_mismatch = 0.0;  // max over paths of |Y_K - xi|
    Eigen::VectorXd Y0, Y0_std_error;
    std::vector<double> iteration_history; // Picard relative changes
    std::map<std::string, double> diagnostics;
    std::vector<std::string> warnings;
};

/// Rows: t, path means of Y and Z components, residual.
void write_solution_csv(std::ostream& os, const SolutionEnsemble& sol);

struct LinearSolverOptions {
    /// The representation solver refuses when |E[S_t] - I| exceeds this and 4 standard errors.
    double defect_tolerance = 0.05;
    std::size_t picard_max_iters = 50;
    double picard_tolerance = 1e-6;
};

/// Y_k = S_k^{-1} E_k[S_K xi + sum_{j >= k} S_j beta_j dt] with the Euler S; Z from the
/// one-step increments E_k[Y_{k+1} dB]/dt. No alpha or dA.
SolutionEnsemble solve_by_representation(const LinearBsdeSpec& spec, const PathEnsemble& paths,
                                         const ConditionalEstimator& est, const LinearSolverOptions& opts = {});

/// Backward induction Z_k = E_k[Y_{k+1} dB]/dt, Y_k = E_k[Y_{k+1}] + (alpha E_k[Y_{k+1}] +
/// (A + dA) Z_k + beta) dt.
SolutionEnsemble solve_by_regression(const LinearBsdeSpec& spec, const PathEnsemble& paths,
                                     const ConditionalEstimator& est, const LinearSolverOptions& opts = {});

/// A^i_j = a^i b_j: scalar equation for U = b^T Y with coefficient b^T a, then Y with the
/// known drift a V. Reports |V - b^T Z| as diagnostics["v_minus_btz"].
SolutionEnsemble solve_right_outer(const LinearBsdeSpec& spec, const PathEnsemble& paths,
                                   const ConditionalEstimator& est, const LinearSolverOptions& opts = {});

/// S for A^i_j = a_i b^j assembled from the scalar exponential s = S a, its inverse by
/// Sherman-Morrison per step; continuation and running maximum filled at the recorded steps.
ExponentialEnsemble left_outer_exponential(const CoefficientField& A, const PathEnsemble& paths,
                                           std::vector<std::size_t> record_steps = {});

struct LeftOuterSolution {
    SolutionEnsemble solution;
    ExponentialEnsemble S;
};
LeftOuterSolution solve_left_outer(const LinearBsdeSpec& spec, const PathEnsemble& paths,
                                   const ConditionalEstimator& est, const LinearSolverOptions& opts = {},
                                   std::vector<std::size_t> record_steps = {});

/// Row i is a scalar equation in Z^i with sum_{j<i} A^i_j Z^j moved into beta.
SolutionEnsemble solve_triangular(const LinearBsdeSpec& spec, const PathEnsemble& paths,
                                  const ConditionalEstimator& est, const LinearSolverOptions& opts = {});

enum class LinearMethod { automatic, representation, regression, structural };
std::string to_string(LinearMethod m);
LinearMethod parse_linear_method(const std::string& s);

/// Picard iteration on BSDE(A) with inhomogeneity alpha Y^m + dA Z^m + beta.
SolutionEnsemble solve_perturbed(const LinearBsdeSpec& spec, const PathEnsemble& paths,
                                 const ConditionalEstimator& est, LinearMethod base = LinearMethod::automatic,
                                 const LinearSolverOptions& opts = {});

/// Dispatch: perturbed specs go through solve_perturbed; automatic picks the structural
/// solver for tagged fields, else representation, falling back to regression on refusal.
SolutionEnsemble solve_linear(const LinearBsdeSpec& spec, const PathEnsemble& paths, const ConditionalEstimator& est,
                              LinearMethod method = LinearMethod::automatic, const LinearSolverOptions& opts = {});

/// beta evaluated on the paths (zero when absent).
SampledProcess sample_inhomogeneity(const LinearBsdeSpec& spec, const PathEnsemble& paths);

struct OperatorNormEstimate {
    double estimate = 0.0;     // max over the family; a lower bound of the operator norm
    double std_error = 0.0;    // of the maximizing ratio
    std::vector<double> ratios;
    std::size_t argmax = 0;
    std::string label = "lower bound";
};

using LinearSolver = std::function<SolutionEnsemble(const LinearBsdeSpec&)>;

/// max over the family of (|Y|_{S^q} + |Z|_{L^{2,q}}) / (|xi|_{L^q} + |beta|_{L^{1,q}}).
OperatorNormEstimate estimate_solution_operator_norm(const LinearSolver& solver, double q,
                                                     const std::vector<LinearBsdeSpec>& family,
                                                     const PathEnsemble& paths);

/// Linear instances shipped with the laboratory.
std::vector<std::string> shipped_linear_names();
LinearBsdeSpec shipped_linear(const std::string& name);

} // namespace bsdelab
