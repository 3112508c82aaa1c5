#pragma once

#include "bsdelab/core/brownian.hpp"
#include "bsdelab/core/conditional.hpp"
#include "bsdelab/core/norms.hpp"
#include "bsdelab/linear/linear.hpp"

#include <Eigen/Dense>

#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace bsdelab {

/// z is n x d with row i holding z^i.
using LipschitzPart = std::function<Eigen::VectorXd(double t, const PathState& x, const Eigen::VectorXd& y,
                                                    const Eigen::MatrixXd& z)>;
using ScalarOfZ = std::function<double(const Eigen::MatrixXd& z)>;

enum class DriverClass { lipschitz, quadratic_linear, unidirectional };
std::string to_string(DriverClass c);

/// f = g + z b^T z (quadratic-linear, (z b^T z)_i = sum_j b_j z^i . z^j) or f = g + a h(z)
/// (unidirectional). With a truncation level k the z argument of every part is phi_k(z).
struct QuadraticDriver {
    std::string name;
    DriverClass kind = DriverClass::lipschitz;
    std::size_t n = 1, d = 1;
    LipschitzPart g;               // empty: zero
    double L = 0.0;                // declared Lipschitz constant of g (and bound on |b|, |h(0)|)
    Eigen::VectorXd b;             // quadratic-linear
    Eigen::VectorXd a;             // unidirectional
    ScalarOfZ h;                   // unidirectional
    std::optional<double> truncation;
};

/// Smooth radial clamp: identity for |z| <= k, C^2 transition to the constant radius 1.5 k
/// reached at |z| = 2k; 1-Lipschitz with |phi(z)| <= |z|.
Eigen::MatrixXd truncation_map(const Eigen::MatrixXd& z, double k);
/// Radius profile of truncation_map.
double truncation_radius(double r, double k);

struct TruncationCheck {
    double identity_violation = 0.0; // max |phi(z) - z| on |z| <= k
    double radial_violation = 0.0;   // max angle defect between phi(z) and z
    double lipschitz_ratio = 0.0;    // max |phi(z) - phi(z')| / |z - z'|
    double growth_violation = 0.0;   // max (|phi(z)| - |z|)_+
    double curvature_jump = 0.0;     // max jump of the second difference of the radius across k and 2k
    bool ok() const;
};
TruncationCheck check_truncation_map(double k, std::size_t n, std::size_t d, std::size_t samples = 2000,
                                     std::uint64_t seed = 3);

Eigen::VectorXd evaluate_driver(const QuadraticDriver& f, double t, const PathState& x, const Eigen::VectorXd& y,
                                const Eigen::MatrixXd& z);
QuadraticDriver truncate_driver(const QuadraticDriver& f, double k);

/// Largest |g(y,z) - g(y',z')| / (|y - y'| + |z - z'|) over random pairs.
double estimate_lipschitz(const QuadraticDriver& f, std::size_t samples = 2000, std::uint64_t seed = 5);

struct AbCondition {
    std::function<double(double t, const PathState& x)> rho;
    std::vector<Eigen::VectorXd> a;
};

struct QuadraticSpec {
    std::string name;
    TerminalFn xi;
    QuadraticDriver driver;
    double T = 1.0;
    std::optional<AbCondition> ab; // required for unidirectional drivers
};

enum class PicardInit { zero, conditional_terminal };
std::string to_string(PicardInit init);

struct QuadraticConfig {
    std::vector<double> k_schedule = {2, 4, 8, 16, 32, 64, 128};
    double inactive_margin = 0.2;   // accept k once the Z sup estimate is below k / (1 + margin)
    double step_tolerance = 1e-10;  // per-step Picard tolerance on |Y^{j+1} - Y^j|
    std::size_t step_max_iters = 200;
    std::size_t max_halvings = 3;
    PicardInit init = PicardInit::zero;
    RegressionConfig regression;
    double sup_trim = 0.02;         // fraction of extreme states excluded from the Z sup estimate
};

struct EscalationEntry {
    double k = 0.0;
    double z_sup = 0.0;       // trimmed sup over steps and paths of |Z|
    double z_sup_raw = 0.0;   // untrimmed
    double active_fraction = 0.0; // share of (path, step) with |Z| > k
    bool accepted = false;
};

struct QuadraticSolution {
    SolutionEnsemble solution;
    std::shared_ptr<const PathEnsemble> paths;
    double k_accepted = 0.0;
    std::vector<EscalationEntry> escalation;
    std::size_t halvings = 0;
    std::size_t damped_steps = 0;
    std::size_t max_step_iterations = 0;
    NormEstimate Y_sup;   // |Y|_{S^inf} estimate
    double Y_sup_trimmed = 0.0; // same sup with the sup_trim extreme states excluded
    NormEstimate Z_bmo;
};

/// Backward Euler Z_k = E_k[Y_{k+1} dB]/dt, Y_k = E_k[Y_{k+1}] + f^k(Y_k, Z_k) dt with a per-step
/// Picard iteration in Y_k, escalating the truncation level until it is inactive at the
/// solution. Paths come from (K, paths, seed); a diverging step Picard halves dt.
QuadraticSolution solve_quadratic(const QuadraticSpec& spec, std::size_t K, std::size_t paths, std::uint64_t seed,
                                  const QuadraticConfig& cfg = {});
/// Same on a given ensemble and estimator (no step halving).
QuadraticSolution solve_quadratic_on(const QuadraticSpec& spec, std::shared_ptr<const PathEnsemble> paths,
                                     const ConditionalEstimator& est, const QuadraticConfig& cfg = {});

/// Per step RMS of E_k[exp(2b Y_{k+1}) - exp(2b Y_k)], relative to the mean of exp(2b Y_k).
std::vector<double> cole_hopf_residual(const QuadraticSolution& sol, double b, const ConditionalEstimator& est);

/// Positive spanning decided by LP: {a_m} positively span R^n iff they span R^n linearly and
/// some strictly positive combination vanishes.
struct SpanningCertificate {
    bool spanning = false;
    std::size_t rank = 0;
    Eigen::VectorXd weights; // lambda >= 1 with sum lambda_m a_m = 0 when spanning
    std::string reason;
};
SpanningCertificate positive_spanning(const std::vector<Eigen::VectorXd>& a);

struct AbViolation {
    std::size_t m = 0;
    double t = 0.0, margin = 0.0;
    Eigen::VectorXd y;
    Eigen::MatrixXd z;
};

struct AbReport {
    SpanningCertificate spanning;
    double worst_margin = 0.0;           // min of rho + |a_m^T z|^2 / 2 - a_m^T f
    std::size_t samples = 0;
    std::vector<AbViolation> violations; // at most 20
};

struct SampleConfig {
    std::size_t samples = 2000;
    double y_radius = 2.0;
    double z_radius = 4.0;
    double T = 1.0;
    std::uint64_t seed = 9;
};

AbReport check_ab_condition(const AbCondition& cond, const QuadraticDriver& f, const SampleConfig& cfg = {});

struct LyapunovPair {
    std::string name;
    std::function<double(const Eigen::VectorXd&)> h;
    std::function<Eigen::VectorXd(const Eigen::VectorXd&)> grad;
    std::function<Eigen::MatrixXd(const Eigen::VectorXd&)> hess;
    double k = 0.0;
    double c = 1.0;
};

/// h(y) = |y|^2 with the given k and radius c.
LyapunovPair squared_norm_pair(double k, double c);

struct LyapunovReport {
    bool valid_pair = false;
    std::string reason;
    double worst_margin = 0.0;    // min of (1/2) sum D2h_ij z^i.z^j - Dh.f - |z|^2 + k
    std::size_t samples = 0;
    double lemma_bound = 0.0;     // k T + 2 sup_{|y| <= c} h(y)
    std::optional<double> bmo_squared; // estimate on a solved instance
    std::optional<double> bmo_squared_se;
    std::optional<bool> lemma_holds;   // bmo^2 <= bound + 3 se
};

LyapunovReport check_lyapunov(const LyapunovPair& pair, const QuadraticDriver& f, const SampleConfig& cfg = {},
                              const QuadraticSolution* solved = nullptr, const ConditionalEstimator* est = nullptr);

struct LinearizationReport {
    std::vector<double> residual;   // per step RMS residual of the linear difference equation
    double max_residual = 0.0;
    double dY_sup = 0.0;            // trimmed as for the Z sup (extreme states excluded)
    double dY_sup_raw = 0.0;
    double dZ_bmo = 0.0, dxi_sup = 0.0;
    double ratio = 0.0;             // |dY|_{S^inf} / |dxi|_{L^inf}
    double bmo_ratio = 0.0;         // (|dY|_{S^inf} + |dZ|_bmo) / |dxi|_{L^inf}
};

/// Both solutions on the same paths and truncation level. The Z coefficient is assembled as
/// Z' b^T + Diag(b^T Z) (quadratic-linear) or a (dh/dZ)^T (unidirectional), the g part by
/// coordinatewise finite differences.
LinearizationReport linearized_difference_check(const QuadraticSolution& s1, const QuadraticSolution& s2,
                                                const QuadraticDriver& f, const ConditionalEstimator& est,
                                                double sup_trim = 0.02);

std::vector<std::string> shipped_quadratic_names();
QuadraticSpec shipped_quadratic(const std::string& name);

} // namespace bsdelab
