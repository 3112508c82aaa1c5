#pragma once

#include "bsdelab/oracle/tree.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <iosfwd>
#include <vector>

namespace bsdelab {

/// sup of |u^T Y_v| over |xi|_inf <= 1, nodes v and unit u for the homogeneous equation, where
/// Y_v = E_v[S_v^{-1} S_K xi]. For fixed (v, u) the sup is E_v|u^T S_v^{-1} S_K|, attained by
/// xi = M^T u / |M^T u|; u is searched over coordinate and sampled directions, then refined by
/// the gradient fixed point (monotone for this convex objective).
struct OperatorNormWitness {
    double value = 0.0;
    std::size_t level = 0, node = 0;
    Eigen::VectorXd direction;
    Eigen::MatrixXd xi; // leaves x n, zero outside the witness node
};
OperatorNormWitness tree_operator_norm_inf(const BinaryTree& tree, const NodeMatrices& S,
                                           std::size_t directions = 64, std::uint64_t seed = 17);

/// ess sup over nodes of E_v[sum_{j >= k} |beta_j| dt].
double l1inf_norm(const BinaryTree& tree, const NodeValues& beta);

/// Comparison of the exact reverse Holder constants with the exact solution operator at q = inf.
struct EquivalenceRow {
    std::uint64_t seed = 0;
    std::size_t K = 0, n = 0, d = 0;
    double R1 = 0.0, R2 = 0.0;
    double op_norm = 0.0;            // C_op
    double reproduction_error = 0.0; // |u^T Y_v(witness) - C_op| from the backward solve
    double martingale_defect = 0.0;  // max_v |E_v[S_{k+1}] - S_v|
    double psi_ratio = 0.0;          // max over the family of |Y|_S^inf / (R1 (|xi|_inf + |beta|_{1,inf}))
    double phi_ratio = 0.0;          // R1 / (n C_op)
    double lower_ratio = 0.0;        // C_op / R1
    double holder_ratio = 0.0;       // R1 / sqrt(R2)
    bool singular = false;
    bool pass = false;
};

EquivalenceRow equivalence_check(const TreeInstance& inst, std::size_t directions = 64);

struct EquivalenceSuite {
    std::vector<EquivalenceRow> rows;
    std::size_t passed = 0;
    bool all_passed() const { return passed == rows.size(); }
};

/// random_tree_instance(seed + i) for i < instances.
EquivalenceSuite run_equivalence_suite(std::size_t instances, std::uint64_t seed, std::size_t max_K = 8,
                                       std::size_t max_n = 3, std::size_t max_d = 2);

void write_equivalence_csv(std::ostream& os, const EquivalenceSuite& suite);

} // namespace bsdelab
