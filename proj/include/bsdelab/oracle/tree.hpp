#pragma once

#include "bsdelab/core/brownian.hpp"
#include "bsdelab/core/tensor.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <string>
#include <vector>

namespace bsdelab {

/// Product filtration of K steps with 2^d equally likely children per node; child digit bit l
/// sets the increment of coordinate l to +sqrt(dt) (bit 1) or -sqrt(dt) (bit 0). Leaves are
/// numbered with the first step in the most significant digit, so the node of leaf i at level
/// k is i / block(k).
class BinaryTree {
public:
    BinaryTree(std::size_t K, std::size_t d, double T = 1.0);

    std::size_t steps() const { return K_; }
    std::size_t dim() const { return d_; }
    double horizon() const { return T_; }
    double dt() const { return T_ / static_cast<double>(K_); }
    std::size_t branching() const { return std::size_t{1} << d_; }
    std::size_t leaves() const { return block(0); }
    std::size_t nodes(std::size_t k) const;
    std::size_t block(std::size_t k) const;
    std::size_t node_of(std::size_t leaf, std::size_t k) const { return leaf / block(k); }

    /// Increment of coordinate l on the step from level k to k+1 below `node` at level k+1.
    double increment(std::size_t k, std::size_t child_node, std::size_t l) const;
    /// Brownian state at a node.
    Eigen::VectorXd state(std::size_t k, std::size_t node) const;
    /// Node state as a PathState (valid while the returned storage lives).
    struct NodeState {
        std::vector<double> x, max_abs;
        PathState view(double t, std::size_t k) const { return {t, k, x.size(), x.data(), max_abs.data()}; }
    };
    NodeState node_state(std::size_t k, std::size_t node) const;

    PathEnsemble ensemble() const;

private:
    std::size_t K_, d_;
    double T_;
};

/// Per level k: nodes(k) x width matrix of node values.
using NodeValues = std::vector<Eigen::MatrixXd>;
/// Per level k < K and node: the coefficient A.
using NodeField = std::vector<std::vector<MatD>>;
/// Per level k and node: an n x n matrix.
using NodeMatrices = std::vector<std::vector<Eigen::MatrixXd>>;

/// Exact E[X | F_k] as node values (nodes(k) x c) from leaf values (leaves x c).
Eigen::MatrixXd discrete_conditional_expectation(const BinaryTree& tree, const Eigen::MatrixXd& leaf_values,
                                                 std::size_t k);

struct DiscreteExponential {
    NodeMatrices S;
    double min_abs_det = 0.0;
    std::vector<std::pair<std::size_t, std::size_t>> singular_nodes; // (level, node)
    bool invertible() const { return singular_nodes.empty(); }
};

/// S at a node is the ordered product of (I + A_j dB_j) along its path; singular nodes are flagged.
DiscreteExponential discrete_exponential(const BinaryTree& tree, const NodeField& A, double singular_tol = 1e-12);

struct DiscreteBsdeSolution {
    NodeValues Y;                // levels 0..K, nodes x n
    NodeValues Z;                // levels 0..K-1, nodes x (n d), entry z^i_l at column i*d + l
    double max_residual = 0.0;   // backward recursion residual
    double orthogonal_norm = 0.0; // size of the part of Y_{k+1} not spanned by 1 and dB (d >= 2)
};

/// Backward induction Z_k = E_k[Y_{k+1} dB]/dt, Y_k = E_k[Y_{k+1}] + (A_k Z_k + beta_k) dt.
/// beta may be empty (homogeneous equation).
DiscreteBsdeSolution discrete_linear_bsde_solve(const BinaryTree& tree, const Eigen::MatrixXd& xi,
                                                const NodeValues& beta, const NodeField& A);

/// Brute force S_k^{-1} E_k[S_K xi + sum_{j >= k} S_j beta_j dt] at every node.
NodeValues representation_formula(const BinaryTree& tree, const NodeMatrices& S, const Eigen::MatrixXd& xi,
                                  const NodeValues& beta);

struct TreeReverseHolder {
    double Rp = 1.0;
    std::size_t level = 0, node = 0;
    std::vector<double> level_max;
};

/// Exact max over nodes v of E[|S_v^{-1} S_K|^p | v] (operator norm).
TreeReverseHolder discrete_reverse_holder(const BinaryTree& tree, const NodeMatrices& S, double p);

struct DualityResult {
    double lhs = 0.0;              // ||E[|X|^p | F_k]||_inf^{1/p}
    double rhs = 0.0;              // ratio attained by the proof's witness
    double gap = 0.0;              // lhs - max over the tested family
    double random_max_ratio = 0.0; // largest ratio over random test vectors
    std::size_t random_trials = 0;
    std::size_t witness_node = 0;
};

/// Vector duality lemma on the tree: ratio(Y) = ||E[X.Y | F_k]||_q / ||Y||_q.
DualityResult verify_duality_lemma(const BinaryTree& tree, const Eigen::MatrixXd& X, std::size_t k, double p,
                                   std::size_t random_trials = 64, std::uint64_t seed = 7);

struct MatrixDualityResult {
    double lhs = 0.0;                  // ||E[|A|^p | F_k]||_inf^{1/p}, operator norm
    std::vector<double> row_constants; // smallest C for each row, from the vector lemma
    double bound = 0.0;                // n^{1/2 + 1/p} max_i C_i
    bool holds = false;
};

/// Row-wise matrix version; A holds one n x n matrix per leaf.
MatrixDualityResult verify_matrix_duality(const BinaryTree& tree, const std::vector<Eigen::MatrixXd>& A,
                                          std::size_t k, double p, std::size_t random_trials = 16,
                                          std::uint64_t seed = 7);

/// A random linear instance on a random tree: K <= max_K, n <= max_n, d <= max_d.
struct TreeInstance {
    BinaryTree tree{1, 1};
    NodeField A;
    Eigen::MatrixXd xi;
    NodeValues beta;
    std::size_t n = 1;
    std::uint64_t seed = 0;
};
TreeInstance random_tree_instance(std::uint64_t seed, std::size_t max_K = 8, std::size_t max_n = 3,
                                  std::size_t max_d = 2, double scale = 0.8);

/// Node field from a coefficient function of (t, state).
template <class Field>
NodeField node_field(const BinaryTree& tree, const Field& field, std::size_t n) {
    NodeField A(tree.steps());
    for (std::size_t k = 0; k < tree.steps(); ++k) {
        A[k].reserve(tree.nodes(k));
        for (std::size_t v = 0; v < tree.nodes(k); ++v) {
            const auto st = tree.node_state(k, v);
            MatD a(n, tree.dim());
            field.eval(static_cast<double>(k) * tree.dt(), st.view(static_cast<double>(k) * tree.dt(), k), a);
            A[k].push_back(std::move(a));
        }
    }
    return A;
}

} // namespace bsdelab
