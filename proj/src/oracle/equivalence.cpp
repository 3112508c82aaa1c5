#include "bsdelab/oracle/equivalence.hpp"

#include "bsdelab/core/error.hpp"
#include "bsdelab/core/rng.hpp"
#include "bsdelab/core/tensor.hpp"

#include <cmath>
#include <iomanip>
#include <ostream>

namespace bsdelab {

namespace {

using Index = Eigen::Index;
Index ix(std::size_t i) { return static_cast<Index>(i); }

std::vector<Eigen::VectorXd> candidate_directions(std::size_t n, std::size_t count, std::uint64_t seed) {
    std::vector<Eigen::VectorXd> dirs;
    for (std::size_t i = 0; i < n; ++i) dirs.push_back(Eigen::VectorXd::Unit(ix(n), ix(i)));
    if (n == 1) return dirs;
    CounterStream rs(seed);
    for (std::size_t c = 0; c < count; ++c) {
        Eigen::VectorXd u(ix(n));
        for (std::size_t i = 0; i < n; ++i) u(ix(i)) = rs.normal();
        if (u.norm() > 0.0) dirs.push_back(u.normalized());
    }
    return dirs;
}

// E over the given leaf matrices of |u^T M|, and the gradient sum M (M^T u)/|M^T u| / count.
double row_mean(const std::vector<Eigen::MatrixXd>& M, const Eigen::VectorXd& u, Eigen::VectorXd* grad) {
    double s = 0.0;
    if (grad) grad->setZero(u.size());
    for (const auto& m : M) {
        const Eigen::VectorXd r = m.transpose() * u;
        const double nr = r.norm();
        s += nr;
        if (grad && nr > 0.0) *grad += m * r / nr;
    }
    const double c = static_cast<double>(M.size());
    if (grad) *grad /= c;
    return s / c;
}

} // namespace

OperatorNormWitness tree_operator_norm_inf(const BinaryTree& tree, const NodeMatrices& S, std::size_t directions,
                                           std::uint64_t seed) {
    const std::size_t K = tree.steps();
    BSDELAB_REQUIRE(S.size() == K + 1, "S must hold levels 0..K");
    const std::size_t n = static_cast<std::size_t>(S[0][0].rows());
    const auto dirs = candidate_directions(n, directions, seed);
    OperatorNormWitness best;
    std::vector<Eigen::MatrixXd> M;
    for (std::size_t k = 0; k <= K; ++k) {
        const std::size_t B = tree.block(k);
        for (std::size_t v = 0; v < tree.nodes(k); ++v) {
            Eigen::PartialPivLU<Eigen::MatrixXd> lu(S[k][v]);
            M.clear();
            for (std::size_t leaf = v * B; leaf < (v + 1) * B; ++leaf) M.push_back(lu.solve(S[K][leaf]));
            Eigen::VectorXd u = dirs[0];
            double val = -1.0;
            for (const auto& c : dirs) {
                const double f = row_mean(M, c, nullptr);
                if (f > val) {
                    val = f;
                    u = c;
                }
            }
            Eigen::VectorXd g;
            for (int it = 0; it < 50 && n > 1; ++it) {
                row_mean(M, u, &g);
                if (g.norm() == 0.0) break;
                const Eigen::VectorXd next = g.normalized();
                const double f = row_mean(M, next, nullptr);
                if (f <= val * (1.0 + 1e-15)) break;
                val = f;
                u = next;
            }
            if (val > best.value) {
                best.value = val;
                best.level = k;
                best.node = v;
                best.direction = u;
            }
        }
    }
    // witness terminal value below the maximizing node
    const std::size_t B = tree.block(best.level);
    best.xi = Eigen::MatrixXd::Zero(ix(tree.leaves()), ix(n));
    Eigen::PartialPivLU<Eigen::MatrixXd> lu(S[best.level][best.node]);
    for (std::size_t leaf = best.node * B; leaf < (best.node + 1) * B; ++leaf) {
        const Eigen::VectorXd r = lu.solve(S[K][leaf]).transpose() * best.direction;
        if (r.norm() > 0.0) best.xi.row(ix(leaf)) = (r / r.norm()).transpose();
    }
    return best;
}

double l1inf_norm(const BinaryTree& tree, const NodeValues& beta) {
    const std::size_t K = tree.steps();
    if (beta.empty()) return 0.0;
    // tail[leaf] = sum_{j >= k} |beta_j| dt along the leaf's path, built backwards
    Eigen::MatrixXd tail = Eigen::MatrixXd::Zero(ix(tree.leaves()), 1);
    double out = 0.0;
    for (std::size_t k = K; k-- > 0;) {
        for (std::size_t leaf = 0; leaf < tree.leaves(); ++leaf)
            tail(ix(leaf), 0) += beta[k].row(ix(tree.node_of(leaf, k))).norm() * tree.dt();
        out = std::max(out, discrete_conditional_expectation(tree, tail, k).maxCoeff());
    }
    return out;
}

namespace {

double s_inf(const NodeValues& Y) {
    double s = 0.0;
    for (const auto& level : Y) s = std::max(s, level.rowwise().norm().maxCoeff());
    return s;
}

} // namespace

EquivalenceRow equivalence_check(const TreeInstance& inst, std::size_t directions) {
    const BinaryTree& tree = inst.tree;
    EquivalenceRow row;
    row.seed = inst.seed;
    row.K = tree.steps();
    row.n = inst.n;
    row.d = tree.dim();
    const DiscreteExponential ex = discrete_exponential(tree, inst.A);
    if (!ex.invertible()) {
        row.singular = true;
        return row;
    }
    const NodeMatrices& S = ex.S;
    row.R1 = discrete_reverse_holder(tree, S, 1.0).Rp;
    row.R2 = discrete_reverse_holder(tree, S, 2.0).Rp;

    // E_v[S_{k+1}] = S_v
    for (std::size_t k = 0; k < tree.steps(); ++k)
        for (std::size_t v = 0; v < tree.nodes(k); ++v) {
            Eigen::MatrixXd mean = Eigen::MatrixXd::Zero(ix(inst.n), ix(inst.n));
            const std::size_t b = tree.branching();
            for (std::size_t c = v * b; c < (v + 1) * b; ++c) mean += S[k + 1][c];
            row.martingale_defect = std::max(row.martingale_defect, (mean / static_cast<double>(b) - S[k][v]).norm());
        }

    const OperatorNormWitness w = tree_operator_norm_inf(tree, S, directions, inst.seed);
    row.op_norm = w.value;
    const DiscreteBsdeSolution ws = discrete_linear_bsde_solve(tree, w.xi, {}, inst.A);
    row.reproduction_error = std::abs(w.direction.dot(ws.Y[w.level].row(ix(w.node)).transpose()) - w.value);

    // psi: |Y|_S^inf <= R1 (|xi|_inf + |beta|_{L^{1,inf}}) over a family spanning the constants
    auto psi = [&](const Eigen::MatrixXd& xi, const NodeValues& beta) {
        const DiscreteBsdeSolution s = discrete_linear_bsde_solve(tree, xi, beta, inst.A);
        const double data = xi.rowwise().norm().maxCoeff() + l1inf_norm(tree, beta);
        return data > 0.0 ? s_inf(s.Y) / (row.R1 * data) : 0.0;
    };
    for (std::size_t j = 0; j < inst.n; ++j) {
        Eigen::MatrixXd e = Eigen::MatrixXd::Zero(ix(tree.leaves()), ix(inst.n));
        e.col(ix(j)).setOnes();
        row.psi_ratio = std::max(row.psi_ratio, psi(e, {}));
    }
    row.psi_ratio = std::max(row.psi_ratio, psi(w.xi, {}));
    row.psi_ratio = std::max(row.psi_ratio, psi(inst.xi, inst.beta));

    row.phi_ratio = row.R1 / (static_cast<double>(inst.n) * row.op_norm);
    row.lower_ratio = row.op_norm / row.R1;
    row.holder_ratio = row.R1 / std::sqrt(row.R2);
    const double tol = 1e-10;
    row.pass = row.martingale_defect <= tol && row.reproduction_error <= tol * (1.0 + row.op_norm) &&
               row.psi_ratio <= 1.0 + tol && row.phi_ratio <= 1.0 + tol && row.lower_ratio <= 1.0 + tol &&
               row.holder_ratio <= 1.0 + tol;
    return row;
}

EquivalenceSuite run_equivalence_suite(std::size_t instances, std::uint64_t seed, std::size_t max_K,
                                       std::size_t max_n, std::size_t max_d) {
    EquivalenceSuite suite;
    for (std::size_t i = 0; i < instances; ++i) {
        suite.rows.push_back(equivalence_check(random_tree_instance(seed + i, max_K, max_n, max_d)));
        suite.passed += suite.rows.back().pass;
    }
    return suite;
}

void write_equivalence_csv(std::ostream& os, const EquivalenceSuite& suite) {
    os << "seed,K,n,d,R1,R2,op_norm,reproduction_error,martingale_defect,psi_ratio,phi_ratio,lower_ratio,"
          "holder_ratio,pass\n";
    os << std::setprecision(17);
    for (const auto& r : suite.rows)
        os << r.seed << ',' << r.K << ',' << r.n << ',' << r.d << ',' << r.R1 << ',' << r.R2 << ',' << r.op_norm << ','
           << r.reproduction_error << ',' << r.martingale_defect << ',' << r.psi_ratio << ',' << r.phi_ratio << ','
           << r.lower_ratio << ',' << r.holder_ratio << ',' << (r.pass ? 1 : 0) << '\n';
}

} // namespace bsdelab
