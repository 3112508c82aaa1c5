#include "bsdelab/oracle/tree.hpp"

#include "bsdelab/core/error.hpp"
#include "bsdelab/core/rng.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace bsdelab {

namespace {

using Index = Eigen::Index;

Index ix(std::size_t i) { return static_cast<Index>(i); }

} // namespace

BinaryTree::BinaryTree(std::size_t K, std::size_t d, double T) : K_(K), d_(d), T_(T) {
    BSDELAB_REQUIRE(K >= 1 && d >= 1, "tree needs at least one step and one dimension");
    BSDELAB_REQUIRE(T > 0.0, "tree horizon must be positive");
    BSDELAB_REQUIRE(K * d <= 24, "tree too large to enumerate (K d > 24)");
}

std::size_t BinaryTree::nodes(std::size_t k) const {
    BSDELAB_REQUIRE(k <= K_, "tree level out of range");
    return std::size_t{1} << (d_ * k);
}

std::size_t BinaryTree::block(std::size_t k) const {
    BSDELAB_REQUIRE(k <= K_, "tree level out of range");
    return std::size_t{1} << (d_ * (K_ - k));
}

double BinaryTree::increment(std::size_t k, std::size_t child_node, std::size_t l) const {
    (void)k;
    const std::size_t digit = child_node & (branching() - 1);
    const double s = std::sqrt(dt());
    return ((digit >> l) & 1U) ? s : -s;
}

Eigen::VectorXd BinaryTree::state(std::size_t k, std::size_t node) const {
    Eigen::VectorXd x = Eigen::VectorXd::Zero(ix(d_));
    for (std::size_t j = 1; j <= k; ++j) {
        const std::size_t anc = node >> (d_ * (k - j));
        for (std::size_t l = 0; l < d_; ++l) x(ix(l)) += increment(j - 1, anc, l);
    }
    return x;
}

BinaryTree::NodeState BinaryTree::node_state(std::size_t k, std::size_t node) const {
    NodeState st;
    st.x.assign(d_, 0.0);
    st.max_abs.assign(d_, 0.0);
    for (std::size_t j = 1; j <= k; ++j) {
        const std::size_t anc = node >> (d_ * (k - j));
        for (std::size_t l = 0; l < d_; ++l) {
            st.x[l] += increment(j - 1, anc, l);
            st.max_abs[l] = std::max(st.max_abs[l], std::abs(st.x[l]));
        }
    }
    return st;
}

PathEnsemble BinaryTree::ensemble() const {
    const std::size_t L = leaves();
    std::vector<double> inc(L * K_ * d_);
    for (std::size_t leaf = 0; leaf < L; ++leaf)
        for (std::size_t k = 0; k < K_; ++k) {
            const std::size_t child = node_of(leaf, k + 1);
            for (std::size_t l = 0; l < d_; ++l) inc[(leaf * K_ + k) * d_ + l] = increment(k, child, l);
        }
    return PathEnsemble::enumerated(TimeGrid::uniform(T_, K_), d_, std::move(inc));
}

Eigen::MatrixXd discrete_conditional_expectation(const BinaryTree& tree, const Eigen::MatrixXd& leaf_values,
                                                 std::size_t k) {
    BSDELAB_REQUIRE(static_cast<std::size_t>(leaf_values.rows()) == tree.leaves(), "one row per leaf expected");
    const std::size_t N = tree.nodes(k), B = tree.block(k);
    Eigen::MatrixXd out(ix(N), leaf_values.cols());
    for (std::size_t v = 0; v < N; ++v)
        out.row(ix(v)) = leaf_values.middleRows(ix(v * B), ix(B)).colwise().mean();
    return out;
}

DiscreteExponential discrete_exponential(const BinaryTree& tree, const NodeField& A, double singular_tol) {
    const std::size_t K = tree.steps(), d = tree.dim();
    BSDELAB_REQUIRE(A.size() == K, "node field needs one level per step");
    const std::size_t n = A[0].at(0).n();
    DiscreteExponential out;
    out.S.resize(K + 1);
    out.S[0].assign(1, Eigen::MatrixXd::Identity(ix(n), ix(n)));
    out.min_abs_det = 1.0;
    std::vector<double> dB(d);
    for (std::size_t k = 0; k < K; ++k) {
        BSDELAB_REQUIRE(A[k].size() == tree.nodes(k), "node field level has the wrong number of nodes");
        out.S[k + 1].resize(tree.nodes(k + 1));
        for (std::size_t child = 0; child < tree.nodes(k + 1); ++child) {
            const std::size_t parent = child / tree.branching();
            for (std::size_t l = 0; l < d; ++l) dB[l] = tree.increment(k, child, l);
            Eigen::MatrixXd G = Eigen::MatrixXd::Identity(ix(n), ix(n)) + A[k][parent].against(dB.data());
            const double det = std::abs(G.determinant());
            out.min_abs_det = std::min(out.min_abs_det, det);
            if (det < singular_tol) out.singular_nodes.emplace_back(k + 1, child);
            out.S[k + 1][child] = out.S[k][parent] * G;
        }
    }
    return out;
}

DiscreteBsdeSolution discrete_linear_bsde_solve(const BinaryTree& tree, const Eigen::MatrixXd& xi,
                                                const NodeValues& beta, const NodeField& A) {
    const std::size_t K = tree.steps(), d = tree.dim(), b = tree.branching();
    BSDELAB_REQUIRE(static_cast<std::size_t>(xi.rows()) == tree.leaves(), "terminal value needs one row per leaf");
    BSDELAB_REQUIRE(A.size() == K, "node field needs one level per step");
    BSDELAB_REQUIRE(beta.empty() || beta.size() >= K, "beta needs one level per step");
    const auto n = static_cast<std::size_t>(xi.cols());
    const double dt = tree.dt();

    DiscreteBsdeSolution sol;
    sol.Y.resize(K + 1);
    sol.Z.resize(K);
    sol.Y[K] = xi;
    std::vector<double> dB(d);
    for (std::size_t kk = K; kk-- > 0;) {
        const std::size_t N = tree.nodes(kk);
        Eigen::MatrixXd& Y = sol.Y[kk];
        Eigen::MatrixXd& Z = sol.Z[kk];
        Y.setZero(ix(N), ix(n));
        Z.setZero(ix(N), ix(n * d));
        const Eigen::MatrixXd& next = sol.Y[kk + 1];
        for (std::size_t v = 0; v < N; ++v) {
            BSDELAB_REQUIRE(A[kk][v].n() == n && A[kk][v].d() == d, "coefficient shape does not match (n, d)");
            Eigen::VectorXd mean = Eigen::VectorXd::Zero(ix(n));
            Eigen::MatrixXd z = Eigen::MatrixXd::Zero(ix(n), ix(d));
            for (std::size_t c = 0; c < b; ++c) {
                const std::size_t child = v * b + c;
                const Eigen::VectorXd y = next.row(ix(child)).transpose();
                mean += y;
                for (std::size_t l = 0; l < d; ++l) z.col(ix(l)) += y * tree.increment(kk, child, l);
            }
            mean /= static_cast<double>(b);
            z /= static_cast<double>(b) * dt;
            Eigen::VectorXd drift = Eigen::VectorXd::Zero(ix(n));
            for (std::size_t l = 0; l < d; ++l) drift += A[kk][v].component(l) * z.col(ix(l));
            if (!beta.empty()) drift += beta[kk].row(ix(v)).transpose();
            Y.row(ix(v)) = (mean + drift * dt).transpose();
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t l = 0; l < d; ++l) Z(ix(v), ix(i * d + l)) = z(ix(i), ix(l));

            // what the martingale increment misses: products of distinct coordinates of dB
            for (std::size_t c = 0; c < b; ++c) {
                const std::size_t child = v * b + c;
                Eigen::VectorXd fit = mean;
                for (std::size_t l = 0; l < d; ++l) fit += z.col(ix(l)) * tree.increment(kk, child, l);
                sol.orthogonal_norm =
                    std::max(sol.orthogonal_norm, (next.row(ix(child)).transpose() - fit).norm());
            }
            const Eigen::VectorXd res = Y.row(ix(v)).transpose() - mean - drift * dt;
            sol.max_residual = std::max(sol.max_residual, res.norm());
        }
    }
    return sol;
}

NodeValues representation_formula(const BinaryTree& tree, const NodeMatrices& S, const Eigen::MatrixXd& xi,
                                  const NodeValues& beta) {
    const std::size_t K = tree.steps();
    BSDELAB_REQUIRE(S.size() == K + 1, "S needs every level");
    const auto n = xi.cols();
    const double dt = tree.dt();
    NodeValues out(K + 1);
    for (std::size_t k = 0; k <= K; ++k) {
        const std::size_t N = tree.nodes(k), B = tree.block(k);
        out[k].resize(ix(N), n);
        for (std::size_t v = 0; v < N; ++v) {
            Eigen::VectorXd acc = Eigen::VectorXd::Zero(n);
            for (std::size_t leaf = v * B; leaf < (v + 1) * B; ++leaf) {
                Eigen::VectorXd term = S[K][leaf] * xi.row(ix(leaf)).transpose();
                if (!beta.empty())
                    for (std::size_t j = k; j < K; ++j) {
                        const std::size_t u = tree.node_of(leaf, j);
                        term += S[j][u] * beta[j].row(ix(u)).transpose() * dt;
                    }
                acc += term;
            }
            acc /= static_cast<double>(B);
            out[k].row(ix(v)) = S[k][v].fullPivLu().solve(acc).transpose();
        }
    }
    return out;
}

TreeReverseHolder discrete_reverse_holder(const BinaryTree& tree, const NodeMatrices& S, double p) {
    BSDELAB_REQUIRE(p >= 1.0, "reverse Hoelder exponent must be at least 1");
    const std::size_t K = tree.steps();
    TreeReverseHolder out;
    out.Rp = -1.0;
    for (std::size_t k = 0; k <= K; ++k) {
        const std::size_t B = tree.block(k);
        double level_max = 0.0;
        for (std::size_t v = 0; v < tree.nodes(k); ++v) {
            const Eigen::FullPivLU<Eigen::MatrixXd> lu(S[k][v]);
            BSDELAB_REQUIRE(lu.isInvertible(), "S is singular at a tree node");
            const Eigen::MatrixXd inv = lu.inverse();
            double s = 0.0;
            for (std::size_t leaf = v * B; leaf < (v + 1) * B; ++leaf) s += std::pow(operator_norm(inv * S[K][leaf]), p);
            s /= static_cast<double>(B);
            level_max = std::max(level_max, s);
            if (s > out.Rp) {
                out.Rp = s;
                out.level = k;
                out.node = v;
            }
        }
        out.level_max.push_back(level_max);
    }
    return out;
}

namespace {

// ||E[X.Y | F_k]||_q / ||Y||_q with equally likely nodes and leaves; q = inf when p = 1.
double duality_ratio(const BinaryTree& tree, const Eigen::MatrixXd& X, const Eigen::MatrixXd& Y, std::size_t k,
                     double q) {
    const Eigen::VectorXd dot = X.cwiseProduct(Y).rowwise().sum();
    const Eigen::VectorXd cond = discrete_conditional_expectation(tree, dot, k).col(0).cwiseAbs();
    const Eigen::VectorXd ynorm = Y.rowwise().norm();
    double num, den;
    if (std::isinf(q)) {
        num = cond.maxCoeff();
        den = ynorm.maxCoeff();
    } else {
        num = std::pow(cond.array().pow(q).mean(), 1.0 / q);
        den = std::pow(ynorm.array().pow(q).mean(), 1.0 / q);
    }
    return den > 0.0 ? num / den : 0.0;
}

} // namespace

DualityResult verify_duality_lemma(const BinaryTree& tree, const Eigen::MatrixXd& X, std::size_t k, double p,
                                   std::size_t random_trials, std::uint64_t seed) {
    BSDELAB_REQUIRE(p >= 1.0 && std::isfinite(p), "duality exponent must be finite and at least 1");
    BSDELAB_REQUIRE(static_cast<std::size_t>(X.rows()) == tree.leaves(), "X needs one row per leaf");
    const double q = p > 1.0 ? p / (p - 1.0) : std::numeric_limits<double>::infinity();
    const Eigen::VectorXd absX = X.rowwise().norm();
    const Eigen::VectorXd cond = discrete_conditional_expectation(tree, absX.array().pow(p).matrix(), k).col(0);

    DualityResult out;
    Index node = 0;
    out.lhs = std::pow(cond.maxCoeff(&node), 1.0 / p);
    out.witness_node = static_cast<std::size_t>(node);

    // witness: Y = 1_G |X|^{p-2} X on the maximizing atom G (X/|X| when p = 1)
    const std::size_t B = tree.block(k);
    Eigen::MatrixXd W = Eigen::MatrixXd::Zero(X.rows(), X.cols());
    for (std::size_t leaf = out.witness_node * B; leaf < (out.witness_node + 1) * B; ++leaf) {
        const double r = absX(ix(leaf));
        if (r > 0.0) W.row(ix(leaf)) = X.row(ix(leaf)) * std::pow(r, p - 2.0);
    }
    out.rhs = duality_ratio(tree, X, W, k, q);

    out.random_trials = random_trials;
    for (std::size_t t = 0; t < random_trials; ++t) {
        const std::uint64_t key = derive_key(seed, t);
        Eigen::MatrixXd Y(X.rows(), X.cols());
        for (Index i = 0; i < Y.size(); ++i) Y.data()[i] = counter_normal(key, static_cast<std::uint64_t>(i));
        out.random_max_ratio = std::max(out.random_max_ratio, duality_ratio(tree, X, Y, k, q));
    }
    out.gap = out.lhs - std::max(out.rhs, out.random_max_ratio);
    return out;
}

MatrixDualityResult verify_matrix_duality(const BinaryTree& tree, const std::vector<Eigen::MatrixXd>& A,
                                          std::size_t k, double p, std::size_t random_trials, std::uint64_t seed) {
    BSDELAB_REQUIRE(A.size() == tree.leaves(), "A needs one matrix per leaf");
    const Index n = A[0].rows();
    MatrixDualityResult out;
    Eigen::VectorXd opnorm(ix(A.size()));
    for (std::size_t leaf = 0; leaf < A.size(); ++leaf) opnorm(ix(leaf)) = std::pow(operator_norm(A[leaf]), p);
    out.lhs = std::pow(discrete_conditional_expectation(tree, opnorm, k).maxCoeff(), 1.0 / p);

    double cmax = 0.0;
    for (Index i = 0; i < n; ++i) {
        Eigen::MatrixXd row(ix(A.size()), A[0].cols());
        for (std::size_t leaf = 0; leaf < A.size(); ++leaf) row.row(ix(leaf)) = A[leaf].row(i);
        const DualityResult r = verify_duality_lemma(tree, row, k, p, random_trials, derive_key(seed, static_cast<std::uint64_t>(i)));
        out.row_constants.push_back(r.rhs);
        cmax = std::max(cmax, r.rhs);
    }
    // |A| <= sqrt(n) max_i |A^i|, so E[|A|^p | F] <= n^{p/2} sum_i E[|A^i|^p | F]
    out.bound = std::pow(static_cast<double>(n), 0.5 + 1.0 / p) * cmax;
    out.holds = out.lhs <= out.bound * (1.0 + 1e-12);
    return out;
}

TreeInstance random_tree_instance(std::uint64_t seed, std::size_t max_K, std::size_t max_n, std::size_t max_d,
                                  double scale) {
    BSDELAB_REQUIRE(max_K >= 1 && max_n >= 1 && max_d >= 1, "instance bounds must be positive");
    BSDELAB_REQUIRE(scale > 0.0 && scale < 1.0, "scale must lie in (0, 1) to keep I + A dB invertible");
    CounterStream rs(derive_key(seed, 0));
    auto pick = [&](std::size_t hi) { return 1 + std::min(hi - 1, static_cast<std::size_t>(rs.uniform() * static_cast<double>(hi))); };
    const std::size_t d = pick(max_d);
    std::size_t K = pick(max_K);
    while (K * d > 12) --K;
    const std::size_t n = pick(max_n);
    const double T = 0.5 + rs.uniform();

    TreeInstance inst;
    inst.tree = BinaryTree(K, d, T);
    inst.n = n;
    inst.seed = seed;
    // each |A_l| <= scale / d, so |A dB| <= scale sqrt(dt) < 1
    const double amp = scale / static_cast<double>(d * n);
    inst.A.resize(K);
    inst.beta.resize(K);
    for (std::size_t k = 0; k < K; ++k) {
        inst.beta[k].resize(ix(inst.tree.nodes(k)), ix(n));
        for (std::size_t v = 0; v < inst.tree.nodes(k); ++v) {
            MatD a(n, d);
            for (std::size_t l = 0; l < d; ++l)
                for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t j = 0; j < n; ++j) a.component(l)(ix(i), ix(j)) = amp * (2.0 * rs.uniform() - 1.0);
            inst.A[k].push_back(std::move(a));
            for (std::size_t i = 0; i < n; ++i) inst.beta[k](ix(v), ix(i)) = rs.normal();
        }
    }
    inst.xi.resize(ix(inst.tree.leaves()), ix(n));
    for (Index i = 0; i < inst.xi.size(); ++i) inst.xi.data()[i] = rs.normal();
    return inst;
}

} // namespace bsdelab
