#pragma once

#include "bsdelab/core/brownian.hpp"
#include "bsdelab/core/tensor.hpp"

#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace bsdelab {

enum class Structure { generic, lower_triangular, right_outer, left_outer, diagonal, outer_plus_diagonal };

std::string to_string(Structure s);
Structure parse_structure(const std::string& s);

/// The coefficient A in (R^d)^{n x n} as a function of time and the Brownian state.
///
/// Outer-product fields keep their factors: right_outer has A^i_j = a^i b_j with an
/// (R^d)^n-valued a-field and constant b in R^n; left_outer has A^i_j = a_i b^j with
/// constant a and an (R^d)^n-valued b-field. outer_plus_diagonal adds Diag(lambda) to a
/// left outer product.
class CoefficientField {
public:
    using Eval = std::function<void(double t, const PathState& x, MatD& out)>;
    using VecField = std::function<VecD(double t, const PathState& x)>;

    CoefficientField(std::string name, std::size_t n, std::size_t d, Structure tag, Eval eval,
                     bool markov = true);

    static CoefficientField constant(std::string name, const MatD& A, Structure tag = Structure::generic);
    static CoefficientField scalar(std::string name, double a);
    static CoefficientField right_outer(std::string name, VecField a_field, Eigen::VectorXd b,
                                        std::size_t d = 1);
    static CoefficientField left_outer(std::string name, Eigen::VectorXd a, VecField b_field,
                                       std::size_t d = 1);
    static CoefficientField diagonal(std::string name, std::size_t n, std::size_t d, VecField lambda_field);
    static CoefficientField outer_plus_diagonal(std::string name, Eigen::VectorXd a, VecField b_field,
                                                VecField lambda_field, std::size_t d = 1);

    const std::string& name() const { return name_; }
    std::size_t n() const { return n_; }
    std::size_t d() const { return d_; }
    Structure structure() const { return tag_; }
    /// True when A depends on the path only through (t, B_t).
    bool markov() const { return markov_; }

    void eval(double t, const PathState& x, MatD& out) const { eval_(t, x, out); }
    MatD operator()(double t, const PathState& x) const;

    /// Factors of outer-product fields (empty optionals otherwise).
    const std::optional<Eigen::VectorXd>& constant_a() const { return a_; }
    const std::optional<Eigen::VectorXd>& constant_b() const { return b_; }
    VecD a_field(double t, const PathState& x) const;
    VecD b_field(double t, const PathState& x) const;
    VecD lambda_field(double t, const PathState& x) const;

    std::optional<double> declared_bmo_bound;
    std::string description;

    /// Checks the structure tag against an evaluation; returns the largest violating entry.
    double structure_violation(double t, const PathState& x) const;

private:
    std::string name_;
    std::size_t n_, d_;
    Structure tag_;
    Eval eval_;
    bool markov_;
    std::optional<Eigen::VectorXd> a_, b_;
    VecField a_field_, b_field_, lambda_field_;
};

/// Coefficient fields shipped with the laboratory, keyed by name.
std::vector<std::string> shipped_field_names();
CoefficientField shipped_field(const std::string& name);

/// M = Phi(i B^tau): A = J on {t < tau}, 0 afterwards, with J = [[0, 1], [-1, 0]] and
/// tau the first time |B| reaches `level`.
CoefficientField emery_field(double level);

} // namespace bsdelab
