#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <vector>

namespace bsdelab {

/// Element of (R^d)^n: row i holds the R^d-valued entry z^i.
using VecD = Eigen::MatrixXd;

/// Element of (R^d)^{n x n}, stored as d component matrices: (A^i_j)_l = component(l)(i, j).
class MatD {
public:
    MatD() = default;
    MatD(std::size_t n, std::size_t d) : comp_(d, Eigen::MatrixXd::Zero(n, n)) {}

    std::size_t n() const { return comp_.empty() ? 0 : static_cast<std::size_t>(comp_[0].rows()); }
    std::size_t d() const { return comp_.size(); }

    Eigen::MatrixXd& component(std::size_t l) { return comp_[l]; }
    const Eigen::MatrixXd& component(std::size_t l) const { return comp_[l]; }

    /// The R^d entry A^i_j.
    Eigen::VectorXd entry(std::size_t i, std::size_t j) const;
    void set_entry(std::size_t i, std::size_t j, const Eigen::VectorXd& v);

    void set_zero();
    bool is_zero() const;
    double frobenius_norm() const;

    /// Plain n x n matrix sum_l A_l dB^l (the increment A dB).
    Eigen::MatrixXd against(const double* dB) const;
    /// Contracted square (A^2)^i_j = sum_m A^i_m . A^m_j.
    Eigen::MatrixXd contracted_square() const;

    MatD& operator+=(const MatD& other);
    MatD& operator*=(double c);

private:
    std::vector<Eigen::MatrixXd> comp_;
};

/// (A z)_i = sum_j A^i_j . z^j, an element of R^n.
Eigen::VectorXd contract_AZ(const MatD& A, const VecD& z);

/// Squared Euclidean norm of z viewed in R^{n d}.
inline double squared_norm(const VecD& z) { return z.squaredNorm(); }

/// Largest singular value.
double operator_norm(const Eigen::MatrixXd& m);

} // namespace bsdelab
