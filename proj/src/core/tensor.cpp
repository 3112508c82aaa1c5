#include "bsdelab/core/tensor.hpp"

#include "bsdelab/core/error.hpp"

#include <algorithm>
#include <cmath>

namespace bsdelab {

Eigen::VectorXd MatD::entry(std::size_t i, std::size_t j) const {
    Eigen::VectorXd v(d());
    for (std::size_t l = 0; l < d(); ++l) v(l) = comp_[l](i, j);
    return v;
}

void MatD::set_entry(std::size_t i, std::size_t j, const Eigen::VectorXd& v) {
    for (std::size_t l = 0; l < d(); ++l) comp_[l](i, j) = v(l);
}

void MatD::set_zero() {
    for (auto& c : comp_) c.setZero();
}

bool MatD::is_zero() const {
    for (const auto& c : comp_)
        if (!c.isZero(0.0)) return false;
    return true;
}

double MatD::frobenius_norm() const {
    double s = 0.0;
    for (const auto& c : comp_) s += c.squaredNorm();
    return std::sqrt(s);
}

Eigen::MatrixXd MatD::against(const double* dB) const {
    Eigen::MatrixXd m = Eigen::MatrixXd::Zero(n(), n());
    for (std::size_t l = 0; l < d(); ++l) m.noalias() += dB[l] * comp_[l];
    return m;
}

Eigen::MatrixXd MatD::contracted_square() const {
    Eigen::MatrixXd m = Eigen::MatrixXd::Zero(n(), n());
    for (const auto& c : comp_) m.noalias() += c * c;
    return m;
}

MatD& MatD::operator+=(const MatD& other) {
    BSDELAB_REQUIRE(other.n() == n() && other.d() == d(), "MatD shape mismatch");
    for (std::size_t l = 0; l < d(); ++l) comp_[l] += other.comp_[l];
    return *this;
}

MatD& MatD::operator*=(double c) {
    for (auto& m : comp_) m *= c;
    return *this;
}

Eigen::VectorXd contract_AZ(const MatD& A, const VecD& z) {
    BSDELAB_REQUIRE(static_cast<std::size_t>(z.rows()) == A.n() &&
                        static_cast<std::size_t>(z.cols()) == A.d(),
                    "contract_AZ: shape mismatch between A and z");
    Eigen::VectorXd out = Eigen::VectorXd::Zero(A.n());
    for (std::size_t l = 0; l < A.d(); ++l) out.noalias() += A.component(l) * z.col(l);
    return out;
}

double operator_norm(const Eigen::MatrixXd& m) {
    if (m.rows() == 1 || m.cols() == 1) return m.norm();
    if (m.rows() == 2 && m.cols() == 2) {
        // closed form for 2x2: sigma_max^2 = (F + sqrt(F^2 - 4 det^2)) / 2
        const double f = m.squaredNorm();
        const double det = m(0, 0) * m(1, 1) - m(0, 1) * m(1, 0);
        const double disc = std::max(0.0, f * f - 4.0 * det * det);
        return std::sqrt(0.5 * (f + std::sqrt(disc)));
    }
    if (m.rows() == 3 && m.cols() == 3) {
        const Eigen::Matrix3d g = m.transpose() * m;
        Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es;
        es.computeDirect(g, Eigen::EigenvaluesOnly);
        return std::sqrt(std::max(0.0, es.eigenvalues()(2)));
    }
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(m);
    return svd.singularValues()(0);
}

} // namespace bsdelab
