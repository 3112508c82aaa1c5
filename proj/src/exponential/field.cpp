#include "bsdelab/exponential/field.hpp"

#include "bsdelab/core/error.hpp"

#include <cmath>
#include <numbers>

namespace bsdelab {

std::string to_string(Structure s) {
    switch (s) {
    case Structure::generic: return "generic";
    case Structure::lower_triangular: return "lower_triangular";
    case Structure::right_outer: return "right_outer";
    case Structure::left_outer: return "left_outer";
    case Structure::diagonal: return "diagonal";
    case Structure::outer_plus_diagonal: return "outer_plus_diagonal";
    }
    return "generic";
}

Structure parse_structure(const std::string& s) {
    // CLI spellings use dashes
    std::string key = s;
    for (char& c : key)
        if (c == '-') c = '_';
    if (key == "triangular") key = "lower_triangular";
    for (Structure t : {Structure::generic, Structure::lower_triangular, Structure::right_outer,
                        Structure::left_outer, Structure::diagonal, Structure::outer_plus_diagonal})
        if (to_string(t) == key) return t;
    throw ConfigError("unknown structure '" + s + "'");
}

CoefficientField::CoefficientField(std::string name, std::size_t n, std::size_t d, Structure tag,
                                   Eval eval, bool markov)
    : name_(std::move(name)), n_(n), d_(d), tag_(tag), eval_(std::move(eval)), markov_(markov) {
    BSDELAB_REQUIRE(n >= 1 && d >= 1, "coefficient field needs n, d >= 1");
}

MatD CoefficientField::operator()(double t, const PathState& x) const {
    MatD out(n_, d_);
    eval_(t, x, out);
    return out;
}

CoefficientField CoefficientField::constant(std::string name, const MatD& A, Structure tag) {
    return CoefficientField(std::move(name), A.n(), A.d(), tag,
                            [A](double, const PathState&, MatD& out) { out = A; });
}

CoefficientField CoefficientField::scalar(std::string name, double a) {
    MatD A(1, 1);
    A.component(0)(0, 0) = a;
    auto f = constant(std::move(name), A, Structure::diagonal);
    f.lambda_field_ = [a](double, const PathState&) { return VecD::Constant(1, 1, a); };
    f.a_ = Eigen::VectorXd::Ones(1);
    f.b_field_ = [a](double, const PathState&) { return VecD::Constant(1, 1, a); };
    return f;
}

CoefficientField CoefficientField::right_outer(std::string name, VecField a_field, Eigen::VectorXd b,
                                               std::size_t d) {
    const auto n = static_cast<std::size_t>(b.size());
    CoefficientField f(
        std::move(name), n, d, Structure::right_outer,
        [a_field, b](double t, const PathState& x, MatD& out) {
            const VecD a = a_field(t, x);
            for (Eigen::Index l = 0; l < a.cols(); ++l)
                out.component(static_cast<std::size_t>(l)) = a.col(l) * b.transpose();
        });
    f.b_ = std::move(b);
    f.a_field_ = std::move(a_field);
    return f;
}

CoefficientField CoefficientField::left_outer(std::string name, Eigen::VectorXd a, VecField b_field,
                                              std::size_t d) {
    const auto n = static_cast<std::size_t>(a.size());
    CoefficientField f(
        std::move(name), n, d, Structure::left_outer,
        [a, b_field](double t, const PathState& x, MatD& out) {
            const VecD b = b_field(t, x);
            for (Eigen::Index l = 0; l < b.cols(); ++l)
                out.component(static_cast<std::size_t>(l)) = a * b.col(l).transpose();
        });
    f.a_ = std::move(a);
    f.b_field_ = std::move(b_field);
    return f;
}

CoefficientField CoefficientField::diagonal(std::string name, std::size_t n, std::size_t d,
                                            VecField lambda_field) {
    CoefficientField f(std::move(name), n, d, Structure::diagonal,
                       [lambda_field](double t, const PathState& x, MatD& out) {
                           const VecD lam = lambda_field(t, x);
                           out.set_zero();
                           for (Eigen::Index l = 0; l < lam.cols(); ++l)
                               out.component(static_cast<std::size_t>(l)).diagonal() = lam.col(l);
                       });
    f.lambda_field_ = std::move(lambda_field);
    return f;
}

CoefficientField CoefficientField::outer_plus_diagonal(std::string name, Eigen::VectorXd a, VecField b_field,
                                                       VecField lambda_field, std::size_t d) {
    const auto n = static_cast<std::size_t>(a.size());
    CoefficientField f(std::move(name), n, d, Structure::outer_plus_diagonal,
                       [a, b_field, lambda_field](double t, const PathState& x, MatD& out) {
                           const VecD b = b_field(t, x);
                           const VecD lam = lambda_field(t, x);
                           for (Eigen::Index l = 0; l < b.cols(); ++l) {
                               auto& c = out.component(static_cast<std::size_t>(l));
                               c = a * b.col(l).transpose();
                               c.diagonal() += lam.col(l);
                           }
                       });
    f.a_ = std::move(a);
    f.b_field_ = std::move(b_field);
    f.lambda_field_ = std::move(lambda_field);
    return f;
}

VecD CoefficientField::a_field(double t, const PathState& x) const {
    BSDELAB_REQUIRE(static_cast<bool>(a_field_), "field '" + name_ + "' has no a-field");
    return a_field_(t, x);
}

VecD CoefficientField::b_field(double t, const PathState& x) const {
    BSDELAB_REQUIRE(static_cast<bool>(b_field_), "field '" + name_ + "' has no b-field");
    return b_field_(t, x);
}

VecD CoefficientField::lambda_field(double t, const PathState& x) const {
    BSDELAB_REQUIRE(static_cast<bool>(lambda_field_), "field '" + name_ + "' has no diagonal field");
    return lambda_field_(t, x);
}

double CoefficientField::structure_violation(double t, const PathState& x) const {
    const MatD A = (*this)(t, x);
    double worst = 0.0;
    for (std::size_t l = 0; l < d_; ++l) {
        const auto& c = A.component(l);
        for (std::size_t i = 0; i < n_; ++i)
            for (std::size_t j = 0; j < n_; ++j) {
                const double v = std::abs(c(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)));
                const bool must_vanish = (tag_ == Structure::lower_triangular && j > i) ||
                                         (tag_ == Structure::diagonal && i != j);
                if (must_vanish) worst = std::max(worst, v);
            }
    }
    if (tag_ == Structure::right_outer || tag_ == Structure::left_outer) {
        MatD ref(n_, d_);
        if (tag_ == Structure::right_outer) {
            const VecD a = a_field(t, x);
            for (std::size_t l = 0; l < d_; ++l) ref.component(l) = a.col(static_cast<Eigen::Index>(l)) * b_->transpose();
        } else {
            const VecD b = b_field(t, x);
            for (std::size_t l = 0; l < d_; ++l) ref.component(l) = *a_ * b.col(static_cast<Eigen::Index>(l)).transpose();
        }
        for (std::size_t l = 0; l < d_; ++l)
            worst = std::max(worst, (A.component(l) - ref.component(l)).cwiseAbs().maxCoeff());
    }
    return worst;
}

CoefficientField emery_field(double level) {
    MatD J(2, 1);
    J.component(0) << 0.0, 1.0, -1.0, 0.0;
    CoefficientField f(
        "emery", 2, 1, Structure::generic,
        [J, level](double, const PathState& x, MatD& out) {
            if (x.max_abs(0) < level) out = J;
            else out.set_zero();
        },
        false);
    f.description = "A = J 1{t < tau}, J = [[0,1],[-1,0]], tau = inf{t : |B_t| = pi/2}; "
                    "S_t = exp((tau^t)/2) [[cos B, sin B], [-sin B, cos B]] at B_{tau^t}";
    return f;
}

std::vector<std::string> shipped_field_names() {
    return {"zero", "scalar-half", "triangular-3", "right-outer-3", "left-outer-3",
            "diagonal-2", "outer-diagonal-2", "generic-2", "emery"};
}

CoefficientField shipped_field(const std::string& name) {
    if (name == "zero") {
        auto f = CoefficientField::constant("zero", MatD(2, 1));
        f.description = "A = 0, n = 2, d = 1";
        f.declared_bmo_bound = 0.0;
        return f;
    }
    if (name == "scalar-half") {
        auto f = CoefficientField::scalar("scalar-half", 0.5);
        f.description = "n = d = 1, A = 0.5";
        f.declared_bmo_bound = 0.5;
        return f;
    }
    if (name == "triangular-3") {
        CoefficientField f("triangular-3", 3, 1, Structure::lower_triangular,
                           [](double, const PathState& x, MatD& out) {
                               const double b = x.x(0);
                               out.component(0) << 0.3, 0.0, 0.0,
                                                   0.4 * std::cos(b), -0.2, 0.0,
                                                   0.2, -0.3 * std::sin(b), 0.25;
                           });
        f.description = "n = 3, d = 1, lower triangular, entries bounded by 0.4";
        f.declared_bmo_bound = 0.7;
        return f;
    }
    if (name == "right-outer-3") {
        Eigen::VectorXd b(3);
        b << 1.0, 0.5, -0.5;
        auto f = CoefficientField::right_outer(
            "right-outer-3",
            [](double, const PathState& x) {
                VecD a(3, 1);
                a << 0.4, -0.3 * std::cos(x.x(0)), 0.2;
                return a;
            },
            b);
        f.description = "n = 3, d = 1, A^i_j = a^i(B) b_j with b = (1, 0.5, -0.5)";
        f.declared_bmo_bound = 0.75;
        return f;
    }
    if (name == "left-outer-3") {
        Eigen::VectorXd a(3);
        a << 1.0, -0.5, 0.5;
        auto f = CoefficientField::left_outer("left-outer-3", a, [](double, const PathState& x) {
            VecD b(3, 1);
            b << 0.3 * std::cos(x.x(0)), 0.2, -0.2 * std::sin(x.x(0));
            return b;
        });
        f.description = "n = 3, d = 1, A^i_j = a_i b^j(B) with a = (1, -0.5, 0.5)";
        f.declared_bmo_bound = 0.6;
        return f;
    }
    if (name == "diagonal-2") {
        auto f = CoefficientField::diagonal("diagonal-2", 2, 2, [](double, const PathState& x) {
            VecD lam(2, 2);
            lam << 0.3, 0.1, -0.2 * std::cos(x.x(0)), 0.2;
            return lam;
        });
        f.description = "n = 2, d = 2, A = Diag(lambda(B))";
        f.declared_bmo_bound = 0.5;
        return f;
    }
    if (name == "outer-diagonal-2") {
        Eigen::VectorXd a(2);
        a << 1.0, 0.5;
        auto f = CoefficientField::outer_plus_diagonal(
            "outer-diagonal-2", a,
            [](double, const PathState& x) {
                VecD b(2, 1);
                b << 0.2 * std::cos(x.x(0)), -0.2;
                return b;
            },
            [](double, const PathState&) {
                VecD lam(2, 1);
                lam << 0.1, -0.15;
                return lam;
            });
        f.description = "n = 2, d = 1, A = a b(B)^T + Diag(lambda)";
        f.declared_bmo_bound = 0.5;
        return f;
    }
    if (name == "generic-2") {
        CoefficientField f("generic-2", 2, 1, Structure::generic, [](double t, const PathState& x, MatD& out) {
            const double b = x.x(0);
            out.component(0) << 0.2, 0.3 * std::sin(b), -0.25, 0.1 + 0.1 * t;
        });
        f.description = "n = 2, d = 1, full coupling";
        f.declared_bmo_bound = 0.5;
        return f;
    }
    if (name == "emery") return emery_field(std::numbers::pi / 2);
    throw ConfigError("unknown coefficient field '" + name + "'");
}

} // namespace bsdelab
