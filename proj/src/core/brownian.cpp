#include "bsdelab/core/brownian.hpp"

#include "bsdelab/core/error.hpp"
#include "bsdelab/core/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <iomanip>
#include <ostream>

namespace bsdelab {

PathCursor::PathCursor(std::span<const double> x0, double t0, std::size_t step0)
    : x_(x0.begin(), x0.end()), max_abs_(x0.size()), t_(t0), step_(step0) {
    for (std::size_t l = 0; l < x_.size(); ++l) max_abs_[l] = std::abs(x_[l]);
}

void PathCursor::advance(const double* dB, double dt) {
    for (std::size_t l = 0; l < x_.size(); ++l) {
        x_[l] += dB[l];
        max_abs_[l] = std::max(max_abs_[l], std::abs(x_[l]));
    }
    t_ += dt;
    ++step_;
}

void PathCursor::reset(std::span<const double> x, std::span<const double> max_abs, double t,
                       std::size_t step) {
    x_.assign(x.begin(), x.end());
    max_abs_.assign(max_abs.begin(), max_abs.end());
    t_ = t;
    step_ = step;
}

PathEnsemble PathEnsemble::brownian(const TimeGrid& grid, std::size_t dim, std::size_t paths,
                                    std::uint64_t seed, bool materialize) {
    BSDELAB_REQUIRE(dim >= 1, "Brownian dimension must be at least 1");
    BSDELAB_REQUIRE(paths >= 1, "ensemble needs at least one path");
    PathEnsemble e(grid, dim, paths, seed);
    if (!materialize) return e;

    const std::size_t K = grid.steps();
    e.increments_.resize(paths * K * dim);
    parallel_chunks(paths, [&](std::size_t b, std::size_t end) {
        for (std::size_t m = b; m < end; ++m) {
            CounterStream s = e.stream(m);
            double* out = e.increments_.data() + m * K * dim;
            for (std::size_t k = 0; k < K; ++k) {
                const double sd = std::sqrt(grid.dt(k));
                for (std::size_t l = 0; l < dim; ++l) *out++ = sd * s.normal();
            }
        }
    });
    e.build_states();
    return e;
}

PathEnsemble PathEnsemble::enumerated(const TimeGrid& grid, std::size_t dim,
                                      std::vector<double> increments) {
    const std::size_t K = grid.steps();
    BSDELAB_REQUIRE(dim >= 1 && !increments.empty() && increments.size() % (K * dim) == 0,
                    "enumerated increments must be paths x steps x dim");
    PathEnsemble e(grid, dim, increments.size() / (K * dim), 0);
    e.enumerated_ = true;
    e.increments_ = std::move(increments);
    e.build_states();
    return e;
}

void PathEnsemble::build_states() {
    const std::size_t K = grid_.steps();
    states_.assign(paths_ * (K + 1) * dim_, 0.0);
    max_abs_.assign(paths_ * (K + 1) * dim_, 0.0);
    for (std::size_t m = 0; m < paths_; ++m) {
        double* x = states_.data() + m * (K + 1) * dim_;
        double* mx = max_abs_.data() + m * (K + 1) * dim_;
        const double* inc = increments_.data() + m * K * dim_;
        for (std::size_t k = 0; k < K; ++k)
            for (std::size_t l = 0; l < dim_; ++l) {
                x[(k + 1) * dim_ + l] = x[k * dim_ + l] + inc[k * dim_ + l];
                mx[(k + 1) * dim_ + l] = std::max(mx[k * dim_ + l], std::abs(x[(k + 1) * dim_ + l]));
            }
    }
}

void PathEnsemble::increment(std::size_t m, std::size_t k, double* out) const {
    if (materialized()) {
        std::memcpy(out, increment_ptr(m, k), dim_ * sizeof(double));
        return;
    }
    const std::uint64_t key = derive_key(seed_, m);
    for (std::size_t l = 0; l < dim_; ++l) out[l] = 0.0;
    for (std::size_t j = k * factor_; j < (k + 1) * factor_; ++j) {
        const double sd = std::sqrt(fine_grid_.dt(j));
        for (std::size_t l = 0; l < dim_; ++l) out[l] += sd * counter_normal(key, j * dim_ + l);
    }
}

const double* PathEnsemble::increment_ptr(std::size_t m, std::size_t k) const {
    return increments_.data() + (m * steps() + k) * dim_;
}

const double* PathEnsemble::state_ptr(std::size_t m, std::size_t k) const {
    return states_.data() + (m * (steps() + 1) + k) * dim_;
}

PathState PathEnsemble::state(std::size_t m, std::size_t k) const {
    BSDELAB_REQUIRE(materialized(), "path states need a materialized ensemble");
    const std::size_t off = (m * (steps() + 1) + k) * dim_;
    return {grid_.time(k), k, dim_, states_.data() + off, max_abs_.data() + off};
}

PathEnsemble PathEnsemble::coarsened(std::size_t factor) const {
    PathEnsemble c(grid_.coarsened(factor), dim_, paths_, seed_);
    c.fine_grid_ = fine_grid_;
    c.factor_ = factor_ * factor;
    c.enumerated_ = enumerated_;
    if (!materialized()) return c;

    const std::size_t K = steps();
    const std::size_t Kc = K / factor;
    c.increments_.assign(paths_ * Kc * dim_, 0.0);
    for (std::size_t m = 0; m < paths_; ++m)
        for (std::size_t k = 0; k < K; ++k)
            for (std::size_t l = 0; l < dim_; ++l)
                c.increments_[(m * Kc + k / factor) * dim_ + l] += increments_[(m * K + k) * dim_ + l];
    c.build_states();
    return c;
}

void PathEnsemble::write_csv(std::ostream& os) const {
    os << "path,step,t";
    for (std::size_t l = 0; l < dim_; ++l) os << ",dB" << l;
    for (std::size_t l = 0; l < dim_; ++l) os << ",B" << l;
    os << '\n' << std::setprecision(17);
    std::vector<double> inc(dim_);
    for (std::size_t m = 0; m < paths_; ++m) {
        std::vector<double> x(dim_, 0.0);
        for (std::size_t k = 0; k < steps(); ++k) {
            increment(m, k, inc.data());
            os << m << ',' << k << ',' << grid_.time(k);
            for (double v : inc) os << ',' << v;
            for (std::size_t l = 0; l < dim_; ++l) os << ',' << x[l];
            os << '\n';
            for (std::size_t l = 0; l < dim_; ++l) x[l] += inc[l];
        }
    }
}

void PathEnsemble::write_binary(std::ostream& os) const {
    const std::uint64_t header[3] = {paths_, steps(), dim_};
    os.write(reinterpret_cast<const char*>(header), sizeof(header));
    std::vector<double> inc(dim_);
    for (std::size_t m = 0; m < paths_; ++m)
        for (std::size_t k = 0; k < steps(); ++k) {
            increment(m, k, inc.data());
            os.write(reinterpret_cast<const char*>(inc.data()),
                     static_cast<std::streamsize>(dim_ * sizeof(double)));
        }
}

PathEnsemble generate_brownian(const TimeGrid& grid, std::size_t dim, std::size_t paths,
                               std::uint64_t seed, bool materialize) {
    return PathEnsemble::brownian(grid, dim, paths, seed, materialize);
}

} // namespace bsdelab
