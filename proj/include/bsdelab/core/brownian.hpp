#pragma once

#include "bsdelab/core/rng.hpp"
#include "bsdelab/core/time_grid.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

namespace bsdelab {

/// Non-owning view of the Brownian state of one path at one grid node.
struct PathState {
    double t = 0.0;
    std::size_t step = 0;
    std::size_t dim = 0;
    const double* x_ptr = nullptr;       // B_t
    const double* max_abs_ptr = nullptr; // max_{s <= t} |B^l_s| per coordinate

    double x(std::size_t l) const { return x_ptr[l]; }
    double max_abs(std::size_t l) const { return max_abs_ptr[l]; }
    Eigen::Map<const Eigen::VectorXd> position() const {
        return {x_ptr, static_cast<Eigen::Index>(dim)};
    }
};

/// Owns the running state of a single path while it is integrated forward.
class PathCursor {
public:
    explicit PathCursor(std::size_t dim) : x_(dim, 0.0), max_abs_(dim, 0.0) {}
    PathCursor(std::span<const double> x0, double t0, std::size_t step0);

    void advance(const double* dB, double dt);
    PathState state() const { return {t_, step_, x_.size(), x_.data(), max_abs_.data()}; }
    void reset(std::span<const double> x, std::span<const double> max_abs, double t, std::size_t step);

private:
    std::vector<double> x_;
    std::vector<double> max_abs_;
    double t_ = 0.0;
    std::size_t step_ = 0;
};

/// A batch of M paths of a d-dimensional driving noise on a TimeGrid.
///
/// Gaussian ensembles draw increment (m, k, l) as sqrt(dt_k) times the standard
/// normal number k*d + l of the counter stream derive_key(seed, m); they are either
/// materialized (increments, states and running maxima stored path-major, step-minor)
/// or lazy, in which case increments are regenerated on demand. Enumerated ensembles
/// hold an explicit finite list of equally likely paths (the binary-tree oracle).
class PathEnsemble {
public:
    static PathEnsemble brownian(const TimeGrid& grid, std::size_t dim, std::size_t paths,
                                 std::uint64_t seed, bool materialize = true);
    static PathEnsemble enumerated(const TimeGrid& grid, std::size_t dim,
                                   std::vector<double> increments);

    const TimeGrid& grid() const { return grid_; }
    std::size_t dim() const { return dim_; }
    std::size_t paths() const { return paths_; }
    std::size_t steps() const { return grid_.steps(); }
    std::uint64_t seed() const { return seed_; }
    bool materialized() const { return !increments_.empty(); }
    bool enumerated() const { return enumerated_; }

    /// Writes the d increments of path m over step k into out.
    void increment(std::size_t m, std::size_t k, double* out) const;
    /// Stored increments; requires a materialized ensemble.
    const double* increment_ptr(std::size_t m, std::size_t k) const;
    const double* state_ptr(std::size_t m, std::size_t k) const;
    PathState state(std::size_t m, std::size_t k) const;

    /// Sequential normal stream of path m on the finest grid (lazy ensembles).
    CounterStream stream(std::size_t m) const { return CounterStream(derive_key(seed_, m)); }

    /// Same paths observed on a grid with `factor` steps merged.
    PathEnsemble coarsened(std::size_t factor) const;

    void write_csv(std::ostream& os) const;
    void write_binary(std::ostream& os) const;

private:
    PathEnsemble(TimeGrid grid, std::size_t dim, std::size_t paths, std::uint64_t seed)
        : grid_(std::move(grid)), fine_grid_(grid_), dim_(dim), paths_(paths), seed_(seed) {}

    void build_states();

    TimeGrid grid_;
    TimeGrid fine_grid_;
    std::size_t factor_ = 1; // fine steps per step of grid_
    std::size_t dim_;
    std::size_t paths_;
    std::uint64_t seed_;
    bool enumerated_ = false;
    std::vector<double> increments_; // M * K * d
    std::vector<double> states_;     // M * (K+1) * d
    std::vector<double> max_abs_;    // M * (K+1) * d
};

/// Seeded Brownian ensemble with N(0, dt I_d) increments.
PathEnsemble generate_brownian(const TimeGrid& grid, std::size_t dim, std::size_t paths,
                               std::uint64_t seed, bool materialize = true);

} // namespace bsdelab
