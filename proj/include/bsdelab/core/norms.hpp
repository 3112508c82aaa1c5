#pragma once

#include "bsdelab/core/conditional.hpp"
#include "bsdelab/core/time_grid.hpp"

#include <Eigen/Dense>

#include <cstddef>
#include <string>
#include <vector>

namespace bsdelab {

/// A process sampled on every path at the grid nodes 0..K; each sample is a flat vector
/// of `width` reals (n for Y or beta, n*d for Z stored row-major as z^i_l).
class SampledProcess {
public:
    SampledProcess() = default;
    SampledProcess(TimeGrid grid, std::size_t paths, std::size_t width)
        : grid_(std::move(grid)), paths_(paths), width_(width),
          data_(paths * (grid_.steps() + 1) * width, 0.0) {}

    const TimeGrid& grid() const { return grid_; }
    std::size_t paths() const { return paths_; }
    std::size_t width() const { return width_; }
    std::size_t steps() const { return grid_.steps(); }

    double* at(std::size_t m, std::size_t k) { return data_.data() + (m * (steps() + 1) + k) * width_; }
    const double* at(std::size_t m, std::size_t k) const {
        return data_.data() + (m * (steps() + 1) + k) * width_;
    }
    double norm(std::size_t m, std::size_t k) const;

    /// paths x width slice at step k.
    Eigen::MatrixXd slice(std::size_t k) const;
    void set_slice(std::size_t k, const Eigen::MatrixXd& values);

    SampledProcess& operator*=(double c);

private:
    TimeGrid grid_ = TimeGrid::uniform(1.0, 1);
    std::size_t paths_ = 0;
    std::size_t width_ = 0;
    std::vector<double> data_;
};

enum class NormKind { bmo, bmo_half, sup_p, l2q, l1q };

std::string to_string(NormKind kind);
NormKind parse_norm_kind(const std::string& s);

struct NormEstimate {
    NormKind kind = NormKind::bmo;
    double value = 0.0;
    double std_error = 0.0;
    std::vector<double> grid_times_used;
};

/// Grid-time estimate of a process norm.
///
/// bmo and bmo_half take the maximum over the evaluation steps of the conditional ess sup
/// (so they are lower estimates of the stopping-time suprema); sup_p, l2q and l1q are
/// plain Monte Carlo moments with delta-method standard errors. The exponent p applies to
/// sup_p, l2q and l1q; p = infinity uses per-path maxima.
NormEstimate estimate_norm(NormKind kind, const SampledProcess& process,
                           const ConditionalEstimator* conditional, double p = 2.0,
                           std::vector<std::size_t> eval_steps = {});

} // namespace bsdelab
