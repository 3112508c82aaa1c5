#pragma once

#include <cstddef>
#include <vector>

namespace bsdelab {

/// Discretization 0 = t_0 < t_1 < ... < t_K = T of the horizon.
class TimeGrid {
public:
    static TimeGrid uniform(double horizon, std::size_t steps);
    static TimeGrid from_nodes(std::vector<double> nodes);

    double horizon() const { return nodes_.back(); }
    std::size_t steps() const { return nodes_.size() - 1; }
    double time(std::size_t k) const { return nodes_[k]; }
    double dt(std::size_t k) const { return nodes_[k + 1] - nodes_[k]; }
    const std::vector<double>& nodes() const { return nodes_; }
    bool is_uniform() const { return uniform_; }

    /// Grid with every `factor` consecutive steps merged (factor must divide K).
    TimeGrid coarsened(std::size_t factor) const;

private:
    explicit TimeGrid(std::vector<double> nodes, bool uniform)
        : nodes_(std::move(nodes)), uniform_(uniform) {}

    std::vector<double> nodes_;
    bool uniform_;
};

} // namespace bsdelab
