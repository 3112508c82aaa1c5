#include "bsdelab/core/time_grid.hpp"

#include "bsdelab/core/error.hpp"

#include <cmath>

namespace bsdelab {

TimeGrid TimeGrid::uniform(double horizon, std::size_t steps) {
    BSDELAB_REQUIRE(steps >= 1, "time grid needs at least one step");
    BSDELAB_REQUIRE(horizon > 0.0 && std::isfinite(horizon), "time horizon must be positive");
    std::vector<double> nodes(steps + 1);
    for (std::size_t k = 0; k <= steps; ++k)
        nodes[k] = horizon * static_cast<double>(k) / static_cast<double>(steps);
    nodes.back() = horizon;
    return TimeGrid(std::move(nodes), true);
}

TimeGrid TimeGrid::from_nodes(std::vector<double> nodes) {
    BSDELAB_REQUIRE(nodes.size() >= 2, "time grid needs at least one step");
    BSDELAB_REQUIRE(nodes.front() == 0.0, "time grid must start at 0");
    for (std::size_t k = 1; k < nodes.size(); ++k)
        BSDELAB_REQUIRE(nodes[k] > nodes[k - 1], "time grid must be strictly increasing");
    return TimeGrid(std::move(nodes), false);
}

TimeGrid TimeGrid::coarsened(std::size_t factor) const {
    BSDELAB_REQUIRE(factor >= 1 && steps() % factor == 0, "coarsening factor must divide the step count");
    std::vector<double> nodes;
    nodes.reserve(steps() / factor + 1);
    for (std::size_t k = 0; k <= steps(); k += factor) nodes.push_back(nodes_[k]);
    return TimeGrid(std::move(nodes), uniform_);
}

} // namespace bsdelab
