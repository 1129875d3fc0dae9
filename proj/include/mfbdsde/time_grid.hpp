#pragma once

#include <cstddef>

#include "mfbdsde/errors.hpp"

namespace mfbdsde {

/// Uniform partition of [t_start, t_end] into n_steps intervals.
///
/// Node k is computed as t_start + k * dt (one multiply, no running sum), so
/// node values are reproducible regardless of traversal order.
struct TimeGrid {
    double t_start = 0.0;
    double t_end = 1.0;
    std::size_t n_steps = 1;

    TimeGrid() = default;
    TimeGrid(double t_start, double t_end, std::size_t n_steps)
        : t_start(t_start), t_end(t_end), n_steps(n_steps) {
        if (!(t_end > t_start))
            throw InvalidArgumentError("time grid requires t_end > t_start");
        if (n_steps == 0)
            throw InvalidArgumentError("time grid requires n_steps >= 1");
    }

    double dt() const { return (t_end - t_start) / static_cast<double>(n_steps); }
    double t(std::size_t k) const { return t_start + static_cast<double>(k) * dt(); }
    std::size_t n_nodes() const { return n_steps + 1; }

    /// Nearest grid index for a time value; `t` must lie within the span.
    std::size_t snap(double time) const {
        if (time < t_start - 0.5 * dt() || time > t_end + 0.5 * dt())
            throw InvalidArgumentError("time outside grid span");
        const double r = (time - t_start) / dt();
        const auto k = static_cast<std::size_t>(r + 0.5);
        return k > n_steps ? n_steps : k;
    }
};

} // namespace mfbdsde
