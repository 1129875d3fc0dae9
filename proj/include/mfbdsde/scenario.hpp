#pragma once

#include <cstdint>
#include <vector>

#include "mfbdsde/errors.hpp"
#include "mfbdsde/time_grid.hpp"

namespace mfbdsde {

/// Sampled driver increments for one experiment.
///
/// Particles are organized as m_outer groups of k_inner.  Each particle owns a
/// forward-driver path (dW); each group shares one backward-driver path (dB).
/// Within a group the backward path is common knowledge, which is what makes
/// group-local regression a valid conditional-expectation estimator.
///
/// Storage is flat: dW[j * n_steps + s] for particle j, dB[g * n_steps + s]
/// for group g.  Particle j belongs to group j / k_inner.
struct ScenarioEnsemble {
    TimeGrid grid;
    std::size_t m_outer = 0;
    std::size_t k_inner = 0;
    std::uint64_t seed = 0;
    std::vector<double> dW; // [n_particles() x grid.n_steps]
    std::vector<double> dB; // [m_outer x grid.n_steps]

    std::size_t n_particles() const { return m_outer * k_inner; }
    std::size_t group_of(std::size_t particle) const { return particle / k_inner; }

    double dw(std::size_t particle, std::size_t step) const {
        return dW[particle * grid.n_steps + step];
    }
    double db(std::size_t group, std::size_t step) const {
        return dB[group * grid.n_steps + step];
    }
};

/// Draws a fresh ensemble.  Every increment is a counter-keyed variate, so the
/// same (grid, shape, seed) regenerates identical arrays and thread count has
/// no influence on the values.
ScenarioEnsemble sample_ensemble(const TimeGrid& grid, std::size_t m_outer,
                                 std::size_t k_inner, std::uint64_t seed);

/// Exchanges driver roles and reverses step order, realizing the pathwise
/// time-flip of a doubly stochastic equation on increments.
///
/// Defined for k_inner == 1 only: the reversed outer driver must carry exactly
/// the information of the original inner driver, which forces a one-to-one
/// pairing of paths.  Applying the operation twice restores the original
/// ensemble bitwise.
ScenarioEnsemble time_reverse(const ScenarioEnsemble& ens);

/// Cumulative forward-driver levels, levels[j][i] = sum of dW[j][0..i).
/// Row-major [n_particles x (n_steps + 1)], level 0 at the first node.
std::vector<double> forward_levels(const ScenarioEnsemble& ens);

/// Backward-driver tail levels per group, tails[g][i] = sum of dB[g][i..n).
/// Row-major [m_outer x (n_steps + 1)]; the tail is what a group knows at
/// node i about its backward path.
std::vector<double> backward_tail_levels(const ScenarioEnsemble& ens);

} // namespace mfbdsde
