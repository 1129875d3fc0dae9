#include "mfbdsde/scenario.hpp"

#include <cmath>

#include "mfbdsde/parallel.hpp"
#include "mfbdsde/rng.hpp"

namespace mfbdsde {

ScenarioEnsemble sample_ensemble(const TimeGrid& grid, std::size_t m_outer,
                                 std::size_t k_inner, std::uint64_t seed) {
    if (m_outer == 0 || k_inner == 0)
        throw InvalidArgumentError("ensemble shape requires m_outer >= 1 and k_inner >= 1");

    ScenarioEnsemble ens;
    ens.grid = grid;
    ens.m_outer = m_outer;
    ens.k_inner = k_inner;
    ens.seed = seed;

    const std::size_t n = grid.n_steps;
    const double root_dt = std::sqrt(grid.dt());
    ens.dW.resize(m_outer * k_inner * n);
    ens.dB.resize(m_outer * n);

    parallel_for(m_outer * k_inner, [&](std::size_t lo, std::size_t hi) {
        for (std::size_t j = lo; j < hi; ++j) {
            const std::uint64_t g = j / k_inner;
            const std::uint64_t p = j % k_inner;
            for (std::size_t s = 0; s < n; ++s)
                ens.dW[j * n + s] =
                    root_dt * rng::normal(seed, rng::Stream::forward_driver, g, p, s);
        }
    });
    parallel_for(m_outer, [&](std::size_t lo, std::size_t hi) {
        for (std::size_t g = lo; g < hi; ++g)
            for (std::size_t s = 0; s < n; ++s)
                ens.dB[g * n + s] =
                    root_dt * rng::normal(seed, rng::Stream::backward_driver, g, 0, s);
    });
    return ens;
}

ScenarioEnsemble time_reverse(const ScenarioEnsemble& ens) {
    if (ens.k_inner != 1)
        throw ShapeError("time reversal needs k_inner == 1: the reversed outer driver is "
                         "the original inner driver, which requires one path per group");

    const std::size_t n = ens.grid.n_steps;
    ScenarioEnsemble rev;
    rev.grid = ens.grid;
    rev.m_outer = ens.m_outer;
    rev.k_inner = 1;
    rev.seed = ens.seed;
    rev.dW.resize(ens.dB.size());
    rev.dB.resize(ens.dW.size());
    for (std::size_t g = 0; g < ens.m_outer; ++g) {
        for (std::size_t s = 0; s < n; ++s) {
            rev.dW[g * n + s] = ens.dB[g * n + (n - 1 - s)];
            rev.dB[g * n + s] = ens.dW[g * n + (n - 1 - s)];
        }
    }
    return rev;
}

std::vector<double> forward_levels(const ScenarioEnsemble& ens) {
    const std::size_t n = ens.grid.n_steps;
    const std::size_t np = ens.n_particles();
    std::vector<double> levels(np * (n + 1));
    parallel_for(np, [&](std::size_t lo, std::size_t hi) {
        for (std::size_t j = lo; j < hi; ++j) {
            double acc = 0.0;
            levels[j * (n + 1)] = 0.0;
            for (std::size_t s = 0; s < n; ++s) {
                acc += ens.dW[j * n + s];
                levels[j * (n + 1) + s + 1] = acc;
            }
        }
    });
    return levels;
}

std::vector<double> backward_tail_levels(const ScenarioEnsemble& ens) {
    const std::size_t n = ens.grid.n_steps;
    std::vector<double> tails(ens.m_outer * (n + 1));
    parallel_for(ens.m_outer, [&](std::size_t lo, std::size_t hi) {
        for (std::size_t g = lo; g < hi; ++g) {
            double acc = 0.0;
            tails[g * (n + 1) + n] = 0.0;
            for (std::size_t s = n; s-- > 0;) {
                acc += ens.dB[g * n + s];
                tails[g * (n + 1) + s] = acc;
            }
        }
    });
    return tails;
}

} // namespace mfbdsde
