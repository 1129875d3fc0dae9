#pragma once

#include <span>

#include "mfbdsde/bdsde.hpp"

namespace mfbdsde {

/// Record of the outer fixed-point loop: squared-path distances between
/// successive iterates, d = max over nodes of mean |dY|^2 plus dt times the
/// summed mean |dZ|^2.
struct PicardTrace {
    std::vector<double> distances;
    std::size_t iterations = 0;
    bool converged = false;
};

struct MfSolution {
    PathBundle bundle;
    PicardTrace trace;
};

/// Squared-path distance used by the fixed-point loop.
double bundle_distance(const PathBundle& a, const PathBundle& b);

/// Fixed-point iteration over the frozen population: each pass re-freezes the
/// previous iterate's columns and runs one inner backward solve.  Starts from
/// Y equal to the terminal-sample mean and Z equal to zero.  Throws an
/// iteration-limit error (carrying the distance trace) when tol is not met
/// within max_iter passes.
MfSolution solve_picard(const Expr& theta_f, const Expr& theta_g,
                        std::span<const double> terminal, const ScenarioEnsemble& ens,
                        const SolverConfig& cfg, double tol, std::size_t max_iter,
                        bool reversed_time = false, std::span<const double> controls_nodes = {},
                        std::span<const double> x_nodes = {},
                        const RegressionMarkers& markers = {});

/// Full solve of the mean-field backward equation: contraction precheck
/// (skippable via cfg.enforce_h1 = false), then the fixed-point loop.
MfSolution solve_mf_bdsde(const CoefficientSet& coeffs, const ScenarioEnsemble& ens,
                          const SolverConfig& cfg, double tol, std::size_t max_iter,
                          std::span<const double> controls_nodes = {},
                          std::span<const double> x_nodes = {},
                          const RegressionMarkers& markers = {});

/// Forward doubly stochastic equation solved through time reversal: swap the
/// driver roles, solve backward with the initial condition as terminal data,
/// and flip the node axis of the result.  Requires one particle per group.
/// The initial condition comes from coeffs.xi, which must be constant mode.
MfSolution solve_forward_dsde(const CoefficientSet& coeffs, const ScenarioEnsemble& ens,
                              const SolverConfig& cfg, double tol, std::size_t max_iter);

/// Same, with explicit per-particle initial samples (the adjoint equation
/// starts from a computed array rather than a constant).
MfSolution solve_forward_dsde(const CoefficientSet& coeffs, const ScenarioEnsemble& ens,
                              const SolverConfig& cfg, double tol, std::size_t max_iter,
                              std::span<const double> initial_samples);

}  // namespace mfbdsde
