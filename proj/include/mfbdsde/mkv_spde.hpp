#pragma once

#include "mfbdsde/mf_solver.hpp"

namespace mfbdsde {

/// Self-consistent particle population started at (0, x0): forward state
/// paths, the backward pair solved on top of them, and the driver increments
/// they share.  Field queries freeze every primed slot to this object.
struct BasePopulation {
    ScenarioEnsemble ens;
    double x0 = 0.0;
    std::vector<double> X;  // [N][n_nodes] particle-major state paths
    PathBundle yz;
    PicardTrace x_trace;
    PicardTrace yz_trace;

    BasePopulation(ScenarioEnsemble e, double x_start)
        : ens(std::move(e)), x0(x_start), yz(ens.grid, ens.n_particles()) {}
};

/// One field evaluation: per-backward-group samples of u(t,x), their mean and
/// the standard error of that mean across groups.  The field is a random
/// variable measurable against the backward driver's tail, so the per-group
/// spread is part of the answer, not just noise.
struct FieldSample {
    double t = 0.0;
    double x = 0.0;
    std::vector<double> values;  // one sample per backward group
    double mean = 0.0;
    double std_err = 0.0;
};

/// Euler-Maruyama simulation of the forward state from (t_init, x_init).
/// Population averages in b and sigma run against `base` when given and
/// against the evolving particle set otherwise.  Nodes before t_init hold
/// x_init.  Returns particle-major [N][n_nodes] paths.
std::vector<double> simulate_mkv(const CoefficientSet& coeffs, double x_init, double t_init,
                                 const ScenarioEnsemble& ens,
                                 const BasePopulation* base = nullptr);

/// Builds the base population: a self-interacting forward pass, a frozen
/// verification pass for the fixed-point trace, then the backward pair with
/// the population's own columns frozen.
BasePopulation build_base(const CoefficientSet& coeffs, double x0, const ScenarioEnsemble& ens,
                          const SolverConfig& cfg, double tol, std::size_t max_iter);

/// u(t,x) by the probabilistic representation: fresh forward particles from
/// (t,x) sharing the base's backward increments, one backward solve with all
/// primed slots frozen to the base.  t is snapped to the nearest grid node.
FieldSample evaluate_u(double t, double x, const BasePopulation& base,
                       const CoefficientSet& coeffs, const SolverConfig& cfg);

}  // namespace mfbdsde
