#pragma once

#include <cstdint>
#include <limits>
#include <string_view>
#include <vector>

#include "mfbdsde/control.hpp"

namespace mfbdsde {

/// Scalar problem coefficient: a real constant or a deterministic function
/// of time (an expression over t alone).
struct TimeCoefficient {
    Expr value = Expr::constant(0.0);

    TimeCoefficient() = default;
    TimeCoefficient(double c) : value(Expr::constant(c)) {}
    TimeCoefficient(std::string_view dsl);

    bool is_zero() const { return value.is_constant() && value.constant_value() == 0.0; }
    bool is_one() const { return value.is_constant() && value.constant_value() == 1.0; }
    double at(double t) const;
};

/// Linear driver slopes and quadratic cost weights.  The "1" coefficients
/// multiply the particle's own state and control, the "2" coefficients the
/// population averages.  All weights are deterministic; xi is the constant
/// terminal value of the state.
struct LQCoefficients {
    TimeCoefficient A1, A2, B1, B2, C1, C2;  // drift slopes in y, z, v
    TimeCoefficient D1, D2, E1, E2, F1, F2;  // backward-driver slopes
    TimeCoefficient M1, M2, N1, N2, R1, R2;  // running-cost weights (must keep R1+R2 > 0)
    TimeCoefficient Q1_0, Q2_0;              // initial-cost weights
    double xi = 0.0;
};

struct LQOptions {
    double u_lo = -std::numeric_limits<double>::infinity();
    double u_hi = std::numeric_limits<double>::infinity();
    /// Step fraction applied when successive control updates reverse direction.
    double damping = 0.5;
    /// Feed the adjoint the raw running-cost weights instead of weight times
    /// state.  Comparison mode only; breaks the duality identity.
    bool bare_cost_partials = false;
};

struct LQSolution {
    ControlPath uhat;
    PathBundle state;
    AdjointBundle adjoint;
    double fixed_point_residual = 0.0;
    double cost_at_opt = 0.0;
    std::size_t iterations = 0;
};

/// Cost gaps observed when stepping away from a candidate control.
struct DominanceReport {
    std::vector<double> deltas;  // J(uhat + eps*v_r) - J(uhat), one per direction
    double min_delta = 0.0;
    MpReport mp;
};

/// Expands the weights into driver, running-cost and initial-cost
/// expressions, with Lipschitz metadata derived from the weight magnitudes.
/// Throws InvalidArgumentError when a sign constraint fails.
ControlProblem lq_assemble(const LQCoefficients& c);

/// Alternates state and adjoint solves with the stationarity update for the
/// control until sup|change| <= tol.  The reported state and adjoint are
/// re-solved at the final control, so the residual measures genuine
/// stationarity rather than the update defect.
LQSolution lq_solve(const LQCoefficients& c, const ScenarioEnsemble& ens,
                    const SolverConfig& cfg, double tol, std::size_t max_iter,
                    const LQOptions& opts = {});

/// Draws n_perturb bounded piecewise-constant directions, re-costs the
/// perturbed controls on the same ensemble, and scans the stationarity
/// products.  A negative min_delta beyond noise flags a suboptimal control.
DominanceReport lq_verify(const LQSolution& sol, const LQCoefficients& c,
                          const ScenarioEnsemble& ens, std::size_t n_perturb,
                          double eps, std::uint64_t seed, const LQOptions& opts = {},
                          const SolverConfig& cfg = {});

}  // namespace mfbdsde
