#pragma once

#include <limits>
#include <span>
#include <vector>

#include "mfbdsde/mf_solver.hpp"

namespace mfbdsde {

/// Controlled backward problem: driver pair with control slots, running cost
/// l, initial cost h, and a box [u_lo, u_hi] of admissible control values.
struct ControlProblem {
    CoefficientSet coeffs;
    double u_lo = -std::numeric_limits<double>::infinity();
    double u_hi = std::numeric_limits<double>::infinity();
};

/// Per-particle control path, row-major [particle][node].
struct ControlPath {
    std::size_t n_particles = 0;
    std::size_t n_nodes = 0;
    std::vector<double> v;

    static ControlPath constant(double value, std::size_t n_particles, std::size_t n_nodes);
    /// One value per node, shared by every particle.
    static ControlPath deterministic(std::span<const double> per_node, std::size_t n_particles);

    double at(std::size_t j, std::size_t i) const { return v[j * n_nodes + i]; }
    double& at(std::size_t j, std::size_t i) { return v[j * n_nodes + i]; }
    bool inside(double lo, double hi) const;
};

/// Adjoint pair (p, q), row-major [particle][node], with the fixed-point
/// trace of the cross-particle coupling loop.  The first column holds the
/// initial condition sample-wise by construction.
struct AdjointBundle {
    TimeGrid grid;
    std::size_t n_particles = 0;
    std::vector<double> P;
    std::vector<double> Q;
    PicardTrace trace;

    AdjointBundle(const TimeGrid& g, std::size_t n)
        : grid(g), n_particles(n), P(n * (g.n_steps + 1), 0.0), Q(n * (g.n_steps + 1), 0.0) {}

    std::size_t n_nodes() const { return grid.n_steps + 1; }
    double p(std::size_t j, std::size_t i) const { return P[j * n_nodes() + i]; }
    double q(std::size_t j, std::size_t i) const { return Q[j * n_nodes() + i]; }
    double& p(std::size_t j, std::size_t i) { return P[j * n_nodes() + i]; }
    double& q(std::size_t j, std::size_t i) { return Q[j * n_nodes() + i]; }
};

/// Variational pair along a control direction; the bundle's Y carries the
/// state sensitivity and Z its martingale-integrand sensitivity.
struct VariationalSolution {
    PathBundle bundle;
    PicardTrace trace;
};

/// Log-log scaling of the state perturbation under control perturbations
/// u + eps*dir, and the residual against the variational prediction.
struct GateauxReport {
    std::vector<double> eps;
    std::vector<double> diff_sq;   // sup over nodes of mean |Y_eps - Y_hat|^2
    std::vector<double> resid_sq;  // sup over nodes of mean |(Y_eps - Y_hat)/eps - xi|^2
    double slope = 0.0;            // least-squares slope of log diff_sq vs log eps
};

/// Pointwise optimality-condition scan over grid times, particles and a
/// finite set of comparison control values.
struct MpReport {
    double global_min = 0.0;
    double violation_fraction = 0.0;
    std::size_t n_points = 0;
};

/// Same quantity two ways: the direct product mean at the initial node and
/// the time-integral identity that couples variational and adjoint pairs.
struct DualityReport {
    double direct = 0.0;
    double integral = 0.0;
    double std_err = 0.0;  // spread of the per-group difference
};

/// State solve under a fixed control path.
PathBundle solve_state(const ControlProblem& prob, const ControlPath& v,
                       const ScenarioEnsemble& ens, const SolverConfig& cfg, double tol,
                       std::size_t max_iter);

/// Left-endpoint quadrature of the running-cost population average plus the
/// initial-cost population average at the first node.
double cost(const ControlProblem& prob, const ControlPath& v, const PathBundle& state);

/// First-order sensitivity of the state to a control direction: linearized
/// coefficients along (state, uhat), direction terms as sources, and the
/// cross-particle terms resolved by fixed-point iteration.
VariationalSolution solve_variational(const ControlProblem& prob, const ControlPath& uhat,
                                      const PathBundle& state_hat, const ControlPath& v_dir,
                                      const ScenarioEnsemble& ens, const SolverConfig& cfg,
                                      double tol = 1e-10, std::size_t max_iter = 50);

/// Perturbs the control by each eps, re-solves the state, and reports the
/// quadratic scaling plus the residual of the variational prediction.
GateauxReport gateaux_check(const ControlProblem& prob, const ControlPath& uhat,
                            const ControlPath& v_dir, std::span<const double> eps_list,
                            const ScenarioEnsemble& ens, const SolverConfig& cfg, double tol,
                            std::size_t max_iter);

/// theta_f*p + theta_g*q + l as one expression (zero drivers drop out).
Expr hamiltonian_expr(const ControlProblem& prob);

double hamiltonian(double t, double y1, double z1, double v1, double y2, double z2, double v2,
                   double p, double q, const ControlProblem& prob);

/// Partial derivative of the Hamiltonian in any slot variable, evaluated at
/// the same point layout as `hamiltonian`.
double hamiltonian_partial(Var var, double t, double y1, double z1, double v1, double y2,
                           double z2, double v2, double p, double q,
                           const ControlProblem& prob);

/// Adjoint pair by time reversal: the forward pair equation becomes a
/// backward solve on the reversed ensemble, and the cross-particle carrier
/// terms are fixed-point iterated to `tol`.  Requires k_inner == 1.
AdjointBundle solve_adjoint(const ControlProblem& prob, const ControlPath& uhat,
                            const PathBundle& state_hat, const ScenarioEnsemble& ens,
                            const SolverConfig& cfg, double tol, std::size_t max_iter);

/// Scans G(t,particle) * (v - uhat) over v_grid, where G collects the own and
/// cross-particle control partials of the Hamiltonian along the adjoint pair.
/// An empty v_grid defaults to the box endpoints, which is exhaustive because
/// the scanned function is affine in v.
MpReport mp_residual(const ControlProblem& prob, const ControlPath& uhat,
                     const AdjointBundle& adj, const PathBundle& state_hat,
                     std::span<const double> v_grid = {}, double tol_mp = 1e-3);

/// Directional derivative of the cost along v_dir through the variational
/// pair (the integrand of the first-order optimality inequality).
double cost_directional_derivative(const ControlProblem& prob, const ControlPath& uhat,
                                   const PathBundle& state_hat, const ControlPath& v_dir,
                                   const VariationalSolution& var);

/// Initial-node product mean of the variational and adjoint pairs, directly
/// and via the time-integral identity obtained from the discrete product
/// rule; the two agree up to quadrature and sampling error.
DualityReport duality_check(const ControlProblem& prob, const ControlPath& uhat,
                            const PathBundle& state_hat, const ControlPath& v_dir,
                            const VariationalSolution& var, const AdjointBundle& adj,
                            const ScenarioEnsemble& ens);

}  // namespace mfbdsde
