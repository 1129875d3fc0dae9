#pragma once

#include <span>
#include <vector>

#include "mfbdsde/coefficients.hpp"
#include "mfbdsde/errors.hpp"
#include "mfbdsde/meanfield.hpp"
#include "mfbdsde/scenario.hpp"

namespace mfbdsde {

enum class Estimator { grouped, pooled };

/// Knobs of the regression-based backward time stepper.
struct SolverConfig {
    int basis_degree = 1;             // polynomial degree of the state features
    Estimator estimator = Estimator::grouped;
    double ridge = 1e-8;
    /// Subtract the step's conditional-mean predictor from the Z regression
    /// target before multiplying by the forward increment.  The raw product
    /// target carries an O(1) variance term that the centered target removes.
    bool center_z = true;
    /// Refuse to run the outer fixed-point iteration when the contraction
    /// check fails (a warn-only override for experiments).
    bool enforce_h1 = true;
};

/// Per-particle (Y, Z) paths over every grid node, row-major [particle][node].
/// The same layout carries adjoint pairs (p, q) and variational pairs.
struct PathBundle {
    TimeGrid grid;
    std::size_t n_particles = 0;
    std::vector<double> Y;
    std::vector<double> Z;

    PathBundle(const TimeGrid& g, std::size_t n)
        : grid(g),
          n_particles(n),
          Y(n * (g.n_steps + 1), 0.0),
          Z(n * (g.n_steps + 1), 0.0) {}

    std::size_t n_nodes() const { return grid.n_steps + 1; }
    double y(std::size_t j, std::size_t i) const { return Y[j * n_nodes() + i]; }
    double z(std::size_t j, std::size_t i) const { return Z[j * n_nodes() + i]; }
    double& y(std::size_t j, std::size_t i) { return Y[j * n_nodes() + i]; }
    double& z(std::size_t j, std::size_t i) { return Z[j * n_nodes() + i]; }
};

/// Terminal-value samples for every particle.  Expression mode evaluates at
/// the particle's terminal forward state, which the caller must supply.
std::vector<double> terminal_condition(const XiMode& xi, const ScenarioEnsemble& ens,
                                       std::span<const double> x_terminal = {});

/// Node-major population columns frozen during one inner solve; column i of a
/// row-major bundle becomes the contiguous slice [i*N, (i+1)*N).
struct FrozenPopulation {
    std::size_t n_particles = 0;
    std::size_t n_nodes = 0;
    std::vector<double> y;
    std::vector<double> z;
    std::vector<double> v;  // empty when the problem carries no controls
    std::vector<double> x;  // empty unless a forward state participates

    bool empty() const { return n_nodes == 0; }
    PopulationSnapshot at(std::size_t node) const;
};

/// Transposes a bundle (plus optional node-major controls / forward states)
/// into frozen columns.
FrozenPopulation freeze(const PathBundle& bundle, std::span<const double> controls_nodes = {},
                        std::span<const double> x_nodes = {});

/// Per-node coefficient evaluation against whatever population or
/// inhomogeneous data the caller froze.  `g` is sampled at the right endpoint
/// of each step, `f` at the left endpoint with the predictor pair.
class StepDriver {
public:
    virtual ~StepDriver() = default;
    virtual double f(std::size_t node, std::size_t particle, double y, double z) const = 0;
    virtual double g(std::size_t node, std::size_t particle, double y, double z) const = 0;
    /// When true the backward-integral term is skipped entirely.
    virtual bool g_is_zero() const { return false; }
};

/// Regression feature sources: forward markers are per-particle levels
/// (Brownian level or simulated state), backward markers are per-group tail
/// levels; both node-indexed with n_nodes columns.
struct RegressionMarkers {
    std::span<const double> forward;   // [N][n_nodes]
    std::span<const double> backward;  // [m][n_nodes], pooled estimator only
};

/// Backward sweep from the terminal node: at each step predict the
/// conditional mean of Y_{i+1} plus the backward-integral contribution, read
/// Z off the correlation with the forward increment, then apply the driver
/// explicitly.  The terminal node binds z = 0 inside `g`; the final Z column
/// is back-copied from the penultimate one and feeds no integral.
PathBundle solve_backward(const StepDriver& driver, std::span<const double> terminal,
                          const ScenarioEnsemble& ens, const SolverConfig& cfg,
                          const RegressionMarkers& markers);

/// Evaluates a coefficient pair through empirical population means with the
/// primed slots frozen.  Controls are node-major [n_nodes][N] like the frozen
/// columns.  With `reversed_time` the DSL variable t binds to the reflected
/// time t_start + t_end - t(node).  The own x slot reads `own_x_nodes` when
/// given, else the frozen x columns; primed xp always reads the frozen
/// columns, so a field query can ride its own paths against a fixed base.
class MeanFieldDriver : public StepDriver {
public:
    MeanFieldDriver(const Expr& theta_f, const Expr& theta_g, const TimeGrid& grid,
                    const FrozenPopulation& frozen, std::span<const double> controls_nodes = {},
                    bool reversed_time = false, std::span<const double> own_x_nodes = {});

    double f(std::size_t node, std::size_t particle, double y, double z) const override;
    double g(std::size_t node, std::size_t particle, double y, double z) const override;
    bool g_is_zero() const override { return g_zero_; }

private:
    double node_time(std::size_t node) const;
    double eval(const MeanKernel& kernel, const std::vector<MeanKernel::Prepared>& prepared,
                std::size_t node, std::size_t particle, double y, double z) const;

    MeanKernel f_kernel_;
    MeanKernel g_kernel_;
    TimeGrid grid_;
    const FrozenPopulation* frozen_;
    std::span<const double> controls_;
    std::span<const double> own_x_;
    std::size_t np_ = 0;  // particles per node across all node-major inputs
    bool reversed_;
    bool g_zero_;
    bool f_plain_ = false;  // no primed variables: skip population machinery
    bool g_plain_ = false;
    std::vector<MeanKernel::Prepared> f_prepared_;
    std::vector<MeanKernel::Prepared> g_prepared_;
};

/// One inner solve of the backward equation with every primed slot frozen.
/// When `frozen` is empty the coefficient pair must not mention primed
/// variables.  Markers default to the ensemble's forward Brownian levels.
PathBundle solve_bdsde(const CoefficientSet& coeffs, const ScenarioEnsemble& ens,
                       const FrozenPopulation& frozen, std::span<const double> controls_nodes,
                       const SolverConfig& cfg, const RegressionMarkers& markers = {});

}  // namespace mfbdsde
