#include "mfbdsde/mf_solver.hpp"

#include <cmath>
#include <utility>

#include "mfbdsde/parallel.hpp"

namespace mfbdsde {

double bundle_distance(const PathBundle& a, const PathBundle& b) {
    if (a.n_particles != b.n_particles || a.grid.n_steps != b.grid.n_steps)
        throw ShapeError("bundle shapes differ");
    const std::size_t N = a.n_particles;
    const std::size_t n = a.grid.n_steps;
    const double dt = a.grid.dt();

    std::vector<double> sq(N);
    double ymax = 0.0;
    for (std::size_t i = 0; i <= n; ++i) {
        parallel_for(N, [&](std::size_t jb, std::size_t je) {
            for (std::size_t j = jb; j < je; ++j) {
                const double d = a.y(j, i) - b.y(j, i);
                sq[j] = d * d;
            }
        });
        ymax = std::max(ymax, pairwise_mean(sq));
    }
    double zsum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        parallel_for(N, [&](std::size_t jb, std::size_t je) {
            for (std::size_t j = jb; j < je; ++j) {
                const double d = a.z(j, i) - b.z(j, i);
                sq[j] = d * d;
            }
        });
        zsum += pairwise_mean(sq);
    }
    return ymax + dt * zsum;
}

MfSolution solve_picard(const Expr& theta_f, const Expr& theta_g,
                        std::span<const double> terminal, const ScenarioEnsemble& ens,
                        const SolverConfig& cfg, double tol, std::size_t max_iter,
                        bool reversed_time, std::span<const double> controls_nodes,
                        std::span<const double> x_nodes, const RegressionMarkers& markers) {
    if (max_iter == 0) throw InvalidArgumentError("max_iter must be positive");
    if (tol < 0.0) throw InvalidArgumentError("tolerance must be nonnegative");
    const std::size_t N = ens.n_particles();
    if (terminal.size() != N) throw ShapeError("terminal array length must equal particle count");

    RegressionMarkers mk = markers;
    std::vector<double> fwd, bwd;
    if (mk.forward.empty()) {
        if (!x_nodes.empty()) {
            // Simulated state paths are the Markov marker; transpose back to
            // particle-major order.
            const std::size_t nodes = ens.grid.n_steps + 1;
            if (x_nodes.size() != N * nodes)
                throw ShapeError("state array must cover every particle and node");
            fwd.resize(N * nodes);
            for (std::size_t j = 0; j < N; ++j)
                for (std::size_t s = 0; s < nodes; ++s) fwd[j * nodes + s] = x_nodes[s * N + j];
        } else {
            fwd = forward_levels(ens);
        }
        mk.forward = fwd;
    }
    if (cfg.estimator == Estimator::pooled && mk.backward.empty()) {
        bwd = backward_tail_levels(ens);
        mk.backward = bwd;
    }

    PathBundle cur(ens.grid, N);
    const double start = pairwise_mean(terminal);
    for (std::size_t j = 0; j < N; ++j)
        for (std::size_t i = 0; i <= ens.grid.n_steps; ++i) cur.y(j, i) = start;

    PicardTrace trace;
    for (std::size_t iter = 0; iter < max_iter; ++iter) {
        FrozenPopulation frozen = freeze(cur, controls_nodes, x_nodes);
        MeanFieldDriver driver(theta_f, theta_g, ens.grid, frozen, controls_nodes, reversed_time);
        PathBundle next = solve_backward(driver, terminal, ens, cfg, mk);
        const double d = bundle_distance(cur, next);
        trace.distances.push_back(d);
        trace.iterations = iter + 1;
        cur = std::move(next);
        if (d <= tol) {
            trace.converged = true;
            return MfSolution{std::move(cur), std::move(trace)};
        }
    }
    throw IterationLimitError("fixed-point iteration did not reach tolerance", trace.distances);
}

MfSolution solve_mf_bdsde(const CoefficientSet& coeffs, const ScenarioEnsemble& ens,
                          const SolverConfig& cfg, double tol, std::size_t max_iter,
                          std::span<const double> controls_nodes,
                          std::span<const double> x_nodes, const RegressionMarkers& markers) {
    check_slot(coeffs.theta_f, slot_vars::theta, "forward driver");
    check_slot(coeffs.theta_g, slot_vars::theta, "backward driver");
    if (cfg.enforce_h1) {
        auto report = check_h1(coeffs.lipschitz);
        if (!report.h1_ok)
            throw InvalidArgumentError(
                "contraction check failed (margin " + std::to_string(report.margin) +
                "); pass the override to run anyway");
    }

    std::span<const double> x_term{};
    if (std::holds_alternative<XiExpression>(coeffs.xi)) {
        if (x_nodes.empty())
            throw InvalidArgumentError(
                "terminal expression needs one simulated forward state per particle");
        x_term = x_nodes.subspan(ens.grid.n_steps * ens.n_particles(), ens.n_particles());
    }
    std::vector<double> term = terminal_condition(coeffs.xi, ens, x_term);
    return solve_picard(coeffs.theta_f, coeffs.theta_g, term, ens, cfg, tol, max_iter, false,
                        controls_nodes, x_nodes, markers);
}

namespace {

MfSolution solve_reversed(const CoefficientSet& coeffs, const ScenarioEnsemble& ens,
                          const SolverConfig& cfg, double tol, std::size_t max_iter,
                          std::span<const double> initial_samples) {
    check_slot(coeffs.theta_f, slot_vars::theta, "forward driver");
    check_slot(coeffs.theta_g, slot_vars::theta, "backward driver");
    if (cfg.enforce_h1) {
        auto report = check_h1(coeffs.lipschitz);
        if (!report.h1_ok)
            throw InvalidArgumentError(
                "contraction check failed (margin " + std::to_string(report.margin) +
                "); pass the override to run anyway");
    }

    ScenarioEnsemble rev = time_reverse(ens);
    MfSolution sol = solve_picard(coeffs.theta_f, coeffs.theta_g, initial_samples, rev, cfg, tol,
                                  max_iter, true);

    const std::size_t N = ens.n_particles();
    const std::size_t n = ens.grid.n_steps;
    PathBundle out(ens.grid, N);
    for (std::size_t j = 0; j < N; ++j) {
        for (std::size_t i = 0; i <= n; ++i) {
            out.y(j, i) = sol.bundle.y(j, n - i);
            out.z(j, i) = sol.bundle.z(j, n - i);
        }
    }
    return MfSolution{std::move(out), std::move(sol.trace)};
}

}  // namespace

MfSolution solve_forward_dsde(const CoefficientSet& coeffs, const ScenarioEnsemble& ens,
                              const SolverConfig& cfg, double tol, std::size_t max_iter) {
    const auto* c = std::get_if<XiConstant>(&coeffs.xi);
    if (c == nullptr)
        throw InvalidArgumentError("forward equation needs a constant initial condition");
    std::vector<double> init(ens.n_particles(), c->value);
    return solve_reversed(coeffs, ens, cfg, tol, max_iter, init);
}

MfSolution solve_forward_dsde(const CoefficientSet& coeffs, const ScenarioEnsemble& ens,
                              const SolverConfig& cfg, double tol, std::size_t max_iter,
                              std::span<const double> initial_samples) {
    return solve_reversed(coeffs, ens, cfg, tol, max_iter, initial_samples);
}

}  // namespace mfbdsde
