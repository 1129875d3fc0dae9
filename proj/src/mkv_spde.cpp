#include "mfbdsde/mkv_spde.hpp"

#include <bit>
#include <cmath>

#include "mfbdsde/parallel.hpp"
#include "mfbdsde/rng.hpp"

namespace mfbdsde {

namespace {

constexpr unsigned field_terminal_slots = var_bit(Var::x) | var_bit(Var::xp);

// Euler-Maruyama core; population averages run against the frozen node-major
// columns when given, else against the evolving particle set itself.
std::vector<double> simulate_core(const MeanKernel& kb, const MeanKernel& ks, double x_init,
                                  std::size_t i0, const ScenarioEnsemble& ens,
                                  std::span<const double> frozen_x_nodes,
                                  std::size_t frozen_np) {
    const std::size_t N = ens.n_particles();
    const std::size_t n = ens.grid.n_steps;
    const double dt = ens.grid.dt();
    const bool b_zero = kb.kernel().is_constant() && kb.kernel().constant_value() == 0.0;
    const bool s_zero = ks.kernel().is_constant() && ks.kernel().constant_value() == 0.0;

    std::vector<double> out(N * (n + 1), x_init);
    std::vector<double> cur(N, x_init), next(N);
    for (std::size_t i = i0; i < n; ++i) {
        PopulationSnapshot snap;
        if (frozen_x_nodes.empty())
            snap.x = cur;
        else
            snap.x = frozen_x_nodes.subspan(i * frozen_np, frozen_np);
        const double ti = ens.grid.t(i);
        MeanKernel::Prepared pb, ps;
        if (!b_zero) pb = kb.prepare(ti, snap);
        if (!s_zero) ps = ks.prepare(ti, snap);

        parallel_for(N, [&](std::size_t jb, std::size_t je) {
            for (std::size_t j = jb; j < je; ++j) {
                Bindings own;
                own.set(Var::x, cur[j]);
                double v = cur[j];
                if (!b_zero) v += pb(own) * dt;
                if (!s_zero) v += ps(own) * ens.dw(j, i);
                next[j] = v;
            }
        });
        for (std::size_t j = 0; j < N; ++j) {
            if (!std::isfinite(next[j]))
                throw DivergenceError("forward simulation produced a non-finite state", i);
            out[j * (n + 1) + i + 1] = next[j];
        }
        cur.swap(next);
    }
    return out;
}

std::vector<double> to_nodes(std::span<const double> particle_major, std::size_t N,
                             std::size_t nodes) {
    std::vector<double> out(N * nodes);
    for (std::size_t j = 0; j < N; ++j)
        for (std::size_t s = 0; s < nodes; ++s) out[s * N + j] = particle_major[j * nodes + s];
    return out;
}

double path_distance(std::span<const double> a, std::span<const double> b, std::size_t N,
                     std::size_t nodes) {
    std::vector<double> sq(N);
    double worst = 0.0;
    for (std::size_t s = 0; s < nodes; ++s) {
        for (std::size_t j = 0; j < N; ++j) {
            const double d = a[j * nodes + s] - b[j * nodes + s];
            sq[j] = d * d;
        }
        worst = std::max(worst, pairwise_mean(sq));
    }
    return worst;
}

// Empirical average of the terminal field kernel at each particle's final
// state, integrated against the base population's final column.
std::vector<double> terminal_field(const Expr& h, std::span<const double> own_terminal,
                                   std::span<const double> base_terminal, double t_end) {
    check_slot(h, field_terminal_slots, "terminal field");
    MeanKernel kh(h);
    PopulationSnapshot snap;
    snap.x = base_terminal;
    auto prepared = kh.prepare(t_end, snap);
    std::vector<double> out(own_terminal.size());
    parallel_for(own_terminal.size(), [&](std::size_t jb, std::size_t je) {
        for (std::size_t j = jb; j < je; ++j) {
            Bindings own;
            own.set(Var::x, own_terminal[j]);
            out[j] = prepared(own);
        }
    });
    return out;
}

}  // namespace

std::vector<double> simulate_mkv(const CoefficientSet& coeffs, double x_init, double t_init,
                                 const ScenarioEnsemble& ens, const BasePopulation* base) {
    check_slot(coeffs.b, slot_vars::forward, "forward drift");
    check_slot(coeffs.sigma, slot_vars::forward, "forward volatility");
    const std::size_t i0 = ens.grid.snap(t_init);
    MeanKernel kb(coeffs.b), ks(coeffs.sigma);
    if (base == nullptr) return simulate_core(kb, ks, x_init, i0, ens, {}, 0);

    const std::size_t base_nodes = base->ens.grid.n_steps + 1;
    if (base_nodes != ens.grid.n_steps + 1)
        throw ShapeError("base population and ensemble disagree on node count");
    const std::size_t base_np = base->ens.n_particles();
    std::vector<double> frozen = to_nodes(base->X, base_np, base_nodes);
    return simulate_core(kb, ks, x_init, i0, ens, frozen, base_np);
}

BasePopulation build_base(const CoefficientSet& coeffs, double x0, const ScenarioEnsemble& ens,
                          const SolverConfig& cfg, double tol, std::size_t max_iter) {
    check_slot(coeffs.b, slot_vars::forward, "forward drift");
    check_slot(coeffs.sigma, slot_vars::forward, "forward volatility");
    check_slot(coeffs.theta_f, slot_vars::theta, "forward driver");
    check_slot(coeffs.theta_g, slot_vars::theta, "backward driver");
    if (cfg.enforce_h1) {
        auto report = check_h1(coeffs.lipschitz);
        if (!report.h1_ok)
            throw InvalidArgumentError(
                "contraction check failed (margin " + std::to_string(report.margin) +
                "); pass the override to run anyway");
    }

    BasePopulation base(ens, x0);
    const std::size_t N = ens.n_particles();
    const std::size_t nodes = ens.grid.n_steps + 1;
    MeanKernel kb(coeffs.b), ks(coeffs.sigma);

    // Self-interacting pass, then frozen passes until the paths reproduce
    // themselves.  The evolving pass already sits at the fixed point, so the
    // loop normally records a single zero distance.
    std::vector<double> paths = simulate_core(kb, ks, x0, 0, ens, {}, 0);
    for (std::size_t iter = 0; iter < max_iter; ++iter) {
        std::vector<double> frozen = to_nodes(paths, N, nodes);
        std::vector<double> refined = simulate_core(kb, ks, x0, 0, ens, frozen, N);
        const double d = path_distance(paths, refined, N, nodes);
        base.x_trace.distances.push_back(d);
        base.x_trace.iterations = iter + 1;
        paths = std::move(refined);
        if (d <= tol) {
            base.x_trace.converged = true;
            break;
        }
    }
    if (!base.x_trace.converged)
        throw IterationLimitError("forward population did not reach its fixed point",
                                  base.x_trace.distances);
    base.X = std::move(paths);

    std::vector<double> x_nodes = to_nodes(base.X, N, nodes);
    std::vector<double> term = terminal_field(coeffs.h,
                                              std::span<const double>(x_nodes).subspan(
                                                  (nodes - 1) * N, N),
                                              std::span<const double>(x_nodes).subspan(
                                                  (nodes - 1) * N, N),
                                              ens.grid.t_end);
    MfSolution sol = solve_picard(coeffs.theta_f, coeffs.theta_g, term, ens, cfg, tol, max_iter,
                                  false, {}, x_nodes);
    base.yz = std::move(sol.bundle);
    base.yz_trace = std::move(sol.trace);
    return base;
}

FieldSample evaluate_u(double t, double x, const BasePopulation& base,
                       const CoefficientSet& coeffs, const SolverConfig& cfg) {
    const TimeGrid& grid = base.ens.grid;
    const std::size_t i0 = grid.snap(t);
    const std::size_t n = grid.n_steps;
    const std::size_t N = base.ens.n_particles();
    const std::size_t m = base.ens.m_outer;

    std::vector<double> base_term(N);
    for (std::size_t j = 0; j < N; ++j) base_term[j] = base.X[j * (n + 1) + n];

    FieldSample out;
    out.t = grid.t(i0);
    out.x = x;

    if (i0 == n) {
        std::vector<double> own(1, x);
        const double val = terminal_field(coeffs.h, own, base_term, grid.t_end)[0];
        out.values.assign(m, val);
        out.mean = val;
        out.std_err = 0.0;
        return out;
    }

    // Fresh forward particles from (t, x); the backward increments stay the
    // base's own so the query couples to the same driver tail.
    const TimeGrid sub(grid.t(i0), grid.t_end, n - i0);
    const std::size_t sub_nodes = sub.n_steps + 1;
    const std::uint64_t salt =
        std::bit_cast<std::uint64_t>(x) ^ (0x9e3779b97f4a7c15ULL * (i0 + 1));
    ScenarioEnsemble q = sample_ensemble(sub, base.ens.m_outer, base.ens.k_inner,
                                         rng::derive_seed(base.ens.seed, salt));
    for (std::size_t g = 0; g < m; ++g)
        for (std::size_t s = 0; s < sub.n_steps; ++s)
            q.dB[g * sub.n_steps + s] = base.ens.dB[g * n + (i0 + s)];

    FrozenPopulation fr;
    fr.n_particles = N;
    fr.n_nodes = sub_nodes;
    fr.y.resize(N * sub_nodes);
    fr.z.resize(N * sub_nodes);
    fr.x.resize(N * sub_nodes);
    for (std::size_t j = 0; j < N; ++j) {
        for (std::size_t s = 0; s < sub_nodes; ++s) {
            fr.y[s * N + j] = base.yz.y(j, i0 + s);
            fr.z[s * N + j] = base.yz.z(j, i0 + s);
            fr.x[s * N + j] = base.X[j * (n + 1) + i0 + s];
        }
    }

    MeanKernel kb(coeffs.b), ks(coeffs.sigma);
    std::vector<double> xq = simulate_core(kb, ks, x, 0, q, fr.x, N);
    std::vector<double> xq_nodes = to_nodes(xq, N, sub_nodes);

    std::vector<double> own_term(N);
    for (std::size_t j = 0; j < N; ++j) own_term[j] = xq[j * sub_nodes + sub.n_steps];
    std::vector<double> term = terminal_field(coeffs.h, own_term, base_term, grid.t_end);

    MeanFieldDriver driver(coeffs.theta_f, coeffs.theta_g, sub, fr, {}, false, xq_nodes);
    RegressionMarkers mk;
    mk.forward = xq;
    std::vector<double> bwd;
    if (cfg.estimator == Estimator::pooled) {
        bwd = backward_tail_levels(q);
        mk.backward = bwd;
    }
    PathBundle bundle = solve_backward(driver, term, q, cfg, mk);

    out.values.resize(m);
    std::vector<double> scratch(base.ens.k_inner);
    for (std::size_t g = 0; g < m; ++g) {
        for (std::size_t r = 0; r < base.ens.k_inner; ++r)
            scratch[r] = bundle.y(g * base.ens.k_inner + r, 0);
        out.values[g] = pairwise_mean(scratch);
    }
    out.mean = pairwise_mean(out.values);
    if (m > 1) {
        std::vector<double> dev(m);
        for (std::size_t g = 0; g < m; ++g) {
            const double d = out.values[g] - out.mean;
            dev[g] = d * d;
        }
        out.std_err = std::sqrt(pairwise_sum(dev) / static_cast<double>(m - 1) /
                                static_cast<double>(m));
    }
    return out;
}

}  // namespace mfbdsde
