#include "mfbdsde/control.hpp"

#include <algorithm>
#include <cmath>

#include "mfbdsde/parallel.hpp"

namespace mfbdsde {

namespace {

bool is_zero(const Expr& e) { return e.is_constant() && e.constant_value() == 0.0; }

std::vector<double> to_node_major(std::span<const double> particle_major, std::size_t N,
                                  std::size_t nodes) {
    std::vector<double> out(N * nodes);
    for (std::size_t j = 0; j < N; ++j)
        for (std::size_t i = 0; i < nodes; ++i) out[i * N + j] = particle_major[j * nodes + i];
    return out;
}

/// Node-major columns of the optimal pair and control; the own state every
/// linearized coefficient is evaluated at.
struct HatColumns {
    std::size_t N = 0;
    std::size_t nodes = 0;
    std::vector<double> y, z, v;

    PopulationSnapshot at(std::size_t i) const {
        PopulationSnapshot s;
        s.y = std::span<const double>(y).subspan(i * N, N);
        s.z = std::span<const double>(z).subspan(i * N, N);
        s.v = std::span<const double>(v).subspan(i * N, N);
        return s;
    }
    Bindings own(std::size_t i, std::size_t j) const {
        Bindings b;
        b.set(Var::y, y[i * N + j]);
        b.set(Var::z, z[i * N + j]);
        b.set(Var::v, v[i * N + j]);
        return b;
    }
};

HatColumns gather_hat(const PathBundle& state, const ControlPath& u) {
    const std::size_t N = state.n_particles;
    const std::size_t nodes = state.n_nodes();
    if (u.n_particles != N || u.n_nodes != nodes)
        throw ShapeError("control path and state bundle disagree on shape");
    HatColumns hat;
    hat.N = N;
    hat.nodes = nodes;
    hat.y = to_node_major(state.Y, N, nodes);
    hat.z = to_node_major(state.Z, N, nodes);
    hat.v = to_node_major(u.v, N, nodes);
    return hat;
}

/// Population average of `kernel` at every (node, particle), optionally
/// weighted by a node-major carrier on the integrated slot.  A zero kernel
/// returns an all-zero field without touching the population.
std::vector<double> eval_field(const Expr& kernel, const TimeGrid& grid, const HatColumns& hat,
                               std::span<const double> carrier_nodes = {}) {
    std::vector<double> out(hat.nodes * hat.N, 0.0);
    if (is_zero(kernel)) return out;
    MeanKernel mk(kernel);
    for (std::size_t i = 0; i < hat.nodes; ++i) {
        std::span<const double> car;
        if (!carrier_nodes.empty()) car = carrier_nodes.subspan(i * hat.N, hat.N);
        auto prep = mk.prepare(grid.t(i), hat.at(i), car);
        parallel_for(hat.N, [&](std::size_t jb, std::size_t je) {
            for (std::size_t j = jb; j < je; ++j) out[i * hat.N + j] = prep(hat.own(i, j));
        });
    }
    return out;
}

/// Same quantity at a single node.
std::vector<double> eval_node(const Expr& kernel, double t, const HatColumns& hat,
                              std::size_t i, std::span<const double> carrier = {}) {
    std::vector<double> out(hat.N, 0.0);
    if (is_zero(kernel)) return out;
    MeanKernel mk(kernel);
    auto prep = mk.prepare(t, hat.at(i), carrier);
    for (std::size_t j = 0; j < hat.N; ++j) out[j] = prep(hat.own(i, j));
    return out;
}

struct Partials {
    Expr y, z, yp, zp, v, vp;
};

Partials partials_of(const Expr& e) {
    Partials p;
    p.y = e.diff(Var::y);
    p.z = e.diff(Var::z);
    p.yp = e.diff(Var::yp);
    p.zp = e.diff(Var::zp);
    p.v = e.diff(Var::v);
    p.vp = e.diff(Var::vp);
    return p;
}

/// Driver with precomputed per-(node, particle) linear coefficients,
/// node-major: value = cy*y + cz*z + c0.
class LinearDriver : public StepDriver {
public:
    LinearDriver(std::size_t N, std::size_t nodes)
        : N_(N),
          fy(N * nodes, 0.0),
          fz(N * nodes, 0.0),
          fc(N * nodes, 0.0),
          gy(N * nodes, 0.0),
          gz(N * nodes, 0.0),
          gc(N * nodes, 0.0) {}

    double f(std::size_t node, std::size_t particle, double y, double z) const override {
        const std::size_t k = node * N_ + particle;
        return fy[k] * y + fz[k] * z + fc[k];
    }
    double g(std::size_t node, std::size_t particle, double y, double z) const override {
        const std::size_t k = node * N_ + particle;
        return gy[k] * y + gz[k] * z + gc[k];
    }
    bool g_is_zero() const override { return g_zero; }

    std::size_t N_;
    std::vector<double> fy, fz, fc, gy, gz, gc;
    bool g_zero = false;
};

void check_grid_match(const TimeGrid& a, const TimeGrid& b) {
    if (a.t_start != b.t_start || a.t_end != b.t_end || a.n_steps != b.n_steps)
        throw ShapeError("time grids of state and ensemble differ");
}

}  // namespace

ControlPath ControlPath::constant(double value, std::size_t n_particles, std::size_t n_nodes) {
    ControlPath p;
    p.n_particles = n_particles;
    p.n_nodes = n_nodes;
    p.v.assign(n_particles * n_nodes, value);
    return p;
}

ControlPath ControlPath::deterministic(std::span<const double> per_node,
                                       std::size_t n_particles) {
    ControlPath p;
    p.n_particles = n_particles;
    p.n_nodes = per_node.size();
    p.v.resize(n_particles * p.n_nodes);
    for (std::size_t j = 0; j < n_particles; ++j)
        for (std::size_t i = 0; i < p.n_nodes; ++i) p.v[j * p.n_nodes + i] = per_node[i];
    return p;
}

bool ControlPath::inside(double lo, double hi) const {
    for (double x : v)
        if (x < lo || x > hi) return false;
    return true;
}

PathBundle solve_state(const ControlProblem& prob, const ControlPath& v,
                       const ScenarioEnsemble& ens, const SolverConfig& cfg, double tol,
                       std::size_t max_iter) {
    const std::size_t N = ens.n_particles();
    const std::size_t nodes = ens.grid.n_nodes();
    if (v.n_particles != N || v.n_nodes != nodes)
        throw ShapeError("control path does not match the ensemble shape");
    if (!v.inside(prob.u_lo, prob.u_hi))
        throw InvalidArgumentError("control path leaves the admissible box");
    std::vector<double> controls = to_node_major(v.v, N, nodes);
    return solve_mf_bdsde(prob.coeffs, ens, cfg, tol, max_iter, controls).bundle;
}

double cost(const ControlProblem& prob, const ControlPath& v, const PathBundle& state) {
    HatColumns hat = gather_hat(state, v);
    const TimeGrid& grid = state.grid;
    const double dt = grid.dt();
    std::vector<double> scratch(hat.N);

    double acc = 0.0;
    if (!is_zero(prob.coeffs.l)) {
        MeanKernel kl(prob.coeffs.l);
        for (std::size_t i = 0; i < grid.n_steps; ++i) {
            auto prep = kl.prepare(grid.t(i), hat.at(i));
            for (std::size_t j = 0; j < hat.N; ++j) scratch[j] = prep(hat.own(i, j));
            acc += dt * pairwise_mean(scratch);
        }
    }
    if (!is_zero(prob.coeffs.h)) {
        MeanKernel kh(prob.coeffs.h);
        auto prep = kh.prepare(grid.t_start, hat.at(0));
        for (std::size_t j = 0; j < hat.N; ++j) scratch[j] = prep(hat.own(0, j));
        acc += pairwise_mean(scratch);
    }
    return acc;
}

VariationalSolution solve_variational(const ControlProblem& prob, const ControlPath& uhat,
                                      const PathBundle& state_hat, const ControlPath& v_dir,
                                      const ScenarioEnsemble& ens, const SolverConfig& cfg,
                                      double tol, std::size_t max_iter) {
    const std::size_t N = ens.n_particles();
    const std::size_t nodes = ens.grid.n_nodes();
    check_grid_match(state_hat.grid, ens.grid);
    if (state_hat.n_particles != N) throw ShapeError("state bundle does not match the ensemble");
    if (v_dir.n_particles != N || v_dir.n_nodes != nodes)
        throw ShapeError("direction path does not match the ensemble shape");

    HatColumns hat = gather_hat(state_hat, uhat);
    const TimeGrid& grid = ens.grid;
    Partials pf = partials_of(prob.coeffs.theta_f);
    Partials pg = partials_of(prob.coeffs.theta_g);

    auto fy = eval_field(pf.y, grid, hat);
    auto fz = eval_field(pf.z, grid, hat);
    auto gy = eval_field(pg.y, grid, hat);
    auto gz = eval_field(pg.z, grid, hat);

    std::vector<double> vdir_nodes = to_node_major(v_dir.v, N, nodes);
    auto sf_own = eval_field(pf.v, grid, hat);
    auto sf_cross = eval_field(pf.vp, grid, hat, vdir_nodes);
    auto sg_own = eval_field(pg.v, grid, hat);
    auto sg_cross = eval_field(pg.vp, grid, hat, vdir_nodes);

    const bool f_cross = !is_zero(pf.yp) || !is_zero(pf.zp);
    const bool g_cross = !is_zero(pg.yp) || !is_zero(pg.zp);
    const unsigned g_dep = prob.coeffs.theta_g.var_mask() &
                           (var_bit(Var::y) | var_bit(Var::z) | var_bit(Var::v) |
                            var_bit(Var::yp) | var_bit(Var::zp) | var_bit(Var::vp));

    LinearDriver drv(N, nodes);
    drv.fy = std::move(fy);
    drv.fz = std::move(fz);
    drv.gy = std::move(gy);
    drv.gz = std::move(gz);
    drv.g_zero = g_dep == 0;

    std::vector<double> fwd = forward_levels(ens);
    std::vector<double> tails;
    RegressionMarkers mk;
    mk.forward = fwd;
    if (cfg.estimator == Estimator::pooled) {
        tails = backward_tail_levels(ens);
        mk.backward = tails;
    }
    const std::vector<double> zero_terminal(N, 0.0);

    PathBundle prev(grid, N);
    PicardTrace trace;
    for (std::size_t iter = 0; iter < max_iter; ++iter) {
        const std::size_t n_cells = nodes * N;
        for (std::size_t k = 0; k < n_cells; ++k) {
            const std::size_t i = k / N, j = k % N;
            drv.fc[k] = sf_own[k] * vdir_nodes[i * N + j] + sf_cross[k];
            drv.gc[k] = sg_own[k] * vdir_nodes[i * N + j] + sg_cross[k];
        }
        if (f_cross || g_cross) {
            std::vector<double> xi_nodes = to_node_major(prev.Y, N, nodes);
            std::vector<double> eta_nodes = to_node_major(prev.Z, N, nodes);
            if (f_cross) {
                auto cy = eval_field(pf.yp, grid, hat, xi_nodes);
                auto cz = eval_field(pf.zp, grid, hat, eta_nodes);
                for (std::size_t k = 0; k < n_cells; ++k) drv.fc[k] += cy[k] + cz[k];
            }
            if (g_cross) {
                auto cy = eval_field(pg.yp, grid, hat, xi_nodes);
                auto cz = eval_field(pg.zp, grid, hat, eta_nodes);
                for (std::size_t k = 0; k < n_cells; ++k) drv.gc[k] += cy[k] + cz[k];
            }
        }
        PathBundle cur = solve_backward(drv, zero_terminal, ens, cfg, mk);
        const double d = bundle_distance(cur, prev);
        trace.distances.push_back(d);
        trace.iterations = iter + 1;
        prev = std::move(cur);
        if (d <= tol) {
            trace.converged = true;
            break;
        }
    }
    if (!trace.converged)
        throw IterationLimitError("variational fixed point did not reach tolerance",
                                  trace.distances);
    return {std::move(prev), std::move(trace)};
}

GateauxReport gateaux_check(const ControlProblem& prob, const ControlPath& uhat,
                            const ControlPath& v_dir, std::span<const double> eps_list,
                            const ScenarioEnsemble& ens, const SolverConfig& cfg, double tol,
                            std::size_t max_iter) {
    PathBundle base = solve_state(prob, uhat, ens, cfg, tol, max_iter);
    VariationalSolution var =
        solve_variational(prob, uhat, base, v_dir, ens, cfg, std::min(tol, 1e-10), max_iter);

    const std::size_t N = base.n_particles;
    const std::size_t nodes = base.n_nodes();
    GateauxReport report;
    std::vector<double> scratch(N);

    for (double eps : eps_list) {
        ControlPath pert = uhat;
        for (std::size_t k = 0; k < pert.v.size(); ++k) pert.v[k] += eps * v_dir.v[k];
        if (!pert.inside(prob.u_lo, prob.u_hi))
            throw InvalidArgumentError("perturbed control leaves the admissible box");
        PathBundle st = solve_state(prob, pert, ens, cfg, tol, max_iter);

        double diff = 0.0, resid = 0.0;
        for (std::size_t i = 0; i < nodes; ++i) {
            for (std::size_t j = 0; j < N; ++j) {
                const double d = st.y(j, i) - base.y(j, i);
                scratch[j] = d * d;
            }
            diff = std::max(diff, pairwise_mean(scratch));
            for (std::size_t j = 0; j < N; ++j) {
                const double r = (st.y(j, i) - base.y(j, i)) / eps - var.bundle.y(j, i);
                scratch[j] = r * r;
            }
            resid = std::max(resid, pairwise_mean(scratch));
        }
        report.eps.push_back(eps);
        report.diff_sq.push_back(diff);
        report.resid_sq.push_back(resid);
    }

    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    std::size_t cnt = 0;
    for (std::size_t k = 0; k < report.eps.size(); ++k) {
        if (report.diff_sq[k] <= 0.0) continue;
        const double lx = std::log(report.eps[k]);
        const double ly = std::log(report.diff_sq[k]);
        sx += lx;
        sy += ly;
        sxx += lx * lx;
        sxy += lx * ly;
        ++cnt;
    }
    if (cnt >= 2) {
        const double denom = sxx - sx * sx / static_cast<double>(cnt);
        if (denom != 0.0) report.slope = (sxy - sx * sy / static_cast<double>(cnt)) / denom;
    }
    return report;
}

Expr hamiltonian_expr(const ControlProblem& prob) {
    std::string src;
    if (!is_zero(prob.coeffs.theta_f)) src += "(" + prob.coeffs.theta_f.str() + ")*p";
    if (!is_zero(prob.coeffs.theta_g)) {
        if (!src.empty()) src += " + ";
        src += "(" + prob.coeffs.theta_g.str() + ")*q";
    }
    if (!is_zero(prob.coeffs.l)) {
        if (!src.empty()) src += " + ";
        src += prob.coeffs.l.str();
    }
    if (src.empty()) src = "0";
    return parse_expr(src);
}

namespace {
Bindings hamiltonian_point(double t, double y1, double z1, double v1, double y2, double z2,
                           double v2, double p, double q) {
    Bindings b;
    b.set(Var::t, t);
    b.set(Var::y, y1).set(Var::z, z1).set(Var::v, v1);
    b.set(Var::yp, y2).set(Var::zp, z2).set(Var::vp, v2);
    b.set(Var::p, p).set(Var::q, q);
    return b;
}
}  // namespace

double hamiltonian(double t, double y1, double z1, double v1, double y2, double z2, double v2,
                   double p, double q, const ControlProblem& prob) {
    return hamiltonian_expr(prob).eval(hamiltonian_point(t, y1, z1, v1, y2, z2, v2, p, q));
}

double hamiltonian_partial(Var var, double t, double y1, double z1, double v1, double y2,
                           double z2, double v2, double p, double q,
                           const ControlProblem& prob) {
    return hamiltonian_expr(prob).diff(var).eval(
        hamiltonian_point(t, y1, z1, v1, y2, z2, v2, p, q));
}

AdjointBundle solve_adjoint(const ControlProblem& prob, const ControlPath& uhat,
                            const PathBundle& state_hat, const ScenarioEnsemble& ens,
                            const SolverConfig& cfg, double tol, std::size_t max_iter) {
    if (ens.k_inner != 1)
        throw ShapeError("adjoint reversal requires exactly one particle per group");
    check_grid_match(state_hat.grid, ens.grid);
    const std::size_t N = ens.n_particles();
    const std::size_t n = ens.grid.n_steps;
    const std::size_t nodes = n + 1;
    if (state_hat.n_particles != N) throw ShapeError("state bundle does not match the ensemble");

    HatColumns hat = gather_hat(state_hat, uhat);
    const TimeGrid& grid = ens.grid;
    Partials pf = partials_of(prob.coeffs.theta_f);
    Partials pg = partials_of(prob.coeffs.theta_g);
    const Expr ly = prob.coeffs.l.diff(Var::y);
    const Expr lz = prob.coeffs.l.diff(Var::z);
    const Expr lyp_star = prob.coeffs.l.diff(Var::yp).swap_primed();
    const Expr lzp_star = prob.coeffs.l.diff(Var::zp).swap_primed();

    auto fy = eval_field(pf.y, grid, hat);
    auto fz = eval_field(pf.z, grid, hat);
    auto gy = eval_field(pg.y, grid, hat);
    auto gz = eval_field(pg.z, grid, hat);
    auto cly = eval_field(ly, grid, hat);
    auto clz = eval_field(lz, grid, hat);
    auto elyp = eval_field(lyp_star, grid, hat);
    auto elzp = eval_field(lzp_star, grid, hat);

    // Initial condition: own-slot partial averaged over the population plus
    // the star-slot partial integrated over the first argument.
    auto p0_own = eval_node(prob.coeffs.h.diff(Var::y), grid.t_start, hat, 0);
    auto p0_star = eval_node(prob.coeffs.h.diff(Var::yp).swap_primed(), grid.t_start, hat, 0);
    std::vector<double> p0(N);
    for (std::size_t j = 0; j < N; ++j) p0[j] = p0_own[j] + p0_star[j];

    const Expr f_yp_star = pf.yp.swap_primed();
    const Expr g_yp_star = pg.yp.swap_primed();
    const Expr f_zp_star = pf.zp.swap_primed();
    const Expr g_zp_star = pg.zp.swap_primed();
    const bool cross = !is_zero(pf.yp) || !is_zero(pg.yp) || !is_zero(pf.zp) ||
                       !is_zero(pg.zp);

    ScenarioEnsemble rev = time_reverse(ens);
    std::vector<double> fwd = forward_levels(rev);
    std::vector<double> tails;
    RegressionMarkers mk;
    mk.forward = fwd;
    if (cfg.estimator == Estimator::pooled) {
        tails = backward_tail_levels(rev);
        mk.backward = tails;
    }

    // Reversed-time driver: own p couples through the y-partials, own q
    // through the z-partials; node s of the reversed clock reads original
    // node n - s.
    LinearDriver drv(N, nodes);
    for (std::size_t s = 0; s < nodes; ++s) {
        const std::size_t i = n - s;
        for (std::size_t j = 0; j < N; ++j) {
            drv.fy[s * N + j] = fy[i * N + j];
            drv.fz[s * N + j] = gy[i * N + j];
            drv.gy[s * N + j] = fz[i * N + j];
            drv.gz[s * N + j] = gz[i * N + j];
        }
    }
    drv.g_zero = is_zero(pf.z) && is_zero(pg.z) && is_zero(lz) && is_zero(lzp_star) &&
                 is_zero(pf.zp) && is_zero(pg.zp);

    PathBundle prev(grid, N);
    for (std::size_t j = 0; j < N; ++j)
        for (std::size_t i = 0; i < nodes; ++i) prev.y(j, i) = p0[j];

    PicardTrace trace;
    std::vector<double> p_nodes(nodes * N), q_nodes(nodes * N);
    for (std::size_t iter = 0; iter < max_iter; ++iter) {
        // Carriers in original node indexing from the previous reversed pair.
        for (std::size_t i = 0; i < nodes; ++i) {
            for (std::size_t j = 0; j < N; ++j) {
                p_nodes[i * N + j] = prev.y(j, n - i);
                q_nodes[i * N + j] = prev.z(j, n - i);
            }
        }
        std::vector<double> cf(nodes * N, 0.0), cg(nodes * N, 0.0);
        for (std::size_t k = 0; k < nodes * N; ++k) {
            cf[k] = cly[k] + elyp[k];
            cg[k] = clz[k] + elzp[k];
        }
        if (cross) {
            auto a = eval_field(f_yp_star, grid, hat, p_nodes);
            auto b = eval_field(g_yp_star, grid, hat, q_nodes);
            auto c = eval_field(f_zp_star, grid, hat, p_nodes);
            auto d = eval_field(g_zp_star, grid, hat, q_nodes);
            for (std::size_t k = 0; k < nodes * N; ++k) {
                cf[k] += a[k] + b[k];
                cg[k] += c[k] + d[k];
            }
        }
        for (std::size_t s = 0; s < nodes; ++s) {
            const std::size_t i = n - s;
            for (std::size_t j = 0; j < N; ++j) {
                drv.fc[s * N + j] = cf[i * N + j];
                drv.gc[s * N + j] = cg[i * N + j];
            }
        }

        PathBundle cur = solve_backward(drv, p0, rev, cfg, mk);
        const double d = bundle_distance(cur, prev);
        trace.distances.push_back(d);
        trace.iterations = iter + 1;
        prev = std::move(cur);
        if (d <= tol) {
            trace.converged = true;
            break;
        }
    }
    if (!trace.converged)
        throw IterationLimitError("adjoint fixed point did not reach tolerance",
                                  trace.distances);

    AdjointBundle out(grid, N);
    for (std::size_t j = 0; j < N; ++j) {
        for (std::size_t i = 0; i < nodes; ++i) {
            out.p(j, i) = prev.y(j, n - i);
            out.q(j, i) = prev.z(j, n - i);
        }
    }
    out.trace = std::move(trace);
    return out;
}

MpReport mp_residual(const ControlProblem& prob, const ControlPath& uhat,
                     const AdjointBundle& adj, const PathBundle& state_hat,
                     std::span<const double> v_grid, double tol_mp) {
    check_grid_match(state_hat.grid, adj.grid);
    const std::size_t N = state_hat.n_particles;
    const std::size_t n = state_hat.grid.n_steps;
    const std::size_t nodes = n + 1;
    if (adj.n_particles != N) throw ShapeError("adjoint bundle does not match the state");

    std::vector<double> grid_vals(v_grid.begin(), v_grid.end());
    if (grid_vals.empty()) {
        if (!std::isfinite(prob.u_lo) || !std::isfinite(prob.u_hi))
            throw InvalidArgumentError("an unbounded box needs an explicit comparison grid");
        grid_vals = {prob.u_lo, prob.u_hi};
    }
    for (double v : grid_vals)
        if (v < prob.u_lo || v > prob.u_hi)
            throw InvalidArgumentError("comparison value outside the admissible box");

    HatColumns hat = gather_hat(state_hat, uhat);
    const TimeGrid& grid = state_hat.grid;
    Partials pf = partials_of(prob.coeffs.theta_f);
    Partials pg = partials_of(prob.coeffs.theta_g);

    auto fv = eval_field(pf.v, grid, hat);
    auto gv = eval_field(pg.v, grid, hat);
    auto lv = eval_field(prob.coeffs.l.diff(Var::v), grid, hat);

    std::vector<double> p_nodes(nodes * N), q_nodes(nodes * N);
    for (std::size_t i = 0; i < nodes; ++i) {
        for (std::size_t j = 0; j < N; ++j) {
            p_nodes[i * N + j] = adj.p(j, i);
            q_nodes[i * N + j] = adj.q(j, i);
        }
    }
    auto cfv = eval_field(pf.vp.swap_primed(), grid, hat, p_nodes);
    auto cgv = eval_field(pg.vp.swap_primed(), grid, hat, q_nodes);
    auto clv = eval_field(prob.coeffs.l.diff(Var::vp).swap_primed(), grid, hat);

    MpReport report;
    report.global_min = std::numeric_limits<double>::infinity();
    std::size_t violations = 0;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < N; ++j) {
            const std::size_t k = i * N + j;
            const double G = adj.p(j, i) * fv[k] + adj.q(j, i) * gv[k] + lv[k] + cfv[k] +
                             cgv[k] + clv[k];
            double point_min = std::numeric_limits<double>::infinity();
            for (double v : grid_vals)
                point_min = std::min(point_min, G * (v - uhat.at(j, i)));
            report.global_min = std::min(report.global_min, point_min);
            if (point_min < -tol_mp) ++violations;
        }
    }
    report.n_points = n * N;
    report.violation_fraction =
        static_cast<double>(violations) / static_cast<double>(report.n_points);
    return report;
}

double cost_directional_derivative(const ControlProblem& prob, const ControlPath& uhat,
                                   const PathBundle& state_hat, const ControlPath& v_dir,
                                   const VariationalSolution& var) {
    HatColumns hat = gather_hat(state_hat, uhat);
    const TimeGrid& grid = state_hat.grid;
    const std::size_t N = hat.N;
    const std::size_t nodes = hat.nodes;
    const double dt = grid.dt();
    if (v_dir.n_particles != N || v_dir.n_nodes != nodes)
        throw ShapeError("direction path does not match the state shape");

    std::vector<double> xi_nodes = to_node_major(var.bundle.Y, N, nodes);
    std::vector<double> eta_nodes = to_node_major(var.bundle.Z, N, nodes);
    std::vector<double> vdir_nodes = to_node_major(v_dir.v, N, nodes);

    auto ly = eval_field(prob.coeffs.l.diff(Var::y), grid, hat);
    auto lz = eval_field(prob.coeffs.l.diff(Var::z), grid, hat);
    auto lv = eval_field(prob.coeffs.l.diff(Var::v), grid, hat);
    auto lyp = eval_field(prob.coeffs.l.diff(Var::yp), grid, hat, xi_nodes);
    auto lzp = eval_field(prob.coeffs.l.diff(Var::zp), grid, hat, eta_nodes);
    auto lvp = eval_field(prob.coeffs.l.diff(Var::vp), grid, hat, vdir_nodes);

    std::vector<double> scratch(N);
    double acc = 0.0;
    for (std::size_t i = 0; i + 1 < nodes; ++i) {
        for (std::size_t j = 0; j < N; ++j) {
            const std::size_t k = i * N + j;
            scratch[j] = ly[k] * xi_nodes[k] + lz[k] * eta_nodes[k] +
                         lv[k] * vdir_nodes[k] + lyp[k] + lzp[k] + lvp[k];
        }
        acc += dt * pairwise_mean(scratch);
    }

    auto hy = eval_node(prob.coeffs.h.diff(Var::y), grid.t_start, hat, 0);
    auto hyp = eval_node(prob.coeffs.h.diff(Var::yp), grid.t_start, hat, 0,
                         std::span<const double>(xi_nodes).subspan(0, N));
    for (std::size_t j = 0; j < N; ++j)
        scratch[j] = hy[j] * var.bundle.y(j, 0) + hyp[j];
    acc += pairwise_mean(scratch);
    return acc;
}

DualityReport duality_check(const ControlProblem& prob, const ControlPath& uhat,
                            const PathBundle& state_hat, const ControlPath& v_dir,
                            const VariationalSolution& var, const AdjointBundle& adj,
                            const ScenarioEnsemble& ens) {
    check_grid_match(state_hat.grid, adj.grid);
    HatColumns hat = gather_hat(state_hat, uhat);
    const TimeGrid& grid = state_hat.grid;
    const std::size_t N = hat.N;
    const std::size_t nodes = hat.nodes;
    const double dt = grid.dt();

    std::vector<double> xi_nodes = to_node_major(var.bundle.Y, N, nodes);
    std::vector<double> eta_nodes = to_node_major(var.bundle.Z, N, nodes);
    std::vector<double> vdir_nodes = to_node_major(v_dir.v, N, nodes);

    Partials pf = partials_of(prob.coeffs.theta_f);
    Partials pg = partials_of(prob.coeffs.theta_g);
    auto fv = eval_field(pf.v, grid, hat);
    auto gv = eval_field(pg.v, grid, hat);
    auto fvp = eval_field(pf.vp, grid, hat, vdir_nodes);
    auto gvp = eval_field(pg.vp, grid, hat, vdir_nodes);
    auto ly = eval_field(prob.coeffs.l.diff(Var::y), grid, hat);
    auto lz = eval_field(prob.coeffs.l.diff(Var::z), grid, hat);
    auto lyp = eval_field(prob.coeffs.l.diff(Var::yp), grid, hat, xi_nodes);
    auto lzp = eval_field(prob.coeffs.l.diff(Var::zp), grid, hat, eta_nodes);

    // Per-particle contributions; group means feed the spread estimate.
    std::vector<double> per_direct(N), per_integral(N, 0.0);
    for (std::size_t j = 0; j < N; ++j) per_direct[j] = var.bundle.y(j, 0) * adj.p(j, 0);
    for (std::size_t i = 0; i + 1 < nodes; ++i) {
        for (std::size_t j = 0; j < N; ++j) {
            const std::size_t k = i * N + j;
            const double gain = adj.p(j, i) * (fv[k] * vdir_nodes[k] + fvp[k]) +
                                adj.q(j, i) * (gv[k] * vdir_nodes[k] + gvp[k]);
            const double loss = ly[k] * xi_nodes[k] + lz[k] * eta_nodes[k] + lyp[k] + lzp[k];
            per_integral[j] += dt * (gain - loss);
        }
    }

    DualityReport report;
    report.direct = pairwise_mean(per_direct);
    report.integral = pairwise_mean(per_integral);

    const std::size_t m = ens.m_outer;
    const std::size_t k_inner = ens.k_inner;
    if (m > 1) {
        std::vector<double> group_diff(m), scratch(k_inner);
        for (std::size_t g = 0; g < m; ++g) {
            for (std::size_t r = 0; r < k_inner; ++r) {
                const std::size_t j = g * k_inner + r;
                scratch[r] = per_direct[j] - per_integral[j];
            }
            group_diff[g] = pairwise_mean(scratch);
        }
        const double mean_diff = pairwise_mean(group_diff);
        std::vector<double> dev(m);
        for (std::size_t g = 0; g < m; ++g) {
            const double d = group_diff[g] - mean_diff;
            dev[g] = d * d;
        }
        report.std_err = std::sqrt(pairwise_sum(dev) / static_cast<double>(m - 1) /
                                   static_cast<double>(m));
    }
    return report;
}

}  // namespace mfbdsde
