#include "mfbdsde/runner.hpp"

#include <chrono>
#include <cmath>
#include <optional>
#include <sstream>
#include <vector>

#include "mfbdsde/control.hpp"
#include "mfbdsde/errors.hpp"
#include "mfbdsde/lq.hpp"
#include "mfbdsde/mf_solver.hpp"
#include "mfbdsde/mkv_spde.hpp"
#include "mfbdsde/parallel.hpp"
#include "mfbdsde/presets.hpp"
#include "mfbdsde/rng.hpp"

namespace mfbdsde {

namespace {

struct Resolved {
    CoefficientSet coeffs;
    double x0 = 0.0;
    TimeGrid grid{0.0, 1.0, 64};
    std::size_t m_outer = 8;
    std::size_t k_inner = 1024;
    SolverConfig solver;
    std::optional<double> oracle;
    std::optional<LQCoefficients> lq;
    bool has_control = false;
};

XiMode parse_xi_setting(const std::string& text) {
    if (text == "forward-terminal") return XiWTerminal{};
    try {
        std::size_t used = 0;
        const double c = std::stod(text, &used);
        if (used == text.size()) return XiConstant{c};
    } catch (const std::exception&) {
    }
    Expr e = parse_expr(text);
    if ((e.var_mask() & ~var_bit(Var::x)) != 0)
        throw InvalidArgumentError("xi expression may depend on x only");
    return XiExpression{std::move(e)};
}

Resolved resolve(const ExperimentConfig& cfg) {
    Resolved r;
    double horizon = 1.0;
    std::size_t steps = 64;
    Estimator estimator = Estimator::grouped;
    if (!cfg.preset.empty()) {
        const Preset& p = find_preset(cfg.preset);
        r.coeffs = p.coeffs;
        r.x0 = p.x0;
        horizon = p.horizon;
        steps = p.n_steps;
        r.m_outer = p.m_outer;
        r.k_inner = p.k_inner;
        estimator = p.estimator;
        r.oracle = p.oracle_y0;
        r.lq = p.lq;
        r.has_control = p.has_control;
    }
    for (const auto& [slot, text] : cfg.coefficients) {
        if (slot == "xi") {
            r.coeffs.xi = parse_xi_setting(text);
        } else if (slot == "x0") {
            r.x0 = std::stod(text);
        } else {
            Expr e = parse_expr(text);
            if (slot == "theta_f") r.coeffs.theta_f = std::move(e);
            else if (slot == "theta_g") r.coeffs.theta_g = std::move(e);
            else if (slot == "l") r.coeffs.l = std::move(e);
            else if (slot == "h") r.coeffs.h = std::move(e);
            else if (slot == "b") r.coeffs.b = std::move(e);
            else if (slot == "sigma") r.coeffs.sigma = std::move(e);
        }
        // Edited coefficients invalidate a preset's closed form.
        r.oracle.reset();
        r.lq.reset();
    }
    if (!cfg.coefficients.empty()) {
        const auto mask = r.coeffs.theta_f.var_mask() | r.coeffs.l.var_mask();
        r.has_control = (mask & (var_bit(Var::v) | var_bit(Var::vp))) != 0;
    }
    if (cfg.horizon > 0.0) horizon = cfg.horizon;
    if (cfg.n_steps > 0) steps = cfg.n_steps;
    if (cfg.m_outer > 0) r.m_outer = cfg.m_outer;
    if (cfg.k_inner > 0) r.k_inner = cfg.k_inner;
    r.solver = cfg.solver;
    if (!cfg.estimator_set) r.solver.estimator = estimator;
    r.grid = TimeGrid(0.0, horizon, steps);
    return r;
}

std::string format_scalar(double x) {
    std::ostringstream s;
    s.precision(17);
    s << x;
    return s.str();
}

void echo_config(ResultRecord& rec, const ExperimentConfig& cfg, const Resolved& r) {
    rec.command = cfg.command;
    rec.preset = cfg.preset;
    rec.seed = cfg.seed;
    rec.config_echo["experiment.command"] = cfg.command;
    rec.config_echo["experiment.preset"] = cfg.preset;
    rec.config_echo["experiment.seed"] = std::to_string(cfg.seed);
    rec.config_echo["grid.horizon"] = format_scalar(r.grid.t_end);
    rec.config_echo["grid.steps"] = std::to_string(r.grid.n_steps);
    rec.config_echo["particles.m"] = std::to_string(r.m_outer);
    rec.config_echo["particles.k"] = std::to_string(r.k_inner);
    rec.config_echo["tolerances.picard"] = format_scalar(cfg.picard_tol);
    rec.config_echo["tolerances.mp"] = format_scalar(cfg.mp_tol);
    rec.config_echo["tolerances.max_iter"] = std::to_string(cfg.max_iter);
    rec.config_echo["solver.estimator"] =
        r.solver.estimator == Estimator::pooled ? "pooled" : "grouped";
    rec.config_echo["solver.basis_degree"] = std::to_string(r.solver.basis_degree);
    rec.config_echo["solver.ridge"] = format_scalar(r.solver.ridge);
    for (const auto& [slot, text] : cfg.coefficients)
        rec.config_echo["coefficients." + slot] = text;
}

/// Mean and standard error of one bundle column; groups are the independent
/// units when several backward drivers are present.
void column_stats(const std::vector<double>& col, const ScenarioEnsemble& ens,
                  double& mean, double& se) {
    mean = pairwise_mean(col);
    const std::size_t m = ens.m_outer;
    std::vector<double> units;
    if (m >= 2) {
        units.resize(m);
        std::vector<double> group(ens.k_inner);
        for (std::size_t g = 0; g < m; ++g) {
            for (std::size_t j = 0; j < ens.k_inner; ++j) group[j] = col[g * ens.k_inner + j];
            units[g] = pairwise_mean(group);
        }
    } else {
        units = col;
    }
    if (units.size() < 2) {
        se = 0.0;
        return;
    }
    std::vector<double> dev(units.size());
    for (std::size_t i = 0; i < units.size(); ++i) {
        const double d = units[i] - mean;
        dev[i] = d * d;
    }
    const double n = static_cast<double>(units.size());
    se = std::sqrt(pairwise_sum(dev) / (n - 1.0) / n);
}

std::vector<double> bundle_column(const PathBundle& b, std::size_t node, bool z) {
    std::vector<double> col(b.n_particles);
    for (std::size_t j = 0; j < b.n_particles; ++j)
        col[j] = z ? b.z(j, node) : b.y(j, node);
    return col;
}

void record_bundle(ResultRecord& rec, const PathBundle& bundle,
                   const ScenarioEnsemble& ens, const PicardTrace& trace,
                   const std::optional<double>& oracle) {
    const std::size_t nodes = bundle.n_nodes();
    double y0_mean = 0.0, y0_se = 0.0;
    column_stats(bundle_column(bundle, 0, false), ens, y0_mean, y0_se);
    rec.scalars["y0_mean"] = y0_mean;
    rec.scalars["y0_se"] = y0_se;
    rec.scalars["z0_mean"] = pairwise_mean(bundle_column(bundle, 0, true));
    rec.scalars["picard_iterations"] = static_cast<double>(trace.iterations);
    rec.scalars["picard_final_distance"] =
        trace.distances.empty() ? 0.0 : trace.distances.back();
    if (oracle) {
        rec.scalars["oracle_y0"] = *oracle;
        rec.scalars["abs_error"] = std::abs(y0_mean - *oracle);
        if (*oracle != 0.0)
            rec.scalars["rel_error"] = std::abs(y0_mean - *oracle) / std::abs(*oracle);
    }

    std::vector<double> times(nodes), y_mean(nodes), y_var(nodes);
    std::vector<double> dev(bundle.n_particles);
    for (std::size_t i = 0; i < nodes; ++i) {
        times[i] = bundle.grid.t(i);
        const auto col = bundle_column(bundle, i, false);
        y_mean[i] = pairwise_mean(col);
        for (std::size_t j = 0; j < col.size(); ++j) {
            const double d = col[j] - y_mean[i];
            dev[j] = d * d;
        }
        y_var[i] = col.size() < 2
                       ? 0.0
                       : pairwise_sum(dev) / static_cast<double>(col.size() - 1);
    }
    rec.series.emplace_back("t", std::move(times));
    rec.series.emplace_back("y_mean", std::move(y_mean));
    rec.series.emplace_back("y_var", std::move(y_var));
    rec.series.emplace_back("picard_distances", trace.distances);
}

void run_solve(const ExperimentConfig& cfg, const Resolved& r, ResultRecord& rec) {
    auto ens = sample_ensemble(r.grid, r.m_outer, r.k_inner, cfg.seed);
    auto sol = solve_mf_bdsde(r.coeffs, ens, r.solver, cfg.picard_tol, cfg.max_iter);
    record_bundle(rec, sol.bundle, ens, sol.trace, r.oracle);
}

void run_forward(const ExperimentConfig& cfg, const Resolved& r, ResultRecord& rec) {
    auto ens = sample_ensemble(r.grid, r.m_outer, r.k_inner, cfg.seed);
    auto base = build_base(r.coeffs, r.x0, ens, r.solver, cfg.picard_tol, cfg.max_iter);
    record_bundle(rec, base.yz, base.ens, base.yz_trace, r.oracle);

    const std::size_t nodes = r.grid.n_steps + 1;
    const std::size_t N = base.ens.n_particles();
    std::vector<double> col(N), x_mean(nodes);
    for (std::size_t i = 0; i < nodes; ++i) {
        for (std::size_t j = 0; j < N; ++j) col[j] = base.X[j * nodes + i];
        x_mean[i] = pairwise_mean(col);
    }
    double xt_mean = 0.0, xt_se = 0.0;
    for (std::size_t j = 0; j < N; ++j) col[j] = base.X[j * nodes + (nodes - 1)];
    column_stats(col, base.ens, xt_mean, xt_se);
    rec.scalars["x_terminal_mean"] = xt_mean;
    rec.scalars["x_terminal_se"] = xt_se;
    rec.scalars["forward_iterations"] = static_cast<double>(base.x_trace.iterations);
    rec.series.emplace_back("x_mean", std::move(x_mean));
    rec.series.emplace_back("forward_distances", base.x_trace.distances);
}

void run_spde_eval(const ExperimentConfig& cfg, const Resolved& r, ResultRecord& rec) {
    auto ens = sample_ensemble(r.grid, r.m_outer, r.k_inner, cfg.seed);
    auto base = build_base(r.coeffs, r.x0, ens, r.solver, cfg.picard_tol, cfg.max_iter);
    auto sample = evaluate_u(cfg.query_t, cfg.query_x, base, r.coeffs, r.solver);
    rec.scalars["u_mean"] = sample.mean;
    rec.scalars["u_se"] = sample.std_err;
    rec.scalars["query_t"] = sample.t;
    rec.scalars["query_x"] = sample.x;
    rec.series.emplace_back("u_values", sample.values);
}

void run_control_check(const ExperimentConfig& cfg, const Resolved& r, ResultRecord& rec) {
    if (!r.has_control)
        throw InvalidArgumentError("control-check needs a preset with a control slot");
    ControlProblem prob;
    prob.coeffs = r.coeffs;
    auto ens = sample_ensemble(r.grid, r.m_outer, r.k_inner, cfg.seed);
    const std::size_t N = ens.n_particles();
    const std::size_t nodes = r.grid.n_steps + 1;
    auto uhat = ControlPath::constant(0.0, N, nodes);
    auto dir = ControlPath::constant(1.0, N, nodes);

    const std::vector<double> eps_list = {0.2, 0.1, 0.05, 0.025};
    auto gateaux = gateaux_check(prob, uhat, dir, eps_list, ens, r.solver, cfg.picard_tol,
                                 cfg.max_iter);
    rec.scalars["gateaux_slope"] = gateaux.slope;
    double max_resid = 0.0;
    for (double v : gateaux.resid_sq) max_resid = std::max(max_resid, v);
    rec.scalars["gateaux_max_resid_sq"] = max_resid;
    rec.series.emplace_back("eps", eps_list);
    rec.series.emplace_back("diff_sq", gateaux.diff_sq);
    rec.series.emplace_back("resid_sq", gateaux.resid_sq);

    auto state = solve_state(prob, uhat, ens, r.solver, cfg.picard_tol, cfg.max_iter);
    rec.scalars["cost_at_uhat"] = cost(prob, uhat, state);
    auto var = solve_variational(prob, uhat, state, dir, ens, r.solver);
    auto adj = solve_adjoint(prob, uhat, state, ens, r.solver, cfg.picard_tol, cfg.max_iter);
    auto duality = duality_check(prob, uhat, state, dir, var, adj, ens);
    rec.scalars["duality_direct"] = duality.direct;
    rec.scalars["duality_integral"] = duality.integral;
    rec.scalars["duality_se"] = duality.std_err;
    rec.scalars["duality_gap"] = std::abs(duality.direct - duality.integral);

    const std::vector<double> vgrid = {-1.0, 1.0};
    auto mp = mp_residual(prob, uhat, adj, state, vgrid, cfg.mp_tol);
    rec.scalars["mp_global_min"] = mp.global_min;
    rec.scalars["mp_violation_fraction"] = mp.violation_fraction;
}

void run_lq(const ExperimentConfig& cfg, const Resolved& r, ResultRecord& rec) {
    if (!r.lq) throw InvalidArgumentError("the lq command needs an lq preset");
    auto ens = sample_ensemble(r.grid, r.m_outer, r.k_inner, cfg.seed);
    auto sol = lq_solve(*r.lq, ens, r.solver, cfg.picard_tol, cfg.max_iter);
    auto verify = lq_verify(sol, *r.lq, ens, cfg.n_perturb, cfg.eps,
                            rng::derive_seed(cfg.seed, 0x6c71u));

    const std::size_t nodes = r.grid.n_steps + 1;
    const std::size_t N = ens.n_particles();
    std::vector<double> col(N), uhat_nodes(nodes);
    for (std::size_t i = 0; i < nodes; ++i) {
        for (std::size_t j = 0; j < N; ++j) col[j] = sol.uhat.at(j, i);
        uhat_nodes[i] = pairwise_mean(col);
    }
    // Time average over step left endpoints, matching the cost discretization.
    std::vector<double> left(uhat_nodes.begin(), uhat_nodes.end() - 1);
    rec.scalars["uhat_mean"] = pairwise_mean(left);
    double y0_mean = 0.0, y0_se = 0.0;
    column_stats(bundle_column(sol.state, 0, false), ens, y0_mean, y0_se);
    rec.scalars["y0_mean"] = y0_mean;
    rec.scalars["y0_se"] = y0_se;
    rec.scalars["cost"] = sol.cost_at_opt;
    rec.scalars["residual"] = sol.fixed_point_residual;
    rec.scalars["outer_iterations"] = static_cast<double>(sol.iterations);
    rec.scalars["min_delta"] = verify.min_delta;
    rec.scalars["mp_global_min"] = verify.mp.global_min;
    rec.scalars["mp_violation_fraction"] = verify.mp.violation_fraction;
    if (r.oracle) {
        rec.scalars["oracle_y0"] = *r.oracle;
        rec.scalars["rel_error"] =
            std::abs(y0_mean - *r.oracle) / std::max(1e-300, std::abs(*r.oracle));
    }
    rec.series.emplace_back("uhat_nodes", std::move(uhat_nodes));
    rec.series.emplace_back("deltas", verify.deltas);
}

double fit_loglog_slope(const std::vector<double>& x, const std::vector<double>& y) {
    std::vector<double> lx, ly;
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (x[i] > 0.0 && y[i] > 0.0) {
            lx.push_back(std::log(x[i]));
            ly.push_back(std::log(y[i]));
        }
    }
    if (lx.size() < 2) return 0.0;
    const double n = static_cast<double>(lx.size());
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (std::size_t i = 0; i < lx.size(); ++i) {
        sx += lx[i];
        sy += ly[i];
        sxx += lx[i] * lx[i];
        sxy += lx[i] * ly[i];
    }
    const double den = n * sxx - sx * sx;
    return den == 0.0 ? 0.0 : (n * sxy - sx * sy) / den;
}

void run_study(const ExperimentConfig& cfg, const Resolved& r, ResultRecord& rec) {
    std::vector<double> errors;
    if (cfg.axis == "epsilon") {
        if (!r.has_control)
            throw InvalidArgumentError(
                "an epsilon study needs a preset with a control slot");
        ControlProblem prob;
        prob.coeffs = r.coeffs;
        auto ens = sample_ensemble(r.grid, r.m_outer, r.k_inner, cfg.seed);
        const std::size_t nodes = r.grid.n_steps + 1;
        auto uhat = ControlPath::constant(0.0, ens.n_particles(), nodes);
        auto dir = ControlPath::constant(1.0, ens.n_particles(), nodes);
        auto gateaux = gateaux_check(prob, uhat, dir, cfg.axis_values, ens, r.solver,
                                     cfg.picard_tol, cfg.max_iter);
        errors = gateaux.diff_sq;
        rec.scalars["slope"] = fit_loglog_slope(cfg.axis_values, errors);
    } else {
        if (!r.oracle)
            throw InvalidArgumentError(
                "a convergence study needs a preset with a closed form");
        for (double v : cfg.axis_values) {
            ExperimentConfig sub = cfg;
            sub.command = "solve";
            sub.out_path.clear();
            if (cfg.axis == "steps") {
                sub.n_steps = static_cast<std::size_t>(v);
            } else {
                const std::size_t m = r.m_outer;
                sub.k_inner = std::max<std::size_t>(
                    1, static_cast<std::size_t>(std::llround(v / static_cast<double>(m))));
            }
            Resolved rr = resolve(sub);
            ResultRecord inner;
            run_solve(sub, rr, inner);
            errors.push_back(inner.scalars.at("abs_error"));
        }
        rec.scalars["slope"] = fit_loglog_slope(cfg.axis_values, errors);
    }
    rec.series.emplace_back("axis", cfg.axis_values);
    rec.series.emplace_back("error", std::move(errors));
    rec.config_echo["study.axis"] = cfg.axis;
}

}  // namespace

ResultRecord run(const ExperimentConfig& cfg) {
    validate_config(cfg);
    if (cfg.threads > 0) set_thread_count(cfg.threads);

    const auto start = std::chrono::steady_clock::now();
    Resolved r = resolve(cfg);
    ResultRecord rec;
    echo_config(rec, cfg, r);

    if (cfg.command == "solve") {
        run_solve(cfg, r, rec);
    } else if (cfg.command == "forward") {
        run_forward(cfg, r, rec);
    } else if (cfg.command == "spde-eval") {
        run_spde_eval(cfg, r, rec);
    } else if (cfg.command == "control-check") {
        run_control_check(cfg, r, rec);
    } else if (cfg.command == "lq") {
        run_lq(cfg, r, rec);
    } else {
        run_study(cfg, r, rec);
    }

    rec.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (!cfg.out_path.empty()) write_result_file(rec, cfg.out_path, cfg.out_format);
    return rec;
}

}  // namespace mfbdsde
