#include "mfbdsde/bdsde.hpp"

#include <cmath>
#include <utility>

#include "mfbdsde/parallel.hpp"
#include "mfbdsde/regression.hpp"

namespace mfbdsde {

std::vector<double> terminal_condition(const XiMode& xi, const ScenarioEnsemble& ens,
                                       std::span<const double> x_terminal) {
    const std::size_t N = ens.n_particles();
    const std::size_t n = ens.grid.n_steps;
    std::vector<double> out(N, 0.0);
    if (const auto* c = std::get_if<XiConstant>(&xi)) {
        for (std::size_t j = 0; j < N; ++j) out[j] = c->value;
        return out;
    }
    if (std::holds_alternative<XiWTerminal>(xi)) {
        parallel_for(N, [&](std::size_t b, std::size_t e) {
            for (std::size_t j = b; j < e; ++j) {
                double acc = 0.0;
                for (std::size_t s = 0; s < n; ++s) acc += ens.dw(j, s);
                out[j] = acc;
            }
        });
        return out;
    }
    const auto& mode = std::get<XiExpression>(xi);
    if (x_terminal.size() != N)
        throw InvalidArgumentError(
            "terminal expression needs one simulated forward state per particle");
    check_slot(mode.expr, slot_vars::terminal, "terminal condition");
    parallel_for(N, [&](std::size_t b, std::size_t e) {
        for (std::size_t j = b; j < e; ++j) {
            Bindings bind;
            bind.set(Var::x, x_terminal[j]);
            out[j] = mode.expr.eval(bind);
        }
    });
    return out;
}

PopulationSnapshot FrozenPopulation::at(std::size_t node) const {
    if (node >= n_nodes) throw InvalidArgumentError("frozen population node out of range");
    PopulationSnapshot snap;
    const std::size_t N = n_particles;
    if (!y.empty()) snap.y = std::span<const double>(y).subspan(node * N, N);
    if (!z.empty()) snap.z = std::span<const double>(z).subspan(node * N, N);
    if (!v.empty()) snap.v = std::span<const double>(v).subspan(node * N, N);
    if (!x.empty()) snap.x = std::span<const double>(x).subspan(node * N, N);
    return snap;
}

FrozenPopulation freeze(const PathBundle& bundle, std::span<const double> controls_nodes,
                        std::span<const double> x_nodes) {
    FrozenPopulation out;
    const std::size_t N = bundle.n_particles;
    const std::size_t nodes = bundle.n_nodes();
    out.n_particles = N;
    out.n_nodes = nodes;
    out.y.resize(N * nodes);
    out.z.resize(N * nodes);
    parallel_for(N, [&](std::size_t b, std::size_t e) {
        for (std::size_t j = b; j < e; ++j) {
            for (std::size_t i = 0; i < nodes; ++i) {
                out.y[i * N + j] = bundle.y(j, i);
                out.z[i * N + j] = bundle.z(j, i);
            }
        }
    });
    if (!controls_nodes.empty()) {
        if (controls_nodes.size() != N * nodes)
            throw ShapeError("control array must cover every particle and node");
        out.v.assign(controls_nodes.begin(), controls_nodes.end());
    }
    if (!x_nodes.empty()) {
        if (x_nodes.size() != N * nodes)
            throw ShapeError("state array must cover every particle and node");
        out.x.assign(x_nodes.begin(), x_nodes.end());
    }
    return out;
}

MeanFieldDriver::MeanFieldDriver(const Expr& theta_f, const Expr& theta_g, const TimeGrid& grid,
                                 const FrozenPopulation& frozen,
                                 std::span<const double> controls_nodes, bool reversed_time,
                                 std::span<const double> own_x_nodes)
    : f_kernel_(theta_f),
      g_kernel_(theta_g),
      grid_(grid),
      frozen_(&frozen),
      controls_(controls_nodes),
      own_x_(own_x_nodes),
      reversed_(reversed_time) {
    const std::size_t stride = grid.n_steps + 1;
    if (!frozen.empty() && frozen.n_nodes != stride)
        throw ShapeError("frozen population and grid disagree on node count");
    np_ = frozen.n_particles;
    if (np_ == 0 && !controls_.empty()) np_ = controls_.size() / stride;
    if (np_ == 0 && !own_x_.empty()) np_ = own_x_.size() / stride;
    if (!controls_.empty() && controls_.size() != np_ * stride)
        throw ShapeError("control array must cover every particle and node");
    if (!own_x_.empty() && own_x_.size() != np_ * stride)
        throw ShapeError("state array must cover every particle and node");
    g_zero_ = theta_g.is_constant() && theta_g.constant_value() == 0.0;
    const unsigned fp = theta_f.var_mask() & primed_mask;
    const unsigned gp = theta_g.var_mask() & primed_mask;
    f_plain_ = fp == 0;
    g_plain_ = gp == 0;

    const unsigned primed = fp | gp;
    auto require = [&](Var pv, const std::vector<double>& col, const char* what) {
        if ((primed & var_bit(pv)) != 0 && col.empty())
            throw InvalidArgumentError("coefficient references " + std::string(var_name(pv)) +
                                       " but the frozen population has no " + what + " column");
    };
    if (primed != 0 && frozen.empty())
        throw InvalidArgumentError("primed coefficient variables need a frozen population");
    if (!frozen.empty()) {
        require(Var::yp, frozen.y, "y");
        require(Var::zp, frozen.z, "z");
        require(Var::vp, frozen.v, "v");
        require(Var::xp, frozen.x, "x");
        if (!f_plain_) {
            f_prepared_.reserve(frozen.n_nodes);
            for (std::size_t i = 0; i < frozen.n_nodes; ++i)
                f_prepared_.push_back(f_kernel_.prepare(node_time(i), frozen.at(i)));
        }
        if (!g_plain_ && !g_zero_) {
            g_prepared_.reserve(frozen.n_nodes);
            for (std::size_t i = 0; i < frozen.n_nodes; ++i)
                g_prepared_.push_back(g_kernel_.prepare(node_time(i), frozen.at(i)));
        }
    }
}

double MeanFieldDriver::node_time(std::size_t node) const {
    const double tau = grid_.t(node);
    return reversed_ ? grid_.t_start + grid_.t_end - tau : tau;
}

double MeanFieldDriver::eval(const MeanKernel& kernel,
                             const std::vector<MeanKernel::Prepared>& prepared, std::size_t node,
                             std::size_t particle, double y, double z) const {
    Bindings own;
    own.set(Var::y, y);
    own.set(Var::z, z);
    if (!controls_.empty()) own.set(Var::v, controls_[node * np_ + particle]);
    if (!own_x_.empty())
        own.set(Var::x, own_x_[node * np_ + particle]);
    else if (!frozen_->x.empty())
        own.set(Var::x, frozen_->x[node * frozen_->n_particles + particle]);
    if (!prepared.empty()) return prepared[node](own);
    own.set(Var::t, node_time(node));
    return kernel.kernel().eval(own);
}

double MeanFieldDriver::f(std::size_t node, std::size_t particle, double y, double z) const {
    return eval(f_kernel_, f_prepared_, node, particle, y, z);
}

double MeanFieldDriver::g(std::size_t node, std::size_t particle, double y, double z) const {
    return eval(g_kernel_, g_prepared_, node, particle, y, z);
}

namespace {

// One conditional-expectation fit at a node: per B-group in grouped mode,
// one joint fit with the backward tail as an extra feature in pooled mode.
void predict_step(std::span<const double> targets, std::size_t node, const ScenarioEnsemble& ens,
                  const SolverConfig& cfg, const RegressionMarkers& markers,
                  std::span<double> out) {
    const std::size_t N = ens.n_particles();
    const std::size_t stride = ens.grid.n_steps + 1;

    if (cfg.estimator == Estimator::grouped) {
        if (ens.k_inner == 1) {
            // One particle per group: the conditional expectation degenerates
            // to the sample itself.
            for (std::size_t j = 0; j < N; ++j) out[j] = targets[j];
            return;
        }
        parallel_for(ens.m_outer, [&](std::size_t gb, std::size_t ge) {
            std::vector<double> feat(ens.k_inner), tg(ens.k_inner);
            for (std::size_t g = gb; g < ge; ++g) {
                const std::size_t base = g * ens.k_inner;
                for (std::size_t r = 0; r < ens.k_inner; ++r) {
                    feat[r] = markers.forward[(base + r) * stride + node];
                    tg[r] = targets[base + r];
                }
                PolyFit fit = fit_poly(feat, tg, cfg.basis_degree, cfg.ridge);
                for (std::size_t r = 0; r < ens.k_inner; ++r) out[base + r] = fit.fitted[r];
            }
        });
        return;
    }

    std::vector<double> feat(N), tail(N);
    for (std::size_t j = 0; j < N; ++j) {
        feat[j] = markers.forward[j * stride + node];
        tail[j] = markers.backward[ens.group_of(j) * stride + node];
    }
    PolyFit fit = fit_poly(feat, tail, targets, cfg.basis_degree, cfg.ridge);
    for (std::size_t j = 0; j < N; ++j) out[j] = fit.fitted[j];
}

}  // namespace

PathBundle solve_backward(const StepDriver& driver, std::span<const double> terminal,
                          const ScenarioEnsemble& ens, const SolverConfig& cfg,
                          const RegressionMarkers& markers) {
    const std::size_t N = ens.n_particles();
    const std::size_t n = ens.grid.n_steps;
    const double dt = ens.grid.dt();
    if (terminal.size() != N) throw ShapeError("terminal array length must equal particle count");
    if (cfg.basis_degree < 0 || cfg.basis_degree > 6)
        throw InvalidArgumentError("basis degree must lie in [0, 6]");
    if (cfg.ridge < 0.0) throw InvalidArgumentError("ridge must be nonnegative");
    if (markers.forward.size() != N * (n + 1))
        throw ShapeError("forward marker array must cover every particle and node");
    if (cfg.estimator == Estimator::pooled && markers.backward.size() != ens.m_outer * (n + 1))
        throw ShapeError("pooled estimator needs one backward tail column per group");

    PathBundle out(ens.grid, N);
    for (std::size_t j = 0; j < N; ++j) {
        if (!std::isfinite(terminal[j]))
            throw DivergenceError("terminal condition is not finite", n);
        out.y(j, n) = terminal[j];
    }

    const bool has_g = !driver.g_is_zero();
    std::vector<double> ghat(N, 0.0);
    if (has_g) {
        parallel_for(N, [&](std::size_t b, std::size_t e) {
            // The terminal node carries no Z value; the backward-integrand z
            // slot binds zero there by convention.
            for (std::size_t j = b; j < e; ++j) ghat[j] = driver.g(n, j, out.y(j, n), 0.0);
        });
    }

    std::vector<double> target(N), ytilde(N), ztarget(N), zfit(N);
    for (std::size_t i = n; i-- > 0;) {
        parallel_for(N, [&](std::size_t b, std::size_t e) {
            for (std::size_t j = b; j < e; ++j) {
                double v = out.y(j, i + 1);
                if (has_g) v += ghat[j] * ens.db(ens.group_of(j), i);
                target[j] = v;
            }
        });
        predict_step(target, i, ens, cfg, markers, ytilde);

        parallel_for(N, [&](std::size_t b, std::size_t e) {
            for (std::size_t j = b; j < e; ++j) {
                const double centered = cfg.center_z ? target[j] - ytilde[j] : target[j];
                ztarget[j] = centered * ens.dw(j, i) / dt;
            }
        });
        predict_step(ztarget, i, ens, cfg, markers, zfit);

        parallel_for(N, [&](std::size_t b, std::size_t e) {
            for (std::size_t j = b; j < e; ++j) {
                out.z(j, i) = zfit[j];
                out.y(j, i) = ytilde[j] + dt * driver.f(i, j, ytilde[j], zfit[j]);
            }
        });
        if (has_g) {
            parallel_for(N, [&](std::size_t b, std::size_t e) {
                for (std::size_t j = b; j < e; ++j)
                    ghat[j] = driver.g(i, j, out.y(j, i), out.z(j, i));
            });
        }
        for (std::size_t j = 0; j < N; ++j) {
            if (!std::isfinite(out.y(j, i)) || !std::isfinite(out.z(j, i)))
                throw DivergenceError("backward sweep produced a non-finite value", i);
        }
    }

    for (std::size_t j = 0; j < N; ++j) out.z(j, n) = out.z(j, n - 1);
    return out;
}

PathBundle solve_bdsde(const CoefficientSet& coeffs, const ScenarioEnsemble& ens,
                       const FrozenPopulation& frozen, std::span<const double> controls_nodes,
                       const SolverConfig& cfg, const RegressionMarkers& markers) {
    check_slot(coeffs.theta_f, slot_vars::theta, "forward driver");
    check_slot(coeffs.theta_g, slot_vars::theta, "backward driver");
    if (!controls_nodes.empty() && controls_nodes.size() != ens.n_particles() * (ens.grid.n_steps + 1))
        throw ShapeError("control array must cover every particle and node");

    std::span<const double> x_term{};
    if (std::holds_alternative<XiExpression>(coeffs.xi)) {
        if (frozen.x.empty())
            throw InvalidArgumentError(
                "terminal expression needs one simulated forward state per particle");
        x_term = std::span<const double>(frozen.x).subspan(ens.grid.n_steps * ens.n_particles(),
                                                          ens.n_particles());
    }
    std::vector<double> term = terminal_condition(coeffs.xi, ens, x_term);

    MeanFieldDriver driver(coeffs.theta_f, coeffs.theta_g, ens.grid, frozen, controls_nodes,
                           false);

    RegressionMarkers mk = markers;
    std::vector<double> fwd, bwd;
    if (mk.forward.empty()) {
        if (!frozen.x.empty()) {
            // Forward-state problems regress on the simulated state paths,
            // transposed back to particle-major order.
            const std::size_t N = ens.n_particles();
            const std::size_t nodes = ens.grid.n_steps + 1;
            fwd.resize(N * nodes);
            for (std::size_t j = 0; j < N; ++j)
                for (std::size_t s = 0; s < nodes; ++s) fwd[j * nodes + s] = frozen.x[s * N + j];
        } else {
            fwd = forward_levels(ens);
        }
        mk.forward = fwd;
    }
    if (cfg.estimator == Estimator::pooled && mk.backward.empty()) {
        bwd = backward_tail_levels(ens);
        mk.backward = bwd;
    }
    return solve_backward(driver, term, ens, cfg, mk);
}

}  // namespace mfbdsde
