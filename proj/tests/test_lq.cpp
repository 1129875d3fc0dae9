#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstdlib>
#include <vector>

#include "mfbdsde/lq.hpp"
#include "mfbdsde/meanfield.hpp"
#include "mfbdsde/parallel.hpp"

using namespace mfbdsde;

namespace {

LQCoefficients closed_form_weights() {
    LQCoefficients c;
    c.C1 = 1.0;
    c.R1 = 1.0;
    c.Q1_0 = 1.0;
    c.xi = 1.0;
    return c;
}

double eval1(const Expr& e, Var var, double value) {
    Bindings b;
    b.set(var, value);
    return e.eval(b);
}

double initial_mean(const PathBundle& state) {
    std::vector<double> col(state.n_particles);
    for (std::size_t j = 0; j < col.size(); ++j) col[j] = state.y(j, 0);
    return pairwise_mean(col);
}

}  // namespace

TEST_CASE("time coefficients accept constants and t-expressions only") {
    TimeCoefficient a(0.5);
    CHECK(a.at(3.0) == 0.5);
    TimeCoefficient b("0.5 + 0.1*t");
    CHECK(b.at(0.5) == doctest::Approx(0.55).epsilon(1e-14));
    CHECK_THROWS_AS(TimeCoefficient("x"), InvalidArgumentError);
    CHECK_THROWS_AS(TimeCoefficient("y + t"), InvalidArgumentError);
}

TEST_CASE("assembling zero weights yields zero expressions") {
    LQCoefficients c;
    c.R1 = 1.0;  // keeps the positivity invariant
    auto prob = lq_assemble(c);
    CHECK(prob.coeffs.theta_f.is_constant());
    CHECK(prob.coeffs.theta_f.constant_value() == 0.0);
    CHECK(prob.coeffs.theta_g.is_constant());
    CHECK(prob.coeffs.h.is_constant());
    CHECK(eval1(prob.coeffs.l, Var::v, 2.0) == 2.0);  // only R1 v^2/2 survives
}

TEST_CASE("unit weights assemble the expected expressions") {
    auto prob = lq_assemble(closed_form_weights());
    CHECK(prob.coeffs.theta_f.var_mask() == var_bit(Var::v));
    CHECK(eval1(prob.coeffs.theta_f, Var::v, 2.0) == 2.0);
    CHECK(eval1(prob.coeffs.l, Var::v, 2.0) == 2.0);
    CHECK(eval1(prob.coeffs.h, Var::y, 3.0) == 4.5);
    CHECK(std::get<XiConstant>(prob.coeffs.xi).value == 1.0);
    CHECK(prob.coeffs.lipschitz.L_v == 1.0);
    CHECK(prob.coeffs.lipschitz.L_y == 0.0);
}

TEST_CASE("backward-driver weights feed the contraction metadata") {
    LQCoefficients c;
    c.R1 = 1.0;
    c.E1 = 0.3;
    auto prob = lq_assemble(c);
    CHECK(prob.coeffs.lipschitz.alpha2 == 1.0);
    CHECK(prob.coeffs.lipschitz.alpha3 == doctest::Approx(0.09).epsilon(1e-14));
    CHECK(prob.coeffs.lipschitz.alpha4 == 0.0);
    auto rep = check_h1(prob.coeffs.lipschitz);
    CHECK(rep.h1_ok);
    CHECK(rep.margin == doctest::Approx(0.91).epsilon(1e-12));
}

TEST_CASE("sign constraints are enforced") {
    LQCoefficients bad;
    bad.R1 = 1.0;
    bad.M1 = -1.0;
    CHECK_THROWS_AS((void)lq_assemble(bad), InvalidArgumentError);

    LQCoefficients flat;  // R1 + R2 == 0
    CHECK_THROWS_AS((void)lq_assemble(flat), InvalidArgumentError);

    LQCoefficients touching;
    touching.R1 = TimeCoefficient("t");  // vanishes at t = 0
    CHECK_THROWS_AS((void)lq_assemble(touching), InvalidArgumentError);
}

TEST_CASE("unit-weight problem recovers the closed-form optimum") {
    auto c = closed_form_weights();
    auto ens = sample_ensemble(TimeGrid(0.0, 1.0, 64), 256, 1, 51);
    auto sol = lq_solve(c, ens, SolverConfig{}, 1e-10, 50);
    for (double u : sol.uhat.v) CHECK(std::abs(u + 0.5) < 1e-10);
    CHECK(std::abs(initial_mean(sol.state) - 0.5) < 1e-10);
    CHECK(std::abs(sol.cost_at_opt - 0.25) < 1e-10);
    CHECK(sol.fixed_point_residual < 1e-10);
    CHECK(sol.iterations >= 2);
    for (std::size_t j = 0; j < ens.n_particles(); ++j)
        CHECK(std::abs(sol.adjoint.p(j, 32) - 0.5) < 1e-10);
}

TEST_CASE("without cost slopes the optimal control is zero") {
    LQCoefficients c;
    c.C1 = 1.0;
    c.A1 = 0.3;
    c.R1 = 1.0;
    c.xi = 2.0;
    auto ens = sample_ensemble(TimeGrid(0.0, 1.0, 16), 32, 1, 52);
    auto sol = lq_solve(c, ens, SolverConfig{}, 1e-12, 20);
    for (double u : sol.uhat.v) CHECK(u == 0.0);
    CHECK(sol.cost_at_opt == 0.0);
    CHECK(sol.iterations == 1);
}

TEST_CASE("the optimality system is homogeneous in the terminal value") {
    LQCoefficients c;
    c.A1 = 0.2;
    c.C1 = 1.0;
    c.R1 = 1.0;
    c.M1 = 0.5;
    c.Q1_0 = 1.0;
    c.xi = 0.7;
    auto ens = sample_ensemble(TimeGrid(0.0, 1.0, 32), 64, 1, 53);
    auto sol1 = lq_solve(c, ens, SolverConfig{}, 1e-13, 80);
    c.xi = 1.4;
    auto sol2 = lq_solve(c, ens, SolverConfig{}, 1e-13, 80);
    for (std::size_t s = 0; s < sol1.uhat.v.size(); ++s) {
        CHECK(std::abs(2.0 * sol1.uhat.v[s] - sol2.uhat.v[s]) < 1e-8);
        CHECK(std::abs(2.0 * sol1.state.Y[s] - sol2.state.Y[s]) < 1e-8);
        CHECK(std::abs(2.0 * sol1.adjoint.P[s] - sol2.adjoint.P[s]) < 1e-8);
    }
    CHECK(std::abs(4.0 * sol1.cost_at_opt - sol2.cost_at_opt) < 1e-8);
}

TEST_CASE("time-dependent control weight bends the optimal control") {
    LQCoefficients c;
    c.C1 = 1.0;
    c.R1 = TimeCoefficient("1 + t");
    c.Q1_0 = 1.0;
    c.xi = 1.0;
    const std::size_t n = 16;
    auto ens = sample_ensemble(TimeGrid(0.0, 1.0, n), 32, 1, 54);
    auto sol = lq_solve(c, ens, SolverConfig{}, 1e-12, 60);
    CHECK(sol.fixed_point_residual < 1e-8);
    const double dt = ens.grid.dt();
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += dt / (1.0 + ens.grid.t(i));
    const double y0 = 1.0 / (1.0 + s);
    CHECK(std::abs(initial_mean(sol.state) - y0) < 1e-8);
    const double ratio = sol.uhat.at(0, 0) / sol.uhat.at(0, n);
    CHECK(std::abs(ratio - 2.0) < 1e-6);
}

TEST_CASE("iteration budget violations carry the update history") {
    auto c = closed_form_weights();
    auto ens = sample_ensemble(TimeGrid(0.0, 1.0, 8), 8, 1, 55);
    CHECK_THROWS_AS((void)lq_solve(c, ens, SolverConfig{}, 1e-10, 1), IterationLimitError);
}

TEST_CASE("cost dominance holds at the optimum and fails off it") {
    auto c = closed_form_weights();
    auto ens = sample_ensemble(TimeGrid(0.0, 1.0, 64), 256, 1, 51);
    auto sol = lq_solve(c, ens, SolverConfig{}, 1e-10, 50);

    auto rep = lq_verify(sol, c, ens, 20, 0.1, 7);
    CHECK(rep.deltas.size() == 20);
    CHECK(rep.min_delta >= -1e-3);
    CHECK(rep.mp.global_min >= -1e-3);
    CHECK(rep.mp.violation_fraction == 0.0);

    auto zero = lq_verify(sol, c, ens, 5, 0.0, 7);
    for (double d : zero.deltas) CHECK(d == 0.0);

    LQSolution shifted = sol;
    for (double& u : shifted.uhat.v) u += 0.2;
    auto bad = lq_verify(shifted, c, ens, 30, 0.1, 7);
    CHECK(bad.min_delta < -0.005);
}

TEST_CASE("raw-weight adjoint sources change the answer when costs bind") {
    LQCoefficients c = closed_form_weights();
    c.M1 = 1.0;
    auto ens = sample_ensemble(TimeGrid(0.0, 1.0, 32), 64, 1, 56);
    auto std_sol = lq_solve(c, ens, SolverConfig{}, 1e-10, 60);
    LQOptions bare;
    bare.bare_cost_partials = true;
    auto bare_sol = lq_solve(c, ens, SolverConfig{}, 1e-10, 60, bare);
    double gap = 0.0;
    for (std::size_t s = 0; s < std_sol.uhat.v.size(); ++s)
        gap = std::max(gap, std::abs(std_sol.uhat.v[s] - bare_sol.uhat.v[s]));
    CHECK(gap > 1e-3);
}

TEST_CASE("box options clip the control updates") {
    auto c = closed_form_weights();
    auto ens = sample_ensemble(TimeGrid(0.0, 1.0, 16), 32, 1, 57);
    LQOptions opts;
    opts.u_lo = -0.25;
    opts.u_hi = 0.25;
    auto sol = lq_solve(c, ens, SolverConfig{}, 1e-10, 50, opts);
    for (double u : sol.uhat.v) {
        CHECK(u >= -0.25);
        CHECK(u <= 0.25);
    }
    // Interior stationarity is impossible at the clipped value.
    CHECK(std::abs(sol.uhat.v[0] + 0.25) < 1e-10);
    CHECK(sol.fixed_point_residual > 1e-3);
}
