#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <vector>

#include "mfbdsde/mf_solver.hpp"

using namespace mfbdsde;

namespace {

CoefficientSet make_coeffs(const char* f_src, const char* g_src, XiMode xi, LipschitzMeta meta) {
    CoefficientSet c;
    c.theta_f = parse_expr(f_src);
    c.theta_g = parse_expr(g_src);
    c.xi = std::move(xi);
    c.lipschitz = meta;
    return c;
}

LipschitzMeta plain_meta(double l_y) {
    LipschitzMeta m;
    m.L_y = l_y;
    return m;
}

}  // namespace

TEST_CASE("kernels without primed slots settle after one effective pass") {
    TimeGrid grid(0.0, 1.0, 16);
    auto ens = sample_ensemble(grid, 2, 4, 3);
    auto sol = solve_mf_bdsde(make_coeffs("0.5*y", "0", XiConstant{1.0}, plain_meta(0.5)), ens,
                              SolverConfig{}, 1e-12, 5);
    CHECK(sol.trace.converged);
    CHECK(sol.trace.iterations == 2);
    CHECK(sol.trace.distances[1] <= 1e-12);

    // Constant targets fit exactly, so the bundle follows the one-step
    // compound-growth recursion to rounding error.
    for (std::size_t j = 0; j < ens.n_particles(); ++j)
        CHECK(std::fabs(sol.bundle.y(j, 0) - 1.6361510105666233) <= 1e-10);
}

TEST_CASE("mean reversion toward the population reproduces exponential growth") {
    TimeGrid grid(0.0, 1.0, 64);
    auto ens = sample_ensemble(grid, 8, 1024, 12);
    LipschitzMeta meta;
    meta.L_y = 0.5;
    meta.L_yp = 0.5;
    meta.L_gamma = 1.0;
    meta.alpha2 = 1.0;
    auto sol = solve_mf_bdsde(make_coeffs("0.5*y + 0.5*yp", "0", XiConstant{1.0}, meta), ens,
                              SolverConfig{}, 1e-8, 20);
    CHECK(sol.trace.converged);

    const double e = 2.718281828459045;
    for (std::size_t j = 0; j < ens.n_particles(); ++j) {
        CHECK(std::fabs(sol.bundle.y(j, 0) - e) / e <= 0.02);
        CHECK(sol.bundle.y(j, 0) == sol.bundle.y(0, 0));
    }

    // Successive distances never grow once the arbitrary starting bundle has
    // been left behind.
    for (std::size_t k = 2; k < sol.trace.distances.size(); ++k)
        CHECK(sol.trace.distances[k] <= sol.trace.distances[k - 1]);
}

TEST_CASE("mean-field solve with no primed slots matches the inner solve") {
    TimeGrid grid(0.0, 1.0, 32);
    auto ens = sample_ensemble(grid, 4, 16, 9);
    auto coeffs = make_coeffs("0.5*y", "0", XiWTerminal{}, plain_meta(0.5));
    auto sol = solve_mf_bdsde(coeffs, ens, SolverConfig{}, 1e-12, 5);
    auto direct = solve_bdsde(coeffs, ens, {}, {}, SolverConfig{});
    for (std::size_t j = 0; j < ens.n_particles(); ++j)
        for (std::size_t i = 0; i <= grid.n_steps; ++i) {
            CHECK(std::fabs(sol.bundle.y(j, i) - direct.y(j, i)) <= 1e-12);
            CHECK(std::fabs(sol.bundle.z(j, i) - direct.z(j, i)) <= 1e-12);
        }
}

TEST_CASE("contraction precheck gates the solve") {
    TimeGrid grid(0.0, 1.0, 8);
    auto ens = sample_ensemble(grid, 2, 2, 5);
    LipschitzMeta bad;
    bad.alpha1 = 0.8;
    bad.alpha2 = 1.0;
    bad.alpha3 = 0.3;
    auto coeffs = make_coeffs("0", "0", XiConstant{1.0}, bad);
    CHECK_THROWS_AS(solve_mf_bdsde(coeffs, ens, SolverConfig{}, 1e-10, 5), InvalidArgumentError);

    SolverConfig relaxed;
    relaxed.enforce_h1 = false;
    auto sol = solve_mf_bdsde(coeffs, ens, relaxed, 1e-10, 5);
    CHECK(sol.trace.converged);
}

TEST_CASE("iteration limit carries the distance trace") {
    TimeGrid grid(0.0, 1.0, 8);
    auto ens = sample_ensemble(grid, 2, 8, 6);
    LipschitzMeta meta;
    meta.L_yp = 2.0;
    meta.L_gamma = 1.0;
    meta.alpha2 = 1.0;
    auto coeffs = make_coeffs("2*yp", "0", XiConstant{1.0}, meta);
    try {
        solve_mf_bdsde(coeffs, ens, SolverConfig{}, 1e-14, 1);
        FAIL("expected an iteration-limit error");
    } catch (const IterationLimitError& e) {
        CHECK(e.distances.size() == 1);
        CHECK(e.distances[0] > 1e-14);
    }
}

TEST_CASE("forward equation with zero coefficients keeps its initial value") {
    TimeGrid grid(0.0, 1.0, 8);
    auto ens = sample_ensemble(grid, 8, 1, 7);
    auto sol = solve_forward_dsde(make_coeffs("0", "0", XiConstant{2.0}, plain_meta(0.0)), ens,
                                  SolverConfig{}, 1e-12, 5);
    for (std::size_t j = 0; j < ens.n_particles(); ++j)
        for (std::size_t i = 0; i <= grid.n_steps; ++i) {
            CHECK(sol.bundle.y(j, i) == 2.0);
            CHECK(sol.bundle.z(j, i) == 0.0);
        }
}

TEST_CASE("forward drift matches the explicit recursion pathwise") {
    TimeGrid grid(0.0, 1.0, 64);
    auto ens = sample_ensemble(grid, 256, 1, 8);
    Expr f = parse_expr("0.4*y*t");
    auto sol = solve_forward_dsde(make_coeffs("0.4*y*t", "0", XiConstant{1.0}, plain_meta(0.4)),
                                  ens, SolverConfig{}, 1e-12, 8);

    const double dt = grid.dt();
    double x = 1.0;
    for (std::size_t s = 1; s <= grid.n_steps; ++s) {
        Bindings b;
        b.set(Var::y, x);
        b.set(Var::t, grid.t(s));
        x = x + dt * f.eval(b);
        for (std::size_t j = 0; j < ens.n_particles(); ++j)
            CHECK(std::fabs(sol.bundle.y(j, s) - x) <= 1e-10);
    }

    // Autonomous growth: the path mean tracks the exponential.
    auto auto_sol = solve_forward_dsde(make_coeffs("0.4*y", "0", XiConstant{1.0}, plain_meta(0.4)),
                                       ens, SolverConfig{}, 1e-12, 8);
    const double want = std::exp(0.4);
    CHECK(std::fabs(auto_sol.bundle.y(0, grid.n_steps) - want) / want <= 0.02);
}

TEST_CASE("forward solve takes per-particle initial samples") {
    TimeGrid grid(0.0, 1.0, 4);
    auto ens = sample_ensemble(grid, 4, 1, 2);
    std::vector<double> init = {0.0, 1.5, -2.0, 7.0};
    auto coeffs = make_coeffs("0", "0", XiConstant{0.0}, plain_meta(0.0));
    auto sol = solve_forward_dsde(coeffs, ens, SolverConfig{}, 1e-12, 5, init);
    for (std::size_t j = 0; j < 4; ++j)
        for (std::size_t i = 0; i <= 4; ++i) CHECK(sol.bundle.y(j, i) == init[j]);
}

TEST_CASE("forward solve validation") {
    TimeGrid grid(0.0, 1.0, 4);
    auto multi = sample_ensemble(grid, 2, 2, 2);
    auto coeffs = make_coeffs("0", "0", XiConstant{1.0}, plain_meta(0.0));
    CHECK_THROWS_AS(solve_forward_dsde(coeffs, multi, SolverConfig{}, 1e-12, 5), ShapeError);

    auto ens = sample_ensemble(grid, 4, 1, 2);
    auto wexpr = make_coeffs("0", "0", XiWTerminal{}, plain_meta(0.0));
    CHECK_THROWS_AS(solve_forward_dsde(wexpr, ens, SolverConfig{}, 1e-12, 5),
                    InvalidArgumentError);
}
