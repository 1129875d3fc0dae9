#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <limits>
#include <vector>

#include "mfbdsde/bdsde.hpp"

using namespace mfbdsde;

namespace {

CoefficientSet plain(const char* f_src, const char* g_src, XiMode xi) {
    CoefficientSet c;
    c.theta_f = parse_expr(f_src);
    c.theta_g = parse_expr(g_src);
    c.xi = std::move(xi);
    return c;
}

}  // namespace

TEST_CASE("terminal samples per mode") {
    TimeGrid grid(0.0, 1.0, 2);
    auto ens = sample_ensemble(grid, 3, 1, 1);

    auto c = terminal_condition(XiConstant{1.0}, ens);
    CHECK(c == std::vector<double>{1.0, 1.0, 1.0});

    ScenarioEnsemble tiny;
    tiny.grid = grid;
    tiny.m_outer = 1;
    tiny.k_inner = 1;
    tiny.dW = {0.1, -0.2};
    tiny.dB = {0.0, 0.0};
    auto w = terminal_condition(XiWTerminal{}, tiny);
    CHECK(w.size() == 1);
    CHECK(w[0] == doctest::Approx(-0.1).epsilon(1e-15));

    std::vector<double> x_term = {2.0, -1.0, 0.0};
    auto e = terminal_condition(XiExpression{parse_expr("x^2")}, ens, x_term);
    CHECK(e == std::vector<double>{4.0, 1.0, 0.0});

    CHECK_THROWS_AS(terminal_condition(XiExpression{parse_expr("x")}, ens),
                    InvalidArgumentError);
}

TEST_CASE("zero drivers with constant terminal stay constant") {
    TimeGrid grid(0.0, 1.0, 16);
    auto ens = sample_ensemble(grid, 4, 8, 21);
    SolverConfig cfg;
    auto bundle = solve_bdsde(plain("0", "0", XiConstant{2.5}), ens, {}, {}, cfg);
    for (std::size_t j = 0; j < ens.n_particles(); ++j) {
        CHECK(bundle.y(j, grid.n_steps) == 2.5);
        for (std::size_t i = 0; i <= grid.n_steps; ++i) {
            CHECK(std::fabs(bundle.y(j, i) - 2.5) <= 1e-10);
            CHECK(std::fabs(bundle.z(j, i)) <= 1e-12);
        }
    }
}

TEST_CASE("martingale terminal recovers the driver path and unit Z") {
    TimeGrid grid(0.0, 1.0, 64);
    auto ens = sample_ensemble(grid, 1, 8192, 31);
    SolverConfig cfg;
    auto bundle = solve_bdsde(plain("0", "0", XiWTerminal{}), ens, {}, {}, cfg);

    auto levels = forward_levels(ens);
    const std::size_t n = grid.n_steps;
    const std::size_t N = ens.n_particles();

    double zerr = 0.0;
    for (std::size_t i = 1; i < n; ++i) {
        double step_err = 0.0;
        for (std::size_t j = 0; j < N; ++j) step_err += std::fabs(bundle.z(j, i) - 1.0);
        zerr += step_err / static_cast<double>(N);
    }
    zerr /= static_cast<double>(n - 1);
    CHECK(zerr <= 0.05);

    double sq = 0.0;
    for (std::size_t j = 0; j < N; ++j) {
        for (std::size_t i = 0; i <= n; ++i) {
            const double d = bundle.y(j, i) - levels[j * (n + 1) + i];
            sq += d * d;
        }
    }
    const double rmse = std::sqrt(sq / static_cast<double>(N * (n + 1)));
    CHECK(rmse <= 0.05);
}

TEST_CASE("constant backward driver reproduces the tail integral") {
    TimeGrid grid(0.0, 1.0, 64);
    auto ens = sample_ensemble(grid, 4096, 1, 47);
    SolverConfig cfg;
    auto bundle = solve_bdsde(plain("0", "1", XiConstant{0.0}), ens, {}, {}, cfg);

    auto tails = backward_tail_levels(ens);
    const std::size_t n = grid.n_steps;
    const std::size_t N = ens.n_particles();

    // One particle per group turns the conditional expectation into the
    // identity, so the bundle accumulates the tail sums bitwise.
    for (std::size_t j = 0; j < N; ++j)
        for (std::size_t i = 0; i <= n; ++i) CHECK(bundle.y(j, i) == tails[j * (n + 1) + i]);

    for (std::size_t i : {std::size_t{8}, std::size_t{16}, std::size_t{32}, std::size_t{48}}) {
        double mean = 0.0;
        for (std::size_t j = 0; j < N; ++j) mean += bundle.y(j, i);
        mean /= static_cast<double>(N);
        double var = 0.0;
        for (std::size_t j = 0; j < N; ++j) {
            const double d = bundle.y(j, i) - mean;
            var += d * d;
        }
        var /= static_cast<double>(N - 1);
        const double want = grid.t_end - grid.t(i);
        CHECK(std::fabs(var - want) / want <= 0.05);
    }

    for (std::size_t j = 0; j < N; ++j) {
        CHECK(bundle.z(j, 10) == 0.0);
        CHECK(bundle.z(j, n) == bundle.z(j, n - 1));
    }
}

TEST_CASE("pooled estimator fits the tail feature exactly") {
    TimeGrid grid(0.0, 1.0, 32);
    auto ens = sample_ensemble(grid, 512, 4, 53);
    // The level feature is identically zero at the first node, so the default
    // ridge keeps the normal equations invertible; its bias is far below the
    // tolerance checked here.
    SolverConfig cfg;
    cfg.estimator = Estimator::pooled;
    auto bundle = solve_bdsde(plain("0", "1", XiConstant{0.0}), ens, {}, {}, cfg);

    auto tails = backward_tail_levels(ens);
    const std::size_t n = grid.n_steps;
    for (std::size_t j = 0; j < ens.n_particles(); ++j) {
        const std::size_t g = ens.group_of(j);
        for (std::size_t i = 0; i <= n; ++i)
            CHECK(std::fabs(bundle.y(j, i) - tails[g * (n + 1) + i]) <= 1e-9);
    }
}

TEST_CASE("groups are insulated from each other in grouped mode") {
    TimeGrid grid(0.0, 1.0, 16);
    auto ens = sample_ensemble(grid, 2, 64, 61);
    SolverConfig cfg;
    auto base = solve_bdsde(plain("0", "0", XiWTerminal{}), ens, {}, {}, cfg);

    auto bumped = ens;
    for (std::size_t j = ens.k_inner; j < 2 * ens.k_inner; ++j)
        for (std::size_t s = 0; s < grid.n_steps; ++s)
            bumped.dW[j * grid.n_steps + s] += 0.5;
    auto moved = solve_bdsde(plain("0", "0", XiWTerminal{}), bumped, {}, {}, cfg);

    bool group1_changed = false;
    for (std::size_t j = 0; j < ens.k_inner; ++j) {
        for (std::size_t i = 0; i <= grid.n_steps; ++i) {
            CHECK(base.y(j, i) == moved.y(j, i));
            CHECK(base.z(j, i) == moved.z(j, i));
            if (base.y(j + ens.k_inner, i) != moved.y(j + ens.k_inner, i)) group1_changed = true;
        }
    }
    CHECK(group1_changed);
}

TEST_CASE("frozen population columns feed the drivers") {
    TimeGrid grid(0.0, 1.0, 4);
    PathBundle prev(grid, 8);
    for (std::size_t j = 0; j < 8; ++j)
        for (std::size_t i = 0; i <= 4; ++i) {
            prev.y(j, i) = static_cast<double>(j + i);
            prev.z(j, i) = 0.5 * static_cast<double>(i);
        }
    auto frozen = freeze(prev);
    MeanFieldDriver driver(parse_expr("yp"), parse_expr("zp"), grid, frozen);
    CHECK(driver.f(2, 0, 0.0, 0.0) == doctest::Approx(3.5 + 2.0).epsilon(1e-15));
    CHECK(driver.g(3, 5, 0.0, 0.0) == doctest::Approx(1.5).epsilon(1e-15));
}

TEST_CASE("frozen mean drift integrates like a constant driver") {
    TimeGrid grid(0.0, 1.0, 16);
    auto ens = sample_ensemble(grid, 4, 8, 71);
    PathBundle prev(grid, ens.n_particles());
    for (std::size_t j = 0; j < ens.n_particles(); ++j)
        for (std::size_t i = 0; i <= grid.n_steps; ++i) prev.y(j, i) = 1.0;
    auto frozen = freeze(prev);

    SolverConfig cfg;
    auto bundle = solve_bdsde(plain("yp", "0", XiConstant{0.0}), ens, frozen, {}, cfg);
    const double dt = grid.dt();
    for (std::size_t j = 0; j < ens.n_particles(); ++j)
        for (std::size_t i = 0; i <= grid.n_steps; ++i) {
            const double want = static_cast<double>(grid.n_steps - i) * dt;
            CHECK(std::fabs(bundle.y(j, i) - want) <= 1e-12);
        }
}

TEST_CASE("time runs backward inside reversed drivers") {
    TimeGrid grid(0.0, 1.0, 4);
    FrozenPopulation none;
    MeanFieldDriver fwd(parse_expr("t"), parse_expr("0"), grid, none);
    MeanFieldDriver rev(parse_expr("t"), parse_expr("0"), grid, none, {}, true);
    CHECK(fwd.f(0, 0, 0.0, 0.0) == 0.0);
    CHECK(fwd.f(4, 0, 0.0, 0.0) == 1.0);
    CHECK(rev.f(0, 0, 0.0, 0.0) == 1.0);
    CHECK(rev.f(4, 0, 0.0, 0.0) == 0.0);
    CHECK(rev.f(1, 0, 0.0, 0.0) == doctest::Approx(0.75).epsilon(1e-15));
}

TEST_CASE("primed coefficients without a frozen population are rejected") {
    TimeGrid grid(0.0, 1.0, 4);
    auto ens = sample_ensemble(grid, 2, 2, 5);
    SolverConfig cfg;
    CHECK_THROWS_AS(solve_bdsde(plain("yp", "0", XiConstant{0.0}), ens, {}, {}, cfg),
                    InvalidArgumentError);
}

namespace {

struct BlowupDriver : StepDriver {
    double f(std::size_t, std::size_t, double, double) const override {
        return std::numeric_limits<double>::infinity();
    }
    double g(std::size_t, std::size_t, double, double) const override { return 0.0; }
    bool g_is_zero() const override { return true; }
};

}  // namespace

TEST_CASE("non-finite values raise a divergence error naming the step") {
    TimeGrid grid(0.0, 1.0, 8);
    auto ens = sample_ensemble(grid, 2, 4, 9);
    SolverConfig cfg;
    std::vector<double> term(ens.n_particles(), 0.0);
    auto levels = forward_levels(ens);
    RegressionMarkers markers{levels, {}};

    BlowupDriver driver;
    CHECK_THROWS_WITH_AS(solve_backward(driver, term, ens, cfg, markers),
                         doctest::Contains("step 7"), DivergenceError);

    term[1] = std::numeric_limits<double>::quiet_NaN();
    MeanFieldDriver zero(parse_expr("0"), parse_expr("0"), grid, FrozenPopulation{});
    CHECK_THROWS_AS(solve_backward(zero, term, ens, cfg, markers), DivergenceError);
}

TEST_CASE("input validation") {
    TimeGrid grid(0.0, 1.0, 4);
    auto ens = sample_ensemble(grid, 2, 2, 5);
    auto levels = forward_levels(ens);
    RegressionMarkers markers{levels, {}};
    MeanFieldDriver zero(parse_expr("0"), parse_expr("0"), grid, FrozenPopulation{});
    std::vector<double> term(ens.n_particles(), 0.0);

    std::vector<double> short_term(2, 0.0);
    CHECK_THROWS_AS(solve_backward(zero, short_term, ens, SolverConfig{}, markers), ShapeError);

    SolverConfig bad;
    bad.basis_degree = 7;
    CHECK_THROWS_AS(solve_backward(zero, term, ens, bad, markers), InvalidArgumentError);

    SolverConfig pooled;
    pooled.estimator = Estimator::pooled;
    CHECK_THROWS_AS(solve_backward(zero, term, ens, pooled, markers), ShapeError);
}
