#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <string>
#include <vector>

#include "mfbdsde/expr.hpp"

using namespace mfbdsde;

namespace {

Bindings bind_all(double t, double y, double z, double yp, double zp) {
    Bindings b;
    b.set(Var::t, t);
    b.set(Var::y, y);
    b.set(Var::z, z);
    b.set(Var::yp, yp);
    b.set(Var::zp, zp);
    return b;
}

// Central difference in one variable, all others held fixed.
double fd_partial(const Expr& e, Var v, Bindings base, double h = 1e-6) {
    Bindings lo = base;
    Bindings hi = base;
    lo.set(v, base.get(v) - h);
    hi.set(v, base.get(v) + h);
    return (e.eval(hi) - e.eval(lo)) / (2.0 * h);
}

}  // namespace

TEST_CASE("arithmetic evaluation") {
    Bindings b = bind_all(0.0, 1.0, 2.0, 0.0, 0.0);
    CHECK(parse_expr("2*y + z^2").eval(b) == 6.0);
    CHECK(parse_expr("y - z - 1").eval(b) == -2.0);
    CHECK(parse_expr("y - (z - 1)").eval(b) == 0.0);
    CHECK(parse_expr("z/y/2").eval(b) == 1.0);
    CHECK(parse_expr("-z^2").eval(b) == -4.0);
    CHECK(parse_expr("(0 - z)^2").eval(b) == 4.0);
    CHECK(parse_expr("z^2^2").eval(b) == 16.0);
    CHECK(parse_expr("y^0").eval(b) == 1.0);
    CHECK(parse_expr("2*z^3").eval(b) == 16.0);
}

TEST_CASE("function evaluation against frozen references") {
    Bindings b = bind_all(0.4, 0.5, 1.2, 0.0, 0.7);
    CHECK(parse_expr("tanh(y)").eval(b) == doctest::Approx(0.46211715726000974).epsilon(1e-15));
    CHECK(parse_expr("exp(0.3)*sin(z)").eval(b) == doctest::Approx(1.258121169197948).epsilon(1e-15));
    CHECK(parse_expr("sqrt(1 + zp^2)/exp(t)").eval(b) ==
          doctest::Approx(0.8182298922275207).epsilon(1e-15));
    CHECK(parse_expr("abs(0 - y)").eval(b) == 0.5);
    CHECK(parse_expr("cos(0)").eval(b) == 1.0);
    CHECK(parse_expr("sign(y)").eval(b) == 1.0);
    CHECK(parse_expr("sign(0 - y)").eval(b) == -1.0);
    CHECK(parse_expr("sign(0)").eval(b) == 0.0);
}

TEST_CASE("variable coverage") {
    Bindings b;
    const char* names[] = {"t", "x", "xp", "y", "z", "yp", "zp", "v", "vp", "p", "q"};
    for (int i = 0; i < 11; ++i) b.set(static_cast<Var>(i), 1.0 + i);
    for (int i = 0; i < 11; ++i) {
        CHECK(parse_expr(names[i]).eval(b) == 1.0 + i);
        CHECK(var_from_name(names[i]) == static_cast<Var>(i));
        CHECK(var_name(static_cast<Var>(i)) == std::string(names[i]));
    }
}

TEST_CASE("unbound variable and domain errors") {
    Bindings b;
    b.set(Var::y, 4.0);
    CHECK_THROWS_AS(parse_expr("y + z").eval(b), InvalidArgumentError);
    CHECK_THROWS_AS(parse_expr("sqrt(0 - y)").eval(b), EvalDomainError);
    Bindings b0;
    b0.set(Var::y, 1.0);
    b0.set(Var::z, 0.0);
    CHECK_THROWS_AS(parse_expr("y/z").eval(b0), EvalDomainError);
}

TEST_CASE("parse errors carry byte offsets") {
    auto offset_of = [](const std::string& text) -> std::size_t {
        try {
            parse_expr(text);
        } catch (const ParseError& e) {
            return e.offset;
        }
        FAIL("expected ParseError for: ", text);
        return 0;
    };
    CHECK(offset_of("2*+y") == 2);
    CHECK(offset_of("y + (z") == 6);
    CHECK(offset_of("foo(y)") == 0);
    CHECK(offset_of("y^z") == 2);
    CHECK(offset_of("y^1.5") == 2);
    CHECK(offset_of("y^65") == 2);
    CHECK(offset_of("y)") == 1);
    CHECK(offset_of("") == 0);
    CHECK(offset_of("exp y") == 4);
    CHECK(offset_of("y $ z") == 2);
}

TEST_CASE("integer exponents only, constant-folded") {
    Bindings b;
    b.set(Var::y, 3.0);
    CHECK(parse_expr("y^(2*2)").eval(b) == 81.0);
    CHECK(parse_expr("y^(6/2)").eval(b) == 27.0);
    CHECK_THROWS_AS(parse_expr("y^(1/3)"), ParseError);
    CHECK_THROWS_AS(parse_expr("y^(0-1)"), ParseError);
}

TEST_CASE("simplification folds constants") {
    CHECK(parse_expr("1 + 2*3").str() == "7");
    CHECK(parse_expr("0*y + z").str() == "z");
    CHECK(parse_expr("1*y").str() == "y");
    CHECK(parse_expr("y - 0").str() == "y");
    CHECK(parse_expr("y^1").str() == "y");
    CHECK(parse_expr("y^0").str() == "1");
    CHECK(parse_expr("exp(0)").str() == "1");
    // Division is never folded away, so a zero denominator still faults at eval.
    Bindings b;
    b.set(Var::y, 2.0);
    CHECK(parse_expr("0/y").eval(b) == 0.0);
}

TEST_CASE("printing uses minimal parentheses and round-trips") {
    const std::vector<std::string> sources = {
        "y + z*yp",
        "(y + z)*yp",
        "y - (z - v)",
        "y/(z*v)",
        "-(y*z)",
        "(y + z)^3",
        "2*y^2 - z/4",
        "tanh(y*z) + sqrt(1 + y^2)/exp(z)",
        "abs(y - yp)*sign(z)",
        "0.001*y",
        "y - z - v",
        "-y + z",
        "y*(z + 1)*(v - 2)",
    };
    for (const auto& src : sources) {
        CAPTURE(src);
        Expr e = parse_expr(src);
        Expr back = parse_expr(e.str());
        CHECK(e.same(back));
    }
}

TEST_CASE("structural comparison") {
    CHECK(parse_expr("y + z").same(parse_expr("y + z")));
    CHECK_FALSE(parse_expr("y + z").same(parse_expr("z + y")));
    CHECK_FALSE(parse_expr("y + z").same(parse_expr("y - z")));
    CHECK(parse_expr("2*y").same(parse_expr("2 * y")));
}

TEST_CASE("differentiation produces simplified structure") {
    CHECK(parse_expr("y^2").diff(Var::y).same(parse_expr("2*y")));
    CHECK(parse_expr("y*zp").diff(Var::zp).same(parse_expr("y")));
    CHECK(parse_expr("y*zp").diff(Var::q).str() == "0");
    CHECK(parse_expr("z").diff(Var::y).str() == "0");
    CHECK(parse_expr("v^2/2").diff(Var::v).same(parse_expr("2*v/2")));
}

TEST_CASE("differentiation matches central differences") {
    Bindings base = bind_all(0.3, 1.0, 2.0, -0.5, 0.7);
    const std::vector<std::string> sources = {
        "exp(0 - t)*(y - yp)",
        "tanh(y*z) + sqrt(1 + y^2)/exp(z)",
        "sin(y)*cos(z) + y^3*zp",
        "(y + 2*yp)^2/4",
        "y/(1 + z^2)",
    };
    const Var vars[] = {Var::t, Var::y, Var::z, Var::yp, Var::zp};
    for (const auto& src : sources) {
        Expr e = parse_expr(src);
        for (Var v : vars) {
            CAPTURE(src);
            CAPTURE(var_name(v));
            const double sym = e.diff(v).eval(base);
            const double fd = fd_partial(e, v, base);
            const double scale = std::max({1.0, std::fabs(sym), std::fabs(fd)});
            CHECK(std::fabs(sym - fd) / scale < 1e-6);
        }
    }
}

TEST_CASE("derivative of exact value against frozen reference") {
    Bindings b = bind_all(0.3, 1.0, 0.0, 2.0, 0.0);
    Expr e = parse_expr("exp(0 - t)*(y - yp)");
    CHECK(e.diff(Var::yp).eval(b) == doctest::Approx(-0.7408182206817179).epsilon(1e-15));
}

TEST_CASE("absolute value differentiates to sign") {
    Expr d = parse_expr("abs(y)").diff(Var::y);
    Bindings b;
    b.set(Var::y, 2.0);
    CHECK(d.eval(b) == 1.0);
    b.set(Var::y, -2.0);
    CHECK(d.eval(b) == -1.0);
    b.set(Var::y, 0.0);
    CHECK(d.eval(b) == 0.0);
    CHECK(parse_expr("sign(y)").diff(Var::y).str() == "0");
}

TEST_CASE("primed swap exchanges own and integrated slots") {
    CHECK(parse_expr("y*zp + vp").swap_primed().same(parse_expr("yp*z + v")));
    CHECK(parse_expr("x - xp").swap_primed().same(parse_expr("xp - x")));
    CHECK(parse_expr("t + p + q").swap_primed().same(parse_expr("t + p + q")));
    Expr e = parse_expr("tanh(y - yp)");
    CHECK(e.swap_primed().swap_primed().same(e));
}

TEST_CASE("variable masks") {
    Expr e = parse_expr("y*zp + t");
    CHECK(e.uses(Var::y));
    CHECK(e.uses(Var::zp));
    CHECK(e.uses(Var::t));
    CHECK_FALSE(e.uses(Var::z));
    CHECK((e.var_mask() & primed_mask) != 0);
    CHECK((parse_expr("y + z").var_mask() & primed_mask) == 0);
}

TEST_CASE("number formatting survives round-trips") {
    Bindings b;
    for (double val : {0.1, 1e-8, 12345.6789, 2.718281828459045, 1.0 / 3.0}) {
        Expr e = Expr::constant(val);
        CHECK(parse_expr(e.str()).eval(b) == val);
    }
}
