#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <string_view>

#include "mfbdsde/errors.hpp"

namespace mfbdsde {

/// Variables understood by coefficient expressions.  The *_primed entries
/// refer to the integrated (population) copy of a state; p and q are reserved
/// for adjoint states inside Hamiltonian expressions.
enum class Var : int { t = 0, x, xp, y, z, yp, zp, v, vp, p, q };
inline constexpr int var_count = 11;

std::string_view var_name(Var v);
std::optional<Var> var_from_name(std::string_view name);
constexpr unsigned var_bit(Var v) { return 1u << static_cast<int>(v); }

/// Mask of every primed variable.
constexpr unsigned primed_mask =
    (1u << static_cast<int>(Var::xp)) | (1u << static_cast<int>(Var::yp)) |
    (1u << static_cast<int>(Var::zp)) | (1u << static_cast<int>(Var::vp));

enum class ExprKind { constant, variable, add, sub, mul, div, neg, pow, call };

/// sign is not part of the input grammar; differentiation of abs produces it
/// and the parser accepts it so printed derivatives round-trip.
enum class Func { exp, sin, cos, tanh, sqrt, abs, sign };

/// Values assigned to variables for one evaluation.
struct Bindings {
    std::array<double, var_count> values{};
    unsigned mask = 0;

    Bindings& set(Var v, double value) {
        values[static_cast<int>(v)] = value;
        mask |= var_bit(v);
        return *this;
    }
    bool has(Var v) const { return (mask & var_bit(v)) != 0; }
    double get(Var v) const { return values[static_cast<int>(v)]; }

    /// Union of two binding sets; the right-hand side wins on overlap.
    Bindings merged(const Bindings& other) const {
        Bindings out = *this;
        for (int i = 0; i < var_count; ++i)
            if (other.mask & (1u << i)) out.set(static_cast<Var>(i), other.values[i]);
        return out;
    }
};

/// Immutable expression tree with value semantics.
///
/// Construction runs light simplification (constant folding, dropping zero
/// and one identities), so derivative output stays readable.  Printing uses
/// minimal parentheses and parse(str()) reproduces the tree structurally.
class Expr {
public:
    Expr();  // the constant 0

    static Expr constant(double c);
    static Expr variable(Var v);
    static Expr add(Expr a, Expr b);
    static Expr sub(Expr a, Expr b);
    static Expr mul(Expr a, Expr b);
    static Expr div(Expr a, Expr b);
    static Expr neg(Expr a);
    static Expr pow(Expr base, int exponent);
    static Expr call(Func f, Expr arg);

    double eval(const Bindings& b) const;

    /// Symbolic partial derivative; d|u|/du is sign(u) with sign(0) = 0.
    Expr diff(Var v) const;

    std::string str() const;
    bool same(const Expr& other) const;

    /// Bitmask (var_bit) of variables appearing in the tree.
    unsigned var_mask() const;
    bool uses(Var v) const { return (var_mask() & var_bit(v)) != 0; }

    /// Exchanges each state variable with its primed twin (x<->xp, y<->yp,
    /// z<->zp, v<->vp).  Used when an integral runs over the slot that the
    /// kernel spells unprimed.
    Expr swap_primed() const;

    bool is_constant() const;
    /// Constant value; only valid when is_constant().
    double constant_value() const;

    ExprKind kind() const;
    Expr operand(int i) const;  // 0 = left/only, 1 = right
    Var variable_id() const;
    Func func() const;
    int exponent() const;

    struct Node;  // definition private to the implementation file

private:
    explicit Expr(std::shared_ptr<const Node> n) : node_(std::move(n)) {}
    std::shared_ptr<const Node> node_;
};

/// Parses the coefficient grammar:
///   expr   := term (('+'|'-') term)*
///   term   := unary (('*'|'/') unary)*
///   unary  := '-' unary | power
///   power  := atom ('^' unary)?        // exponent must fold to an integer >= 0
///   atom   := number | variable | func '(' expr ')' | '(' expr ')'
/// Precedence: ^ binds tightest, then unary minus, then * /, then + -.
/// Failures throw ParseError carrying the byte offset.
Expr parse_expr(std::string_view text);

} // namespace mfbdsde
