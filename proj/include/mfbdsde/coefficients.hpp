#pragma once

#include <string>
#include <variant>

#include "mfbdsde/expr.hpp"

namespace mfbdsde {

/// Lipschitz and growth constants declared for a coefficient set.
///
/// L_* bound the drift-side kernel theta_f slot by slot, K_* the diffusion-side
/// kernel theta_g in its y/v slots, and alpha1..alpha4 the squared z-slopes of
/// the backward integrand (own z, own nonlocal, population z, population
/// nonlocal).  L_gamma is the outer drift's sensitivity to its nonlocal
/// argument; with the identity outer map used here it is 1, and 0 turns the
/// composed bounds into plain kernel bounds.
struct LipschitzMeta {
    double L_y = 0, L_z = 0, L_yp = 0, L_zp = 0, L_v = 0, L_vp = 0;
    double K_y = 0, K_yp = 0, K_v = 0, K_vp = 0;
    double alpha1 = 0, alpha2 = 0, alpha3 = 0, alpha4 = 0;
    double L_gamma = 0;
};

struct XiConstant {
    double value = 0.0;
};
struct XiWTerminal {};          // terminal value of the particle's forward driver
struct XiExpression {           // expression in x, evaluated at the terminal forward state
    Expr expr;
};
using XiMode = std::variant<XiConstant, XiWTerminal, XiExpression>;

/// All problem data expressed through the coefficient language.
///
/// theta_f / theta_g are the nonlocal kernels entering the drift and the
/// backward integral; l and h are running and initial cost densities; b and
/// sigma drive the forward population.  Slots not used by a given command may
/// stay at their zero defaults.
struct CoefficientSet {
    Expr theta_f;
    Expr theta_g;
    Expr l;
    Expr h;
    Expr b;
    Expr sigma;
    XiMode xi = XiConstant{0.0};
    LipschitzMeta lipschitz;

    /// Checks that each slot only uses variables meaningful for it; throws
    /// InvalidArgumentError naming the slot and the stray variable.
    void validate() const;
};

/// Allowed-variable masks per slot.
namespace slot_vars {
constexpr unsigned theta = var_bit(Var::t) | var_bit(Var::x) | var_bit(Var::xp) |
                           var_bit(Var::y) | var_bit(Var::z) | var_bit(Var::v) |
                           var_bit(Var::yp) | var_bit(Var::zp) | var_bit(Var::vp);
constexpr unsigned running_cost = var_bit(Var::t) | var_bit(Var::y) | var_bit(Var::z) |
                                  var_bit(Var::v) | var_bit(Var::yp) | var_bit(Var::zp) |
                                  var_bit(Var::vp);
constexpr unsigned initial_cost = var_bit(Var::x) | var_bit(Var::xp) | var_bit(Var::y) |
                                  var_bit(Var::yp);
constexpr unsigned forward = var_bit(Var::t) | var_bit(Var::x) | var_bit(Var::xp);
constexpr unsigned terminal = var_bit(Var::x);
} // namespace slot_vars

void check_slot(const Expr& e, unsigned allowed, const std::string& slot_name);

} // namespace mfbdsde
