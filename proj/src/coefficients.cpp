#include "mfbdsde/coefficients.hpp"

namespace mfbdsde {

void check_slot(const Expr& e, unsigned allowed, const std::string& slot_name) {
    const unsigned stray = e.var_mask() & ~allowed;
    if (stray == 0) return;
    for (int i = 0; i < var_count; ++i) {
        if (stray & (1u << i))
            throw InvalidArgumentError("variable '" +
                                       std::string(var_name(static_cast<Var>(i))) +
                                       "' is not allowed in slot " + slot_name);
    }
}

void CoefficientSet::validate() const {
    check_slot(theta_f, slot_vars::theta, "theta_f");
    check_slot(theta_g, slot_vars::theta, "theta_g");
    check_slot(l, slot_vars::running_cost, "l");
    check_slot(h, slot_vars::initial_cost, "h");
    check_slot(b, slot_vars::forward, "b");
    check_slot(sigma, slot_vars::forward, "sigma");
    if (const auto* xe = std::get_if<XiExpression>(&xi))
        check_slot(xe->expr, slot_vars::terminal, "xi");
}

} // namespace mfbdsde
