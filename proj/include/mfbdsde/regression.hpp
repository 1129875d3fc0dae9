#pragma once

#include <span>
#include <vector>

#include "mfbdsde/errors.hpp"

namespace mfbdsde {

/// Result of one polynomial least-squares fit.
///
/// `coefficients` are in the raw monomial basis.  With one feature u the basis
/// is [1, u, u^2, ..., u^d].  With a second feature w it is the total-degree
/// basis ordered by total degree, then by the power of w:
/// [1, u, w, u^2, u*w, w^2, ...].
struct PolyFit {
    std::vector<double> coefficients;
    std::vector<double> fitted;  // prediction at each input row
};

/// Ridge-stabilized polynomial regression of targets on one or two features.
///
/// The design is centered and the intercept is unpenalized, so constant
/// targets are reproduced exactly for any ridge value.  All sums are pairwise
/// in row order.  Degree must lie in [0, 6].  A rank-deficient system that the
/// ridge does not cure (ridge == 0 with collinear columns) throws
/// SingularSystemError.
PolyFit fit_poly(std::span<const double> feat1, std::span<const double> feat2,
                 std::span<const double> targets, int degree, double ridge);

inline PolyFit fit_poly(std::span<const double> feat1, std::span<const double> targets,
                        int degree, double ridge) {
    return fit_poly(feat1, {}, targets, degree, ridge);
}

} // namespace mfbdsde
