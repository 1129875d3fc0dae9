#include "mfbdsde/regression.hpp"

#include <cmath>

#include "mfbdsde/parallel.hpp"

namespace mfbdsde {

namespace {

struct Monomial {
    int pu = 0;
    int pw = 0;
};

std::vector<Monomial> basis_for(int degree, bool two_features) {
    std::vector<Monomial> basis;
    for (int total = 0; total <= degree; ++total) {
        for (int pw = 0; pw <= (two_features ? total : 0); ++pw)
            basis.push_back({total - pw, pw});
    }
    return basis;
}

double mono_eval(const Monomial& m, double u, double w) {
    double acc = 1.0;
    for (int i = 0; i < m.pu; ++i) acc *= u;
    for (int i = 0; i < m.pw; ++i) acc *= w;
    return acc;
}

/// In-place Cholesky solve of the SPD system a x = b (row-major, dim f).
void cholesky_solve(std::vector<double>& a, std::vector<double>& b, std::size_t f) {
    for (std::size_t k = 0; k < f; ++k) {
        double pivot = a[k * f + k];
        for (std::size_t j = 0; j < k; ++j) pivot -= a[k * f + j] * a[k * f + j];
        if (!(pivot > 1e-300) || !std::isfinite(pivot))
            throw SingularSystemError("normal equations are rank deficient");
        const double root = std::sqrt(pivot);
        a[k * f + k] = root;
        for (std::size_t i = k + 1; i < f; ++i) {
            double s = a[i * f + k];
            for (std::size_t j = 0; j < k; ++j) s -= a[i * f + j] * a[k * f + j];
            a[i * f + k] = s / root;
        }
    }
    for (std::size_t i = 0; i < f; ++i) {
        double s = b[i];
        for (std::size_t j = 0; j < i; ++j) s -= a[i * f + j] * b[j];
        b[i] = s / a[i * f + i];
    }
    for (std::size_t i = f; i-- > 0;) {
        double s = b[i];
        for (std::size_t j = i + 1; j < f; ++j) s -= a[j * f + i] * b[j];
        b[i] = s / a[i * f + i];
    }
}

} // namespace

PolyFit fit_poly(std::span<const double> feat1, std::span<const double> feat2,
                 std::span<const double> targets, int degree, double ridge) {
    if (degree < 0 || degree > 6)
        throw InvalidArgumentError("basis degree must lie in [0, 6]");
    if (feat1.size() != targets.size())
        throw ShapeError("feature and target lengths differ");
    const bool two = !feat2.empty();
    if (two && feat2.size() != feat1.size())
        throw ShapeError("feature column lengths differ");
    if (targets.empty()) throw InvalidArgumentError("regression needs at least one sample");
    if (ridge < 0.0) throw InvalidArgumentError("ridge must be >= 0");

    const std::size_t n = targets.size();
    const auto basis = basis_for(degree, two);
    const std::size_t nb = basis.size();   // basis[0] is the intercept
    const std::size_t f = nb - 1;          // centered columns

    const double y_mean = pairwise_mean(targets);

    // Raw columns and their means; column c corresponds to basis[c + 1].
    std::vector<std::vector<double>> cols(f, std::vector<double>(n));
    std::vector<double> col_mean(f);
    for (std::size_t c = 0; c < f; ++c) {
        const Monomial& m = basis[c + 1];
        for (std::size_t i = 0; i < n; ++i)
            cols[c][i] = mono_eval(m, feat1[i], two ? feat2[i] : 0.0);
        col_mean[c] = pairwise_mean(cols[c]);
        for (std::size_t i = 0; i < n; ++i) cols[c][i] -= col_mean[c];
    }

    std::vector<double> beta(f, 0.0);
    if (f > 0) {
        std::vector<double> gram(f * f, 0.0);
        std::vector<double> scratch(n);
        for (std::size_t c = 0; c < f; ++c) {
            for (std::size_t d = c; d < f; ++d) {
                for (std::size_t i = 0; i < n; ++i) scratch[i] = cols[c][i] * cols[d][i];
                const double s = pairwise_sum(scratch);
                gram[c * f + d] = s;
                gram[d * f + c] = s;
            }
            gram[c * f + c] += ridge;
            for (std::size_t i = 0; i < n; ++i)
                scratch[i] = cols[c][i] * (targets[i] - y_mean);
            beta[c] = pairwise_sum(scratch);
        }
        cholesky_solve(gram, beta, f);
    }

    PolyFit fit;
    fit.coefficients.resize(nb);
    double intercept = y_mean;
    for (std::size_t c = 0; c < f; ++c) {
        intercept -= beta[c] * col_mean[c];
        fit.coefficients[c + 1] = beta[c];
    }
    fit.coefficients[0] = intercept;

    fit.fitted.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        double pred = y_mean;
        for (std::size_t c = 0; c < f; ++c) pred += beta[c] * cols[c][i];
        fit.fitted[i] = pred;
    }
    return fit;
}

} // namespace mfbdsde
