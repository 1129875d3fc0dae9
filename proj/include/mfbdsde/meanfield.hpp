#pragma once

#include <optional>
#include <span>
#include <vector>

#include "mfbdsde/coefficients.hpp"
#include "mfbdsde/expr.hpp"

namespace mfbdsde {

/// One time slice of a population, viewed by the nonlocal operators.
/// Arrays are non-owning; v and x may be empty when the problem has no
/// control or forward state.  All arrays present must share one length.
struct PopulationSnapshot {
    std::span<const double> y;
    std::span<const double> z;
    std::span<const double> v;
    std::span<const double> x;
    std::size_t size() const { return y.empty() ? x.size() : y.size(); }
};

/// Empirical average of a two-slot kernel against a population.
///
/// For a kernel K(own, primed) and a snapshot of size N this computes, for
/// each requested own state,
///     (1/N) * sum_j K(own, member_j) * carrier_j
/// with primed variables bound to member j and an optional per-member carrier
/// weight (absent carrier means weight one).  Sums are pairwise and ordered by
/// member index, so results do not depend on thread count.
///
/// Construction analyzes the kernel once.  When the tree splits into a sum of
/// products A_k(own) * B_k(primed), the average collapses to
/// sum_k A_k(own) * mean_j[B_k(j) * carrier_j]: one O(N) pass per snapshot and
/// O(1) per own state.  Kernels that do not split (for example tanh(y - yp))
/// fall back to the direct O(N) per-own-state loop, which is algebraically the
/// same quantity.
class MeanKernel {
public:
    explicit MeanKernel(Expr kernel);

    bool separable() const { return terms_.has_value(); }
    const Expr& kernel() const { return kernel_; }

    /// Snapshot-bound evaluator; keeps references to snap and carrier, which
    /// must outlive it.
    class Prepared {
    public:
        double operator()(const Bindings& own) const;

    private:
        friend class MeanKernel;
        const MeanKernel* mk_ = nullptr;
        double t_ = 0.0;
        PopulationSnapshot snap_;
        std::span<const double> carrier_;
        std::vector<double> mu_;  // per-term primed means (separable path)
    };

    Prepared prepare(double t, const PopulationSnapshot& snap,
                     std::span<const double> carrier = {}) const;

    /// One-shot convenience for a single own state.
    double average(const Bindings& own, double t, const PopulationSnapshot& snap,
                   std::span<const double> carrier = {}) const;

private:
    struct Term {
        Expr own_factor;
        Expr primed_factor;
    };

    Expr kernel_;
    std::optional<std::vector<Term>> terms_;
};

/// Population average of theta over the primed slots at fixed own state.
double gamma_hat(const Expr& theta, const Bindings& own, const PopulationSnapshot& snap,
                 double t);

/// Carrier-weighted population average: (1/N) sum_j carrier_j * kernel(own, j).
/// The kernel's primed variables address the integrated member; callers whose
/// integral runs over the slot spelled unprimed swap variables first
/// (Expr::swap_primed).
double estar_hat(const Expr& kernel, std::span<const double> carrier,
                 const PopulationSnapshot& snap_at_star, const Bindings& own, double t);

/// Fixed-point feasibility report for the declared constants.
struct ContractionReport {
    bool h1_ok = false;
    double margin = 0.0;      // 1 minus the z-slope sum alpha1 + a2*a3 + a2*a4
    double coupling_c = 1.0;  // coupling constant at which M1..M4 are reported
    double M1 = 0, M2 = 0, M3 = 0, M4 = 0;
};

/// Scans the coupling constant over a log grid (2^-10 .. 2^10) for a weight
/// making both the instantaneous bound M2 < 1 and the per-sweep factor
/// M4 / (1 - M2) < 1; h1_ok also requires a positive margin.
ContractionReport check_h1(const LipschitzMeta& meta);

} // namespace mfbdsde
