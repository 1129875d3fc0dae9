#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

namespace mfbdsde {

/// Sum with a fixed pairwise reduction tree.
///
/// The association order depends only on the element count, never on thread
/// count or traversal order, so accumulated results are bitwise reproducible.
double pairwise_sum(std::span<const double> values);

inline double pairwise_mean(std::span<const double> values) {
    return values.empty() ? 0.0 : pairwise_sum(values) / static_cast<double>(values.size());
}

/// Worker count used by parallel_for when the caller does not override it.
/// Set from the CLI --threads flag or the MFBDSDE_THREADS variable.
void set_thread_count(unsigned n);
unsigned thread_count();

/// Runs fn(begin, end) over a static partition of [0, n).
///
/// Work items must be independent (each writes its own output slots); every
/// cross-item reduction goes through pairwise_sum on a materialized array.
/// Under that discipline results are identical for any worker count.
void parallel_for(std::size_t n, const std::function<void(std::size_t, std::size_t)>& fn);

} // namespace mfbdsde
