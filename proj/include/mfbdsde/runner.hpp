#pragma once

#include "mfbdsde/config.hpp"
#include "mfbdsde/result.hpp"

namespace mfbdsde {

/// Dispatches the configured command (solve, forward, spde-eval,
/// control-check, lq, convergence-study), records scalar and series
/// results, and writes the output file when a path is configured.
ResultRecord run(const ExperimentConfig& cfg);

}  // namespace mfbdsde
