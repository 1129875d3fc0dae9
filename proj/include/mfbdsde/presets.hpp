#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string_view>

#include "mfbdsde/bdsde.hpp"
#include "mfbdsde/coefficients.hpp"
#include "mfbdsde/lq.hpp"

namespace mfbdsde {

/// Named experiment: coefficients, default sizes, and the expected initial
/// mean when a closed form exists.
struct Preset {
    std::string_view name;
    std::string_view summary;
    CoefficientSet coeffs;
    double x0 = 0.0;  // forward-population start
    double horizon = 1.0;
    std::size_t n_steps = 64;
    std::size_t m_outer = 8;
    std::size_t k_inner = 1024;
    Estimator estimator = Estimator::grouped;
    std::optional<double> oracle_y0;
    std::optional<LQCoefficients> lq;
    bool has_control = false;  // drivers read the control slot
};

std::span<const Preset> all_presets();

/// Throws InvalidArgumentError when the name is unknown.
const Preset& find_preset(std::string_view name);

}  // namespace mfbdsde
