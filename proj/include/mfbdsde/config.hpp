#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "mfbdsde/bdsde.hpp"

namespace mfbdsde {

/// Flat experiment description, filled from an INI-style file and command
/// line flags.  Size fields left at zero fall back to the preset defaults.
struct ExperimentConfig {
    std::string command;
    std::string preset;
    /// Slot name (theta_f, theta_g, l, h, b, sigma, xi, x0) to DSL text;
    /// overrides the preset slot by slot.
    std::map<std::string, std::string> coefficients;

    double horizon = 0.0;
    std::size_t n_steps = 0;
    std::size_t m_outer = 0;
    std::size_t k_inner = 0;
    std::uint64_t seed = 42;

    double picard_tol = 1e-8;
    double mp_tol = 1e-3;
    std::size_t max_iter = 50;
    SolverConfig solver;
    bool estimator_set = false;

    double query_t = 0.0;  // spde-eval
    double query_x = 0.0;
    double eps = 0.1;            // perturbation size for checks
    std::size_t n_perturb = 100;
    std::string axis;  // convergence-study
    std::vector<double> axis_values;

    std::string out_path;
    std::string out_format = "json";
    unsigned threads = 0;  // 0 keeps the library default
};

/// Reads a flat "key = value" file with [section] headers; values may be
/// double-quoted.  Keys are dispatched as "section.key" through
/// apply_setting.  Throws ParseError on malformed lines.
ExperimentConfig load_config(const std::filesystem::path& file);

/// Applies one dotted setting; shared by the file loader and the flag layer.
/// Throws ParseError for unknown keys or unparseable values.
void apply_setting(ExperimentConfig& cfg, std::string_view key, std::string_view value);

/// Cross-field checks: known command, known preset when named, positive
/// sizes and tolerances.  Throws InvalidArgumentError.
void validate_config(const ExperimentConfig& cfg);

}  // namespace mfbdsde
