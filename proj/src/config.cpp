#include "mfbdsde/config.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <set>
#include <string>

#include "mfbdsde/errors.hpp"
#include "mfbdsde/presets.hpp"

namespace mfbdsde {

namespace {

std::string_view trim(std::string_view s) {
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
    return s;
}

std::string_view unquote(std::string_view s) {
    if (s.size() >= 2 && s.front() == '"' && s.back() == '"')
        return s.substr(1, s.size() - 2);
    return s;
}

double parse_double(std::string_view key, std::string_view value) {
    try {
        std::size_t used = 0;
        const std::string text(value);
        const double x = std::stod(text, &used);
        if (used != text.size()) throw std::invalid_argument("trailing characters");
        return x;
    } catch (const std::exception&) {
        throw ParseError("setting " + std::string(key) + ": expected a number, got \"" +
                         std::string(value) + "\"", 0);
    }
}

std::uint64_t parse_count(std::string_view key, std::string_view value) {
    try {
        std::size_t used = 0;
        const std::string text(value);
        const std::uint64_t x = std::stoull(text, &used);
        if (used != text.size()) throw std::invalid_argument("trailing characters");
        return x;
    } catch (const std::exception&) {
        throw ParseError("setting " + std::string(key) + ": expected a count, got \"" +
                         std::string(value) + "\"", 0);
    }
}

bool parse_bool(std::string_view key, std::string_view value) {
    if (value == "true" || value == "1") return true;
    if (value == "false" || value == "0") return false;
    throw ParseError("setting " + std::string(key) + ": expected true or false, got \"" +
                     std::string(value) + "\"", 0);
}

const std::set<std::string_view> coefficient_slots = {"theta_f", "theta_g", "l", "h",
                                                      "b",       "sigma",   "xi", "x0"};

}  // namespace

void apply_setting(ExperimentConfig& cfg, std::string_view key, std::string_view value) {
    value = unquote(trim(value));
    if (key == "experiment.command") {
        cfg.command = value;
    } else if (key == "experiment.preset") {
        cfg.preset = value;
    } else if (key == "experiment.seed") {
        cfg.seed = parse_count(key, value);
    } else if (key == "experiment.threads") {
        cfg.threads = static_cast<unsigned>(parse_count(key, value));
    } else if (key == "grid.horizon") {
        cfg.horizon = parse_double(key, value);
    } else if (key == "grid.steps") {
        cfg.n_steps = parse_count(key, value);
    } else if (key == "particles.m") {
        cfg.m_outer = parse_count(key, value);
    } else if (key == "particles.k") {
        cfg.k_inner = parse_count(key, value);
    } else if (key == "tolerances.picard") {
        cfg.picard_tol = parse_double(key, value);
    } else if (key == "tolerances.mp") {
        cfg.mp_tol = parse_double(key, value);
    } else if (key == "tolerances.max_iter") {
        cfg.max_iter = parse_count(key, value);
    } else if (key == "solver.basis_degree") {
        cfg.solver.basis_degree = static_cast<int>(parse_count(key, value));
    } else if (key == "solver.estimator") {
        if (value == "grouped") {
            cfg.solver.estimator = Estimator::grouped;
        } else if (value == "pooled") {
            cfg.solver.estimator = Estimator::pooled;
        } else {
            throw ParseError("setting solver.estimator: expected grouped or pooled", 0);
        }
        cfg.estimator_set = true;
    } else if (key == "solver.ridge") {
        cfg.solver.ridge = parse_double(key, value);
    } else if (key == "solver.center_z") {
        cfg.solver.center_z = parse_bool(key, value);
    } else if (key == "solver.enforce_h1") {
        cfg.solver.enforce_h1 = parse_bool(key, value);
    } else if (key.starts_with("coefficients.")) {
        const std::string_view slot = key.substr(13);
        if (!coefficient_slots.contains(slot))
            throw ParseError("unknown coefficient slot: " + std::string(slot), 0);
        cfg.coefficients[std::string(slot)] = std::string(value);
    } else if (key == "query.t") {
        cfg.query_t = parse_double(key, value);
    } else if (key == "query.x") {
        cfg.query_x = parse_double(key, value);
    } else if (key == "check.eps") {
        cfg.eps = parse_double(key, value);
    } else if (key == "check.perturbations") {
        cfg.n_perturb = parse_count(key, value);
    } else if (key == "study.axis") {
        cfg.axis = value;
    } else if (key == "study.values") {
        cfg.axis_values.clear();
        std::string_view rest = value;
        while (!rest.empty()) {
            const std::size_t comma = rest.find(',');
            const std::string_view item = trim(rest.substr(0, comma));
            if (!item.empty()) cfg.axis_values.push_back(parse_double(key, item));
            if (comma == std::string_view::npos) break;
            rest.remove_prefix(comma + 1);
        }
    } else if (key == "output.path") {
        cfg.out_path = value;
    } else if (key == "output.format") {
        if (value != "json" && value != "csv")
            throw ParseError("setting output.format: expected json or csv", 0);
        cfg.out_format = value;
    } else {
        throw ParseError("unknown setting: " + std::string(key), 0);
    }
}

ExperimentConfig load_config(const std::filesystem::path& file) {
    std::ifstream in(file);
    if (!in) throw InvalidArgumentError("cannot open config file: " + file.string());

    ExperimentConfig cfg;
    std::string section = "experiment";
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::string_view text = trim(line);
        if (text.empty() || text.front() == '#' || text.front() == ';') continue;
        if (text.front() == '[') {
            if (text.back() != ']')
                throw ParseError("config line " + std::to_string(lineno) +
                                 ": unterminated section header", 0);
            section = std::string(trim(text.substr(1, text.size() - 2)));
            continue;
        }
        const std::size_t eq = text.find('=');
        if (eq == std::string_view::npos)
            throw ParseError("config line " + std::to_string(lineno) +
                             ": expected key = value", 0);
        const std::string key = section + "." + std::string(trim(text.substr(0, eq)));
        apply_setting(cfg, key, text.substr(eq + 1));
    }
    return cfg;
}

void validate_config(const ExperimentConfig& cfg) {
    static const std::set<std::string_view> commands = {
        "solve", "forward", "spde-eval", "control-check", "lq", "convergence-study"};
    if (!commands.contains(cfg.command))
        throw InvalidArgumentError("unknown command: " + cfg.command);
    if (!cfg.preset.empty()) (void)find_preset(cfg.preset);
    if (cfg.horizon < 0.0)
        throw InvalidArgumentError("grid.horizon must be positive");
    if (!(cfg.picard_tol > 0.0))
        throw InvalidArgumentError("tolerances.picard must be positive");
    if (!(cfg.mp_tol > 0.0))
        throw InvalidArgumentError("tolerances.mp must be positive");
    if (cfg.max_iter == 0)
        throw InvalidArgumentError("tolerances.max_iter must be at least 1");
    if (cfg.solver.basis_degree < 0)
        throw InvalidArgumentError("solver.basis_degree must be nonnegative");
    if (cfg.solver.ridge < 0.0)
        throw InvalidArgumentError("solver.ridge must be nonnegative");
    if (cfg.eps < 0.0)
        throw InvalidArgumentError("check.eps must be nonnegative");
    if (cfg.command == "convergence-study") {
        static const std::set<std::string_view> axes = {"steps", "particles", "epsilon"};
        if (!axes.contains(cfg.axis))
            throw InvalidArgumentError("study.axis must be steps, particles or epsilon");
        if (cfg.axis_values.size() < 3)
            throw InvalidArgumentError("study.values needs at least three entries");
        for (double v : cfg.axis_values)
            if (!(v > 0.0))
                throw InvalidArgumentError("study.values must be positive");
    }
}

}  // namespace mfbdsde
