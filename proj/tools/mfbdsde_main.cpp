#include <cstdlib>
#include <exception>
#include <iostream>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "CLI11.hpp"
#include "mfbdsde/config.hpp"
#include "mfbdsde/errors.hpp"
#include "mfbdsde/presets.hpp"
#include "mfbdsde/runner.hpp"

namespace {

using mfbdsde::ExperimentConfig;

/// One subcommand's raw flag values; everything funnels through
/// apply_setting so the file loader and the flag layer share validation.
struct CommandFlags {
    CLI::App* cmd = nullptr;
    std::string name;
    std::string config_file;
    std::vector<std::pair<std::string, std::string>> dotted;  // flag -> key
    std::vector<std::string> values;
    std::vector<std::string> overrides;  // raw key=value escape hatch

    void add_option(const std::string& flag, const std::string& key,
                    const std::string& help) {
        values.emplace_back();
        cmd->add_option(flag, values.back(), help);
        dotted.emplace_back(flag, key);
    }
};

CommandFlags* make_command(CLI::App& app, std::vector<std::unique_ptr<CommandFlags>>& store,
                           const std::string& name, const std::string& help) {
    auto flags = std::make_unique<CommandFlags>();
    flags->name = name;
    flags->cmd = app.add_subcommand(name, help);
    flags->values.reserve(32);  // addresses must stay stable for CLI11 bindings
    CommandFlags* f = flags.get();
    f->cmd->add_option("--config", f->config_file, "flat key = value settings file");
    f->add_option("--preset", "experiment.preset", "named built-in experiment");
    f->add_option("--seed", "experiment.seed", "base RNG seed");
    f->add_option("--threads", "experiment.threads", "worker thread count");
    f->add_option("--particles", "@particles", "group and per-group counts as MxK");
    f->add_option("--steps", "grid.steps", "time steps");
    f->add_option("--horizon", "grid.horizon", "terminal time");
    f->add_option("--tol", "tolerances.picard", "fixed-point tolerance");
    f->add_option("--mp-tol", "tolerances.mp", "stationarity scan tolerance");
    f->add_option("--max-iter", "tolerances.max_iter", "fixed-point iteration budget");
    f->add_option("--estimator", "solver.estimator", "grouped or pooled regression");
    f->add_option("--basis-degree", "solver.basis_degree", "regression feature degree");
    f->add_option("--ridge", "solver.ridge", "regression ridge weight");
    f->add_option("--out", "output.path", "result file path");
    f->add_option("--format", "output.format", "json or csv");
    f->cmd->add_option("--set", f->overrides,
                       "extra section.key=value settings (repeatable)");
    store.push_back(std::move(flags));
    return f;
}

ExperimentConfig build_config(const CommandFlags& f) {
    ExperimentConfig cfg;
    if (!f.config_file.empty()) cfg = mfbdsde::load_config(f.config_file);
    cfg.command = f.name;

    std::string particles;
    for (std::size_t i = 0; i < f.dotted.size(); ++i) {
        if (f.values[i].empty()) continue;
        if (f.dotted[i].second == "@particles") {
            particles = f.values[i];
            continue;
        }
        mfbdsde::apply_setting(cfg, f.dotted[i].second, f.values[i]);
    }
    if (!particles.empty()) {
        const std::size_t x = particles.find('x');
        if (x == std::string::npos)
            throw mfbdsde::ParseError("--particles expects MxK, e.g. 8x1024", 0);
        mfbdsde::apply_setting(cfg, "particles.m", particles.substr(0, x));
        mfbdsde::apply_setting(cfg, "particles.k", particles.substr(x + 1));
    }
    for (const std::string& kv : f.overrides) {
        const std::size_t eq = kv.find('=');
        if (eq == std::string::npos)
            throw mfbdsde::ParseError("--set expects section.key=value", 0);
        mfbdsde::apply_setting(cfg, kv.substr(0, eq), kv.substr(eq + 1));
    }
    if (cfg.threads == 0) {
        if (const char* env = std::getenv("MFBDSDE_THREADS"))
            mfbdsde::apply_setting(cfg, "experiment.threads", env);
    }
    return cfg;
}

void print_summary(const mfbdsde::ResultRecord& rec) {
    std::cout << rec.command;
    if (!rec.preset.empty()) std::cout << " preset=" << rec.preset;
    std::cout << " seed=" << rec.seed << '\n';
    std::cout.precision(12);
    for (const auto& [name, value] : rec.scalars)
        std::cout << "  " << name << " = " << value << '\n';
    std::cout << "  wall_seconds = " << rec.wall_seconds << '\n';
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"mean-field backward doubly stochastic equation toolkit"};
    app.require_subcommand(0, 1);
    bool list_presets = false;
    app.add_flag("--list-presets", list_presets, "print the preset library and exit");

    std::vector<std::unique_ptr<CommandFlags>> store;
    make_command(app, store, "solve", "solve the backward system on an ensemble");
    make_command(app, store, "forward", "build the forward population and price it");
    CommandFlags* spde =
        make_command(app, store, "spde-eval", "evaluate the field at one point");
    spde->add_option("--at-t", "query.t", "query time");
    spde->add_option("--at-x", "query.x", "query state");
    CommandFlags* control = make_command(app, store, "control-check",
                                         "perturbation, duality and stationarity checks");
    control->add_option("--eps", "check.eps", "perturbation size");
    CommandFlags* lq =
        make_command(app, store, "lq", "solve the linear-quadratic control problem");
    lq->add_option("--eps", "check.eps", "perturbation size");
    lq->add_option("--perturbations", "check.perturbations", "dominance sample size");
    CommandFlags* study =
        make_command(app, store, "convergence-study", "error table along one axis");
    study->add_option("--axis", "study.axis", "steps, particles or epsilon");
    study->add_option("--values", "study.values", "comma-separated axis values");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    if (list_presets) {
        for (const auto& p : mfbdsde::all_presets())
            std::cout << p.name << ": " << p.summary << '\n';
        return 0;
    }

    CommandFlags* active = nullptr;
    for (auto& f : store)
        if (f->cmd->parsed()) active = f.get();
    if (active == nullptr) {
        std::cout << app.help();
        return 2;
    }

    try {
        const ExperimentConfig cfg = build_config(*active);
        const mfbdsde::ResultRecord rec = mfbdsde::run(cfg);
        print_summary(rec);
        return 0;
    } catch (const mfbdsde::IterationLimitError& e) {
        std::cerr << "error (iteration-limit): " << e.what() << '\n';
        return 4;
    } catch (const mfbdsde::DivergenceError& e) {
        std::cerr << "error (divergence): " << e.what() << '\n';
        return 3;
    } catch (const mfbdsde::SingularSystemError& e) {
        std::cerr << "error (singular-system): " << e.what() << '\n';
        return 3;
    } catch (const mfbdsde::EvalDomainError& e) {
        std::cerr << "error (evaluation): " << e.what() << '\n';
        return 3;
    } catch (const mfbdsde::Error& e) {
        std::cerr << "error (config): " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
}
