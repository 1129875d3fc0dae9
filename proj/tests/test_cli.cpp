#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "mfbdsde/config.hpp"
#include "mfbdsde/errors.hpp"
#include "mfbdsde/presets.hpp"
#include "mfbdsde/result.hpp"
#include "mfbdsde/runner.hpp"

using namespace mfbdsde;

namespace {

std::filesystem::path temp_file(const std::string& name) {
    return std::filesystem::temp_directory_path() / name;
}

void write_text(const std::filesystem::path& p, const std::string& text) {
    std::ofstream out(p, std::ios::binary);
    out << text;
}

/// Runs the installed binary with sh-quoted arguments; returns the exit code.
int run_cli(const std::string& args) {
    std::string cmd = std::string(MFBDSDE_CLI_PATH) + " " + args + " > /dev/null 2>&1";
    int status = std::system(cmd.c_str());
    if (status < 0) return -1;
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST_CASE("config file parses sections, comments, and quotes") {
    auto p = temp_file("mfbdsde_cli_cfg1.ini");
    write_text(p,
               "# comment line\n"
               "command = solve\n"
               "[grid]\n"
               "steps = 32\n"
               "horizon = 2.0\n"
               "; another comment\n"
               "[particles]\n"
               "m = 4\n"
               "k = 16\n"
               "[coefficients]\n"
               "theta_f = \"0.5*y + 0.5*yp\"\n"
               "[experiment]\n"
               "preset = linear-mean\n"
               "seed = 9\n");
    ExperimentConfig cfg = load_config(p);
    CHECK(cfg.command == "solve");
    CHECK(cfg.preset == "linear-mean");
    CHECK(cfg.seed == 9);
    CHECK(cfg.n_steps == 32);
    CHECK(cfg.horizon == 2.0);
    CHECK(cfg.m_outer == 4);
    CHECK(cfg.k_inner == 16);
    CHECK(cfg.coefficients.at("theta_f") == "0.5*y + 0.5*yp");
    std::filesystem::remove(p);
}

TEST_CASE("config parse errors carry the line number") {
    auto p = temp_file("mfbdsde_cli_cfg2.ini");
    write_text(p, "command = solve\nsteps 32\n");
    CHECK_THROWS_AS(load_config(p), ParseError);
    try {
        load_config(p);
    } catch (const ParseError& e) {
        CHECK(std::string(e.what()).find("line 2") != std::string::npos);
    }
    std::filesystem::remove(p);
    CHECK_THROWS_AS(load_config(temp_file("mfbdsde_no_such_file.ini")),
                    InvalidArgumentError);
}

TEST_CASE("apply_setting dispatches dotted keys and rejects unknown ones") {
    ExperimentConfig cfg;
    apply_setting(cfg, "experiment.command", "lq");
    apply_setting(cfg, "tolerances.picard", "1e-6");
    apply_setting(cfg, "tolerances.max_iter", "12");
    apply_setting(cfg, "solver.estimator", "pooled");
    apply_setting(cfg, "solver.ridge", "1e-5");
    apply_setting(cfg, "solver.center_z", "false");
    apply_setting(cfg, "query.t", "0.25");
    apply_setting(cfg, "check.eps", "0.05");
    apply_setting(cfg, "study.axis", "steps");
    apply_setting(cfg, "study.values", "8, 16, 32");
    apply_setting(cfg, "output.format", "csv");
    CHECK(cfg.command == "lq");
    CHECK(cfg.picard_tol == 1e-6);
    CHECK(cfg.max_iter == 12);
    CHECK(cfg.solver.estimator == Estimator::pooled);
    CHECK(cfg.estimator_set);
    CHECK(cfg.solver.ridge == 1e-5);
    CHECK_FALSE(cfg.solver.center_z);
    CHECK(cfg.query_t == 0.25);
    CHECK(cfg.eps == 0.05);
    CHECK(cfg.axis == "steps");
    REQUIRE(cfg.axis_values.size() == 3);
    CHECK(cfg.axis_values[2] == 32.0);
    CHECK(cfg.out_format == "csv");

    CHECK_THROWS_AS(apply_setting(cfg, "experiment.bogus", "1"), ParseError);
    CHECK_THROWS_AS(apply_setting(cfg, "nosection.key", "1"), ParseError);
    CHECK_THROWS_AS(apply_setting(cfg, "grid.steps", "many"), ParseError);
    CHECK_THROWS_AS(apply_setting(cfg, "solver.estimator", "fancy"), ParseError);
    CHECK_THROWS_AS(apply_setting(cfg, "output.format", "xml"), ParseError);
}

TEST_CASE("validate_config rejects inconsistent experiments") {
    ExperimentConfig cfg;
    cfg.command = "simulate";
    CHECK_THROWS_AS(validate_config(cfg), InvalidArgumentError);

    cfg.command = "solve";
    cfg.preset = "constant";
    validate_config(cfg);

    cfg.preset = "no-such-preset";
    CHECK_THROWS_AS(validate_config(cfg), InvalidArgumentError);

    cfg.preset = "constant";
    cfg.command = "convergence-study";
    cfg.axis = "seed";
    cfg.axis_values = {1, 2, 3};
    CHECK_THROWS_AS(validate_config(cfg), InvalidArgumentError);

    cfg.axis = "steps";
    cfg.axis_values = {8, 16};
    CHECK_THROWS_AS(validate_config(cfg), InvalidArgumentError);

    cfg.axis_values = {8, 16, 32};
    validate_config(cfg);
}

TEST_CASE("presets are listed and resolvable") {
    auto all = all_presets();
    CHECK(all.size() >= 8);
    for (const auto& p : all) {
        CHECK_FALSE(p.name.empty());
        CHECK_FALSE(p.summary.empty());
        CHECK(&find_preset(p.name) == &p);
    }
    CHECK_THROWS_AS(find_preset("missing"), InvalidArgumentError);
}

TEST_CASE("result records round-trip through json and csv byte-stably") {
    ResultRecord rec;
    rec.command = "solve";
    rec.preset = "constant";
    rec.seed = 17;
    rec.wall_seconds = 0.125;
    rec.scalars["y0_mean"] = 1.0 / 3.0;
    rec.scalars["y0_se"] = 5e-324;  // denormal survives the round-trip
    rec.scalars["neg"] = -1.2345678901234567e-100;
    rec.series.emplace_back("t", std::vector<double>{0.0, 0.5, 1.0});
    rec.series.emplace_back("y_mean", std::vector<double>{1.0, 0.25, -0.125});
    rec.config_echo["experiment.preset"] = "constant";
    rec.config_echo["note"] = "quote \" and, comma";

    for (const char* fmt : {"json", "csv"}) {
        std::ostringstream out;
        if (std::string(fmt) == "json")
            write_json(rec, out);
        else
            write_csv(rec, out);
        std::istringstream in(out.str());
        ResultRecord back =
            std::string(fmt) == "json" ? read_json(in) : read_csv(in);
        CHECK(back.command == rec.command);
        CHECK(back.preset == rec.preset);
        CHECK(back.seed == rec.seed);
        CHECK(back.version == rec.version);
        REQUIRE(back.scalars.size() == rec.scalars.size());
        for (const auto& [k, v] : rec.scalars) CHECK(back.scalars.at(k) == v);
        REQUIRE(back.series.size() == rec.series.size());
        for (std::size_t s = 0; s < rec.series.size(); ++s) {
            CHECK(back.series[s].first == rec.series[s].first);
            CHECK(back.series[s].second == rec.series[s].second);
        }
        CHECK(back.config_echo == rec.config_echo);

        // Writing the reloaded record reproduces the file byte for byte.
        std::ostringstream again;
        if (std::string(fmt) == "json")
            write_json(back, again);
        else
            write_csv(back, again);
        CHECK(again.str() == out.str());
    }
}

TEST_CASE("csv loader rejects malformed input") {
    std::istringstream bad_header("wrong,header\n");
    CHECK_THROWS_AS(read_csv(bad_header), ParseError);
    std::istringstream empty("");
    CHECK_THROWS_AS(read_csv(empty), ParseError);
    std::istringstream bad_json("{ not json");
    CHECK_THROWS_AS(read_json(bad_json), ParseError);
}

TEST_CASE("runner solves the constant preset exactly") {
    ExperimentConfig cfg;
    cfg.command = "solve";
    cfg.preset = "constant";
    cfg.m_outer = 2;
    cfg.k_inner = 32;
    cfg.n_steps = 8;
    ResultRecord rec = run(cfg);
    CHECK(rec.scalars.at("y0_mean") == 1.0);
    CHECK(rec.scalars.at("y0_se") == 0.0);
    CHECK(rec.scalars.at("rel_error") == 0.0);
    CHECK(rec.scalars.at("picard_iterations") >= 1.0);
    CHECK(rec.config_echo.at("experiment.preset") == "constant");
    CHECK(rec.config_echo.at("grid.steps") == "8");
}

TEST_CASE("runner output is bitwise deterministic across repeats") {
    ExperimentConfig cfg;
    cfg.command = "solve";
    cfg.preset = "linear-mean";
    cfg.m_outer = 4;
    cfg.k_inner = 64;
    cfg.n_steps = 16;
    cfg.seed = 123;
    ResultRecord a = run(cfg);
    ResultRecord b = run(cfg);
    REQUIRE(a.scalars.size() == b.scalars.size());
    for (const auto& [k, v] : a.scalars) CHECK(b.scalars.at(k) == v);
    REQUIRE(a.series.size() == b.series.size());
    for (std::size_t s = 0; s < a.series.size(); ++s)
        CHECK(a.series[s].second == b.series[s].second);
}

TEST_CASE("coefficient overrides replace preset slots") {
    ExperimentConfig cfg;
    cfg.command = "solve";
    cfg.preset = "constant";
    cfg.coefficients["xi"] = "2.5";
    cfg.m_outer = 2;
    cfg.k_inner = 16;
    cfg.n_steps = 8;
    ResultRecord rec = run(cfg);
    CHECK(rec.scalars.at("y0_mean") == 2.5);
    // Overriding a slot drops the preset oracle.
    CHECK(rec.scalars.count("oracle_y0") == 0);
}

TEST_CASE("study over steps on a flat preset reports zero error") {
    ExperimentConfig cfg;
    cfg.command = "convergence-study";
    cfg.preset = "constant";
    cfg.axis = "steps";
    cfg.axis_values = {8, 16, 32};
    cfg.m_outer = 2;
    cfg.k_inner = 16;
    ResultRecord rec = run(cfg);
    CHECK(rec.scalars.at("slope") == 0.0);
    const std::vector<double>* errors = nullptr;
    for (const auto& [name, vals] : rec.series)
        if (name == "error") errors = &vals;
    REQUIRE(errors != nullptr);
    REQUIRE(errors->size() == 3);
    for (double e : *errors) CHECK(e == 0.0);
}

TEST_CASE("study preconditions are enforced") {
    ExperimentConfig cfg;
    cfg.command = "convergence-study";
    cfg.preset = "control-linear";  // no closed-form reference value
    cfg.axis = "steps";
    cfg.axis_values = {8, 16, 32};
    CHECK_THROWS_AS(run(cfg), InvalidArgumentError);

    cfg.preset = "constant";  // no control block
    cfg.axis = "epsilon";
    cfg.axis_values = {0.2, 0.1, 0.05};
    CHECK_THROWS_AS(run(cfg), InvalidArgumentError);
}

TEST_CASE("emitted files reload through the matching reader") {
    for (const char* fmt : {"json", "csv"}) {
        ExperimentConfig cfg;
        cfg.command = "solve";
        cfg.preset = "constant";
        cfg.m_outer = 2;
        cfg.k_inner = 16;
        cfg.n_steps = 8;
        cfg.out_format = fmt;
        auto p = temp_file(std::string("mfbdsde_cli_out.") + fmt);
        cfg.out_path = p.string();
        ResultRecord rec = run(cfg);
        std::ifstream in(p, std::ios::binary);
        REQUIRE(in.good());
        ResultRecord back = std::string(fmt) == "json" ? read_json(in) : read_csv(in);
        CHECK(back.scalars.at("y0_mean") == rec.scalars.at("y0_mean"));
        CHECK(back.command == "solve");
        std::filesystem::remove(p);
    }
}

TEST_CASE("binary maps outcomes to the documented exit codes") {
    CHECK(run_cli("solve --preset constant --steps 8 --particles 2x16") == 0);
    CHECK(run_cli("--list-presets") == 0);
    CHECK(run_cli("--help") == 0);
    CHECK(run_cli("") == 2);                              // missing subcommand
    CHECK(run_cli("solve --no-such-flag") == 2);          // unknown flag
    CHECK(run_cli("solve --preset no-such") == 2);        // unknown preset
    CHECK(run_cli("solve --config /no/such/file.ini") == 2);
    // Starved iteration budget on a coupled preset.
    CHECK(run_cli("solve --preset linear-mean --steps 16 --particles 2x32 "
                  "--max-iter 1 --tol 1e-14") == 4);
}

TEST_CASE("binary writes a loadable result file") {
    auto p = temp_file("mfbdsde_cli_emit.json");
    std::filesystem::remove(p);
    REQUIRE(run_cli("solve --preset constant --steps 8 --particles 2x16 --out " +
                    p.string()) == 0);
    std::ifstream in(p, std::ios::binary);
    REQUIRE(in.good());
    ResultRecord rec = read_json(in);
    CHECK(rec.scalars.at("y0_mean") == 1.0);
    CHECK(rec.version == result_schema_version);
    std::filesystem::remove(p);
}
