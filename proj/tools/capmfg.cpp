// Command-line front end: solve one scenario, reproduce the bundled suite,
// or turn a run directory into plot-ready series.

#include <cstdio>
#include <filesystem>
#include <iostream>

#include <CLI11.hpp>

#include "capmfg/error.hpp"
#include "capmfg/scenario.hpp"

#ifndef CAPMFG_SCENARIO_DIR
#define CAPMFG_SCENARIO_DIR "scenarios"
#endif

namespace fs = std::filesystem;
using namespace capmfg;

namespace {

int cmd_solve(const std::string& config_file, const std::string& method, const std::string& out) {
    ScenarioConfig c = load_scenario(config_file);
    if (!method.empty()) {
        nlohmann::json doc = to_json(c);
        doc["method"] = method;
        c = parse_scenario(doc);
    }
    const fs::path dir = !out.empty() ? fs::path(out) : !c.outputs.empty() ? fs::path(c.outputs) : fs::path("runs") / c.name;
    const RunResult r = run_scenario(c, dir);
    std::cout << c.name << ": " << r.manifest.status << " in " << r.manifest.wall_seconds << " s -> " << dir.string()
              << "\n";
    for (const auto& [k, v] : r.manifest.summary) std::cout << "  " << k << " = " << v << "\n";
    return 0;
}

int cmd_reproduce(const std::string& dir, const std::string& filter, const std::string& out) {
    const ReproReport rep = reproduce(dir, filter, out);
    std::printf("%-32s %-34s %-26s %-16s %s\n", "scenario", "metric", "target", "value", "result");
    for (const auto& r : rep.rows) {
        std::printf("%-32s %-34s %-26s %-16.10g %s%s%s\n", r.scenario.c_str(), r.metric.c_str(), r.bound.c_str(),
                    r.value, r.pass ? "PASS" : "FAIL", r.note.empty() ? "" : "  ", r.note.c_str());
    }
    std::printf("suite wall time %.1f s; %s\n", rep.wall_seconds, rep.all_pass() ? "all rows pass" : "some rows fail");
    return rep.all_pass() ? 0 : 1;
}

int cmd_plotdata(const std::string& run) {
    for (const auto& p : emit_plotdata(run)) std::cout << p.string() << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Capacity-expansion mean field game solver"};
    app.require_subcommand(1);

    std::string config, method, out;
    auto* solve = app.add_subcommand("solve", "Solve one scenario file");
    solve->add_option("--config", config, "scenario JSON")->required()->check(CLI::ExistingFile);
    solve->add_option("--method", method, "override: shooting, semi_explicit, ansatz or fd");
    solve->add_option("--out", out, "run directory");

    std::string scen_dir = CAPMFG_SCENARIO_DIR, filter, repro_out = "runs";
    auto* repro = app.add_subcommand("reproduce", "Run the bundled scenarios and check their targets");
    repro->add_option("--filter", filter, "only scenarios whose name contains this");
    repro->add_option("--scenarios", scen_dir, "scenario directory");
    repro->add_option("--out", repro_out, "root for run directories");

    std::string run;
    auto* plot = app.add_subcommand("emit-plotdata", "Write plot-ready series for a run");
    plot->add_option("--run", run, "run directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    try {
        if (*solve) return cmd_solve(config, method, out);
        if (*repro) return cmd_reproduce(scen_dir, filter, repro_out);
        return cmd_plotdata(run);
    } catch (const Error& e) {
        std::cerr << "error (" << to_string(e.kind()) << "): " << e.what() << "\n";
        return exit_code(e.kind());
    } catch (const nlohmann::json::exception& e) {
        std::cerr << "error (io): " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 4;
    }
}
