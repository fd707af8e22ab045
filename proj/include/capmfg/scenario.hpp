#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "capmfg/homogeneous.hpp"
#include "capmfg/mfg.hpp"

namespace capmfg {

enum class ModelKind { homogeneous, heterogeneous, stochastic };
enum class SolveMethod { shooting, semi_explicit, ansatz, fd };

/// A reproduction target. Exactly one of (target, tol), max or min applies.
/// `against` names another scenario for the cross-run metrics.
struct Check {
    std::string metric;
    std::optional<double> target, tol, max, min;
    std::string against;

    friend bool operator==(const Check&, const Check&) = default;
};

struct ScenarioConfig {
    std::string name;
    std::string comment;
    ModelParams params;  ///< base units
    PriceFunction price{LinearPrice{1.0, 1.0}};
    ModelKind model = ModelKind::homogeneous;
    SolveMethod method = SolveMethod::shooting;
    ShootingOptions shooting;
    MfgOptions mfg;  ///< grids, m0 and outer-loop knobs; also n_t for the ODE runs
    std::string outputs;  ///< run directory; empty means runs/<name>
    std::vector<Check> checks;

    friend bool operator==(const ScenarioConfig&, const ScenarioConfig&) = default;
};

/// Validates and converts. The `params` member is a parameter document with
/// unit tags; errors name the offending field path.
ScenarioConfig parse_scenario(const nlohmann::json& doc);
/// Base-unit form; parse_scenario(to_json(c)) == c.
nlohmann::json to_json(const ScenarioConfig& config);
ScenarioConfig load_scenario(const std::filesystem::path& file);

std::string sha256_hex(const std::string& bytes);

struct FileDigest {
    std::string name;
    std::string sha256;
};

struct RunManifest {
    std::string name;
    std::string config_hash;  ///< sha256 of the canonical config
    std::string tool_version;
    double wall_seconds = 0.0;
    bool converged = false;
    std::string status;  ///< "ok" or the error text
    std::map<std::string, double> summary;
    std::vector<FileDigest> files;
};

nlohmann::json to_json(const RunManifest& manifest);

/// Series kept in memory for cross-run comparisons.
struct RunSeries {
    std::vector<double> t, X, K, x_star;
    double t_star = 0.0;
};

struct RunResult {
    RunManifest manifest;
    RunSeries series;
};

/// Solves, writes the outputs and manifest.json into `out_dir`, and returns
/// the manifest. A solver that stops short still writes its partial outputs
/// before the Error{convergence} propagates.
RunResult run_scenario(const ScenarioConfig& config, const std::filesystem::path& out_dir);

/// Plot-ready CSVs from a run directory: capacity and installation rate, plus
/// threshold and density snapshots at t = 0 and t = T for population runs.
/// Returns the written paths.
std::vector<std::filesystem::path> emit_plotdata(const std::filesystem::path& run_dir);

struct ReproRow {
    std::string scenario;
    std::string metric;
    std::string bound;  ///< human-readable target
    double value = 0.0;
    bool pass = false;
    std::string note;
};

struct ReproReport {
    std::vector<ReproRow> rows;
    double wall_seconds = 0.0;
    bool all_pass() const;
};

/// Runs every scenario file in `dir` whose name contains `filter`, then
/// evaluates the checks. Runs that fail keep their rows, marked failed.
ReproReport reproduce(const std::filesystem::path& dir, const std::string& filter,
                      const std::filesystem::path& out_root);

/// Exit code for an error kind: 2 validation, 3 solver, 4 io.
int exit_code(ErrorKind kind);

}  // namespace capmfg
