#include "capmfg/scenario.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include <openssl/evp.h>

#include "capmfg/error.hpp"
#include "capmfg/stochastic.hpp"

namespace capmfg {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kToolVersion = "capmfg 0.1.0";

// ---------------------------------------------------------------------------
// enum <-> string

template <typename E>
struct EnumName {
    E value;
    const char* name;
};

constexpr EnumName<ModelKind> kModels[] = {
    {ModelKind::homogeneous, "homogeneous"}, {ModelKind::heterogeneous, "heterogeneous"},
    {ModelKind::stochastic, "stochastic"}};
constexpr EnumName<SolveMethod> kMethods[] = {{SolveMethod::shooting, "shooting"},
                                              {SolveMethod::semi_explicit, "semi_explicit"},
                                              {SolveMethod::ansatz, "ansatz"},
                                              {SolveMethod::fd, "fd"}};
constexpr EnumName<OuterSolver> kOuter[] = {{OuterSolver::picard, "picard"},
                                            {OuterSolver::newton_krylov, "newton_krylov"}};
constexpr EnumName<RateUpdate> kRate[] = {{RateUpdate::incoming, "incoming"}, {RateUpdate::local, "local"}};
constexpr EnumName<PriceCoupling> kCoupling[] = {{PriceCoupling::individual, "individual"},
                                                 {PriceCoupling::homogeneous_reduction, "homogeneous_reduction"}};
constexpr EnumName<HjbScheme> kScheme[] = {{HjbScheme::central, "central"}, {HjbScheme::upwind, "upwind"}};
constexpr EnumName<InitialDensitySpec::Kind> kDensity[] = {
    {InitialDensitySpec::Kind::truncated_exponential, "truncated_exponential"},
    {InitialDensitySpec::Kind::dirac, "dirac"},
    {InitialDensitySpec::Kind::custom, "custom"}};

template <typename E, std::size_t K>
const char* name_of(const EnumName<E> (&table)[K], E v) {
    for (const auto& e : table) {
        if (e.value == v) return e.name;
    }
    return "?";
}

template <typename E, std::size_t K>
E parse_enum(const EnumName<E> (&table)[K], const std::string& s, const std::string& path) {
    std::string allowed;
    for (const auto& e : table) {
        if (s == e.name) return e.value;
        allowed += allowed.empty() ? "" : ", ";
        allowed += e.name;
    }
    fail(ErrorKind::validation, "field '" + path + "': unknown value '" + s + "' (expected one of " + allowed + ")");
}

// ---------------------------------------------------------------------------
// strict object reader: every key must be consumed

class Reader {
public:
    Reader(const json& obj, std::string path) : obj_(obj), path_(std::move(path)) {
        if (!obj_.is_object()) fail(ErrorKind::validation, "field '" + where() + "' must be an object");
    }

    std::string at(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }
    bool has(const std::string& key) {
        seen_.insert(key);
        return obj_.contains(key);
    }
    const json& raw(const std::string& key) {
        if (!has(key)) fail(ErrorKind::validation, "missing field '" + at(key) + "'");
        return obj_.at(key);
    }
    double number(const std::string& key, double fallback) {
        if (!has(key)) return fallback;
        const json& v = obj_.at(key);
        if (!v.is_number()) fail(ErrorKind::validation, "field '" + at(key) + "' must be a number");
        return v.get<double>();
    }
    std::optional<double> optional_number(const std::string& key) {
        if (!has(key)) return std::nullopt;
        return number(key, 0.0);
    }
    long integer(const std::string& key, long fallback) {
        if (!has(key)) return fallback;
        const json& v = obj_.at(key);
        if (!v.is_number_integer()) fail(ErrorKind::validation, "field '" + at(key) + "' must be an integer");
        return v.get<long>();
    }
    bool boolean(const std::string& key, bool fallback) {
        if (!has(key)) return fallback;
        const json& v = obj_.at(key);
        if (!v.is_boolean()) fail(ErrorKind::validation, "field '" + at(key) + "' must be true or false");
        return v.get<bool>();
    }
    std::string string(const std::string& key, const std::string& fallback, bool required = false) {
        if (!has(key)) {
            if (required) fail(ErrorKind::validation, "missing field '" + at(key) + "'");
            return fallback;
        }
        const json& v = obj_.at(key);
        if (!v.is_string()) fail(ErrorKind::validation, "field '" + at(key) + "' must be a string");
        return v.get<std::string>();
    }
    void finish() const {
        for (const auto& [key, value] : obj_.items()) {
            if (!seen_.count(key)) fail(ErrorKind::validation, "unknown field '" + at(key) + "'");
        }
    }

private:
    std::string where() const { return path_.empty() ? "<root>" : path_; }
    const json& obj_;
    std::string path_;
    std::set<std::string> seen_;
};

std::size_t count(long v, long min, const std::string& path) {
    if (v < min) fail(ErrorKind::validation, "field '" + path + "' must be >= " + std::to_string(min));
    return static_cast<std::size_t>(v);
}

// ---------------------------------------------------------------------------
// output helpers

std::string fmt12(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.12g", v);
    return buf;
}

double round12(double v) { return std::isfinite(v) ? std::stod(fmt12(v)) : v; }

// Rounds every number to 12 significant digits before dumping.
json rounded(const json& j) {
    if (j.is_number_float()) return round12(j.get<double>());
    if (j.is_array() || j.is_object()) {
        json out = j;
        for (auto& el : out) el = rounded(el);
        return out;
    }
    return j;
}

class CsvWriter {
public:
    explicit CsvWriter(const std::vector<std::string>& header) {
        for (std::size_t i = 0; i < header.size(); ++i) buf_ << (i ? "," : "") << header[i];
        buf_ << '\n';
    }
    void row(std::initializer_list<double> values) {
        bool first = true;
        for (double v : values) {
            buf_ << (first ? "" : ",") << fmt12(v);
            first = false;
        }
        buf_ << '\n';
    }
    std::string str() const { return buf_.str(); }

private:
    std::ostringstream buf_;
};

void write_file(const fs::path& file, const std::string& bytes) {
    std::ofstream out(file, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorKind::io, "cannot open '" + file.string() + "' for writing");
    out << bytes;
    if (!out) fail(ErrorKind::io, "write to '" + file.string() + "' failed");
}

std::string read_file(const fs::path& file) {
    std::ifstream in(file, std::ios::binary);
    if (!in) fail(ErrorKind::io, "cannot read '" + file.string() + "'");
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

// Accumulates the file inventory of a run.
struct Emitter {
    fs::path dir;
    std::vector<FileDigest> files;

    void emit(const std::string& name, const std::string& bytes) {
        write_file(dir / name, bytes);
        files.push_back({name, sha256_hex(bytes)});
    }
    void emit_json(const std::string& name, const json& j) { emit(name, rounded(j).dump(2) + "\n"); }
};

double sup_rel(std::span<const double> a, std::span<const double> ref) {
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        num = std::max(num, std::abs(a[i] - ref[i]));
        den = std::max(den, std::abs(ref[i]));
    }
    return den > 0 ? num / den : num;
}

// max |dX/dt| over [a, b] by centred differences.
double max_slope(const UniformGrid& g, std::span<const double> X, double a, double b) {
    double m = 0.0;
    for (std::size_t n = 1; n + 1 < g.size(); ++n) {
        if (g[n] < a || g[n] > b) continue;
        m = std::max(m, std::abs(X[n + 1] - X[n - 1]) / (2 * g.step()));
    }
    return m;
}

json grids_json(const Grids& g) {
    return json{{"n_t", g.t.size()}, {"T", g.t.hi()}, {"n_x", g.x.size()}, {"x_max", g.x.hi()}};
}

// ---------------------------------------------------------------------------
// runs

struct Outcome {
    std::map<std::string, double> summary;
    RunSeries series;
    bool converged = false;
    std::string status = "ok";
};

Outcome run_homogeneous(const ScenarioConfig& c, Emitter& out) {
    const UniformGrid grid(0.0, c.params.T, c.mfg.n_t);
    HomogeneousSolution sol;
    json meta{{"model", "homogeneous"}, {"method", name_of(kMethods, c.method)}, {"sigma", 0.0}};
    if (c.method == SolveMethod::semi_explicit) {
        const SemiExplicitResult res = semi_explicit_linear(c.params, c.price, grid);
        sol = res.solution;
        const auto& k = res.coeffs;
        meta["coefficients"] = {{"theta", k.theta}, {"r1", k.r1},       {"r2", k.r2},
                                {"C", k.Cc},        {"D", k.Dd},        {"residual", k.residual}};
    } else {
        sol = shoot(c.params, c.price, grid, c.shooting);
    }

    CsvWriter csv({"t", "X", "u", "K"});
    for (std::size_t n = 0; n < grid.size(); ++n) csv.row({grid[n], sol.X[n], sol.u[n], sol.K[n]});
    out.emit("solution.csv", csv.str());
    out.emit_json("solution.json", {{"t_star", sol.t_star}, {"u0", sol.u0}, {"residual", sol.residual}});

    const LemmaReport lem = verify_lemmas(sol, c.params, c.price);
    meta["iterations"] = sol.iterations;
    meta["t_star"] = sol.t_star;
    meta["extended_precision"] = sol.extended_precision;
    meta["grids"] = {{"n_t", grid.size()}, {"T", grid.hi()}};
    meta["lemmas"] = {{"single_crossing", lem.single_crossing},
                      {"price_above_cost", lem.price_above_cost},
                      {"lower_bound", lem.lower_bound},
                      {"min_price_margin", lem.min_price_margin}};
    out.emit_json("meta.json", meta);

    Outcome o;
    o.converged = true;
    o.series = {grid.nodes(), sol.X, sol.K, {}, sol.t_star};
    auto& s = o.summary;
    s["t_star"] = sol.t_star;
    s["T_minus_t_star"] = c.params.T - sol.t_star;
    s["u0"] = sol.u0;
    s["residual"] = sol.residual;
    s["iterations"] = sol.iterations;
    s["single_crossing"] = lem.single_crossing;
    s["price_above_cost"] = lem.price_above_cost;
    s["lower_bound"] = lem.lower_bound;
    if (c.params.T >= 10) {
        const double early = max_slope(grid, sol.X, 0.0, 1.0);
        s["turnpike_ratio"] = early > 0 ? max_slope(grid, sol.X, 5.0, 10.0) / early : 0.0;
    }
    return o;
}

Outcome run_population(const ScenarioConfig& c, Emitter& out) {
    MfgOptions o = c.mfg;
    o.method = c.method == SolveMethod::fd ? MfgMethod::fd : MfgMethod::ansatz;
    const double sigma = c.model == ModelKind::stochastic ? c.params.sigma : 0.0;
    if (c.model == ModelKind::stochastic) check_sigma(c.params);
    const MeanFieldEquilibrium eq = solve_mfg_partial(c.params, c.price, o, sigma);
    const EquilibriumReport rep = equilibrium_diagnostics(eq, c.params, c.price);
    const auto& g = eq.grids;
    const std::size_t n_t = g.t.size(), n_x = g.x.size();

    CsvWriter eqcsv({"t", "xbar", "nubar", "x_star", "X_total", "K_total"});
    for (std::size_t n = 0; n < n_t; ++n) {
        eqcsv.row({g.t[n], eq.xbar[n], eq.nubar[n], eq.x_star[n], rep.X_total[n], rep.K_total[n]});
    }
    out.emit("equilibrium.csv", eqcsv.str());

    // long form on every stride-th layer, the last layer always included
    const std::size_t stride = std::max<std::size_t>(1, (n_t - 1) / 100);
    auto layers = [&] {
        std::vector<std::size_t> idx;
        for (std::size_t n = 0; n < n_t; n += stride) idx.push_back(n);
        if (idx.back() != n_t - 1) idx.push_back(n_t - 1);
        return idx;
    }();
    CsvWriter dens({"t", "x", "m"});
    for (std::size_t n : layers) {
        for (std::size_t j = 0; j < n_x; ++j) dens.row({g.t[n], g.x[j], eq.m(n, j)});
    }
    out.emit("density.csv", dens.str());
    if (!eq.V.empty()) {
        CsvWriter val({"t", "x", "V", "Vx"});
        for (std::size_t n : layers) {
            for (std::size_t j = 0; j < n_x; ++j) val.row({g.t[n], g.x[j], eq.V(n, j), eq.Vx(n, j)});
        }
        out.emit("value.csv", val.str());
    }

    json meta{{"model", name_of(kModels, c.model)},
              {"method", name_of(kMethods, c.method)},
              {"sigma", sigma},
              {"converged", eq.converged},
              {"iterations", eq.iterations},
              {"evaluations", eq.evaluations},
              {"residual_history", eq.residual_history},
              {"t_star", eq.t_star},
              {"grids", grids_json(g)},
              {"output_layer_stride", stride},
              {"fp_substeps", eq.fp_substeps},
              {"m0", {{"convention", eq.m0.convention}, {"mean", eq.m0.mean}, {"scale", eq.m0.scale}}},
              {"diagnostics",
               {{"monotonicity_violations", rep.monotonicity_violations},
                {"concavity_violations", rep.concavity_violations},
                {"max_mass_drift", rep.max_mass_drift},
                {"min_density", rep.min_density},
                {"x_star_at_T", rep.x_star_at_T},
                {"x_star_zero_after_t_star", rep.x_star_zero_after_t_star},
                {"pasting_gap", rep.pasting_gap}}}};
    out.emit_json("meta.json", meta);

    Outcome oc;
    oc.converged = eq.converged;
    if (!eq.converged) {
        oc.status = "fixed point not converged after " + std::to_string(eq.iterations) + " iterations";
    }
    oc.series = {g.t.nodes(), rep.X_total, rep.K_total, eq.x_star, eq.t_star};
    auto& s = oc.summary;
    s["t_star"] = eq.t_star;
    s["iterations"] = eq.iterations;
    s["residual"] = eq.residual_history.back();
    s["converged"] = eq.converged;
    s["max_mass_drift"] = rep.max_mass_drift;
    s["min_density"] = rep.min_density;
    s["monotonicity_violations"] = rep.monotonicity_violations;
    s["concavity_violations"] = rep.concavity_violations;
    s["x_star_at_T"] = rep.x_star_at_T;
    s["x_star_zero_after_t_star"] = rep.x_star_zero_after_t_star;
    s["max_x_star"] = *std::max_element(eq.x_star.begin(), eq.x_star.end());
    s["pasting_gap"] = rep.pasting_gap;
    if (c.price.is_linear() && eq.coeffs.b.size() == n_t) {
        s["b_at_t_star_rel"] = std::abs(interpolate(g.t, eq.coeffs.b, eq.t_star) - c.params.alpha) / c.params.alpha;
    }
    const auto peak = std::max_element(rep.K_total.begin(), rep.K_total.end()) - rep.K_total.begin();
    s["K_peak_time_frac"] = g.t[static_cast<std::size_t>(peak)] / c.params.T;
    return oc;
}

}  // namespace

// ---------------------------------------------------------------------------

ScenarioConfig parse_scenario(const json& doc) {
    Reader root(doc, "");
    ScenarioConfig c;
    c.name = root.string("name", "", true);
    if (c.name.empty()) fail(ErrorKind::validation, "field 'name' must not be empty");
    c.comment = root.string("comment", "");
    c.model = parse_enum(kModels, root.string("model", "", true), "model");
    c.method = parse_enum(kMethods, root.string("method", "", true), "method");

    const json& params = root.raw("params");
    if (!params.is_object()) fail(ErrorKind::validation, "field 'params' must be an object");
    if (!params.contains("price")) fail(ErrorKind::validation, "missing field 'params.price'");
    try {
        json flat = params;
        flat.erase("price");
        flat.erase("units");
        for (const auto& [key, value] : flat.items()) {
            static const std::set<std::string> known{"r", "delta", "T", "h", "alpha", "beta",
                                                     "beta_inv", "c", "N", "X0", "sigma"};
            if (!known.count(key)) fail(ErrorKind::validation, "unknown field '" + key + "'");
        }
        c.params = normalize_params(params);
        c.price = normalize_price(params);
    } catch (const Error& e) {
        fail(e.kind(), std::string("params: ") + e.what());
    }

    const bool homogeneous = c.model == ModelKind::homogeneous;
    const bool ode_method = c.method == SolveMethod::shooting || c.method == SolveMethod::semi_explicit;
    if (homogeneous != ode_method) {
        fail(ErrorKind::validation, std::string("field 'method': '") + name_of(kMethods, c.method) +
                                        "' is not available for the " + name_of(kModels, c.model) + " model");
    }
    if ((c.method == SolveMethod::semi_explicit || c.method == SolveMethod::ansatz) && !c.price.is_linear()) {
        fail(ErrorKind::validation, std::string("field 'method': '") + name_of(kMethods, c.method) +
                                        "' requires a linear price");
    }
    if (c.model != ModelKind::stochastic && c.params.sigma != 0) {
        fail(ErrorKind::validation, "field 'params.sigma': nonzero volatility requires model 'stochastic'");
    }

    if (root.has("m0")) {
        Reader m(root.raw("m0"), "m0");
        auto& d = c.mfg.m0;
        d.kind = parse_enum(kDensity, m.string("kind", name_of(kDensity, d.kind)), "m0.kind");
        d.n_levels = static_cast<int>(count(m.integer("n_levels", d.n_levels), 1, "m0.n_levels"));
        d.x_end = m.number("x_end", d.x_end);
        d.x0 = m.number("x0", d.x0);
        if (m.has("table")) {
            const json& t = m.raw("table");
            if (!t.is_array()) fail(ErrorKind::validation, "field 'm0.table' must be an array of [x, mass] pairs");
            for (std::size_t i = 0; i < t.size(); ++i) {
                const json& e = t[i];
                if (!e.is_array() || e.size() != 2 || !e[0].is_number() || !e[1].is_number()) {
                    fail(ErrorKind::validation, "field 'm0.table[" + std::to_string(i) + "]' must be [x, mass]");
                }
                d.table.emplace_back(e[0].get<double>(), e[1].get<double>());
            }
        }
        m.finish();
    }
    if (root.has("grids")) {
        Reader g(root.raw("grids"), "grids");
        c.mfg.n_t = count(g.integer("n_t", static_cast<long>(c.mfg.n_t)), 3, "grids.n_t");
        c.mfg.n_x = count(g.integer("n_x", static_cast<long>(c.mfg.n_x)), 3, "grids.n_x");
        c.mfg.x_inflation = g.number("x_inflation", c.mfg.x_inflation);
        g.finish();
    }
    if (root.has("solver")) {
        Reader s(root.raw("solver"), "solver");
        auto& o = c.mfg;
        c.shooting.tol = s.number("shoot_tol", c.shooting.tol);
        c.shooting.max_iterations =
            static_cast<int>(count(s.integer("shoot_max_iterations", c.shooting.max_iterations), 1,
                                   "solver.shoot_max_iterations"));
        c.shooting.extended_precision = s.boolean("extended_precision", c.shooting.extended_precision);
        o.outer_tol = s.number("outer_tol", o.outer_tol);
        o.max_outer = static_cast<int>(count(s.integer("max_outer", o.max_outer), 1, "solver.max_outer"));
        o.damping = s.number("damping", o.damping);
        o.anderson_depth = static_cast<int>(count(s.integer("anderson_depth", o.anderson_depth), 0,
                                                  "solver.anderson_depth"));
        o.outer = parse_enum(kOuter, s.string("outer", name_of(kOuter, o.outer)), "solver.outer");
        o.krylov_max = static_cast<int>(count(s.integer("krylov_max", o.krylov_max), 1, "solver.krylov_max"));
        o.krylov_tol = s.number("krylov_tol", o.krylov_tol);
        o.rate_update = parse_enum(kRate, s.string("rate_update", name_of(kRate, o.rate_update)),
                                   "solver.rate_update");
        o.coupling = parse_enum(kCoupling, s.string("coupling", name_of(kCoupling, o.coupling)),
                                "solver.coupling");
        o.fp_substep = s.boolean("fp_substep", o.fp_substep);
        o.ansatz_warm_start = s.boolean("ansatz_warm_start", o.ansatz_warm_start);
        o.hjb.scheme = parse_enum(kScheme, s.string("hjb_scheme", name_of(kScheme, o.hjb.scheme)), "solver.hjb_scheme");
        o.hjb.layer_tol = s.number("hjb_layer_tol", o.hjb.layer_tol);
        o.hjb.max_iterations = static_cast<int>(count(s.integer("hjb_max_iterations", o.hjb.max_iterations), 1,
                                                      "solver.hjb_max_iterations"));
        s.finish();
        if (!(o.outer_tol > 0)) fail(ErrorKind::validation, "field 'solver.outer_tol' must be > 0");
        if (!(o.damping > 0 && o.damping <= 1)) fail(ErrorKind::validation, "field 'solver.damping' must lie in (0, 1]");
        if (!(o.krylov_tol > 0 && o.krylov_tol < 1)) {
            fail(ErrorKind::validation, "field 'solver.krylov_tol' must lie in (0, 1)");
        }
        if (!(c.shooting.tol >= 0)) fail(ErrorKind::validation, "field 'solver.shoot_tol' must be >= 0");
    }
    c.outputs = root.string("outputs", "");

    if (root.has("checks")) {
        const json& arr = root.raw("checks");
        if (!arr.is_array()) fail(ErrorKind::validation, "field 'checks' must be an array");
        for (std::size_t i = 0; i < arr.size(); ++i) {
            const std::string path = "checks[" + std::to_string(i) + "]";
            Reader r(arr[i], path);
            Check k;
            k.metric = r.string("metric", "", true);
            k.target = r.optional_number("target");
            k.tol = r.optional_number("tol");
            k.max = r.optional_number("max");
            k.min = r.optional_number("min");
            k.against = r.string("against", "");
            r.finish();
            const int kinds = (k.target || k.tol ? 1 : 0) + (k.max ? 1 : 0) + (k.min ? 1 : 0);
            if (kinds != 1 || (k.target.has_value() != k.tol.has_value())) {
                fail(ErrorKind::validation, "field '" + path + "' needs exactly one of {target, tol}, max or min");
            }
            c.checks.push_back(std::move(k));
        }
    }
    root.finish();
    return c;
}

json to_json(const ScenarioConfig& c) {
    json params = to_json(c.params);
    params["price"] = to_json(c.price);
    const auto& o = c.mfg;
    json table = json::array();
    for (const auto& [x, m] : o.m0.table) table.push_back({x, m});
    json checks = json::array();
    for (const auto& k : c.checks) {
        json j{{"metric", k.metric}};
        if (k.target) j["target"] = *k.target;
        if (k.tol) j["tol"] = *k.tol;
        if (k.max) j["max"] = *k.max;
        if (k.min) j["min"] = *k.min;
        if (!k.against.empty()) j["against"] = k.against;
        checks.push_back(std::move(j));
    }
    json m0{{"kind", name_of(kDensity, o.m0.kind)}, {"n_levels", o.m0.n_levels}, {"x_end", o.m0.x_end},
            {"x0", o.m0.x0}};
    if (!table.empty()) m0["table"] = table;
    return json{
        {"name", c.name},
        {"comment", c.comment},
        {"model", name_of(kModels, c.model)},
        {"method", name_of(kMethods, c.method)},
        {"params", params},
        {"m0", m0},
        {"grids", {{"n_t", o.n_t}, {"n_x", o.n_x}, {"x_inflation", o.x_inflation}}},
        {"solver",
         {{"shoot_tol", c.shooting.tol},
          {"shoot_max_iterations", c.shooting.max_iterations},
          {"extended_precision", c.shooting.extended_precision},
          {"outer_tol", o.outer_tol},
          {"max_outer", o.max_outer},
          {"damping", o.damping},
          {"anderson_depth", o.anderson_depth},
          {"outer", name_of(kOuter, o.outer)},
          {"krylov_max", o.krylov_max},
          {"krylov_tol", o.krylov_tol},
          {"rate_update", name_of(kRate, o.rate_update)},
          {"coupling", name_of(kCoupling, o.coupling)},
          {"fp_substep", o.fp_substep},
          {"ansatz_warm_start", o.ansatz_warm_start},
          {"hjb_scheme", name_of(kScheme, o.hjb.scheme)},
          {"hjb_layer_tol", o.hjb.layer_tol},
          {"hjb_max_iterations", o.hjb.max_iterations}}},
        {"outputs", c.outputs},
        {"checks", checks},
    };
}

ScenarioConfig load_scenario(const fs::path& file) {
    const std::string text = read_file(file);
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::parse_error& e) {
        fail(ErrorKind::validation, file.string() + ": " + e.what());
    }
    try {
        return parse_scenario(doc);
    } catch (const Error& e) {
        fail(e.kind(), file.string() + ": " + e.what());
    }
}

std::string sha256_hex(const std::string& bytes) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
        fail(ErrorKind::io, "sha256 failed");
    }
    static const char* hex = "0123456789abcdef";
    std::string out;
    for (unsigned int i = 0; i < len; ++i) {
        out += hex[digest[i] >> 4];
        out += hex[digest[i] & 15];
    }
    return out;
}

json to_json(const RunManifest& m) {
    json files = json::array();
    for (const auto& f : m.files) files.push_back({{"name", f.name}, {"sha256", f.sha256}});
    return json{{"name", m.name},
                {"config_hash", m.config_hash},
                {"tool_version", m.tool_version},
                {"wall_seconds", m.wall_seconds},
                {"converged", m.converged},
                {"status", m.status},
                {"summary", m.summary},
                {"files", files}};
}

RunResult run_scenario(const ScenarioConfig& c, const fs::path& out_dir) {
    const auto start = std::chrono::steady_clock::now();
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) fail(ErrorKind::io, "cannot create '" + out_dir.string() + "': " + ec.message());

    Emitter out{out_dir, {}};
    const json canonical = to_json(c);
    out.emit_json("config.json", canonical);

    RunResult result;
    RunManifest& m = result.manifest;
    m.name = c.name;
    m.config_hash = sha256_hex(canonical.dump());
    m.tool_version = kToolVersion;

    auto finish = [&] {
        m.files = out.files;
        m.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        write_file(out_dir / "manifest.json", rounded(to_json(m)).dump(2) + "\n");
    };

    Outcome oc;
    try {
        oc = c.model == ModelKind::homogeneous ? run_homogeneous(c, out) : run_population(c, out);
    } catch (const Error& e) {
        if (e.kind() == ErrorKind::io) throw;
        m.status = std::string(to_string(e.kind())) + ": " + e.what();
        finish();
        throw;
    }
    m.converged = oc.converged;
    m.status = oc.status;
    m.summary = oc.summary;
    finish();
    result.series = std::move(oc.series);
    if (!oc.converged) fail(ErrorKind::convergence, c.name + ": " + oc.status);
    return result;
}

// ---------------------------------------------------------------------------
// plot data

namespace {

struct Table {
    std::vector<std::string> header;
    std::vector<std::vector<double>> rows;

    std::size_t column(const std::string& name, const fs::path& file) const {
        const auto it = std::find(header.begin(), header.end(), name);
        if (it == header.end()) fail(ErrorKind::io, "series '" + name + "' is absent from " + file.string());
        return static_cast<std::size_t>(it - header.begin());
    }
};

Table read_csv(const fs::path& file) {
    if (!fs::exists(file)) fail(ErrorKind::io, "missing input " + file.string());
    std::istringstream in(read_file(file));
    Table t;
    std::string line;
    if (!std::getline(in, line)) fail(ErrorKind::io, file.string() + " is empty");
    std::stringstream hs(line);
    for (std::string cell; std::getline(hs, cell, ',');) t.header.push_back(cell);
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<double> row;
        std::stringstream ls(line);
        for (std::string cell; std::getline(ls, cell, ',');) row.push_back(std::stod(cell));
        if (row.size() != t.header.size()) fail(ErrorKind::io, file.string() + ": ragged row");
        t.rows.push_back(std::move(row));
    }
    return t;
}

void write_series(const fs::path& file, const Table& src, const fs::path& src_file,
                  const std::vector<std::pair<std::string, std::string>>& columns) {
    std::vector<std::size_t> idx;
    std::vector<std::string> names;
    for (const auto& [from, to] : columns) {
        idx.push_back(src.column(from, src_file));
        names.push_back(to);
    }
    std::ostringstream buf;
    for (std::size_t i = 0; i < names.size(); ++i) buf << (i ? "," : "") << names[i];
    buf << '\n';
    for (const auto& row : src.rows) {
        for (std::size_t i = 0; i < idx.size(); ++i) buf << (i ? "," : "") << fmt12(row[idx[i]]);
        buf << '\n';
    }
    write_file(file, buf.str());
}

}  // namespace

std::vector<fs::path> emit_plotdata(const fs::path& run_dir) {
    const fs::path meta_file = run_dir / "meta.json";
    if (!fs::exists(meta_file)) fail(ErrorKind::io, "missing input " + meta_file.string());
    const json meta = json::parse(read_file(meta_file));
    const fs::path dir = run_dir / "plotdata";
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) fail(ErrorKind::io, "cannot create '" + dir.string() + "': " + ec.message());

    std::vector<fs::path> written;
    if (meta.value("model", "") == "homogeneous") {
        const fs::path src = run_dir / "solution.csv";
        const Table t = read_csv(src);
        write_series(dir / "capacity.csv", t, src, {{"t", "t"}, {"X", "X_total"}});
        write_series(dir / "installation_rate.csv", t, src, {{"t", "t"}, {"K", "K_total"}});
        return {dir / "capacity.csv", dir / "installation_rate.csv"};
    }

    const fs::path src = run_dir / "equilibrium.csv";
    const Table t = read_csv(src);
    write_series(dir / "capacity.csv", t, src, {{"t", "t"}, {"X_total", "X_total"}});
    write_series(dir / "installation_rate.csv", t, src, {{"t", "t"}, {"K_total", "K_total"}});
    write_series(dir / "threshold.csv", t, src, {{"t", "t"}, {"x_star", "x_star"}});
    written = {dir / "capacity.csv", dir / "installation_rate.csv", dir / "threshold.csv"};

    const fs::path dsrc = run_dir / "density.csv";
    const Table d = read_csv(dsrc);
    const std::size_t ct = d.column("t", dsrc), cx = d.column("x", dsrc), cm = d.column("m", dsrc);
    if (d.rows.empty()) fail(ErrorKind::io, "series 'm' is empty in " + dsrc.string());
    const double t0 = d.rows.front()[ct], t1 = d.rows.back()[ct];
    std::vector<double> xs, first, last;
    for (const auto& row : d.rows) {
        if (row[ct] == t0) {
            xs.push_back(row[cx]);
            first.push_back(row[cm]);
        }
        if (row[ct] == t1) last.push_back(row[cm]);
    }
    if (first.size() != last.size()) fail(ErrorKind::io, dsrc.string() + ": snapshots differ in length");
    std::ostringstream buf;
    buf << "x,m_t0,m_T\n";
    for (std::size_t j = 0; j < xs.size(); ++j) buf << fmt12(xs[j]) << ',' << fmt12(first[j]) << ',' << fmt12(last[j]) << '\n';
    write_file(dir / "density_snapshots.csv", buf.str());
    written.push_back(dir / "density_snapshots.csv");
    return written;
}

// ---------------------------------------------------------------------------
// reproduction harness

bool ReproReport::all_pass() const {
    return std::all_of(rows.begin(), rows.end(), [](const ReproRow& r) { return r.pass; });
}

namespace {

// Cross-run metrics: the other run is interpolated onto this run's t grid.
double cross_metric(const std::string& metric, const RunSeries& self, const RunSeries& ref) {
    auto resample = [&](const std::vector<double>& v) {
        const UniformGrid g(ref.t.front(), ref.t.back(), ref.t.size());
        std::vector<double> out(self.t.size());
        for (std::size_t n = 0; n < self.t.size(); ++n) out[n] = interpolate(g, v, self.t[n]);
        return out;
    };
    if (metric == "X_suprel") return sup_rel(self.X, resample(ref.X));
    if (metric == "K_suprel_off_kink") {
        // skip t_star +- 2 dt of either run, where the rate has its kink
        const double dt = self.t[1] - self.t[0];
        const std::vector<double> k = resample(ref.K);
        std::vector<double> a, b;
        for (std::size_t n = 0; n < self.t.size(); ++n) {
            const double t = self.t[n];
            if (std::abs(t - self.t_star) <= 2 * dt || std::abs(t - ref.t_star) <= 2 * dt) continue;
            a.push_back(self.K[n]);
            b.push_back(k[n]);
        }
        return sup_rel(a, b);
    }
    if (metric == "max_x_star_ratio") {
        const double ms = *std::max_element(self.x_star.begin(), self.x_star.end());
        const double mr = *std::max_element(ref.x_star.begin(), ref.x_star.end());
        return mr > 0 ? ms / mr : 0.0;
    }
    if (metric == "t_star_diff") return std::abs(self.t_star - ref.t_star);
    fail(ErrorKind::validation, "unknown cross-run metric '" + metric + "'");
}

std::string describe(const Check& k) {
    if (k.target) return fmt12(*k.target) + " +- " + fmt12(*k.tol);
    if (k.max) return "<= " + fmt12(*k.max);
    return ">= " + fmt12(*k.min);
}

bool within(const Check& k, double v) {
    if (!std::isfinite(v)) return false;
    if (k.target) return std::abs(v - *k.target) <= *k.tol;
    if (k.max) return v <= *k.max;
    return v >= *k.min;
}

}  // namespace

ReproReport reproduce(const fs::path& dir, const std::string& filter, const fs::path& out_root) {
    const auto start = std::chrono::steady_clock::now();
    std::map<std::string, ScenarioConfig> all;
    std::error_code ec;
    fs::directory_iterator it(dir, ec);
    if (ec) fail(ErrorKind::io, "cannot list '" + dir.string() + "': " + ec.message());
    for (const auto& entry : it) {
        if (entry.path().extension() != ".json") continue;
        ScenarioConfig c = load_scenario(entry.path());
        all.emplace(c.name, std::move(c));
    }

    // selected scenarios plus whatever their checks compare against
    std::set<std::string> selected, needed;
    for (const auto& [name, c] : all) {
        if (name.find(filter) != std::string::npos) selected.insert(name);
    }
    needed = selected;
    for (const auto& name : selected) {
        for (const auto& k : all.at(name).checks) {
            if (k.against.empty()) continue;
            if (!all.count(k.against)) {
                fail(ErrorKind::validation, name + ": check compares against unknown scenario '" + k.against + "'");
            }
            needed.insert(k.against);
        }
    }

    std::map<std::string, RunResult> results;
    std::map<std::string, std::string> failures;
    for (const auto& name : needed) {
        const ScenarioConfig& c = all.at(name);
        const fs::path out = c.outputs.empty() ? out_root / name : fs::path(c.outputs);
        try {
            results.emplace(name, run_scenario(c, out));
        } catch (const Error& e) {
            failures.emplace(name, std::string(to_string(e.kind())) + ": " + e.what());
        }
    }

    ReproReport rep;
    for (const auto& name : selected) {
        const ScenarioConfig& c = all.at(name);
        const auto res = results.find(name);
        ReproRow status{name, "run", "completes and converges", 0.0, res != results.end(), ""};
        if (res != results.end()) status.value = res->second.manifest.wall_seconds;
        if (failures.count(name)) status.note = failures.at(name);
        rep.rows.push_back(status);
        for (const auto& k : c.checks) {
            ReproRow row{name, k.metric, describe(k), std::nan(""), false, ""};
            if (!k.against.empty()) row.metric += " vs " + k.against;
            if (res == results.end()) {
                row.note = "run failed";
            } else if (!k.against.empty()) {
                const auto ref = results.find(k.against);
                if (ref == results.end()) {
                    row.note = "reference run failed";
                } else {
                    row.value = cross_metric(k.metric, res->second.series, ref->second.series);
                    row.pass = within(k, row.value);
                }
            } else {
                const auto& s = res->second.manifest.summary;
                const auto v = s.find(k.metric);
                if (v == s.end()) {
                    row.note = "metric not reported";
                } else {
                    row.value = v->second;
                    row.pass = within(k, row.value);
                }
            }
            rep.rows.push_back(row);
        }
    }
    rep.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return rep;
}

int exit_code(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::validation:
            return 2;
        case ErrorKind::io:
            return 4;
        default:
            return 3;
    }
}

}  // namespace capmfg
