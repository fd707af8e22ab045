// Acceptance run: executes the bundled suite once, then judges each numbered
// criterion against its own pinned tolerance. Criteria that need solves the
// suite does not contain (homogeneous reduction, random draws, sigma = 0
// identity, the producer-count sweep) are computed here directly.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "capmfg/error.hpp"
#include "capmfg/homogeneous.hpp"
#include "capmfg/scenario.hpp"
#include "capmfg/stochastic.hpp"

#ifndef CAPMFG_SCENARIO_DIR
#define CAPMFG_SCENARIO_DIR "scenarios"
#endif

namespace fs = std::filesystem;
using namespace capmfg;

namespace {

struct Verdict {
    bool pass = true;
    std::ostringstream detail;

    void require(bool ok, const std::string& what) {
        pass = pass && ok;
        if (detail.tellp() > 0) detail << "; ";
        detail << what << (ok ? "" : " [fail]");
    }
};

std::string num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6g", v);
    return buf;
}

class Rows {
public:
    explicit Rows(const ReproReport& rep) : rep_(rep) {}

    // value of (scenario, metric); cross metrics are keyed "metric vs other"
    std::optional<double> value(const std::string& scenario, const std::string& metric) const {
        for (const auto& r : rep_.rows) {
            if (r.scenario == scenario && (r.metric == metric || r.metric.rfind(metric + " vs ", 0) == 0)) return r.value;
        }
        return std::nullopt;
    }
    bool ran(const std::string& scenario) const {
        for (const auto& r : rep_.rows) {
            if (r.scenario == scenario && r.metric == "run") return r.pass;
        }
        return false;
    }
    std::vector<std::string> scenarios() const {
        std::vector<std::string> out;
        for (const auto& r : rep_.rows) {
            if (r.metric == "run") out.push_back(r.scenario);
        }
        return out;
    }

private:
    const ReproReport& rep_;
};

// Pins value within [lo, hi] and records it.
void within(Verdict& v, const Rows& rows, const std::string& scenario, const std::string& metric, double lo, double hi) {
    const auto x = rows.value(scenario, metric);
    if (!x) {
        v.require(false, scenario + " " + metric + " missing");
        return;
    }
    v.require(*x >= lo && *x <= hi, scenario + " " + metric + " = " + num(*x) + " in [" + num(lo) + ", " + num(hi) + "]");
}

void runtime(Verdict& v, const Rows& rows, const std::string& scenario, double limit) {
    v.require(rows.ran(scenario), scenario + " converged");
    within(v, rows, scenario, "run", 0.0, limit);
}

ScenarioConfig scenario(const fs::path& dir, const std::string& name) { return load_scenario(dir / (name + ".json")); }

// ---------------------------------------------------------------------------

void criterion_3_sweep(Verdict& v, const fs::path& dir) {
    const ScenarioConfig t5 = scenario(dir, "het-linear-T5-ansatz");
    const ScenarioConfig t10 = scenario(dir, "het-linear-T10-ansatz");
    auto t_star = [](const ScenarioConfig& c, double N) {
        ModelParams p = c.params;
        p.N = N;
        return solve_mfg(p, c.price, c.mfg).t_star;
    };
    std::vector<double> hits;
    std::ostringstream log;
    for (double N : {5.0, 15.0, 20.0, 25.0, 30.0, 40.0, 50.0, 75.0, 100.0, 150.0, 200.0}) {
        try {
            const double ts = t_star(t5, N);
            log << " N=" << N << ":" << num(ts);
            if (std::abs(ts - 1.71) <= 0.15) hits.push_back(N);
        } catch (const Error& e) {
            log << " N=" << N << ":no-convergence";
        }
    }
    std::optional<double> found;
    for (double N : hits) {
        try {
            const double ts = t_star(t10, N);
            log << " [T=10 N=" << N << ":" << num(ts) << "]";
            if (std::abs(ts - 6.26) <= 0.25) {
                found = N;
                break;
            }
        } catch (const Error&) {
            log << " [T=10 N=" << N << ":no-convergence]";
        }
    }
    v.require(found.has_value(), "sweep T=5 t_star by N:" + log.str() +
                                     (found ? "; both targets hit at N = " + num(*found) : "; no N hits both targets"));
}

void criterion_6(Verdict& v, const fs::path& dir) {
    const ScenarioConfig base = scenario(dir, "hom-linear-T5");
    const ModelParams& p = base.params;
    const UniformGrid grid(0, p.T, base.mfg.n_t);
    const HomogeneousSolution hom = shoot(p, base.price, grid, base.shooting);
    MfgOptions o;
    o.n_t = base.mfg.n_t;
    o.n_x = 401;
    o.m0.kind = InitialDensitySpec::Kind::dirac;
    o.coupling = PriceCoupling::homogeneous_reduction;
    o.rate_update = RateUpdate::local;
    const MeanFieldEquilibrium eq = solve_mfg(p, base.price, o);
    double num_ = 0.0, den = 0.0;
    for (std::size_t n = 0; n < grid.size(); ++n) {
        num_ = std::max(num_, std::abs((p.N + 1) * eq.xbar[n] - hom.X[n]));
        den = std::max(den, std::abs(hom.X[n]));
    }
    v.require(num_ / den <= 0.02, "reduced X vs shooting sup-rel = " + num(num_ / den) + " <= 0.02");
}

void criterion_7a(Verdict& v, const fs::path& dir) {
    const ScenarioConfig base = scenario(dir, "hom-linear-T5");
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> U(0.0, 1.0);
    int draws = 0, tries = 0, bad = 0;
    while (draws < 50 && tries < 500) {
        ++tries;
        ModelParams p = base.params;
        p.T = 1 + 9 * U(rng);
        p.r = 0.02 + 0.15 * U(rng);
        p.delta = 0.02 + 0.15 * U(rng);
        p.alpha *= 0.5 + U(rng);
        p.beta *= 0.5 + U(rng);
        p.X0 *= 0.2 + 1.6 * U(rng);
        const PriceFunction pf = U(rng) < 0.5 ? PriceFunction(LinearPrice{300 + 400 * U(rng), 0.005 + 0.01 * U(rng)})
                                              : PriceFunction(InversePrice{2e6 + 8e6 * U(rng)});
        const UniformGrid g(0, p.T, 801);
        const double u0 = p.alpha * (0.5 + U(rng)), u1 = u0 + p.alpha * (0.01 + 0.5 * U(rng));
        ForwardPaths a, b;
        try {
            a = integrate_forward(p, pf, u0, g);
            b = integrate_forward(p, pf, u1, g);
        } catch (const Error&) {
            continue;
        }
        ++draws;
        bool ok = a.u.back() < b.u.back();
        for (std::size_t n = 0; n < g.size(); ++n) ok = ok && a.u[n] < b.u[n] && a.X[n] <= b.X[n] * (1 + 1e-14);
        bad += !ok;
    }
    v.require(draws == 50 && bad == 0,
              "comparison and shooting-map monotonicity on " + std::to_string(draws) + " draws, " +
                  std::to_string(bad) + " violations");
}

void criterion_8_identity(Verdict& v, const fs::path& dir) {
    const ScenarioConfig c = scenario(dir, "het-linear-T5-ansatz");
    ModelParams p = c.params;
    p.sigma = 0.0;
    const MeanFieldEquilibrium det = solve_mfg(c.params, c.price, c.mfg);
    const MeanFieldEquilibrium sto = solve_mfg_stochastic(p, c.price, c.mfg);
    const bool same = det.nubar == sto.nubar && det.xbar == sto.xbar && det.x_star == sto.x_star && det.m == sto.m &&
                      det.t_star == sto.t_star;
    v.require(same, "sigma = 0 equilibrium bitwise equal to deterministic at matched grids");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Acceptance criteria 1-9"};
    std::string scen_dir = CAPMFG_SCENARIO_DIR, out = "acceptance-runs";
    app.add_option("--scenarios", scen_dir, "scenario directory");
    app.add_option("--out", out, "root for run directories");
    CLI11_PARSE(app, argc, argv);

    const fs::path dir = scen_dir;
    std::map<int, Verdict> verdicts;
    auto guarded = [&](int id, const std::function<void(Verdict&)>& body) {
        try {
            body(verdicts[id]);
        } catch (const std::exception& e) {
            verdicts[id].require(false, std::string("error: ") + e.what());
        }
    };

    const ReproReport rep = reproduce(dir, "", out);
    const Rows rows(rep);

    guarded(1, [&](Verdict& v) {
        within(v, rows, "hom-linear-T5", "t_star", 0.20, 0.30);
        within(v, rows, "hom-linear-T5-semi", "X_suprel", 0.0, 1e-3);
        runtime(v, rows, "hom-linear-T5", 1.0);
        runtime(v, rows, "hom-linear-T5-semi", 1.0);
    });
    guarded(2, [&](Verdict& v) {
        for (const char* s : {"hom-inverse-T10", "hom-inverse-T20"}) {
            within(v, rows, s, "T_minus_t_star", 8.0, 9.0);
            runtime(v, rows, s, 5.0);
        }
        within(v, rows, "hom-inverse-T20", "turnpike_ratio", 0.0, 0.02);
    });
    guarded(3, [&](Verdict& v) {
        within(v, rows, "het-linear-T5-ansatz", "t_star", 1.56, 1.86);
        within(v, rows, "het-linear-T10-ansatz", "t_star", 6.01, 6.51);
        runtime(v, rows, "het-linear-T5-ansatz", 60.0);
        runtime(v, rows, "het-linear-T10-ansatz", 60.0);
        if (!v.pass) {
            Verdict sweep;
            criterion_3_sweep(sweep, dir);
            v.detail << "; N = 10 misses, " << sweep.detail.str();
            // the sweep only rescues the targets; runtimes still count
            v.pass = sweep.pass && rows.value("het-linear-T5-ansatz", "run").value_or(1e9) < 60 &&
                     rows.value("het-linear-T10-ansatz", "run").value_or(1e9) < 60;
        }
    });
    guarded(4, [&](Verdict& v) { within(v, rows, "het-linear-T10-ansatz", "b_at_t_star_rel", 0.0, 0.02); });
    guarded(5, [&](Verdict& v) {
        within(v, rows, "small-linear-T1-fd", "X_suprel", 0.0, 0.1);
        within(v, rows, "small-linear-T1-fd", "K_suprel_off_kink", 0.0, 0.1);
    });
    guarded(6, [&](Verdict& v) { criterion_6(v, dir); });
    guarded(7, [&](Verdict& v) {
        criterion_7a(v, dir);
        int population = 0, linear = 0, homogeneous = 0;
        bool mass = true, concave = true, threshold = true, price = true;
        for (const auto& s : rows.scenarios()) {
            const ScenarioConfig c = scenario(dir, s);
            if (c.model == ModelKind::homogeneous) {
                if (!check_assumption(c.params, c.price).holds) continue;
                ++homogeneous;
                price = price && rows.value(s, "price_above_cost").value_or(c.method == SolveMethod::shooting ? 0 : 1) == 1;
                continue;
            }
            ++population;
            mass = mass && rows.value(s, "max_mass_drift").value_or(1) <= 1e-9 &&
                   rows.value(s, "min_density").value_or(-1) >= -1e-12;
            threshold = threshold && rows.value(s, "x_star_at_T").value_or(1) == 0 &&
                        rows.value(s, "x_star_zero_after_t_star").value_or(0) == 1;
            if (c.price.is_linear()) {
                ++linear;
                concave = concave && rows.value(s, "monotonicity_violations").value_or(1) == 0 &&
                          rows.value(s, "concavity_violations").value_or(1) == 0;
            }
        }
        v.require(mass, "(b) mass and positivity on " + std::to_string(population) + " population runs");
        v.require(concave, "(c) concavity and monotone rate on " + std::to_string(linear) + " linear runs");
        v.require(threshold, "(d) threshold end conditions on " + std::to_string(population) + " population runs");
        v.require(price, "(e) price above cost on " + std::to_string(homogeneous) + " homogeneous runs");
    });
    guarded(8, [&](Verdict& v) {
        within(v, rows, "stoch-linear-T10-sigma0.4", "max_x_star_ratio", 0.0, 0.999999);
        within(v, rows, "stoch-linear-T10-sigma0.4", "X_suprel", 0.0, 0.1);
        criterion_8_identity(v, dir);
    });
    guarded(9, [&](Verdict& v) {
        v.require(rep.all_pass(), std::to_string(rep.rows.size()) + " suite rows, " +
                                      (rep.all_pass() ? "all pass" : "some fail"));
        v.require(rep.wall_seconds < 300, "suite wall time " + num(rep.wall_seconds) + " s < 300 s");
    });

    bool all = true;
    for (const auto& [id, v] : verdicts) {
        std::printf("criterion %d: %s  %s\n", id, v.pass ? "PASS" : "FAIL", v.detail.str().c_str());
        all = all && v.pass;
    }
    return all ? 0 : 1;
}
