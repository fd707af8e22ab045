#include "capmfg/model.hpp"

#include <cmath>
#include <limits>
#include <string>

#include "capmfg/error.hpp"
#include "capmfg/units.hpp"

namespace capmfg {

namespace {

void require(bool ok, const char* field, const std::string& what) {
    if (!ok) fail(ErrorKind::validation, std::string("parameter '") + field + "': " + what);
}

}  // namespace

void ModelParams::validate() const {
    auto finite = [](double v) { return std::isfinite(v); };
    require(finite(r) && r > 0, "r", "must be > 0");
    require(finite(delta) && delta > 0, "delta", "must be > 0");
    require(finite(T) && T > 0, "T", "must be > 0");
    require(finite(h) && h >= 0 && h <= 8760, "h", "must lie in [0, 8760]");
    require(finite(alpha) && alpha > 0, "alpha", "must be > 0");
    require(finite(beta) && beta > 0, "beta", "must be > 0");
    require(finite(c) && c > 0, "c", "must be > 0");
    require(finite(N) && N >= 0, "N", "must be >= 0");
    require(finite(X0) && X0 >= 0, "X0", "must be >= 0");
    require(finite(sigma) && sigma >= 0, "sigma", "must be >= 0");
    require(sigma == 0 || sigma * sigma < r + 2 * delta, "sigma", "requires sigma^2 < r + 2 delta");
}

PriceFunction::PriceFunction(LinearPrice lin) : v_(lin) { validate(); }
PriceFunction::PriceFunction(InversePrice inv) : v_(inv) { validate(); }

void PriceFunction::validate() const {
    if (const auto* lin = std::get_if<LinearPrice>(&v_)) {
        require(std::isfinite(lin->d1) && lin->d1 > 0, "d1", "must be > 0");
        require(std::isfinite(lin->d2) && lin->d2 > 0, "d2", "must be > 0");
    } else {
        const auto& inv = std::get<InversePrice>(v_);
        require(std::isfinite(inv.p) && inv.p > 0, "p", "must be > 0");
    }
}

const LinearPrice& PriceFunction::linear() const {
    if (!is_linear()) fail(ErrorKind::validation, "price function is not linear");
    return std::get<LinearPrice>(v_);
}

const InversePrice& PriceFunction::inverse() const {
    if (is_linear()) fail(ErrorKind::validation, "price function is not inverse");
    return std::get<InversePrice>(v_);
}

double PriceFunction::operator()(double x) const {
    if (const auto* lin = std::get_if<LinearPrice>(&v_)) return lin->d1 - lin->d2 * x;
    if (!(x > 0)) fail(ErrorKind::domain, "inverse price evaluated at x = " + std::to_string(x));
    return std::get<InversePrice>(v_).p / x;
}

double PriceFunction::derivative(double x) const {
    if (const auto* lin = std::get_if<LinearPrice>(&v_)) return -lin->d2;
    if (!(x > 0)) fail(ErrorKind::domain, "inverse price derivative at x = " + std::to_string(x));
    return -std::get<InversePrice>(v_).p / (x * x);
}

double PriceFunction::preimage(double y) const {
    if (const auto* lin = std::get_if<LinearPrice>(&v_)) {
        if (!(y < lin->d1)) {
            fail(ErrorKind::domain, "linear price never falls to " + std::to_string(y) +
                                        " at nonnegative capacity (d1 <= level)");
        }
        return (lin->d1 - y) / lin->d2;
    }
    if (!(y > 0)) fail(ErrorKind::domain, "inverse price never reaches " + std::to_string(y));
    return std::get<InversePrice>(v_).p / y;
}

double price_eval(const PriceFunction& pf, double x) {
    if (pf.is_linear() && x < 0) fail(ErrorKind::domain, "negative capacity " + std::to_string(x));
    return pf(x);
}

RewardTerms running_reward(const ModelParams& params, const PriceFunction& pf, double x,
                           double nu, double xbar, double nubar) {
    RewardTerms out;
    out.revenue_rate =
        x == 0.0 ? 0.0 : params.h * (pf(x + params.N * xbar) - params.c) * x;
    out.installation_cost_rate = nu * (params.alpha + params.beta * (nu + params.N * nubar));
    return out;
}

namespace {

struct TailScan {
    double best = -std::numeric_limits<double>::infinity();
    double argbest = 0.0;
};

// max over t0 on an n-interval grid of h * int_{t0}^T e^{-(r+delta)(s-t0)} (P(X0 e^{-delta s}) - c) ds,
// composite trapezoid, accumulated backwards from T.
TailScan scan_tail(const ModelParams& p, const PriceFunction& pf, int n) {
    const double dt = p.T / n;
    const double decay = std::exp(-(p.r + p.delta) * dt);
    auto g = [&](int k) { return p.h * (pf(p.X0 * std::exp(-p.delta * k * dt)) - p.c); };
    TailScan scan;
    double tail = 0.0;
    double g_next = g(n);
    scan.best = 0.0;
    scan.argbest = p.T;
    for (int k = n - 1; k >= 0; --k) {
        const double gk = g(k);
        tail = decay * tail + dt / 2 * (gk + decay * g_next);
        g_next = gk;
        if (tail > scan.best) {
            scan.best = tail;
            scan.argbest = k * dt;
        }
    }
    return scan;
}

}  // namespace

AssumptionCheck check_assumption(const ModelParams& params, const PriceFunction& pf) {
    AssumptionCheck out;
    out.initial_margin = (pf(params.X0) - params.c) * params.h > (params.r + params.delta) * params.alpha;

    int n = 64;
    TailScan prev = scan_tail(params, pf, n);
    for (n *= 2; n <= (1 << 22); n *= 2) {
        TailScan cur = scan_tail(params, pf, n);
        const bool same_decision = (prev.best > params.alpha) == (cur.best > params.alpha);
        const bool witness_stable =
            std::abs(cur.argbest - prev.argbest) <= 5e-4 * std::max(std::abs(cur.argbest), params.T * 1e-3);
        prev = cur;
        if (same_decision && witness_stable) break;
    }
    out.intervals = n;
    out.best_value = prev.best;
    out.holds = out.initial_margin && prev.best > params.alpha;
    if (out.holds) out.witness_t0 = prev.argbest;
    return out;
}

double compute_xmax(const ModelParams& params, const PriceFunction& pf) {
    if (pf.is_linear() && pf.linear().d1 <= params.c) {
        fail(ErrorKind::validation, "d1 <= c: installation is never profitable");
    }
    return pf.preimage(params.c) * std::exp(params.delta * params.T);
}

// ---------------------------------------------------------------------------

namespace {

using nlohmann::json;

struct FieldSpec {
    const char* name;
    units::Dimension dim;
    bool required;
};

double read_field(const json& doc, const FieldSpec& spec, double fallback) {
    if (!doc.contains(spec.name)) {
        if (spec.required) fail(ErrorKind::validation, std::string("missing field '") + spec.name + "'");
        return fallback;
    }
    const json& v = doc.at(spec.name);
    if (!v.is_number()) fail(ErrorKind::validation, std::string("field '") + spec.name + "' must be a number");
    double value = v.get<double>();
    if (doc.contains("units") && doc.at("units").contains(spec.name)) {
        const json& tag = doc.at("units").at(spec.name);
        if (!tag.is_string()) {
            fail(ErrorKind::validation, std::string("unit tag of '") + spec.name + "' must be a string");
        }
        units::Quantity q;
        try {
            q = units::parse(tag.get<std::string>());
        } catch (const Error& e) {
            fail(ErrorKind::validation, std::string("field '") + spec.name + "': " + e.what());
        }
        if (!(q.dim == spec.dim)) {
            fail(ErrorKind::validation, std::string("field '") + spec.name + "': unit '" +
                                            tag.get<std::string>() + "' has dimension " +
                                            q.dim.describe() + ", expected " + spec.dim.describe());
        }
        value *= q.scale;
    }
    return value;
}

}  // namespace

ModelParams normalize_params(const json& raw) {
    using namespace units;
    if (!raw.is_object()) fail(ErrorKind::validation, "parameter document must be a JSON object");
    const Dimension per_year = kNone / kYear;
    ModelParams p;
    p.r = read_field(raw, {"r", per_year, true}, 0);
    p.delta = read_field(raw, {"delta", per_year, true}, 0);
    p.T = read_field(raw, {"T", kYear, true}, 0);
    p.h = read_field(raw, {"h", kHour / kYear, true}, 0);
    p.alpha = read_field(raw, {"alpha", kMoney / kPower, true}, 0);
    // crowding is quoted either directly or, as in most tables, as 1/beta
    const bool has_beta = raw.contains("beta");
    if (has_beta == raw.contains("beta_inv")) {
        fail(ErrorKind::validation, "exactly one of 'beta' and 'beta_inv' must be given");
    }
    if (has_beta) {
        p.beta = read_field(raw, {"beta", kMoney * kYear / kPower.pow(2), true}, 0);
    } else {
        const double beta_inv =
            read_field(raw, {"beta_inv", kPower.pow(2) / (kMoney * kYear), true}, 0);
        if (!(beta_inv > 0)) fail(ErrorKind::validation, "field 'beta_inv': must be > 0");
        p.beta = 1.0 / beta_inv;
    }
    p.c = read_field(raw, {"c", kMoney / (kPower * kHour), true}, 0);
    p.N = read_field(raw, {"N", kNone, true}, 0);
    p.X0 = read_field(raw, {"X0", kPower, true}, 0);
    p.sigma = read_field(raw, {"sigma", kYear.pow(-0.5), false}, 0.0);
    p.validate();
    return p;
}

PriceFunction normalize_price(const json& doc) {
    using namespace units;
    if (!doc.is_object() || !doc.contains("price")) fail(ErrorKind::validation, "missing field 'price'");
    const json& pr = doc.at("price");
    if (!pr.is_object() || !pr.contains("kind") || !pr.at("kind").is_string()) {
        fail(ErrorKind::validation, "field 'price.kind' must be \"linear\" or \"inverse\"");
    }
    // unit tags live in the top-level map; splice them in for read_field
    json view = pr;
    if (doc.contains("units")) view["units"] = doc.at("units");
    const std::string kind = pr.at("kind").get<std::string>();
    const Dimension dollars_per_mwh = kMoney / (kPower * kHour);
    if (kind == "linear") {
        LinearPrice lin;
        lin.d1 = read_field(view, {"d1", dollars_per_mwh, true}, 0);
        lin.d2 = read_field(view, {"d2", dollars_per_mwh / kPower, true}, 0);
        return PriceFunction(lin);
    }
    if (kind == "inverse") {
        InversePrice inv;
        inv.p = read_field(view, {"p", kMoney / kHour, true}, 0);
        return PriceFunction(inv);
    }
    fail(ErrorKind::validation, "field 'price.kind': unknown kind '" + kind + "'");
}

json to_json(const ModelParams& p) {
    return json{{"r", p.r},       {"delta", p.delta}, {"T", p.T},         {"h", p.h},
                {"alpha", p.alpha}, {"beta", p.beta}, {"c", p.c}, {"N", p.N},
                {"X0", p.X0},     {"sigma", p.sigma}};
}

json to_json(const PriceFunction& pf) {
    if (pf.is_linear()) return json{{"kind", "linear"}, {"d1", pf.linear().d1}, {"d2", pf.linear().d2}};
    return json{{"kind", "inverse"}, {"p", pf.inverse().p}};
}

}  // namespace capmfg
