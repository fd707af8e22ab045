#pragma once

#include <optional>
#include <variant>

#include <json.hpp>

namespace capmfg {

/// Economic and physical constants in base units: $, MW, year, with h in
/// hours/year and prices in $/MWh.
struct ModelParams {
    double r = 0.0;       ///< discount rate, 1/year
    double delta = 0.0;   ///< depreciation rate, 1/year
    double T = 0.0;       ///< horizon, years
    double h = 0.0;       ///< production hours per year
    double alpha = 0.0;   ///< marginal installation cost, $/MW
    double beta = 0.0;    ///< crowding sensitivity, $*year/MW^2
    double c = 0.0;       ///< marginal production cost, $/MWh
    double N = 0.0;       ///< number of other producers
    double X0 = 0.0;      ///< initial total capacity, MW
    double sigma = 0.0;   ///< capacity volatility, 1/sqrt(year)

    /// Throws Error{validation} naming the first offending field.
    void validate() const;

    friend bool operator==(const ModelParams&, const ModelParams&) = default;
};

/// P(x) = d1 - d2 x. Negative prices are allowed.
struct LinearPrice {
    double d1 = 0.0;  ///< $/MWh
    double d2 = 0.0;  ///< $/(MW*MWh)
    friend bool operator==(const LinearPrice&, const LinearPrice&) = default;
};

/// P(x) = p / x.
struct InversePrice {
    double p = 0.0;  ///< $/h
    friend bool operator==(const InversePrice&, const InversePrice&) = default;
};

/// Strictly decreasing inverse-demand curve.
class PriceFunction {
public:
    using Variant = std::variant<LinearPrice, InversePrice>;

    PriceFunction(LinearPrice lin);
    PriceFunction(InversePrice inv);

    const Variant& variant() const noexcept { return v_; }
    bool is_linear() const noexcept { return std::holds_alternative<LinearPrice>(v_); }
    const LinearPrice& linear() const;
    const InversePrice& inverse() const;

    /// P(x). Inverse variant requires x > 0.
    double operator()(double x) const;
    /// P'(x).
    double derivative(double x) const;
    /// P^{-1}(y) for a price level y; the linear variant requires y < d1,
    /// the inverse variant y > 0.
    double preimage(double y) const;

    friend bool operator==(const PriceFunction&, const PriceFunction&) = default;

private:
    void validate() const;
    Variant v_;
};

double price_eval(const PriceFunction& pf, double x);

struct RewardTerms {
    double revenue_rate = 0.0;            ///< $/year
    double installation_cost_rate = 0.0;  ///< $/year
    double total() const { return revenue_rate - installation_cost_rate; }
};

/// Running reward of one producer with capacity x installing at rate nu
/// while the others hold mean capacity xbar and mean rate nubar.
RewardTerms running_reward(const ModelParams& params, const PriceFunction& pf, double x,
                           double nu, double xbar, double nubar);

struct AssumptionCheck {
    bool holds = false;
    bool initial_margin = false;  ///< (P(X0) - c) h > (r + delta) alpha
    std::optional<double> witness_t0;
    double best_value = 0.0;      ///< max_t0 of the discounted tail integral, $/MW
    int intervals = 0;            ///< quadrature intervals at the stable decision
};

/// Non-triviality check: installation happens at some point iff this holds.
AssumptionCheck check_assumption(const ModelParams& params, const PriceFunction& pf);

/// Capacity beyond which installing never pays over the remaining horizon.
double compute_xmax(const ModelParams& params, const PriceFunction& pf);

// ---------------------------------------------------------------------------
// Parameter documents

/// Reads the flat JSON parameter document
/// {r, delta, T, h, alpha, beta_inv, c, N, X0, sigma, units: {field: "unit"}}
/// and converts every field into base units. Missing unit tags mean base
/// units. Unknown tags or incompatible dimensions name the field. `beta`
/// may be given instead of `beta_inv`; to_json emits `beta`.
ModelParams normalize_params(const nlohmann::json& raw);

/// Reads doc["price"] = {kind: "linear"|"inverse", d1, d2, p}, taking unit
/// tags for d1, d2 and p from doc["units"].
PriceFunction normalize_price(const nlohmann::json& doc);

/// Base-unit serialisation; normalize_params(to_json(p)) == p.
nlohmann::json to_json(const ModelParams& params);
nlohmann::json to_json(const PriceFunction& pf);

}  // namespace capmfg
