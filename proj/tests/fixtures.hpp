#pragma once

#include <cmath>
#include <numbers>

#include <json.hpp>

#include "capmfg/model.hpp"

// Parameter sets shared by the tests. Both go through the same unit
// normalisation as the scenario files.

namespace fixtures {

inline nlohmann::json base_doc(double T = 5.0) {
    return {{"r", 0.1},
            {"delta", std::numbers::ln2 / 10},
            {"T", T},
            {"h", 3000},
            {"alpha", 1400},
            {"beta_inv", 5},
            {"c", 15},
            {"N", 10},
            {"X0", 30},
            {"units", {{"alpha", "$/kW"}, {"X0", "GW"}, {"h", "hours/year"}}},
            {"price", {{"kind", "linear"}, {"d1", 500}, {"d2", 0.01}}}};
}

inline capmfg::ModelParams base(double T = 5.0) { return capmfg::normalize_params(base_doc(T)); }
inline capmfg::PriceFunction base_linear() { return capmfg::LinearPrice{500, 0.01}; }
inline capmfg::PriceFunction base_inverse() { return capmfg::InversePrice{6.5e6}; }

// small market: fleet 0.1 MW, unit hours, price 2 - x
inline nlohmann::json small_doc() {
    return {{"r", 0.05}, {"delta", std::numbers::ln2 / 10}, {"T", 1}, {"h", 1},     {"alpha", 0.1},
            {"beta_inv", 10}, {"c", 1},  {"N", 10},  {"X0", 0.1}, {"price", {{"kind", "linear"}, {"d1", 2}, {"d2", 1}}}};
}

inline capmfg::ModelParams small() { return capmfg::normalize_params(small_doc()); }
inline capmfg::PriceFunction small_linear() { return capmfg::LinearPrice{2, 1}; }

inline double sup_rel(const std::vector<double>& a, const std::vector<double>& ref) {
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        num = std::max(num, std::abs(a[i] - ref[i]));
        den = std::max(den, std::abs(ref[i]));
    }
    return den > 0 ? num / den : num;
}

}  // namespace fixtures
