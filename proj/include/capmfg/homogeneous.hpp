#pragma once

#include <vector>

#include "capmfg/model.hpp"
#include "capmfg/numerics.hpp"

namespace capmfg {

/// Equilibrium of identical producers: total capacity X, costate u (the
/// marginal value of one MW) and total installation rate K.
struct HomogeneousSolution {
    UniformGrid grid;
    std::vector<double> X;  ///< MW
    std::vector<double> u;  ///< $/MW
    std::vector<double> K;  ///< MW/year, (u - alpha)^+ / beta
    double t_star = 0.0;    ///< years; installation stops here
    double u0 = 0.0;        ///< $/MW
    double residual = 0.0;  ///< u at the final grid point
    int iterations = 0;
    bool extended_precision = false;  ///< shooting needed 113-bit arithmetic
};

struct ForwardPaths {
    std::vector<double> X;
    std::vector<double> u;
};

/// RK4 on X' = -delta X + (u - alpha)^+ / beta, u' = (r + delta) u - (P(X) - c) h
/// from (X0, u0) over `grid`, which must span [0, T] with at least 100 steps.
/// Throws Error{divergence} with the blow-up time if the state leaves the
/// finite (or, for inverse prices, positive-capacity) range.
ForwardPaths integrate_forward(const ModelParams& params, const PriceFunction& pf, double u0,
                               const UniformGrid& grid);

struct ShootingOptions {
    double tol = 0.0;  ///< on |u_T|, $/MW; 0 selects 1e-6 * alpha
    int max_iterations = 200;
    /// Continue the bisection in 113-bit floats once the double bracket
    /// collapses. Long horizons with stiff prices need this: the shooting map
    /// amplifies u0 perturbations by e^{lambda T*}.
    bool extended_precision = true;

    friend bool operator==(const ShootingOptions&, const ShootingOptions&) = default;
};

/// Bisection on u0 until u_T = 0. The bracket comes from the lower and upper
/// bounds of the existence argument, each widened by one $/MW.
HomogeneousSolution shoot(const ModelParams& params, const PriceFunction& pf, const UniformGrid& grid,
                          const ShootingOptions& options = {});

/// First downward crossing of u through alpha, linearly interpolated; 0 when
/// u starts below alpha.
double extract_t_star(const UniformGrid& grid, const std::vector<double>& u, double alpha);

struct SemiExplicitCoeffs {
    double theta = 0.0;  ///< MW, particular solution of the capacity BVP
    double r1 = 0.0;     ///< 1/year
    double r2 = 0.0;     ///< 1/year
    double Cc = 0.0;     ///< MW
    double Dd = 0.0;     ///< MW
    double t_star = 0.0; ///< years
    double residual = 0.0;  ///< stopping-time equation at t_star, $/MW
};

struct SemiExplicitResult {
    SemiExplicitCoeffs coeffs;
    HomogeneousSolution solution;
};

/// Closed-form capacity path for a linear price: exponential modes on
/// [0, t_star] and pure depreciation afterwards, with t_star the root of the
/// stopping-time equation. Requires check_assumption to hold.
SemiExplicitResult semi_explicit_linear(const ModelParams& params, const PriceFunction& pf,
                                        const UniformGrid& grid);

/// Residual of the stopping-time equation at candidate t (value of one MW
/// installed at t minus alpha), together with the coefficients it implies.
SemiExplicitCoeffs semi_explicit_coeffs(const ModelParams& params, const LinearPrice& price, double t_star);
double stopping_time_residual(const ModelParams& params, const LinearPrice& price, double t_star);

struct LemmaReport {
    bool single_crossing = false;   ///< u - alpha changes sign at most once, downwards
    bool price_above_cost = false;  ///< min P(X_t) - c >= -slack
    bool lower_bound = false;       ///< X_t >= X0 e^{-delta t} - slack
    int crossings = 0;
    double min_price_margin = 0.0;  ///< min_t P(X_t) - c
    double min_lower_bound_gap = 0.0;  ///< min_t X_t - X0 e^{-delta t}
};

struct LemmaSlack {
    double price = 1e-6;  ///< relative to c
    double capacity = 1e-9;  ///< relative to X0
};

LemmaReport verify_lemmas(const HomogeneousSolution& sol, const ModelParams& params,
                          const PriceFunction& pf, const LemmaSlack& slack = {});

}  // namespace capmfg
