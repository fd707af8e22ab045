#include "capmfg/homogeneous.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include <boost/multiprecision/float128.hpp>

#include "capmfg/error.hpp"

namespace capmfg {

namespace {

using quad = boost::multiprecision::float128;

void check_time_grid(const ModelParams& p, const UniformGrid& grid) {
    if (grid.size() < 2 || grid.lo() != 0.0 || std::abs(grid.hi() - p.T) > 1e-12 * p.T) {
        fail(ErrorKind::validation, "time grid must span [0, T]");
    }
    if (grid.intervals() < 100) {
        fail(ErrorKind::validation, "time grid needs at least 100 steps (got " +
                                        std::to_string(grid.intervals()) + ")");
    }
}

template <typename S>
struct ForwardRun {
    std::vector<S> X, u;
    S uT = 0;
    bool finite = true;
    double blowup_t = 0.0;
};

template <typename S>
ForwardRun<S> run_forward(const ModelParams& p, const PriceFunction& pf, S u0, const UniformGrid& grid,
                          bool record) {
    const S delta = p.delta, rd = p.r + p.delta, alpha = p.alpha, beta = p.beta, h = p.h, c = p.c;
    const bool linear = pf.is_linear();
    const S d1 = linear ? pf.linear().d1 : 0.0;
    const S d2 = linear ? pf.linear().d2 : 0.0;
    const S pp = linear ? 0.0 : pf.inverse().p;

    auto rhs = [&](S, const std::array<S, 2>& y, std::array<S, 2>& dy) {
        const S price = linear ? d1 - d2 * y[0] : pp / y[0];
        const S excess = y[1] > alpha ? y[1] - alpha : S(0);
        dy[0] = -delta * y[0] + excess / beta;
        dy[1] = rd * y[1] - (price - c) * h;
    };

    ForwardRun<S> out;
    if (record) {
        out.X.reserve(grid.size());
        out.u.reserve(grid.size());
    }
    std::array<S, 2> y{S(p.X0), u0};
    if (record) {
        out.X.push_back(y[0]);
        out.u.push_back(y[1]);
    }
    const S dt = grid.step();
    for (std::size_t k = 0; k + 1 < grid.size(); ++k) {
        rk4_step<S, 2>(rhs, S(grid[k]), y, dt);
        const double x = static_cast<double>(y[0]);
        const double v = static_cast<double>(y[1]);
        if (!std::isfinite(x) || !std::isfinite(v) || (!linear && !(x > 0))) {
            out.finite = false;
            out.blowup_t = grid[k + 1];
            // saturate so callers can still read a sign off u
            out.uT = v > 0 || (std::isnan(v) && u0 > 0) ? S(std::numeric_limits<double>::infinity())
                                                         : S(-std::numeric_limits<double>::infinity());
            return out;
        }
        if (record) {
            out.X.push_back(y[0]);
            out.u.push_back(y[1]);
        }
    }
    out.uT = y[1];
    return out;
}

template <typename S>
std::vector<double> to_double(const std::vector<S>& v) {
    std::vector<double> out(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = static_cast<double>(v[i]);
    return out;
}

// Costate bracket on the shared grid: h * min_t int_0^t e^{-(r+delta)s}(P(X0 e^{-delta s}) - c) ds
// and the same integral over [0, T].
std::pair<double, double> shooting_bracket(const ModelParams& p, const PriceFunction& pf,
                                           const UniformGrid& grid) {
    const double dt = grid.step();
    auto g = [&](std::size_t k) {
        const double s = grid[k];
        return p.h * std::exp(-(p.r + p.delta) * s) * (pf(p.X0 * std::exp(-p.delta * s)) - p.c);
    };
    double running = 0.0, lowest = 0.0;
    double g_prev = g(0);
    for (std::size_t k = 1; k < grid.size(); ++k) {
        const double gk = g(k);
        running += dt / 2 * (g_prev + gk);
        g_prev = gk;
        lowest = std::min(lowest, running);
    }
    return {lowest - 1.0, running + 1.0};
}

void fill_controls(HomogeneousSolution& sol, const ModelParams& p) {
    sol.K.resize(sol.u.size());
    for (std::size_t i = 0; i < sol.u.size(); ++i) sol.K[i] = std::max(sol.u[i] - p.alpha, 0.0) / p.beta;
    sol.t_star = extract_t_star(sol.grid, sol.u, p.alpha);
}

}  // namespace

ForwardPaths integrate_forward(const ModelParams& params, const PriceFunction& pf, double u0,
                               const UniformGrid& grid) {
    params.validate();
    check_time_grid(params, grid);
    if (!pf.is_linear() && !(params.X0 > 0)) fail(ErrorKind::validation, "inverse price requires X0 > 0");
    auto run = run_forward<double>(params, pf, u0, grid, true);
    if (!run.finite) {
        fail(ErrorKind::divergence, "forward system left the finite range at t = " +
                                        std::to_string(run.blowup_t) + " years");
    }
    return {std::move(run.X), std::move(run.u)};
}

double extract_t_star(const UniformGrid& grid, const std::vector<double>& u, double alpha) {
    if (u.empty() || u[0] < alpha) return 0.0;
    for (std::size_t k = 0; k + 1 < u.size(); ++k) {
        if (u[k] >= alpha && u[k + 1] < alpha) {
            return grid[k] + grid.step() * (u[k] - alpha) / (u[k] - u[k + 1]);
        }
    }
    return grid.hi();
}

HomogeneousSolution shoot(const ModelParams& params, const PriceFunction& pf, const UniformGrid& grid,
                          const ShootingOptions& options) {
    params.validate();
    check_time_grid(params, grid);
    if (!pf.is_linear() && !(params.X0 > 0)) fail(ErrorKind::validation, "inverse price requires X0 > 0");
    const double tol = options.tol > 0 ? options.tol : 1e-6 * params.alpha;

    auto [lo, hi] = shooting_bracket(params, pf, grid);
    auto residual = [&](double u0) { return static_cast<double>(run_forward<double>(params, pf, u0, grid, false).uT); };
    const double flo = residual(lo);
    const double fhi = residual(hi);
    if (!(flo < 0) || !(fhi > 0)) {
        fail(ErrorKind::bracketing, "shooting bracket [" + std::to_string(lo) + ", " + std::to_string(hi) +
                                        "] gives u_T = " + std::to_string(flo) + ", " + std::to_string(fhi));
    }

    HomogeneousSolution sol;
    sol.grid = grid;
    int it = 0;
    double last = flo;
    while (it < options.max_iterations) {
        const double mid = lo + (hi - lo) / 2;
        if (mid == lo || mid == hi) break;
        const double fm = residual(mid);
        ++it;
        last = fm;
        if (std::abs(fm) <= tol) {
            auto run = run_forward<double>(params, pf, mid, grid, true);
            sol.X = std::move(run.X);
            sol.u = std::move(run.u);
            sol.u0 = mid;
            sol.residual = fm;
            sol.iterations = it;
            fill_controls(sol, params);
            return sol;
        }
        (fm < 0 ? lo : hi) = mid;
    }

    if (it >= options.max_iterations || !options.extended_precision) {
        fail(ErrorKind::convergence, "shooting stopped after " + std::to_string(it) +
                                         " iterations with |u_T| = " + std::to_string(std::abs(last)));
    }

    // The double bracket has collapsed. Its end-point signs may be roundoff,
    // so confirm them in quad precision and restart from the full bracket if not.
    auto qres = [&](quad u0) { return run_forward<quad>(params, pf, u0, grid, false).uT; };
    quad qlo = lo, qhi = hi;
    if (!(qres(qlo) < 0) || !(qres(qhi) > 0)) {
        auto full = shooting_bracket(params, pf, grid);
        qlo = full.first;
        qhi = full.second;
    }
    quad qlast = 0;
    while (it < options.max_iterations) {
        const quad mid = qlo + (qhi - qlo) / 2;
        if (mid == qlo || mid == qhi) break;
        const quad fm = qres(mid);
        ++it;
        qlast = fm;
        if (abs(fm) <= tol) {
            auto run = run_forward<quad>(params, pf, mid, grid, true);
            sol.X = to_double(run.X);
            sol.u = to_double(run.u);
            sol.u0 = static_cast<double>(mid);
            sol.residual = static_cast<double>(fm);
            sol.iterations = it;
            sol.extended_precision = true;
            fill_controls(sol, params);
            return sol;
        }
        (fm < 0 ? qlo : qhi) = mid;
    }
    fail(ErrorKind::convergence, "shooting stopped after " + std::to_string(it) +
                                     " iterations (extended precision) with |u_T| = " +
                                     std::to_string(std::abs(static_cast<double>(qlast))));
}

// ---------------------------------------------------------------------------

SemiExplicitCoeffs semi_explicit_coeffs(const ModelParams& p, const LinearPrice& price, double t_star) {
    const double r = p.r, d = p.delta, rd = p.r + p.delta;
    const double q = rd * d + p.h * price.d2 / p.beta;
    const double disc = std::sqrt(r * r + 4 * q);
    SemiExplicitCoeffs k;
    k.r1 = (r + disc) / 2;
    k.r2 = (r - disc) / 2;
    k.theta = (p.h * (price.d1 - p.c) - rd * p.alpha) / (p.beta * rd * d + p.h * price.d2);
    k.t_star = t_star;

    // C e^{r1 t*}, scaled so nothing overflows for large r1 t*:
    // delta X + X' = 0 at t* and X(0) = X0 fix C and D.
    const double e2 = std::exp(k.r2 * t_star);
    const double c_hat = ((p.X0 - k.theta) * (k.r2 + d) * e2 + d * k.theta) /
                         ((k.r2 + d) * std::exp(-(k.r1 - k.r2) * t_star) - (k.r1 + d));
    k.Cc = c_hat * std::exp(-k.r1 * t_star);
    k.Dd = p.X0 - k.Cc - k.theta;

    const double x_star = c_hat + k.Dd * e2 + k.theta;
    const double tau = p.T - t_star;
    const double value = p.h * (price.d1 - p.c) / rd * (1 - std::exp(-rd * tau)) -
                         p.h * price.d2 / (rd + d) * (1 - std::exp(-(rd + d) * tau)) * x_star;
    k.residual = value - p.alpha;
    return k;
}

double stopping_time_residual(const ModelParams& params, const LinearPrice& price, double t_star) {
    return semi_explicit_coeffs(params, price, t_star).residual;
}

SemiExplicitResult semi_explicit_linear(const ModelParams& params, const PriceFunction& pf,
                                        const UniformGrid& grid) {
    params.validate();
    check_time_grid(params, grid);
    const LinearPrice& price = pf.linear();
    if (!check_assumption(params, pf).holds) {
        fail(ErrorKind::validation, "semi-explicit solution requires the non-triviality assumption");
    }

    auto f = [&](double t) { return stopping_time_residual(params, price, t); };
    // scan for the first sign change; the root is unique when the assumption holds
    constexpr int kScan = 4000;
    const double h = params.T / kScan;
    double lo = -1, hi = -1;
    double f_prev = f(h * 1e-6);
    for (int i = 1; i <= kScan; ++i) {
        const double t = i == kScan ? params.T * (1 - 1e-12) : i * h;
        const double ft = f(t);
        if ((f_prev > 0) != (ft > 0)) {
            lo = i == 1 ? h * 1e-6 : (i - 1) * h;
            hi = t;
            break;
        }
        f_prev = ft;
    }
    if (lo < 0) fail(ErrorKind::bracketing, "stopping-time equation has no sign change on (0, T)");
    const auto root = bisect(f, lo, hi, 0.0, 200);

    SemiExplicitResult out;
    out.coeffs = semi_explicit_coeffs(params, price, root.root);
    const auto& k = out.coeffs;
    const double ts = k.t_star;
    const double d = params.delta, rd = params.r + params.delta;

    HomogeneousSolution& sol = out.solution;
    sol.grid = grid;
    sol.X.resize(grid.size());
    sol.u.resize(grid.size());
    const double c_hat = k.Cc * std::exp(k.r1 * ts);
    const double x_ts = c_hat + k.Dd * std::exp(k.r2 * ts) + k.theta;
    for (std::size_t i = 0; i < grid.size(); ++i) {
        const double t = grid[i];
        if (t <= ts) {
            const double cm = c_hat * std::exp(k.r1 * (t - ts));
            const double dm = k.Dd * std::exp(k.r2 * t);
            const double x = cm + dm + k.theta;
            const double xdot = k.r1 * cm + k.r2 * dm;
            sol.X[i] = x;
            sol.u[i] = params.alpha + params.beta * (xdot + d * x);
        } else {
            const double x = x_ts * std::exp(-d * (t - ts));
            const double tau = params.T - t;
            sol.X[i] = x;
            sol.u[i] = params.h * (price.d1 - params.c) / rd * (1 - std::exp(-rd * tau)) -
                       params.h * price.d2 * x / (rd + d) * (1 - std::exp(-(rd + d) * tau));
        }
    }
    sol.K.resize(grid.size());
    for (std::size_t i = 0; i < grid.size(); ++i) sol.K[i] = std::max(sol.u[i] - params.alpha, 0.0) / params.beta;
    sol.t_star = ts;
    sol.u0 = sol.u.front();
    sol.residual = sol.u.back();
    sol.iterations = root.iterations;
    return out;
}

LemmaReport verify_lemmas(const HomogeneousSolution& sol, const ModelParams& params, const PriceFunction& pf,
                          const LemmaSlack& slack) {
    LemmaReport rep;
    bool upward = false;
    for (std::size_t i = 0; i + 1 < sol.u.size(); ++i) {
        const bool a = sol.u[i] >= params.alpha;
        const bool b = sol.u[i + 1] >= params.alpha;
        if (a != b) {
            ++rep.crossings;
            if (b) upward = true;
        }
    }
    rep.single_crossing = rep.crossings <= 1 && !upward;

    rep.min_price_margin = std::numeric_limits<double>::infinity();
    rep.min_lower_bound_gap = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < sol.X.size(); ++i) {
        const double x = sol.X[i];
        const double margin = (pf.is_linear() || x > 0) ? pf(x) - params.c : -std::numeric_limits<double>::infinity();
        rep.min_price_margin = std::min(rep.min_price_margin, margin);
        rep.min_lower_bound_gap =
            std::min(rep.min_lower_bound_gap, x - params.X0 * std::exp(-params.delta * sol.grid[i]));
    }
    rep.price_above_cost = rep.min_price_margin >= -slack.price * params.c;
    rep.lower_bound = rep.min_lower_bound_gap >= -slack.capacity * std::max(params.X0, 1.0);
    return rep;
}

}  // namespace capmfg
