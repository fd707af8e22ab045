#include "capmfg/mfg.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "capmfg/error.hpp"
#include "lapack.hpp"

namespace capmfg {

Grids make_grids(const ModelParams& params, const PriceFunction& pf, std::size_t n_t, std::size_t n_x,
                 double inflation) {
    if (n_t < 2 || n_x < 3) fail(ErrorKind::validation, "grids need n_t >= 2 and n_x >= 3");
    if (!(inflation >= 1.0)) fail(ErrorKind::validation, "x_max inflation must be >= 1");
    return {UniformGrid(0.0, params.T, n_t), UniformGrid(0.0, inflation * compute_xmax(params, pf), n_x)};
}

// ---------------------------------------------------------------------------

namespace {

void bin_mass(const UniformGrid& x, double position, double mass, std::vector<double>& m) {
    if (position < 0 || position > x.hi()) {
        fail(ErrorKind::validation, "initial capacity " + std::to_string(position) + " MW outside [0, x_max = " +
                                        std::to_string(x.hi()) + "]");
    }
    auto [i, f] = x.locate(position);
    m[i] += mass * (1 - f) / x.step();
    m[i + 1] += mass * f / x.step();
}

}  // namespace

InitialDensity build_initial_density(const ModelParams& params, const Grids& grids, const InitialDensitySpec& spec) {
    const UniformGrid& x = grids.x;
    InitialDensity out;
    out.m.assign(x.size(), 0.0);
    const double per_producer = params.X0 / (params.N + 1);
    std::ostringstream note;

    switch (spec.kind) {
    case InitialDensitySpec::Kind::truncated_exponential: {
        if (spec.n_levels < 1) fail(ErrorKind::validation, "n_levels must be >= 1");
        if (!(params.X0 > 0)) fail(ErrorKind::validation, "truncated exponential needs X0 > 0");
        const double x_end = spec.x_end > 0 ? spec.x_end : params.X0;
        const int n = spec.n_levels;
        std::vector<double> level(n), weight(n);
        double total = 0.0;
        for (int i = 0; i < n; ++i) {
            level[i] = (i + 1) * x_end / n;
            weight[i] = std::exp(-n * level[i] / params.X0);
            if (!(weight[i] > 0)) fail(ErrorKind::validation, "truncated exponential weight underflows to 0");
            total += weight[i];
        }
        double nominal_mean = 0.0;
        for (int i = 0; i < n; ++i) nominal_mean += weight[i] / total * level[i];
        out.scale = per_producer / nominal_mean;
        for (int i = 0; i < n; ++i) bin_mass(x, out.scale * level[i], weight[i] / total, out.m);
        note << "truncated_exponential: levels i*x_end/n (i=1..n, n=" << n << ", x_end=" << x_end
             << " MW), weights exp(-n x_i/X0), capacities scaled by " << out.scale
             << " so the mean is X0/(N+1) and the total is X0";
        break;
    }
    case InitialDensitySpec::Kind::dirac: {
        const double x0 = spec.x0 > 0 ? spec.x0 : per_producer;
        bin_mass(x, x0, 1.0, out.m);
        note << "dirac at " << x0 << " MW";
        break;
    }
    case InitialDensitySpec::Kind::custom: {
        if (spec.table.empty()) fail(ErrorKind::validation, "custom initial density table is empty");
        double total = 0.0;
        for (const auto& [pos, w] : spec.table) {
            if (!(w > 0)) fail(ErrorKind::validation, "custom initial density masses must be > 0");
            total += w;
        }
        for (const auto& [pos, w] : spec.table) bin_mass(x, pos, w / total, out.m);
        note << "custom table of " << spec.table.size() << " entries, masses normalised to 1";
        break;
    }
    }
    for (std::size_t j = 0; j < x.size(); ++j) out.mean += x[j] * out.m[j] * x.step();
    out.convention = note.str();
    return out;
}

// ---------------------------------------------------------------------------

namespace {

// price level faced by a producer with capacity x
double coupled_price(const LinearPrice& lp, const ModelParams& p, PriceCoupling coupling, double x, double xbar) {
    if (coupling == PriceCoupling::homogeneous_reduction) return lp.d1 - lp.d2 * (p.N + 1) * xbar;
    return lp.d1 - lp.d2 * (x + p.N * xbar);
}

void check_path(std::span<const double> v, const UniformGrid& t, const char* what) {
    if (v.size() != t.size()) {
        fail(ErrorKind::validation, std::string(what) + " path has " + std::to_string(v.size()) +
                                        " points, time grid has " + std::to_string(t.size()));
    }
}

}  // namespace

NonInstallCoeffs noninstall_value_linear(const ModelParams& p, const LinearPrice& price, std::span<const double> xbar,
                                         const UniformGrid& t, PriceCoupling coupling, double sigma) {
    check_path(xbar, t, "xbar");
    const std::size_t n_t = t.size();
    const double dt = t.step();
    const double rate_a = p.r + 2 * p.delta - sigma * sigma;
    const double rate_b = p.r + p.delta;
    const double decay = std::exp(-rate_b * dt);
    NonInstallCoeffs out;
    out.a.assign(n_t, 0.0);
    out.b.assign(n_t, 0.0);
    if (coupling == PriceCoupling::individual) {
        for (std::size_t n = 0; n < n_t; ++n) {
            const double tau = static_cast<double>(n_t - 1 - n) * dt;
            out.a[n] = -p.h * price.d2 / rate_a * (1 - std::exp(-rate_a * tau));
        }
    }
    // at x = 0 the running marginal revenue is h (P(N xbar) - c), or the
    // reduced price at (N+1) xbar
    auto g = [&](std::size_t n) { return p.h * (coupled_price(price, p, coupling, 0.0, xbar[n]) - p.c); };
    double g_next = g(n_t - 1);
    for (std::size_t n = n_t - 1; n-- > 0;) {
        const double gn = g(n);
        out.b[n] = decay * out.b[n + 1] + dt / 2 * (gn + decay * g_next);
        g_next = gn;
    }
    return out;
}

ValueSlope noninstall_value_inverse(const ModelParams& p, const InversePrice& price, std::span<const double> xbar,
                                    const UniformGrid& t, std::size_t n, double x) {
    check_path(xbar, t, "xbar");
    ValueSlope out;
    const std::size_t n_t = t.size();
    if (n >= n_t - 1) return out;
    const double dt = t.step();
    const double rd = p.r + p.delta;
    double vint = 0.0, sint = 0.0;
    double v_prev = 0.0, s_prev = 0.0;
    for (std::size_t k = n; k < n_t; ++k) {
        const double tau = static_cast<double>(k - n) * dt;
        const double others = p.N * xbar[k];
        const double denom = others + x * std::exp(-p.delta * tau);
        if (!(denom > 0)) {
            fail(ErrorKind::domain, "inverse price with zero aggregate capacity at t = " + std::to_string(t[k]));
        }
        const double disc = std::exp(-rd * tau);
        const double v = disc / denom;
        const double s = disc * others / (denom * denom);
        if (k > n) {
            vint += dt / 2 * (v_prev + v);
            sint += dt / 2 * (s_prev + s);
        }
        v_prev = v;
        s_prev = s;
    }
    const double tau_T = static_cast<double>(n_t - 1 - n) * dt;
    const double cost = p.c / rd * (1 - std::exp(-rd * tau_T));
    out.value = p.h * x * (price.p * vint - cost);
    out.slope = p.h * (price.p * sint - cost);
    return out;
}

std::vector<double> threshold_curve_linear(const ModelParams& p, std::span<const double> a, std::span<const double> b,
                                           std::span<const double> nubar, double x_max, PriceCoupling coupling) {
    const std::size_t n_t = a.size();
    std::vector<double> xs(n_t, 0.0);
    for (std::size_t n = 0; n + 1 < n_t; ++n) {
        const double gap = b[n] - p.alpha - p.beta * p.N * nubar[n];
        if (a[n] < 0) {
            xs[n] = std::max(gap / (-2 * a[n]), 0.0);
        } else if (coupling == PriceCoupling::homogeneous_reduction) {
            xs[n] = gap > 0 ? x_max : 0.0;
        } else {
            fail(ErrorKind::domain, "degenerate quadratic coefficient a = " + std::to_string(a[n]) +
                                        " before the horizon (time index " + std::to_string(n) + ")");
        }
    }
    return xs;
}

std::vector<double> threshold_curve_inverse(const ModelParams& p, const InversePrice& price,
                                            std::span<const double> xbar, std::span<const double> nubar,
                                            const Grids& grids) {
    const std::size_t n_t = grids.t.size();
    std::vector<double> xs(n_t, 0.0);
    const double x_max = grids.x.hi();
    for (std::size_t n = 0; n + 1 < n_t; ++n) {
        const double target = p.alpha + p.beta * p.N * nubar[n];
        auto f = [&](double x) { return noninstall_value_inverse(p, price, xbar, grids.t, n, x).slope - target; };
        const double f0 = f(0.0);
        if (f0 <= 0) continue;
        if (f(x_max) > 0) {
            xs[n] = x_max;
            continue;
        }
        xs[n] = bisect(f, 0.0, x_max, 0.0, 200).root;
    }
    return xs;
}

double stopping_time(const UniformGrid& t, std::span<const double> gap) {
    std::size_t last = gap.size();
    for (std::size_t n = gap.size(); n-- > 0;) {
        if (gap[n] > 0) {
            last = n;
            break;
        }
    }
    if (last == gap.size()) return 0.0;
    if (last + 1 == gap.size()) return t.hi();
    return t[last] + t.step() * gap[last] / (gap[last] - gap[last + 1]);
}

// ---------------------------------------------------------------------------

double riccati_A(double beta, double rate, double forcing, double t_star, double t) {
    if (forcing == 0.0 || t >= t_star) return 0.0;
    const double disc = std::sqrt(rate * rate + 4 * forcing / beta);
    const double l1 = (rate + disc) / 2;
    const double l2 = (rate - disc) / 2;
    const double e = std::exp(-(l1 - l2) * (t_star - t));
    return beta * l1 * (e - 1) / (e + l1 / -l2);
}

AnsatzCoefficients ansatz_install_coeffs(const ModelParams& p, const LinearPrice& price, std::span<const double> xbar,
                                         std::span<const double> nubar, const NonInstallCoeffs& ni,
                                         const UniformGrid& t, double t_star, PriceCoupling coupling, double sigma) {
    check_path(xbar, t, "xbar");
    check_path(nubar, t, "nubar");
    const std::size_t n_t = t.size();
    if (t_star < 0 || t_star >= t.hi()) {
        fail(ErrorKind::validation, "t_star = " + std::to_string(t_star) + " outside [0, T)");
    }
    AnsatzCoefficients k;
    k.a = ni.a;
    k.b = ni.b;
    k.t_star = t_star;
    const double rate = p.r + 2 * p.delta - sigma * sigma;
    const double forcing = coupling == PriceCoupling::individual ? p.h * price.d2 : 0.0;
    const double disc = std::sqrt(rate * rate + 4 * forcing / p.beta);
    k.lambda1 = (rate + disc) / 2;
    k.lambda2 = (rate - disc) / 2;
    k.RA = forcing == 0.0 ? std::numeric_limits<double>::infinity()
                          : -(k.lambda1 / k.lambda2) * std::exp((k.lambda1 - k.lambda2) * t_star);

    k.A.assign(n_t, 0.0);
    k.B = ni.b;
    k.Cq.assign(n_t, 0.0);
    k.RB = interpolate(t, ni.b, t_star);
    if (t_star <= 0) return k;

    for (std::size_t n = 0; n < n_t && t[n] < t_star; ++n) k.A[n] = riccati_A(p.beta, rate, forcing, t_star, t[n]);

    auto lerp = [&](std::span<const double> v, double s) { return interpolate(t, v, s); };
    const double crowd = p.beta * p.N;
    auto rhs = [&](double s, const std::array<double, 2>& y, std::array<double, 2>& dy) {
        const double A = riccati_A(p.beta, rate, forcing, t_star, s);
        const double nb = lerp(nubar, s);
        const double g = p.h * (coupled_price(price, p, coupling, 0.0, lerp(xbar, s)) - p.c);
        const double excess = y[0] - p.alpha - crowd * nb;
        dy[0] = (p.r + p.delta) * y[0] - g - A / p.beta * excess;
        const double pos = std::max(excess, 0.0);
        dy[1] = p.r * y[1] - pos * pos / (4 * p.beta);
    };

    // last node at or before t_star, then whole steps down to 0
    std::size_t k_star = static_cast<std::size_t>(std::floor(t_star / t.step()));
    k_star = std::min(k_star, n_t - 2);
    while (k_star > 0 && t[k_star] > t_star) --k_star;
    std::array<double, 2> y{k.RB, 0.0};
    const double first = t[k_star] - t_star;
    if (first < 0) rk4_step<double, 2>(rhs, t_star, y, first);
    k.B[k_star] = y[0];
    k.Cq[k_star] = y[1];
    for (std::size_t n = k_star; n-- > 0;) {
        rk4_step<double, 2>(rhs, t[n + 1], y, -t.step());
        k.B[n] = y[0];
        k.Cq[n] = y[1];
    }
    return k;
}

// ---------------------------------------------------------------------------

namespace {

struct FaceRates {
    std::vector<double> v;      // advective velocity at faces j+1/2
    std::vector<double> diff;   // sigma^2 x^2 / 2 at nodes
};

void face_velocities(const ModelParams& p, std::span<const double> nu, const UniformGrid& x, double sigma,
                     FaceRates& out) {
    const std::size_t n_x = x.size();
    out.v.resize(n_x - 1);
    for (std::size_t j = 0; j + 1 < n_x; ++j) {
        const double xf = (x[j] + x[j + 1]) / 2;
        out.v[j] = -p.delta * xf + (nu[j] + nu[j + 1]) / 2;
    }
    out.diff.assign(n_x, 0.0);
    if (sigma > 0) {
        for (std::size_t j = 0; j < n_x; ++j) out.diff[j] = sigma * sigma * x[j] * x[j] / 2;
    }
}

// largest fraction of a cell's content the advective fluxes move per unit time
double outflow_rate(const FaceRates& f, const UniformGrid& x) {
    const double dx = x.step();
    double worst = 0.0;
    for (std::size_t j = 0; j < x.size(); ++j) {
        double out = 0.0;
        if (j + 1 < x.size()) out += std::max(f.v[j], 0.0) / dx;
        if (j > 0) out += std::max(-f.v[j - 1], 0.0) / dx;
        worst = std::max(worst, out);
    }
    return worst;
}

// Explicit donor-cell advection, zero flux at both ends.
void fp_step(const FaceRates& f, const UniformGrid& x, double dt, std::span<const double> m, std::span<double> out,
             std::vector<double>& flux) {
    const std::size_t n_x = x.size();
    flux.resize(n_x - 1);
    for (std::size_t j = 0; j + 1 < n_x; ++j) {
        const double v = f.v[j];
        flux[j] = v > 0 ? v * m[j] : v * m[j + 1];
    }
    const double ratio = dt / x.step();
    for (std::size_t j = 0; j < n_x; ++j) {
        const double in = j > 0 ? flux[j - 1] : 0.0;
        const double outf = j + 1 < n_x ? flux[j] : 0.0;
        out[j] = m[j] - ratio * (outf - in);
    }
}

// Implicit step for the diffusive flux -(d m)_x, in place. The matrix has unit
// column sums and is an M-matrix, so mass and positivity carry over for any dt.
void fp_diffuse(const FaceRates& f, const UniformGrid& x, double dt, std::span<double> m, std::vector<double>& work) {
    const std::size_t n_x = x.size();
    const int n = static_cast<int>(n_x);
    const double k = dt / (x.step() * x.step());
    work.assign(3 * n_x, 0.0);
    double* lo = work.data();            // lo[j] couples row j + 1 to column j
    double* di = work.data() + n_x;
    double* up = work.data() + 2 * n_x;  // up[j] couples row j to column j + 1
    for (std::size_t j = 0; j < n_x; ++j) {
        const int faces = (j > 0) + (j + 1 < n_x);
        di[j] = 1 + k * faces * f.diff[j];
        if (j + 1 < n_x) {
            up[j] = -k * f.diff[j + 1];
            lo[j] = -k * f.diff[j];
        }
    }
    const int nrhs = 1;
    int info = 0;
    dgtsv_(&n, &nrhs, lo, di, up, m.data(), &n, &info);
    if (info != 0) fail(ErrorKind::scheme_fault, "Fokker-Planck diffusion system is singular");
}

}  // namespace

std::size_t fp_required_steps(const ModelParams& p, const Field& nu, const Grids& g, double sigma) {
    FaceRates f;
    double worst = 0.0;
    for (std::size_t n = 0; n + 1 < g.t.size(); ++n) {
        face_velocities(p, nu.row(n), g.x, sigma, f);
        worst = std::max(worst, outflow_rate(f, g.x));
    }
    return static_cast<std::size_t>(std::ceil(p.T * worst));
}

Density fp_forward(const ModelParams& p, const Field& nu, const Grids& g, std::span<const double> m0,
                   const FpOptions& options, double sigma) {
    const std::size_t n_t = g.t.size(), n_x = g.x.size();
    if (nu.rows() != n_t || nu.cols() != n_x || m0.size() != n_x) {
        fail(ErrorKind::validation, "fp_forward: control field or initial density does not match the grids");
    }
    const bool diffusive = sigma > 0;
    const double dt = g.t.step();
    if (!options.substep) {
        const std::size_t need = fp_required_steps(p, nu, g, sigma);
        if (need > n_t - 1) {
            fail(ErrorKind::stability, "Fokker-Planck CFL bound violated: need n_t >= " + std::to_string(need + 1) +
                                           " time points (have " + std::to_string(n_t) + ")");
        }
    }
    Density out;
    out.m = Field(n_t, n_x);
    out.mass.assign(n_t, 0.0);
    std::copy(m0.begin(), m0.end(), out.m.row(0).begin());
    FaceRates f;
    std::vector<double> flux, work, a(n_x), b(n_x);
    const double floor = -1e-12;
    for (std::size_t n = 0; n + 1 < n_t; ++n) {
        face_velocities(p, nu.row(n), g.x, sigma, f);
        int sub = std::max(1, options.min_substeps);
        if (options.substep) {
            const double rate = outflow_rate(f, g.x);
            sub = std::max(sub, static_cast<int>(std::ceil(dt * rate * (1 + 1e-12))));
        }
        out.substeps = std::max(out.substeps, sub);
        const double h = dt / sub;
        std::copy(out.m.row(n).begin(), out.m.row(n).end(), a.begin());
        for (int s = 0; s < sub; ++s) {
            fp_step(f, g.x, h, a, b, flux);
            std::swap(a, b);
        }
        if (diffusive) fp_diffuse(f, g.x, dt, a, work);
        auto next = out.m.row(n + 1);
        for (std::size_t j = 0; j < n_x; ++j) {
            if (a[j] < floor) {
                fail(ErrorKind::scheme_fault, "negative density " + std::to_string(a[j]) + " at t = " +
                                                  std::to_string(g.t[n + 1]) + ", x = " + std::to_string(g.x[j]));
            }
            next[j] = a[j];
        }
    }
    for (std::size_t n = 0; n < n_t; ++n) {
        double s = 0.0;
        for (double v : out.m.row(n)) s += v;
        out.mass[n] = s * g.x.step();
    }
    return out;
}

// ---------------------------------------------------------------------------

double mean_rate_update(const ModelParams& p, std::span<const double> vx, std::span<const double> m, double dx,
                        double nubar_in) {
    const double target = p.alpha + p.beta * p.N * nubar_in;
    double num = 0.0, den = 0.0;
    const std::size_t n = vx.size();
    for (std::size_t j = 0; j < n; ++j) {
        if (!(vx[j] > target)) continue;
        const double w = (j == 0 || j + 1 == n) ? dx / 2 : dx;
        num += w * (vx[j] - p.alpha) * m[j];
        den += w * m[j];
    }
    if (den == 0.0) return 0.0;
    return num / (2 * p.beta + p.beta * p.N * den);
}

double mean_rate_local(const ModelParams& p, std::span<const double> vx, std::span<const double> m, double dx) {
    // nb - rhs(nb) is piecewise linear and increasing; walk the nodes in
    // decreasing Vx until the candidate root leaves the next node outside
    const std::size_t n = vx.size();
    std::vector<std::size_t> order;
    order.reserve(n);
    for (std::size_t j = 0; j < n; ++j) {
        if (m[j] != 0.0 && vx[j] > p.alpha) order.push_back(j);
    }
    std::sort(order.begin(), order.end(), [&](std::size_t i, std::size_t k) { return vx[i] > vx[k]; });
    double num = 0.0, den = 0.0, nb = 0.0;
    for (std::size_t k = 0; k < order.size(); ++k) {
        const std::size_t j = order[k];
        const double w = (j == 0 || j + 1 == n) ? dx / 2 : dx;
        num += w * (vx[j] - p.alpha) * m[j];
        den += w * m[j];
        nb = num / (2 * p.beta + p.beta * p.N * den);
        if (k + 1 == order.size() || vx[order[k + 1]] <= p.alpha + p.beta * p.N * nb) break;
    }
    return nb;
}

void optimal_rate_row(const ModelParams& p, std::span<const double> vx, double nubar, std::span<double> out) {
    const double target = p.alpha + p.beta * p.N * nubar;
    for (std::size_t j = 0; j < vx.size(); ++j) out[j] = std::max(vx[j] - target, 0.0) / (2 * p.beta);
}

std::vector<double> mean_capacity_path(const ModelParams& p, const UniformGrid& t, std::span<const double> nubar,
                                       double xbar0) {
    check_path(nubar, t, "nubar");
    std::vector<double> xb(t.size());
    xb[0] = xbar0;
    const double dt = t.step();
    for (std::size_t n = 0; n + 1 < t.size(); ++n) {
        const double n0 = nubar[n], n1 = nubar[n + 1], nh = (n0 + n1) / 2;
        auto f = [&](double x, double nb) { return -p.delta * x + nb; };
        const double x = xb[n];
        const double k1 = f(x, n0);
        const double k2 = f(x + dt / 2 * k1, nh);
        const double k3 = f(x + dt / 2 * k2, nh);
        const double k4 = f(x + dt * k3, n1);
        xb[n + 1] = x + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4);
    }
    return xb;
}

}  // namespace capmfg
