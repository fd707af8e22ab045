#include <algorithm>
#include <cmath>
#include <string>

#include "capmfg/error.hpp"
#include "capmfg/mfg.hpp"
#include "lapack.hpp"

namespace capmfg {

namespace {

struct LayerProblem {
    const ModelParams& p;
    const UniformGrid& x;
    std::span<const double> next;  // V at t_{n+1}
    std::vector<double> revenue;   // h (P - c) x at the nodes
    double target = 0.0;           // alpha + beta N nubar
    double dt = 0.0;
    double sigma = 0.0;
    std::size_t first = 1;         // first unknown node
    std::size_t last = 0;          // one past the last unknown node
    HjbScheme scheme = HjbScheme::central;
};

// R_j for j in [first, last); optional tridiagonal Jacobian (lo, di, up).
void layer_residual(const LayerProblem& L, std::span<const double> V, std::vector<double>& R, std::vector<double>* lo,
                    std::vector<double>* di, std::vector<double>* up) {
    const std::size_t n_x = L.x.size();
    const double dx = L.x.step();
    const auto& p = L.p;
    const std::size_t m = L.last - L.first;
    R.resize(m);
    if (lo) {
        lo->assign(m, 0.0);
        di->assign(m, 0.0);
        up->assign(m, 0.0);
    }
    for (std::size_t k = 0; k < m; ++k) {
        const std::size_t j = L.first + k;
        double r;
        if (j == 0) {
            const double D = (V[1] - V[0]) / dx;
            const double q = std::max(D - L.target, 0.0);
            r = (L.next[0] - V[0]) / L.dt - p.r * V[0] + q * q / (4 * p.beta);
            if (lo) {
                (*di)[k] = -1 / L.dt - p.r - q / (2 * p.beta * dx);
                (*up)[k] = q / (2 * p.beta * dx);
            }
        } else if (j == n_x - 1) {
            // free top node: the drift points into the grid and nobody installs there
            const double xj = L.x[j];
            const double Dm = (V[j] - V[j - 1]) / dx;
            r = (L.next[j] - V[j]) / L.dt - p.r * V[j] - p.delta * xj * Dm + L.revenue[j];
            if (lo) {
                const double down = p.delta * xj / dx;
                (*lo)[k] = down;
                (*di)[k] = -down - 1 / L.dt - p.r;
            }
        } else {
            const double xj = L.x[j];
            double dd = 0.0;
            if (L.sigma > 0) dd = L.sigma * L.sigma * xj * xj / 2;
            if (L.scheme == HjbScheme::central) {
                const double D = (V[j + 1] - V[j - 1]) / (2 * dx);
                const double q = std::max(D - L.target, 0.0);
                r = (L.next[j] - V[j]) / L.dt - p.r * V[j] - p.delta * xj * D + L.revenue[j] + q * q / (4 * p.beta);
                if (lo) {
                    const double drift = (-p.delta * xj + q / (2 * p.beta)) / (2 * dx);
                    (*up)[k] = drift;
                    (*lo)[k] = -drift;
                }
            } else {
                const double Dm = (V[j] - V[j - 1]) / dx;
                const double Dp = (V[j + 1] - V[j]) / dx;
                const double q = std::max(Dp - L.target, 0.0);
                r = (L.next[j] - V[j]) / L.dt - p.r * V[j] - p.delta * xj * Dm + L.revenue[j] + q * q / (4 * p.beta);
                if (lo) {
                    const double down = p.delta * xj / dx, push = q / (2 * p.beta * dx);
                    (*up)[k] = push;
                    (*lo)[k] = down;
                    (*di)[k] = -down - push;
                }
            }
            if (dd > 0) r += dd * (V[j + 1] - 2 * V[j] + V[j - 1]) / (dx * dx);
            if (lo) {
                (*di)[k] += -1 / L.dt - p.r - 2 * dd / (dx * dx);
                (*up)[k] += dd / (dx * dx);
                (*lo)[k] += dd / (dx * dx);
            }
        }
        R[k] = r;
    }
}

double sup_norm(const std::vector<double>& v) {
    double s = 0.0;
    for (double e : v) s = std::max(s, std::abs(e));
    return s;
}

std::vector<double> revenue_row(const ModelParams& p, const PriceFunction& pf, const UniformGrid& x, double xbar,
                                PriceCoupling coupling) {
    std::vector<double> rev(x.size(), 0.0);
    for (std::size_t j = 1; j < x.size(); ++j) {
        const double agg = coupling == PriceCoupling::homogeneous_reduction ? (p.N + 1) * xbar : x[j] + p.N * xbar;
        rev[j] = p.h * (pf(agg) - p.c) * x[j];
    }
    return rev;
}

}  // namespace

double hjb_layer_residual(const ModelParams& params, const PriceFunction& pf, double xbar, double nubar,
                          const Grids& grids, std::span<const double> next, std::span<const double> layer,
                          bool left_dirichlet, bool right_dirichlet, const HjbOptions& options, double sigma) {
    LayerProblem L{params, grids.x, next, revenue_row(params, pf, grids.x, xbar, options.coupling),
                   params.alpha + params.beta * params.N * nubar, grids.t.step(), sigma,
                   static_cast<std::size_t>(left_dirichlet ? 1 : 0), grids.x.size() - (right_dirichlet ? 1 : 0),
                   options.scheme};
    std::vector<double> R;
    layer_residual(L, layer, R, nullptr, nullptr, nullptr);
    return sup_norm(R);
}

ValueSurface hjb_backward_fd(const ModelParams& p, const PriceFunction& pf, std::span<const double> xbar,
                             std::span<const double> nubar, const Grids& g, const HjbBoundary& bc,
                             const HjbOptions& options, double sigma) {
    const std::size_t n_t = g.t.size(), n_x = g.x.size();
    if (xbar.size() != n_t || nubar.size() != n_t) fail(ErrorKind::validation, "hjb: mean paths do not match t grid");
    const bool left_dirichlet = !bc.left.empty(), right_dirichlet = !bc.right.empty();
    if ((left_dirichlet && bc.left.size() != n_t) || (right_dirichlet && bc.right.size() != n_t)) {
        fail(ErrorKind::validation, "hjb: boundary columns do not match the t grid");
    }
    if (!right_dirichlet && (options.scheme != HjbScheme::upwind || sigma > 0)) {
        fail(ErrorKind::validation, "hjb: a free right boundary needs the upwind scheme and sigma = 0");
    }
    ValueSurface out;
    out.V = Field(n_t, n_x);
    out.Vx = Field(n_t, n_x);

    const std::size_t first = left_dirichlet ? 1 : 0;
    const std::size_t last = n_x - (right_dirichlet ? 1 : 0);
    const int m = static_cast<int>(last - first);
    std::vector<double> V(n_x), trial(n_x), R, Rt, lo, di, up, rhs;
    for (std::size_t n = n_t - 1; n-- > 0;) {
        auto next = out.V.row(n + 1);
        LayerProblem L{p, g.x, next, revenue_row(p, pf, g.x, xbar[n], options.coupling),
                       p.alpha + p.beta * p.N * nubar[n], g.t.step(), sigma, first, last, options.scheme};
        std::copy(next.begin(), next.end(), V.begin());
        if (left_dirichlet) V[0] = bc.left[n];
        if (right_dirichlet) V[n_x - 1] = bc.right[n];

        double scale = 1.0;
        for (std::size_t j = 0; j < n_x; ++j) {
            scale = std::max({scale, std::abs(L.revenue[j]), std::abs(next[j]) / L.dt});
        }
        const double tol = options.layer_tol * scale;

        layer_residual(L, V, R, &lo, &di, &up);
        double res = sup_norm(R);
        // one Newton step past the tolerance takes the layer to round-off, so that
        // V depends smoothly on the mean paths (the outer Newton differentiates it)
        int it = 0, polish = 1;
        while (res > tol || polish-- > 0) {
            if (++it > options.max_iterations) {
                fail(ErrorKind::convergence, "hjb layer " + std::to_string(n) + " (t = " + std::to_string(g.t[n]) +
                                                 ") did not converge: residual " + std::to_string(res));
            }
            // J dV = -R; dgtsv takes sub-diagonal lo[1..], super-diagonal up[..m-2]
            rhs.resize(m);
            for (int k = 0; k < m; ++k) rhs[k] = -R[k];
            std::vector<double> dl(lo.begin() + 1, lo.end()), du(up.begin(), up.end() - 1);
            const int nrhs = 1;
            int info = 0;
            dgtsv_(&m, &nrhs, dl.data(), di.data(), du.data(), rhs.data(), &m, &info);
            if (info != 0) {
                fail(ErrorKind::convergence, "hjb layer " + std::to_string(n) + ": singular Newton system");
            }
            double step = 1.0;
            double res_trial = res;
            for (int half = 0, halvings = res <= tol ? 1 : 40; half < halvings; ++half) {
                trial = V;
                for (int k = 0; k < m; ++k) trial[first + k] += step * rhs[k];
                layer_residual(L, trial, Rt, nullptr, nullptr, nullptr);
                res_trial = sup_norm(Rt);
                if (res_trial < res) break;
                step /= 2;
            }
            if (!(res_trial < res)) {
                if (res <= tol) break;
                fail(ErrorKind::convergence, "hjb layer " + std::to_string(n) + ": Newton stalled at residual " +
                                                 std::to_string(res));
            }
            V = trial;
            layer_residual(L, V, R, &lo, &di, &up);
            res = sup_norm(R);
        }
        out.max_layer_iterations = std::max(out.max_layer_iterations, it);
        out.max_layer_residual = std::max(out.max_layer_residual, res / scale);
        std::copy(V.begin(), V.end(), out.V.row(n).begin());
    }

    const double dx = g.x.step();
    for (std::size_t n = 0; n < n_t; ++n) {
        auto v = out.V.row(n);
        auto d = out.Vx.row(n);
        d[0] = (v[1] - v[0]) / dx;
        for (std::size_t j = 1; j + 1 < n_x; ++j) d[j] = (v[j + 1] - v[j - 1]) / (2 * dx);
        d[n_x - 1] = (v[n_x - 1] - v[n_x - 2]) / dx;
    }
    return out;
}

}  // namespace capmfg
