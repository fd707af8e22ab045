#include <algorithm>
#include <cmath>
#include <deque>
#include <functional>
#include <sstream>

#include <Eigen/Dense>
#include <unsupported/Eigen/IterativeSolvers>

#include "capmfg/error.hpp"
#include "capmfg/mfg.hpp"

namespace capmfg::detail {
class JacobianOp;
}

template <>
struct Eigen::internal::traits<capmfg::detail::JacobianOp> : public traits<Eigen::SparseMatrix<double>> {};

namespace capmfg::detail {

// Matrix-free operator v -> J v for Eigen's GMRES.
class JacobianOp : public Eigen::EigenBase<JacobianOp> {
public:
    using Scalar = double;
    using RealScalar = double;
    using StorageIndex = int;
    enum { ColsAtCompileTime = Eigen::Dynamic, MaxColsAtCompileTime = Eigen::Dynamic, IsRowMajor = false };

    JacobianOp(Eigen::Index n, std::function<Eigen::VectorXd(const Eigen::VectorXd&)> apply)
        : n_(n), apply_(std::move(apply)) {}
    Eigen::Index rows() const { return n_; }
    Eigen::Index cols() const { return n_; }
    Eigen::VectorXd apply(const Eigen::VectorXd& v) const { return apply_(v); }

    template <typename Rhs>
    Eigen::Product<JacobianOp, Rhs, Eigen::AliasFreeProduct> operator*(const Eigen::MatrixBase<Rhs>& x) const {
        return Eigen::Product<JacobianOp, Rhs, Eigen::AliasFreeProduct>(*this, x.derived());
    }

private:
    Eigen::Index n_;
    std::function<Eigen::VectorXd(const Eigen::VectorXd&)> apply_;
};

}  // namespace capmfg::detail

namespace Eigen::internal {

template <typename Rhs>
struct generic_product_impl<capmfg::detail::JacobianOp, Rhs, SparseShape, DenseShape, GemvProduct>
    : generic_product_impl_base<capmfg::detail::JacobianOp, Rhs,
                                generic_product_impl<capmfg::detail::JacobianOp, Rhs>> {
    template <typename Dest>
    static void scaleAndAddTo(Dest& dst, const capmfg::detail::JacobianOp& lhs, const Rhs& rhs, const double& alpha) {
        dst.noalias() += alpha * lhs.apply(rhs);
    }
};

}  // namespace Eigen::internal

namespace capmfg {

namespace {

struct Stage {
    std::vector<double> xbar, x_star, nubar_new;
    AnsatzCoefficients coeffs;
    Field V, Vx, nu_star;
    Density density;
    double t_star = 0.0;
};

// x* is the upper edge of {Vx > target}; gap is max_x Vx - target, positive
// while anyone installs.
std::vector<double> fd_threshold(const ModelParams& p, const Field& Vx, std::span<const double> nubar,
                                 const UniformGrid& x, std::vector<double>& gap) {
    const std::size_t n_t = Vx.rows();
    std::vector<double> xs(n_t, 0.0);
    gap.assign(n_t, 0.0);
    for (std::size_t n = 0; n < n_t; ++n) {
        const double target = p.alpha + p.beta * p.N * nubar[n];
        auto row = Vx.row(n);
        gap[n] = *std::max_element(row.begin(), row.end()) - target;
        if (n + 1 == n_t || gap[n] <= 0) continue;
        std::size_t j = row.size() - 1;
        while (row[j] <= target) --j;
        if (j + 1 == row.size()) {
            xs[n] = x.hi();
            continue;
        }
        xs[n] = x[j] + x.step() * (row[j] - target) / (row[j] - row[j + 1]);
    }
    return xs;
}

Stage evaluate(const ModelParams& p, const PriceFunction& pf, const MfgOptions& o, const Grids& g,
               const InitialDensity& m0, std::span<const double> nubar, double sigma, int& fp_floor) {
    const std::size_t n_t = g.t.size(), n_x = g.x.size();
    Stage s;
    s.xbar = mean_capacity_path(p, g.t, nubar, m0.mean);
    s.Vx = Field(n_t, n_x);

    if (pf.is_linear()) {
        const LinearPrice& lp = pf.linear();
        NonInstallCoeffs ni = noninstall_value_linear(p, lp, s.xbar, g.t, o.coupling, sigma);
        std::vector<double> gap(n_t);
        for (std::size_t n = 0; n < n_t; ++n) gap[n] = ni.b[n] - p.alpha - p.beta * p.N * nubar[n];
        s.x_star = threshold_curve_linear(p, ni.a, ni.b, nubar, g.x.hi(), o.coupling);
        s.t_star = stopping_time(g.t, gap);
        s.coeffs = ansatz_install_coeffs(p, lp, s.xbar, nubar, ni, g.t, s.t_star, o.coupling, sigma);
        if (o.method == MfgMethod::ansatz) {
            const auto& k = s.coeffs;
            for (std::size_t n = 0; n < n_t; ++n) {
                auto row = s.Vx.row(n);
                const double half = g.x.step() / 2;
                for (std::size_t j = 0; j < n_x; ++j) {
                    // the node whose cell straddles x* takes the cell average of the two
                    // pieces, each linear piece averaged at the midpoint of its part
                    const double x = g.x[j];
                    const double cut = std::clamp(s.x_star[n], x - half, x + half);
                    const double w = (cut - (x - half)) / (2 * half);
                    const double inside = 2 * k.A[n] * ((x - half + cut) / 2) + k.B[n];
                    const double outside = 2 * k.a[n] * ((cut + x + half) / 2) + k.b[n];
                    row[j] = w * inside + (1 - w) * outside;
                }
            }
        }
    }

    if (o.method == MfgMethod::fd) {
        HjbBoundary bc;
        const double xm = g.x.hi();
        // the upwind stencil closes itself at both ends when sigma = 0: drift and
        // diffusion vanish at x = 0, and at x_max the drift points into the grid
        const bool upwind = o.hjb.scheme == HjbScheme::upwind;
        if (pf.is_linear() && !upwind) bc.left = s.coeffs.Cq;
        if (!upwind || sigma > 0) {
            bc.right.resize(n_t);
            for (std::size_t n = 0; n < n_t; ++n) {
                bc.right[n] = pf.is_linear() ? s.coeffs.a[n] * xm * xm + s.coeffs.b[n] * xm
                                             : noninstall_value_inverse(p, pf.inverse(), s.xbar, g.t, n, xm).value;
            }
        }
        HjbOptions ho = o.hjb;
        ho.coupling = o.coupling;
        ValueSurface vs = hjb_backward_fd(p, pf, s.xbar, nubar, g, bc, ho, sigma);
        s.V = std::move(vs.V);
        s.Vx = std::move(vs.Vx);
        std::vector<double> gap;
        s.x_star = fd_threshold(p, s.Vx, nubar, g.x, gap);
        s.t_star = stopping_time(g.t, gap);
    }

    s.nu_star = Field(n_t, n_x);
    for (std::size_t n = 0; n < n_t; ++n) optimal_rate_row(p, s.Vx.row(n), nubar[n], s.nu_star.row(n));
    FpOptions fo;
    fo.substep = o.fp_substep;
    fo.min_substeps = fp_floor;
    s.density = fp_forward(p, s.nu_star, g, m0.m, fo, sigma);
    fp_floor = std::max(fp_floor, s.density.substeps);

    s.nubar_new.resize(n_t);
    for (std::size_t n = 0; n < n_t; ++n) {
        s.nubar_new[n] = o.rate_update == RateUpdate::local
                             ? mean_rate_local(p, s.Vx.row(n), s.density.m.row(n), g.x.step())
                             : mean_rate_update(p, s.Vx.row(n), s.density.m.row(n), g.x.step(), nubar[n]);
    }
    return s;
}

double sup_abs(std::span<const double> v) {
    double s = 0.0;
    for (double e : v) s = std::max(s, std::abs(e));
    return s;
}

// Type-II Anderson mixing on g(x) = F(x) - x with a sliding window.
class Anderson {
public:
    Anderson(int depth, double omega) : depth_(depth), omega_(omega) {}

    std::vector<double> next(const std::vector<double>& x, const std::vector<double>& g) {
        const auto n = static_cast<Eigen::Index>(x.size());
        Eigen::Map<const Eigen::VectorXd> xv(x.data(), n), gv(g.data(), n);
        xs_.push_back(xv);
        gs_.push_back(gv);
        if (static_cast<int>(xs_.size()) > depth_ + 1) {
            xs_.pop_front();
            gs_.pop_front();
        }
        Eigen::VectorXd out = xv + omega_ * gv;
        const auto k = static_cast<Eigen::Index>(xs_.size()) - 1;
        if (depth_ > 0 && k > 0) {
            Eigen::MatrixXd dX(n, k), dG(n, k);
            for (Eigen::Index i = 0; i < k; ++i) {
                dX.col(i) = xs_[i + 1] - xs_[i];
                dG.col(i) = gs_[i + 1] - gs_[i];
            }
            const Eigen::VectorXd gamma = dG.colPivHouseholderQr().solve(gv);
            if (gamma.allFinite()) out -= (dX + omega_ * dG) * gamma;
        }
        return {out.data(), out.data() + n};
    }

    void reset() {
        xs_.clear();
        gs_.clear();
    }

private:
    int depth_;
    double omega_;
    std::deque<Eigen::VectorXd> xs_, gs_;
};

}  // namespace

MeanFieldEquilibrium solve_mfg_partial(const ModelParams& p, const PriceFunction& pf, const MfgOptions& o,
                                       double sigma) {
    p.validate();
    if (o.method == MfgMethod::ansatz && !pf.is_linear()) {
        fail(ErrorKind::validation, "the ansatz method requires a linear price");
    }
    if (!(o.outer_tol > 0)) fail(ErrorKind::validation, "outer_tol must be > 0");
    if (!(o.damping > 0 && o.damping <= 1)) fail(ErrorKind::validation, "damping must lie in (0, 1]");
    if (o.max_outer < 1) fail(ErrorKind::validation, "max_outer must be >= 1");
    if (o.anderson_depth < 0) fail(ErrorKind::validation, "anderson_depth must be >= 0");
    if (sigma < 0 || (sigma > 0 && sigma * sigma >= p.r + 2 * p.delta)) {
        fail(ErrorKind::validation, "sigma must satisfy 0 <= sigma^2 < r + 2 delta");
    }

    MeanFieldEquilibrium eq;
    eq.grids = make_grids(p, pf, o.n_t, o.n_x, o.x_inflation);
    eq.m0 = build_initial_density(p, eq.grids, o.m0);
    eq.sigma = sigma;
    eq.method = o.method;
    const UniformGrid& t = eq.grids.t;

    std::vector<double> nubar(t.size());
    if (o.initial_nubar.empty() && o.method == MfgMethod::fd && o.ansatz_warm_start && pf.is_linear()) {
        MfgOptions warm = o;
        warm.method = MfgMethod::ansatz;
        nubar = solve_mfg_partial(p, pf, warm, sigma).nubar;
    } else if (o.initial_nubar.empty()) {
        for (std::size_t n = 0; n < t.size(); ++n) nubar[n] = eq.m0.mean * (1 - t[n] / p.T);
    } else if (o.initial_nubar.size() == t.size()) {
        nubar = o.initial_nubar;
    } else {
        fail(ErrorKind::validation, "initial_nubar does not match the t grid");
    }

    Anderson mixer(o.anderson_depth, o.damping);
    double best = std::numeric_limits<double>::infinity();
    int fp_floor = 1;
    auto run = [&](const std::vector<double>& nb, std::vector<double>& g) {
        Stage st = evaluate(p, pf, o, eq.grids, eq.m0, nb, sigma, fp_floor);
        ++eq.evaluations;
        g.resize(nb.size());
        for (std::size_t n = 0; n < g.size(); ++n) g[n] = st.nubar_new[n] - nb[n];
        return st;
    };

    std::vector<double> g, g_trial, trial;
    Stage s = run(nubar, g);
    for (int k = 1;; ++k) {
        const double res = sup_abs(g);
        if (!std::isfinite(res)) fail(ErrorKind::divergence, "mean-rate iteration produced a non-finite residual");
        eq.residual_history.push_back(res);
        eq.iterations = k;
        if (res <= o.outer_tol * std::max(1.0, sup_abs(nubar))) {
            eq.converged = true;
            break;
        }
        if (k == o.max_outer) break;

        bool stepped = false;
        if (o.outer == OuterSolver::newton_krylov) {
            const auto n = static_cast<Eigen::Index>(nubar.size());
            Eigen::Map<const Eigen::VectorXd> nv(nubar.data(), n), gv(g.data(), n);
            const double scale = 1 + nv.norm();
            detail::JacobianOp J(n, [&](const Eigen::VectorXd& v) -> Eigen::VectorXd {
                const double vn = v.norm();
                if (vn == 0) return Eigen::VectorXd::Zero(n);
                const double eps = 1e-7 * scale / vn;
                std::vector<double> shifted(nubar);
                for (Eigen::Index i = 0; i < n; ++i) shifted[i] += eps * v[i];
                std::vector<double> gs;
                run(shifted, gs);
                return (Eigen::Map<const Eigen::VectorXd>(gs.data(), n) - gv) / eps;
            });
            Eigen::GMRES<detail::JacobianOp, Eigen::IdentityPreconditioner> gmres;
            gmres.setMaxIterations(o.krylov_max);
            gmres.set_restart(o.krylov_max);
            gmres.setTolerance(o.krylov_tol);
            gmres.compute(J);
            const Eigen::VectorXd step = gmres.solve(-gv);
            if (step.allFinite()) {
                // halve until the sup residual drops
                for (double lambda = 1.0; lambda > 1.0 / 64; lambda /= 2) {
                    trial = nubar;
                    for (Eigen::Index i = 0; i < n; ++i) trial[i] = std::max(trial[i] + lambda * step[i], 0.0);
                    Stage st = run(trial, g_trial);
                    if (sup_abs(g_trial) < res) {
                        nubar.swap(trial);
                        g.swap(g_trial);
                        s = std::move(st);
                        stepped = true;
                        break;
                    }
                }
            }
        }
        if (!stepped && o.outer == OuterSolver::newton_krylov) {
            // backtrack the damped Picard step; plain Picard overshoots here by
            // an order of magnitude and undoes the Newton progress
            std::vector<double> best_nb, best_g;
            double best_res = std::numeric_limits<double>::infinity();
            Stage best_st;
            for (double w = o.damping; w > o.damping / 16; w /= 2) {
                trial = nubar;
                for (std::size_t i = 0; i < trial.size(); ++i) trial[i] = std::max(trial[i] + w * g[i], 0.0);
                Stage st = run(trial, g_trial);
                const double r = sup_abs(g_trial);
                if (r < best_res) {
                    best_res = r;
                    best_nb.swap(trial);
                    best_g.swap(g_trial);
                    best_st = std::move(st);
                }
                if (r < res) break;
            }
            nubar.swap(best_nb);
            g.swap(best_g);
            s = std::move(best_st);
        } else if (!stepped) {
            // a blow-up of the residual means the secant model went stale
            if (res > 1e3 * best) mixer.reset();
            best = std::min(best, res);
            nubar = mixer.next(nubar, g);
            for (double& v : nubar) v = std::max(v, 0.0);
            s = run(nubar, g);
        }
    }

    eq.xbar = std::move(s.xbar);
    eq.nubar = nubar;
    eq.x_star = std::move(s.x_star);
    eq.nubar_update = std::move(s.nubar_new);
    eq.t_star = s.t_star;
    eq.coeffs = std::move(s.coeffs);
    eq.V = std::move(s.V);
    eq.Vx = std::move(s.Vx);
    eq.nu_star = std::move(s.nu_star);
    eq.m = std::move(s.density.m);
    eq.mass = std::move(s.density.mass);
    eq.fp_substeps = s.density.substeps;
    return eq;
}

void require_converged(const MeanFieldEquilibrium& eq) {
    if (!eq.converged) {
        std::ostringstream msg;
        msg << "mean-rate fixed point did not converge in " << eq.iterations << " iterations; last residuals:";
        const auto& h = eq.residual_history;
        for (std::size_t i = h.size() > 5 ? h.size() - 5 : 0; i < h.size(); ++i) msg << ' ' << h[i];
        fail(ErrorKind::convergence, msg.str());
    }
}

MeanFieldEquilibrium solve_mfg(const ModelParams& params, const PriceFunction& pf, const MfgOptions& options) {
    MeanFieldEquilibrium eq = solve_mfg_partial(params, pf, options, 0.0);
    require_converged(eq);
    return eq;
}

EquilibriumReport equilibrium_diagnostics(const MeanFieldEquilibrium& eq, const ModelParams& p,
                                          const PriceFunction&) {
    EquilibriumReport rep;
    const auto& g = eq.grids;
    const std::size_t n_t = g.t.size(), n_x = g.x.size();

    double nu_scale = 1.0;
    for (double v : eq.nu_star.data()) nu_scale = std::max(nu_scale, std::abs(v));
    for (std::size_t n = 0; n < n_t; ++n) {
        auto row = eq.nu_star.row(n);
        for (std::size_t j = 0; j + 1 < n_x; ++j) {
            if (row[j + 1] > row[j] + 1e-9 * nu_scale) ++rep.monotonicity_violations;
        }
    }

    if (!eq.V.empty()) {
        double v_scale = 1.0;
        for (double v : eq.V.data()) v_scale = std::max(v_scale, std::abs(v));
        for (std::size_t n = 0; n < n_t; ++n) {
            auto v = eq.V.row(n);
            for (std::size_t j = 1; j + 1 < n_x; ++j) {
                if (v[j + 1] - 2 * v[j] + v[j - 1] > 1e-8 * v_scale) ++rep.concavity_violations;
            }
        }
    } else {
        // piecewise quadratic: concave on each piece iff its leading coefficient is <= 0
        for (std::size_t n = 0; n < n_t; ++n) {
            if (eq.coeffs.A.size() == n_t && eq.coeffs.A[n] > 0) ++rep.concavity_violations;
            if (eq.coeffs.a.size() == n_t && eq.coeffs.a[n] > 0) ++rep.concavity_violations;
        }
    }

    rep.min_density = std::numeric_limits<double>::infinity();
    for (double v : eq.m.data()) rep.min_density = std::min(rep.min_density, v);
    for (double m : eq.mass) rep.max_mass_drift = std::max(rep.max_mass_drift, std::abs(m - 1));

    rep.x_star_at_T = eq.x_star.empty() ? 0.0 : eq.x_star.back();
    rep.x_star_zero_after_t_star = true;
    for (std::size_t n = 0; n < eq.x_star.size(); ++n) {
        if (g.t[n] > eq.t_star && eq.x_star[n] != 0.0) rep.x_star_zero_after_t_star = false;
    }

    const auto& k = eq.coeffs;
    if (eq.method == MfgMethod::ansatz && k.A.size() == n_t) {
        for (std::size_t n = 0; n < n_t && g.t[n] < eq.t_star; ++n) {
            const double xs = std::min(eq.x_star[n], g.x.hi());
            const double inside = 2 * k.A[n] * xs + k.B[n];
            const double outside = 2 * k.a[n] * xs + k.b[n];
            rep.pasting_gap = std::max(rep.pasting_gap, std::abs(inside - outside));
        }
    }

    rep.X_total.resize(eq.xbar.size());
    rep.K_total.resize(eq.nubar.size());
    for (std::size_t n = 0; n < eq.xbar.size(); ++n) rep.X_total[n] = (p.N + 1) * eq.xbar[n];
    for (std::size_t n = 0; n < eq.nubar.size(); ++n) rep.K_total[n] = (p.N + 1) * eq.nubar[n];
    return rep;
}

}  // namespace capmfg
