#include <doctest.h>

#include "capmfg/mfg.hpp"
#include "fixtures.hpp"

using namespace capmfg;

namespace {

Grids small_grids(std::size_t n_t = 401, std::size_t n_x = 201) {
    return make_grids(fixtures::small(), fixtures::small_linear(), n_t, n_x);
}

std::vector<double> constant(std::size_t n, double v) { return std::vector<double>(n, v); }

}  // namespace

TEST_CASE("grids span [0, T] and [0, x_max]") {
    const ModelParams p = fixtures::small();
    const Grids g = small_grids();
    CHECK(g.t.hi() == p.T);
    // P^{-1}(c) e^{delta T} = 1 * e^{delta}
    CHECK(g.x.hi() == doctest::Approx(std::exp(p.delta)).epsilon(1e-12));
    CHECK(g.x.hi() == doctest::Approx(1.0718).epsilon(1e-4));
    CHECK_THROWS_AS(make_grids(p, fixtures::small_linear(), 1, 201), Error);
}

TEST_CASE("initial densities keep mass and mean") {
    const ModelParams p = fixtures::base();
    const Grids g = make_grids(p, fixtures::base_linear(), 101, 801);
    const InitialDensity te = build_initial_density(p, g, {});
    double mass = 0.0;
    for (double v : te.m) {
        CHECK(v >= 0.0);
        mass += v * g.x.step();
    }
    CHECK(mass == doctest::Approx(1.0).epsilon(1e-12));
    // direct summation of the weights: mean X0 / (N + 1) after rescaling
    double wsum = 0.0, wmean = 0.0;
    for (int i = 1; i <= 10; ++i) {
        const double level = i * p.X0 / 10, w = std::exp(-10 * level / p.X0);
        wsum += w;
        wmean += w * level;
    }
    CHECK(te.scale == doctest::Approx(p.X0 / (p.N + 1) / (wmean / wsum)).epsilon(1e-12));
    CHECK(te.mean == doctest::Approx(p.X0 / (p.N + 1)).epsilon(1e-12));
    CHECK_FALSE(te.convention.empty());

    InitialDensitySpec d;
    d.kind = InitialDensitySpec::Kind::dirac;
    d.x0 = 1234.5;
    const InitialDensity dirac = build_initial_density(p, g, d);
    CHECK(dirac.mean == doctest::Approx(1234.5).epsilon(g.x.step() / 1234.5));

    d.x0 = 2 * g.x.hi();
    CHECK_THROWS_AS(build_initial_density(p, g, d), Error);
}

TEST_CASE("non-installation coefficient a matches its ODE") {
    // a' = (r + 2 delta) a + h d2, a_T = 0, by fine backward RK4
    const ModelParams p = fixtures::small();
    const Grids g = small_grids(401);
    const NonInstallCoeffs k = noninstall_value_linear(p, {2, 1}, constant(401, 0.01), g.t);
    const double rate = p.r + 2 * p.delta;
    const int sub = 20;
    double a = 0.0;
    CHECK(k.a.back() == 0.0);
    for (std::size_t n = 400; n-- > 0;) {
        for (int s = 0; s < sub; ++s) {
            a = rk4_step_scalar([&](double, double y) { return rate * y + p.h * 1.0; }, 0.0, a, -g.t.step() / sub);
        }
        REQUIRE(k.a[n] == doctest::Approx(a).epsilon(1e-10));
        REQUIRE(k.a[n] < 0);
    }
}

TEST_CASE("b for a constant mean capacity has a closed form") {
    // exponential trapezoid: relative error (r + delta)^2 dt^2 / 12, second order
    const ModelParams p = fixtures::base(5.0);
    const LinearPrice lp{500, 0.01};
    const double rd = p.r + p.delta;
    auto worst = [&](std::size_t n_t) {
        const Grids g = make_grids(p, fixtures::base_linear(), n_t, 101);
        const NonInstallCoeffs k = noninstall_value_linear(p, lp, constant(n_t, 0.0), g.t);
        double err = 0.0;
        for (std::size_t n = 0; n + 1 < n_t; ++n) {
            const double exact = p.h * (lp.d1 - p.c) / rd * (1 - std::exp(-rd * (p.T - g.t[n])));
            err = std::max(err, std::abs(k.b[n] / exact - 1));
        }
        return err;
    };
    const double coarse = worst(2001), fine = worst(4001);
    CHECK(coarse <= 1e-7);
    CHECK(coarse / fine == doctest::Approx(4.0).epsilon(0.05));
}

TEST_CASE("inverse non-installation value: closed form at c = 0 and concavity") {
    ModelParams p = fixtures::base(5.0);
    const Grids g = make_grids(p, fixtures::base_inverse(), 4001, 101);
    p.c = 0.0;
    const InversePrice ip{6.5e6};
    const std::vector<double> xbar = constant(4001, 0.0);
    // with no rivals the revenue is h p per year whatever x is, discounted at r only
    const double rd = p.r;
    for (std::size_t n : {0u, 1000u, 3999u}) {
        const ValueSlope vs = noninstall_value_inverse(p, ip, xbar, g.t, n, 500.0);
        CHECK(vs.value == doctest::Approx(p.h * ip.p * (1 - std::exp(-rd * (p.T - g.t[n]))) / rd).epsilon(1e-6));
        CHECK(std::abs(vs.slope) <= 1e-12 * std::abs(vs.value));
    }
    CHECK(noninstall_value_inverse(p, ip, xbar, g.t, 4000, 500.0).value == 0.0);

    const ModelParams q = fixtures::base(5.0);
    const std::vector<double> rivals = constant(4001, 2000.0);
    double prev = std::numeric_limits<double>::infinity();
    for (double x = 0.0; x <= 5000.0; x += 250.0) {
        const double s = noninstall_value_inverse(q, ip, rivals, g.t, 0, x).slope;
        CHECK(s < prev);
        prev = s;
    }
}

TEST_CASE("threshold curve clamps and vanishes at the horizon") {
    const ModelParams p = fixtures::small();
    const std::vector<double> a{-2.0, -1.0, -0.5, 0.0};
    const std::vector<double> b{0.5, 0.05, 0.3, 0.0};
    const std::vector<double> nb{0.0, 0.0, 0.01, 0.0};
    const auto xs = threshold_curve_linear(p, a, b, nb, 1.0);
    CHECK(xs[0] == doctest::Approx((0.5 - p.alpha) / 4.0));
    CHECK(xs[1] == 0.0);
    CHECK(xs[2] == doctest::Approx((0.3 - p.alpha - p.beta * p.N * 0.01) / 1.0));
    CHECK(xs[3] == 0.0);
    const std::vector<double> bad{0.0, -1.0, -1.0, 0.0};
    CHECK_THROWS_AS(threshold_curve_linear(p, bad, b, nb, 1.0), Error);
}

TEST_CASE("stopping time is the last zero of the gap") {
    const UniformGrid t(0, 4, 5);
    CHECK(stopping_time(t, std::vector<double>{1, 1, -1, -1, -1}) == doctest::Approx(1.5));
    CHECK(stopping_time(t, std::vector<double>{-1, -1, -1, -1, -1}) == 0.0);
    CHECK(stopping_time(t, std::vector<double>{1, -1, 3, -1, -1}) == doctest::Approx(2.75));
}

TEST_CASE("Riccati closed form against backward RK4") {
    const ModelParams p = fixtures::base(10.0);
    const double rate = p.r + 2 * p.delta, forcing = p.h * 0.01, t_star = 6.0;
    const int steps = 60000;
    const double dt = t_star / steps;
    double A = 0.0, worst = 0.0, scale = 0.0;
    for (int i = steps; i-- > 0;) {
        A = rk4_step_scalar([&](double, double y) { return rate * y + forcing - y * y / p.beta; }, 0.0, A, -dt);
        if (i % 1000 == 0) {
            const double closed = riccati_A(p.beta, rate, forcing, t_star, i * dt);
            worst = std::max(worst, std::abs(closed - A));
            scale = std::max(scale, std::abs(A));
        }
    }
    CHECK(worst <= 1e-8 * scale);
    CHECK(riccati_A(p.beta, rate, forcing, t_star, t_star) == 0.0);
    CHECK(riccati_A(p.beta, rate, 0.0, t_star, 1.0) == 0.0);
}

TEST_CASE("installation-region coefficients satisfy their end conditions") {
    const ModelParams p = fixtures::small();
    const Grids g = small_grids(401);
    const LinearPrice lp{2, 1};
    const auto xbar = constant(401, 0.01), nubar = constant(401, 0.001);
    const NonInstallCoeffs ni = noninstall_value_linear(p, lp, xbar, g.t);
    const double t_star = 0.6;
    const AnsatzCoefficients k = ansatz_install_coeffs(p, lp, xbar, nubar, ni, g.t, t_star);
    CHECK(k.lambda1 > 0);
    CHECK(k.lambda2 < 0);
    CHECK(k.RB == doctest::Approx(interpolate(g.t, ni.b, t_star)));
    for (std::size_t n = 0; n < 401; ++n) {
        REQUIRE(k.A[n] <= 0.0);
        if (g.t[n] >= t_star) {
            REQUIRE(k.A[n] == 0.0);
            REQUIRE(k.B[n] == ni.b[n]);
        }
    }
    CHECK_THROWS_AS(ansatz_install_coeffs(p, lp, xbar, nubar, ni, g.t, 1.0), Error);
}

TEST_CASE("HJB deep in the non-installation region reproduces a x^2 + b x") {
    // a prohibitive crowding target switches installation off everywhere
    const ModelParams p = fixtures::small();
    const Grids g = small_grids(801, 101);
    const LinearPrice lp{2, 1};
    const auto xbar = constant(801, 0.01), nubar = constant(801, 1e6);
    const NonInstallCoeffs k = noninstall_value_linear(p, lp, xbar, g.t);
    HjbBoundary bc;
    bc.left = constant(801, 0.0);
    for (std::size_t n = 0; n < 801; ++n) bc.right.push_back(k.a[n] * g.x.hi() * g.x.hi() + k.b[n] * g.x.hi());
    for (HjbScheme scheme : {HjbScheme::central, HjbScheme::upwind}) {
        HjbOptions o;
        o.scheme = scheme;
        const ValueSurface vs = hjb_backward_fd(p, fixtures::small_linear(), xbar, nubar, g, bc, o);
        for (double v : vs.V.row(800)) REQUIRE(v == 0.0);
        double err = 0.0, scale = 0.0;
        for (std::size_t n = 0; n < 801; ++n) {
            for (std::size_t j = 0; j < 101; ++j) {
                const double x = g.x[j], exact = k.a[n] * x * x + k.b[n] * x;
                err = std::max(err, std::abs(vs.V(n, j) - exact));
                scale = std::max(scale, std::abs(exact));
            }
        }
        // O(dt) for central, O(dt + dx) for upwind
        CHECK(err <= (scheme == HjbScheme::central ? 5e-3 : 2e-2) * scale);
        const double res = hjb_layer_residual(p, fixtures::small_linear(), xbar[0], nubar[0], g, vs.V.row(1),
                                              vs.V.row(0), true, true, o);
        CHECK(res <= 1e-6);
    }

    // upwind closes both ends by itself
    HjbOptions up;
    up.scheme = HjbScheme::upwind;
    const ValueSurface free_ends = hjb_backward_fd(p, fixtures::small_linear(), xbar, nubar, g, HjbBoundary{}, up);
    double err = 0.0, scale = 0.0;
    for (std::size_t n = 0; n < 801; ++n) {
        for (std::size_t j = 0; j < 101; ++j) {
            const double x = g.x[j], exact = k.a[n] * x * x + k.b[n] * x;
            err = std::max(err, std::abs(free_ends.V(n, j) - exact));
            scale = std::max(scale, std::abs(exact));
        }
    }
    CHECK(err <= 2e-2 * scale);
    CHECK(hjb_layer_residual(p, fixtures::small_linear(), xbar[0], nubar[0], g, free_ends.V.row(1),
                             free_ends.V.row(0), false, false, up) <= 1e-6);

    HjbBoundary no_right;
    no_right.left = bc.left;
    CHECK_THROWS_AS(hjb_backward_fd(p, fixtures::small_linear(), xbar, nubar, g, no_right), Error);
}

TEST_CASE("FP transport: no drift keeps m, pure decay follows the mean ODE") {
    ModelParams p = fixtures::small();
    const Grids g = small_grids(401, 401);
    InitialDensitySpec spec;
    const InitialDensity m0 = build_initial_density(p, g, spec);
    const Field zero(401, 401);

    ModelParams still = p;
    still.delta = 0.0;
    const Density frozen = fp_forward(still, zero, g, m0.m);
    CHECK(frozen.m.row(400)[0] == m0.m[0]);
    for (std::size_t j = 0; j < 401; ++j) REQUIRE(frozen.m(400, j) == m0.m[j]);

    const Density d = fp_forward(p, zero, g, m0.m);
    for (std::size_t n = 0; n < 401; n += 40) {
        double mean = 0.0;
        for (std::size_t j = 0; j < 401; ++j) mean += g.x[j] * d.m(n, j) * g.x.step();
        CHECK(std::abs(d.mass[n] - 1) <= 1e-12);
        CHECK(mean == doctest::Approx(m0.mean * std::exp(-p.delta * g.t[n])).epsilon(g.x.step() / m0.mean + 1e-3));
    }
}

TEST_CASE("FP transport conserves mass and positivity under installation") {
    const ModelParams p = fixtures::small();
    const Grids g = small_grids(201, 201);
    const InitialDensity m0 = build_initial_density(p, g, {});
    Field nu(201, 201);
    for (std::size_t n = 0; n < 201; ++n) {
        for (std::size_t j = 0; j < 201; ++j) nu(n, j) = std::max(0.0, 0.5 - g.x[j]);
    }
    FpOptions fo;
    fo.substep = true;
    const Density d = fp_forward(p, nu, g, m0.m, fo);
    for (double v : d.mass) REQUIRE(std::abs(v - 1) <= 1e-9);
    for (double v : d.m.data()) REQUIRE(v >= -1e-12);

    // a field too fast for the time grid is a stability error naming n_t
    for (std::size_t n = 0; n < 201; ++n) {
        for (std::size_t j = 0; j < 201; ++j) nu(n, j) *= 1e4;
    }
    try {
        fp_forward(p, nu, g, m0.m);
        FAIL("accepted");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::stability);
        CHECK(std::string(e.what()).find("n_t") != std::string::npos);
    }
    CHECK(fp_required_steps(p, nu, g) > 200);
}

TEST_CASE("mean rate update") {
    const ModelParams p = fixtures::small();
    const double dx = 0.01;
    std::vector<double> vx(11), m(11, 0.0);
    for (std::size_t j = 0; j < 11; ++j) vx[j] = 0.5 - 0.04 * static_cast<double>(j);

    SUBCASE("empty installation set") {
        std::vector<double> low(11, 0.5 * p.alpha);
        m[3] = 1 / dx;
        CHECK(mean_rate_update(p, low, m, dx, 0.0) == 0.0);
        CHECK(mean_rate_local(p, low, m, dx) == 0.0);
    }
    SUBCASE("Dirac reduces to the homogeneous rate (Vx - alpha) / (beta (N + 2))") {
        m[3] = 1 / dx;
        const double expect = (vx[3] - p.alpha) / (p.beta * (p.N + 2));
        CHECK(mean_rate_update(p, vx, m, dx, 0.0) == doctest::Approx(expect));
        CHECK(mean_rate_local(p, vx, m, dx) == doctest::Approx(expect));
    }
    SUBCASE("the local root is a fixed point of both forms") {
        for (std::size_t j = 0; j < 11; ++j) m[j] = 1 / (11 * dx);
        const double nb = mean_rate_local(p, vx, m, dx);
        double direct = 0.0;
        for (std::size_t j = 0; j < 11; ++j) {
            const double w = (j == 0 || j == 10) ? dx / 2 : dx;
            direct += w * std::max(vx[j] - p.alpha - p.beta * p.N * nb, 0.0) * m[j] / (2 * p.beta);
        }
        CHECK(nb == doctest::Approx(direct).epsilon(1e-12));
        CHECK(mean_rate_update(p, vx, m, dx, nb) == doctest::Approx(nb).epsilon(1e-12));
    }
}

TEST_CASE("mean capacity path integrates xbar' = -delta xbar + nubar") {
    const ModelParams p = fixtures::small();
    const UniformGrid t(0, 1, 101);
    const auto xb = mean_capacity_path(p, t, constant(101, 0.02), 0.01);
    const double eq = 0.02 / p.delta;
    for (std::size_t n = 0; n < 101; ++n) {
        REQUIRE(xb[n] == doctest::Approx(eq + (0.01 - eq) * std::exp(-p.delta * t[n])).epsilon(1e-12));
    }
}

TEST_CASE("small-market ansatz equilibrium satisfies the structural invariants") {
    const ModelParams p = fixtures::small();
    const PriceFunction pf = fixtures::small_linear();
    MfgOptions o;
    o.n_t = 801;
    o.n_x = 201;
    o.rate_update = RateUpdate::local;
    const MeanFieldEquilibrium eq = solve_mfg(p, pf, o);
    REQUIRE(eq.converged);
    CHECK(eq.t_star > 0.0);
    CHECK(eq.t_star < p.T);
    const EquilibriumReport rep = equilibrium_diagnostics(eq, p, pf);
    CHECK(rep.max_mass_drift <= 1e-9);
    CHECK(rep.min_density >= -1e-12);
    CHECK(rep.x_star_at_T == 0.0);
    CHECK(rep.x_star_zero_after_t_star);
    CHECK(rep.monotonicity_violations == 0);
    CHECK(rep.concavity_violations == 0);
    const auto xb = mean_capacity_path(p, eq.grids.t, eq.nubar, eq.m0.mean);
    CHECK(fixtures::sup_rel(eq.xbar, xb) <= 1e-9);
    for (std::size_t n = 0; n < eq.nubar.size(); ++n) {
        REQUIRE(eq.nubar[n] >= 0.0);
        if (eq.x_star[n] == 0.0) REQUIRE(eq.nubar[n] <= 1e-6 * (1 + *std::max_element(eq.nubar.begin(), eq.nubar.end())));
    }
    // the residual history ends inside the stopping rule
    REQUIRE_FALSE(eq.residual_history.empty());
    double scale = 1.0;
    for (double v : eq.nubar) scale = std::max(scale, v);
    CHECK(eq.residual_history.back() <= o.outer_tol * scale);
}

TEST_CASE("non-convergence is reported with the last residuals") {
    MfgOptions o;
    o.n_t = 401;
    o.n_x = 101;
    o.max_outer = 1;
    o.outer = OuterSolver::picard;
    try {
        solve_mfg(fixtures::small(), fixtures::small_linear(), o);
        FAIL("converged in one step");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::convergence);
    }
    const MeanFieldEquilibrium partial = solve_mfg_partial(fixtures::small(), fixtures::small_linear(), o, 0.0);
    CHECK_FALSE(partial.converged);
    CHECK(partial.residual_history.size() == 1);
}
