#include <doctest.h>

#include "capmfg/stochastic.hpp"
#include "fixtures.hpp"

using namespace capmfg;

namespace {

MfgOptions coarse() {
    MfgOptions o;
    o.n_t = 801;
    o.n_x = 201;
    o.rate_update = RateUpdate::local;
    return o;
}

ModelParams small_sigma(double sigma) {
    ModelParams p = fixtures::small();
    p.sigma = sigma;
    return p;
}

}  // namespace

TEST_CASE("sigma must keep r + 2 delta - sigma^2 positive") {
    ModelParams p = fixtures::small();
    CHECK_NOTHROW(check_sigma(p));
    p.sigma = 1.001 * std::sqrt(p.r + 2 * p.delta);
    CHECK_THROWS_AS(check_sigma(p), Error);
    p.sigma = -0.1;
    CHECK_THROWS_AS(check_sigma(p), Error);
    p.sigma = 0.9;
    CHECK_THROWS_AS(solve_mfg_stochastic(p, fixtures::small_linear(), coarse()), Error);
}

TEST_CASE("noise makes a more negative at every t < T") {
    const ModelParams p0 = small_sigma(0.0), p1 = small_sigma(0.3);
    const UniformGrid t(0, 1, 201);
    const std::vector<double> xbar(201, 0.01), nubar(201, 0.0);
    const auto k0 = ansatz_coeffs_sigma(p0, {2, 1}, xbar, nubar, t, 0.5);
    const auto k1 = ansatz_coeffs_sigma(p1, {2, 1}, xbar, nubar, t, 0.5);
    for (std::size_t n = 0; n + 1 < 201; ++n) REQUIRE(k1.a[n] < k0.a[n]);
    CHECK(k1.a.back() == 0.0);
    // b does not see sigma
    CHECK(k1.b == k0.b);
    // A decays at the same shifted rate
    const double rate = p1.r + 2 * p1.delta - p1.sigma * p1.sigma;
    CHECK(k1.A[0] == doctest::Approx(riccati_A(p1.beta, rate, p1.h * 1.0, 0.5, 0.0)));
}

TEST_CASE("pure diffusion keeps the mean capacity") {
    // delta = 0 and no installation: dx = sigma x dW is a martingale
    ModelParams p = small_sigma(0.2);
    p.delta = 0.0;
    const Grids g = make_grids(p, fixtures::small_linear(), 401, 401);
    InitialDensitySpec spec;
    spec.kind = InitialDensitySpec::Kind::dirac;
    spec.x0 = 0.3;
    const InitialDensity m0 = build_initial_density(p, g, spec);
    FpOptions fo;
    fo.substep = true;
    const Density d = fp_forward_sigma(p, Field(401, 401), g, m0.m, fo);
    for (std::size_t n = 0; n < 401; n += 50) {
        double mean = 0.0;
        for (std::size_t j = 0; j < 401; ++j) mean += g.x[j] * d.m(n, j) * g.x.step();
        CHECK(std::abs(d.mass[n] - 1) <= 1e-12);
        CHECK(mean == doctest::Approx(m0.mean).epsilon(g.x.step() / m0.mean + g.t.step()));
    }
    for (double v : d.m.data()) REQUIRE(v >= -1e-12);
}

TEST_CASE("sigma = 0 runs the deterministic code path bit for bit") {
    const PriceFunction pf = fixtures::small_linear();
    for (MfgMethod method : {MfgMethod::ansatz, MfgMethod::fd}) {
        MfgOptions o = coarse();
        o.method = method;
        o.hjb.scheme = HjbScheme::upwind;
        const MeanFieldEquilibrium det = solve_mfg(fixtures::small(), pf, o);
        const MeanFieldEquilibrium sto = solve_mfg_stochastic(small_sigma(0.0), pf, o);
        CHECK(det.nubar == sto.nubar);
        CHECK(det.xbar == sto.xbar);
        CHECK(det.x_star == sto.x_star);
        CHECK(det.m == sto.m);
        CHECK(det.V == sto.V);
        CHECK(det.t_star == sto.t_star);
    }
}

TEST_CASE("equilibria approach the deterministic one as sigma shrinks") {
    const PriceFunction pf = fixtures::small_linear();
    const MeanFieldEquilibrium det = solve_mfg(fixtures::small(), pf, coarse());
    double prev = std::numeric_limits<double>::infinity();
    double max_x_star_det = *std::max_element(det.x_star.begin(), det.x_star.end());
    for (double sigma : {0.4, 0.2, 0.1, 0.05}) {
        CAPTURE(sigma);
        const MeanFieldEquilibrium eq = solve_mfg_stochastic(small_sigma(sigma), pf, coarse());
        const double diff = fixtures::sup_rel(eq.xbar, det.xbar) + fixtures::sup_rel(eq.nubar, det.nubar);
        CHECK(diff < prev);
        prev = diff;
        // precautionary effect
        CHECK(*std::max_element(eq.x_star.begin(), eq.x_star.end()) < max_x_star_det);
        CHECK(eq.t_star <= det.t_star + 2 * eq.grids.t.step());
        CHECK(eq.sigma == sigma);
    }
}

TEST_CASE("noisy HJB layers solve the discrete equation") {
    const ModelParams p = small_sigma(0.3);
    const Grids g = make_grids(p, fixtures::small_linear(), 401, 101);
    const std::vector<double> xbar(401, 0.01), nubar(401, 0.0);
    const auto k = ansatz_coeffs_sigma(p, {2, 1}, xbar, nubar, g.t, 0.0);
    HjbBoundary bc;
    for (std::size_t n = 0; n < 401; ++n) bc.right.push_back(k.a[n] * g.x.hi() * g.x.hi() + k.b[n] * g.x.hi());
    HjbOptions o;
    o.scheme = HjbScheme::upwind;
    const ValueSurface vs = hjb_backward_fd_sigma(p, fixtures::small_linear(), xbar, nubar, g, bc, o);
    for (double v : vs.V.row(400)) REQUIRE(v == 0.0);
    for (std::size_t n : {0u, 200u, 399u}) {
        CHECK(hjb_layer_residual(p, fixtures::small_linear(), xbar[n], nubar[n], g, vs.V.row(n + 1), vs.V.row(n), false,
                                 true, o, p.sigma) <= 1e-6);
    }
    // free right end is only sound without diffusion
    CHECK_THROWS_AS(hjb_backward_fd_sigma(p, fixtures::small_linear(), xbar, nubar, g, HjbBoundary{}, o), Error);
}
