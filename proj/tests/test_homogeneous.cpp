#include <doctest.h>

#include <random>

#include "capmfg/homogeneous.hpp"
#include "fixtures.hpp"

using namespace capmfg;

TEST_CASE("forward RK4 converges at fourth order") {
    const ModelParams p = fixtures::base();
    const PriceFunction pf = fixtures::base_linear();
    const double u0 = 2.0e6;
    auto end_X = [&](std::size_t steps) { return integrate_forward(p, pf, u0, UniformGrid(0, p.T, steps + 1)).X.back(); };
    // Richardson self-convergence: successive differences shrink by 2^4
    const double d1 = end_X(200) - end_X(400);
    const double d2 = end_X(400) - end_X(800);
    REQUIRE(std::abs(d2) > 0);
    const double order = std::log2(std::abs(d1 / d2));
    CHECK(order == doctest::Approx(4.0).epsilon(0.15));
}

TEST_CASE("forward paths match the integral forms with no installation") {
    // u0 far below alpha: X decays, u follows the variation-of-constants formula
    const ModelParams p = fixtures::base();
    const PriceFunction pf = fixtures::base_linear();
    const UniformGrid g(0, p.T, 1001);
    const ForwardPaths f = integrate_forward(p, pf, -1e9, g);
    for (std::size_t n = 0; n < g.size(); n += 100) {
        CHECK(f.X[n] == doctest::Approx(p.X0 * std::exp(-p.delta * g[n])).epsilon(1e-10));
    }
}

TEST_CASE("forward integration rejects short grids") {
    const ModelParams p = fixtures::base();
    CHECK_THROWS_AS(integrate_forward(p, fixtures::base_linear(), 0.0, UniformGrid(0, p.T, 50)), Error);
}

TEST_CASE("comparison principle and monotone shooting map on random draws") {
    std::mt19937_64 rng(20261016);
    std::uniform_real_distribution<double> U(0.0, 1.0);
    int draws = 0;
    while (draws < 50) {
        ModelParams p = fixtures::base(1.0 + 9.0 * U(rng));
        p.r = 0.02 + 0.15 * U(rng);
        p.delta = 0.02 + 0.15 * U(rng);
        p.alpha *= 0.5 + U(rng);
        p.beta *= 0.5 + U(rng);
        p.X0 *= 0.2 + 1.6 * U(rng);
        const PriceFunction pf =
            U(rng) < 0.5 ? PriceFunction(LinearPrice{300 + 400 * U(rng), 0.005 + 0.01 * U(rng)})
                         : PriceFunction(InversePrice{2e6 + 8e6 * U(rng)});
        const UniformGrid g(0, p.T, 801);
        const double u0 = p.alpha * (0.5 + U(rng));
        const double u1 = u0 + p.alpha * (0.01 + 0.5 * U(rng));
        ForwardPaths a, b;
        try {
            a = integrate_forward(p, pf, u0, g);
            b = integrate_forward(p, pf, u1, g);
        } catch (const Error&) {
            continue;  // inverse prices can blow up for large u0; draw again
        }
        ++draws;
        CAPTURE(draws);
        bool ordered = true;
        for (std::size_t n = 0; n < g.size(); ++n) {
            ordered = ordered && a.u[n] < b.u[n] && a.X[n] <= b.X[n] * (1 + 1e-14);
        }
        CHECK(ordered);
        CHECK(a.u.back() < b.u.back());
    }
}

TEST_CASE("shooting on the baseline linear market") {
    const ModelParams p = fixtures::base(5.0);
    const PriceFunction pf = fixtures::base_linear();
    const UniformGrid g(0, p.T, 2001);
    const HomogeneousSolution s = shoot(p, pf, g);
    CHECK(std::abs(s.residual) <= 1e-6 * p.alpha);
    // quoted stopping time 0.25
    CHECK(s.t_star == doctest::Approx(0.25).epsilon(0.2));
    for (std::size_t n = 0; n < g.size(); ++n) {
        REQUIRE(s.K[n] == doctest::Approx(std::max(s.u[n] - p.alpha, 0.0) / p.beta));
    }
    const LemmaReport lr = verify_lemmas(s, p, pf);
    CHECK(lr.single_crossing);
    CHECK(lr.price_above_cost);
    CHECK(lr.lower_bound);
}

TEST_CASE("semi-explicit coefficients") {
    const ModelParams p = fixtures::base(5.0);
    const LinearPrice lp{500, 0.01};
    const SemiExplicitResult se = semi_explicit_linear(p, lp, UniformGrid(0, p.T, 2001));
    const double rd = p.r + p.delta;
    const double theta = (p.h * (lp.d1 - p.c) - rd * p.alpha) / (p.beta * rd * p.delta + p.h * lp.d2);
    CHECK(se.coeffs.theta == doctest::Approx(theta).epsilon(1e-12));
    CHECK(se.coeffs.theta == doctest::Approx(4.06e4).epsilon(0.005));
    // roots of x^2 - r x - ((r + delta) delta + h d2 / beta)
    const double q = rd * p.delta + p.h * lp.d2 / p.beta;
    for (double root : {se.coeffs.r1, se.coeffs.r2}) CHECK(root * root - p.r * root - q == doctest::Approx(0.0).epsilon(1e-9));
    CHECK(se.coeffs.r1 == doctest::Approx(12.30).epsilon(0.001));
    CHECK(se.coeffs.r2 == doctest::Approx(-12.20).epsilon(0.001));
    CHECK(se.coeffs.r1 > rd);
    CHECK(se.coeffs.r2 < -p.delta);
    CHECK(std::abs(stopping_time_residual(p, lp, se.coeffs.t_star)) <= 1e-6 * p.alpha);
    // capacity BVP end condition: delta X + X' = 0 at t_star, so installation stops there
    CHECK(se.solution.K.back() == 0.0);
}

TEST_CASE("shooting and semi-explicit paths agree") {
    const ModelParams p = fixtures::base(5.0);
    const UniformGrid g(0, p.T, 2001);
    const HomogeneousSolution s = shoot(p, fixtures::base_linear(), g);
    const SemiExplicitResult se = semi_explicit_linear(p, fixtures::base_linear(), g);
    CHECK(fixtures::sup_rel(s.X, se.solution.X) <= 1e-3);
    CHECK(s.t_star == doctest::Approx(se.coeffs.t_star).epsilon(0.01));
}

TEST_CASE("inverse price: installation stops well before the horizon") {
    for (double T : {10.0, 20.0}) {
        CAPTURE(T);
        const ModelParams p = fixtures::base(T);
        const PriceFunction pf = fixtures::base_inverse();
        const HomogeneousSolution s = shoot(p, pf, UniformGrid(0, T, 2001));
        CHECK(T - s.t_star == doctest::Approx(8.5).epsilon(0.5 / 8.5));
        CHECK(verify_lemmas(s, p, pf).price_above_cost);
    }
}

TEST_CASE("no installation when the price never pays") {
    ModelParams p = fixtures::base(5.0);
    const PriceFunction pf = LinearPrice{30.0, 0.01};
    p.alpha = 2 * p.h * (30.0 - p.c) / (p.r + p.delta);
    const UniformGrid g(0, p.T, 2001);
    const HomogeneousSolution s = shoot(p, pf, g);
    CHECK(s.t_star == 0.0);
    for (double k : s.K) REQUIRE(k == 0.0);
}

TEST_CASE("t_star extraction interpolates the first downward crossing") {
    const UniformGrid g(0, 1, 11);
    std::vector<double> u(11);
    for (std::size_t n = 0; n < 11; ++n) u[n] = 1.0 - g[n];
    CHECK(extract_t_star(g, u, 0.25) == doctest::Approx(0.75));
    CHECK(extract_t_star(g, u, 2.0) == 0.0);
}
