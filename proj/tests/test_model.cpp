#include <doctest.h>

#include "capmfg/error.hpp"
#include "capmfg/model.hpp"
#include "capmfg/units.hpp"
#include "fixtures.hpp"

using namespace capmfg;

TEST_CASE("unit expressions reduce to base units") {
    const auto q = units::parse("$/kW");
    CHECK(q.scale == doctest::Approx(1000.0));
    CHECK(q.dim == units::kMoney / units::kPower);

    const auto b = units::parse("MW^2/($*year)");
    CHECK(b.scale == doctest::Approx(1.0));
    CHECK(b.dim == units::kPower.pow(2) / (units::kMoney * units::kYear));

    CHECK(units::parse("GW").scale == doctest::Approx(1000.0));
    CHECK(units::parse("1/sqrt(year)").dim == units::kYear.pow(-0.5));
    CHECK(units::parse("hours/year").dim == units::kHour / units::kYear);
}

TEST_CASE("malformed unit expressions are validation errors") {
    for (const char* bad : {"furlong", "$/(MW", "MW^", "$**MW"}) {
        CAPTURE(bad);
        try {
            units::parse(bad);
            FAIL("accepted");
        } catch (const Error& e) {
            CHECK(e.kind() == ErrorKind::validation);
        }
    }
}

TEST_CASE("parameter document converts to base units and round-trips") {
    const ModelParams p = fixtures::base();
    CHECK(p.alpha == doctest::Approx(1.4e6));
    CHECK(p.X0 == doctest::Approx(3.0e4));
    CHECK(p.beta == doctest::Approx(0.2));
    CHECK(p.h == doctest::Approx(3000.0));
    CHECK(normalize_params(to_json(p)) == p);

    const PriceFunction pf = normalize_price(fixtures::base_doc());
    CHECK(pf == fixtures::base_linear());
    CHECK(normalize_price(nlohmann::json{{"price", to_json(pf)}}) == pf);
}

TEST_CASE("parameter errors name the field") {
    auto doc = fixtures::base_doc();
    doc["units"]["alpha"] = "MW";
    try {
        normalize_params(doc);
        FAIL("accepted");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::validation);
        CHECK(std::string(e.what()).find("alpha") != std::string::npos);
    }
    auto neg = fixtures::base_doc();
    neg["r"] = -0.1;
    CHECK_THROWS_AS(normalize_params(neg), Error);
}

TEST_CASE("price functions: value, slope and preimage") {
    const PriceFunction lin = fixtures::base_linear();
    CHECK(lin(1000.0) == doctest::Approx(490.0));
    CHECK(lin.derivative(3.0) == doctest::Approx(-0.01));
    CHECK(lin.preimage(lin(12345.0)) == doctest::Approx(12345.0));

    const PriceFunction inv = fixtures::base_inverse();
    CHECK(inv(6.5e4) == doctest::Approx(100.0));
    CHECK(inv.derivative(1e4) == doctest::Approx(-6.5e6 / 1e8));
    CHECK(inv.preimage(inv(777.0)) == doctest::Approx(777.0));
    CHECK_THROWS_AS(inv(0.0), Error);
    CHECK_THROWS_AS(PriceFunction(LinearPrice{5, -1}), Error);
}

TEST_CASE("running reward splits revenue and installation cost") {
    const ModelParams p = fixtures::small();
    const PriceFunction pf = fixtures::small_linear();
    const RewardTerms t = running_reward(p, pf, 0.2, 0.3, 0.01, 0.05);
    CHECK(t.revenue_rate == doctest::Approx(p.h * (2 - (0.2 + 10 * 0.01) - p.c) * 0.2));
    CHECK(t.installation_cost_rate == doctest::Approx(0.3 * (p.alpha + p.beta * (0.3 + 10 * 0.05))));
    CHECK(running_reward(p, pf, 0.0, 0.0, 0.0, 0.0).total() == 0.0);
}

TEST_CASE("non-triviality check") {
    const ModelParams p = fixtures::base();
    const AssumptionCheck ok = check_assumption(p, fixtures::base_linear());
    CHECK(ok.holds);
    CHECK(ok.initial_margin);
    REQUIRE(ok.witness_t0.has_value());

    // a price that never covers installation: one MW earns at most
    // h (d1 - c) / (r + delta) over an infinite horizon
    ModelParams q = p;
    q.alpha = 1.01 * p.h * (30.0 - p.c) / (p.r + p.delta);
    const AssumptionCheck no = check_assumption(q, PriceFunction(LinearPrice{30.0, 0.01}));
    CHECK_FALSE(no.holds);
}

TEST_CASE("x_max is the capacity where price meets cost, grown by e^{delta T}") {
    const ModelParams p = fixtures::base();
    const PriceFunction pf = fixtures::base_linear();
    CHECK(compute_xmax(p, pf) == doctest::Approx((500.0 - 15.0) / 0.01 * std::exp(p.delta * p.T)));
    CHECK_THROWS_AS(compute_xmax(p, PriceFunction(LinearPrice{10.0, 0.01})), Error);
}
