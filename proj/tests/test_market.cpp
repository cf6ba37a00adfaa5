#include <doctest.h>

#include <cmath>
#include <limits>
#include <random>

#include "ruin/market.hpp"

using namespace ruin;

namespace {

MarketParams ref() { return MarketParams::reference(); }

// Random valid parameter set; alpha > r, costs in (0, 0.5), b below c/r.
MarketParams random_params(std::mt19937_64& g) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const double r = 0.01 + 0.09 * u(g);
    const double alpha = r + 0.01 + 0.1 * u(g);
    const double sigma = 0.05 + 0.4 * u(g);
    const double beta = 0.01 + 0.1 * u(g);
    const double lambda = 0.001 + 0.4 * u(g);
    const double mu = 0.001 + 0.4 * u(g);
    const double c = 0.5 + 2.0 * u(g);
    const double b = -5.0 + 0.9 * (c / r + 5.0) * u(g);
    return MarketParams(r, alpha, sigma, beta, lambda, mu, c, b);
}

}  // namespace

TEST_CASE("parameter validation rejects each broken invariant") {
    const double nan = std::numeric_limits<double>::quiet_NaN();
    CHECK_NOTHROW(MarketParams(0.04, 0.08, 0.2, 0.04, 0.1, 0.1, 1, 0));
    CHECK_THROWS_AS(MarketParams(0.0, 0.08, 0.2, 0.04, 0.1, 0.1, 1, 0), ModelError);
    CHECK_THROWS_AS(MarketParams(0.04, 0.04, 0.2, 0.04, 0.1, 0.1, 1, 0), ModelError);
    CHECK_THROWS_AS(MarketParams(0.04, 0.08, 0.0, 0.04, 0.1, 0.1, 1, 0), ModelError);
    CHECK_THROWS_AS(MarketParams(0.04, 0.08, 0.2, 0.0, 0.1, 0.1, 1, 0), ModelError);
    CHECK_THROWS_AS(MarketParams(0.04, 0.08, 0.2, 0.04, 0.0, 0.1, 1, 0), ModelError);
    CHECK_THROWS_AS(MarketParams(0.04, 0.08, 0.2, 0.04, 0.1, 1.0, 1, 0), ModelError);
    CHECK_THROWS_AS(MarketParams(0.04, 0.08, 0.2, 0.04, 0.1, 0.1, 0, 0), ModelError);
    CHECK_THROWS_AS(MarketParams(0.04, 0.08, 0.2, 0.04, 0.1, 0.1, 1, 25), ModelError);
    CHECK_THROWS_AS(MarketParams(0.04, nan, 0.2, 0.04, 0.1, 0.1, 1, 0), ModelError);
}

TEST_CASE("from_map names missing and unknown keys") {
    std::map<std::string, std::string> kv{{"r", "0.04"}, {"alpha", "0.08"}, {"sigma", "0.2"},
                                          {"beta", "0.04"}, {"lambda", "0.1"}, {"mu", "0.1"},
                                          {"c", "1"}, {"b", "0"}};
    const auto p = MarketParams::from_map(kv);
    CHECK(p.safe_level() == doctest::Approx(25.0));

    auto missing = kv;
    missing.erase("r");
    try {
        MarketParams::from_map(missing);
        FAIL("expected an error");
    } catch (const ModelError& e) {
        CHECK(std::string(e.what()).find("'r'") != std::string::npos);
    }
    auto extra = kv;
    extra["gamma"] = "1";
    CHECK_THROWS_WITH_AS(MarketParams::from_map(extra), doctest::Contains("gamma"), ModelError);
    auto garbled = kv;
    garbled["sigma"] = "0.2x";
    CHECK_THROWS_WITH_AS(MarketParams::from_map(garbled), doctest::Contains("sigma"), ModelError);
}

TEST_CASE("liquidation value on both sides of the kink") {
    const auto p = ref();
    CHECK(liquidation_value(p, 10, 5) == doctest::Approx(14.5));
    CHECK(liquidation_value(p, 10, -9) == doctest::Approx(0.0));
    CHECK(liquidation_value(p, 3, 0) == 3.0);
    // Continuous across y = 0.
    CHECK(std::abs(liquidation_value(p, 7, 1e-12) - liquidation_value(p, 7, -1e-12)) < 1e-11);
}

TEST_CASE("classification of points around the strip") {
    const auto p = ref();
    CHECK(classify_point(p, -1, 0) == PointClass::BelowRuin);
    CHECK(classify_point(p, 0, 0) == PointClass::RuinBoundary);
    CHECK(classify_point(p, 5e-10, 0) == PointClass::RuinBoundary);
    CHECK(classify_point(p, 12, 1) == PointClass::Interior);
    CHECK(classify_point(p, 25, 0) == PointClass::SafeBoundary);
    CHECK(classify_point(p, 30, 0) == PointClass::Safe);
    CHECK(classify_point(p, 25 - 0.9 * 10, 10) == PointClass::SafeBoundary);
}

TEST_CASE("trades along the liquidation direction keep L; other trades lower it") {
    std::mt19937_64 g(11);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int k = 0; k < 500; ++k) {
        const auto p = random_params(g);
        const double x = -20 + 40 * u(g);
        const double y = 30 * u(g) + 1e-3;
        const double L = liquidation_value(p, x, y);
        // Selling part of a long position.
        const auto s = transaction_shift(p, x, y, Trade::Sell, y * u(g));
        CHECK(liquidation_value(p, s.x, s.y) == doctest::Approx(L).epsilon(1e-12));
        // Covering part of a short position.
        const double ys = -y;
        const double Ls = liquidation_value(p, x, ys);
        const auto b = transaction_shift(p, x, ys, Trade::Buy, u(g) * y / (1 - p.lambda_buy()));
        CHECK(liquidation_value(p, b.x, b.y) == doctest::Approx(Ls).epsilon(1e-12));
        // Buying into a long position pays both costs.
        const auto bl = transaction_shift(p, x, y, Trade::Buy, 1.0);
        CHECK(liquidation_value(p, bl.x, bl.y) < L);
    }
}

TEST_CASE("full liquidation closes the position at value L") {
    const auto p = ref();
    const auto sell = full_liquidation_amounts(5, p);
    CHECK(sell.buy_amount == 0.0);
    CHECK(sell.sell_amount == 5.0);
    const auto buy = full_liquidation_amounts(-9, p);
    CHECK(buy.buy_amount == doctest::Approx(10.0));
    CHECK(buy.sell_amount == 0.0);

    const auto a = liquidate(p, 10, 5);
    CHECK(a.x == doctest::Approx(14.5));
    CHECK(a.y == 0.0);
    const auto b = liquidate(p, 10, -9);
    CHECK(b.x == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(b.y == 0.0);
}

TEST_CASE("segment crossing returns the exact level point, also across the kink") {
    std::mt19937_64 g(5);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const auto p = ref();
    int tested = 0;
    while (tested < 300) {
        const Position a{-40 + 80 * u(g), -20 + 60 * u(g)};
        const Position b{-40 + 80 * u(g), -20 + 60 * u(g)};
        const double level = 25 * u(g);
        const double La = liquidation_value(p, a.x, a.y), Lb = liquidation_value(p, b.x, b.y);
        if ((La - level) * (Lb - level) > 0) continue;
        const double t = segment_crossing(p, a, b, level);
        CHECK(t >= 0.0);
        CHECK(t <= 1.0);
        const double x = a.x + t * (b.x - a.x), y = a.y + t * (b.y - a.y);
        CHECK(liquidation_value(p, x, y) == doctest::Approx(level).epsilon(1e-9));
        ++tested;
    }
    CHECK_THROWS_AS(segment_crossing(p, {1, 0}, {2, 0}, 10.0), ModelError);
}
