#include "ruin/market.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace ruin {

namespace {

void require(bool ok, const std::string& what) {
    if (!ok) throw ModelError("invalid market parameters: " + what);
}

}  // namespace

MarketParams::MarketParams(double r, double alpha, double sigma, double beta,
                           double lambda_buy, double mu_sell, double c, double b)
    : r_(r), alpha_(alpha), sigma_(sigma), beta_(beta), lambda_(lambda_buy),
      mu_(mu_sell), c_(c), b_(b) {
    for (double v : {r, alpha, sigma, beta, lambda_buy, mu_sell, c, b})
        require(std::isfinite(v), "all values must be finite");
    require(r > 0, "r must be positive");
    require(sigma > 0, "sigma must be positive");
    require(beta > 0, "beta must be positive");
    require(c > 0, "c must be positive");
    require(alpha > r, "alpha must exceed r");
    require(lambda_buy > 0 && lambda_buy < 1, "lambda must lie in (0,1)");
    require(mu_sell > 0 && mu_sell < 1, "mu must lie in (0,1)");
    require(b < c / r, "b must be below c/r");
}

MarketParams MarketParams::from_map(const std::map<std::string, std::string>& kv) {
    static const std::set<std::string> known{"r", "alpha", "sigma", "beta", "lambda", "mu", "c", "b"};
    for (const auto& [k, v] : kv)
        if (!known.count(k)) throw ModelError("unknown market key '" + k + "'");

    auto get = [&](const std::string& key) {
        auto it = kv.find(key);
        if (it == kv.end()) throw ModelError("missing market key '" + key + "'");
        try {
            std::size_t used = 0;
            double v = std::stod(it->second, &used);
            if (used != it->second.size()) throw std::invalid_argument(key);
            return v;
        } catch (const std::exception&) {
            throw ModelError("market key '" + key + "' is not a number: '" + it->second + "'");
        }
    };
    return MarketParams(get("r"), get("alpha"), get("sigma"), get("beta"), get("lambda"),
                        get("mu"), get("c"), get("b"));
}

MarketParams MarketParams::reference() {
    return MarketParams(0.04, 0.08, 0.2, 0.04, 0.1, 0.1, 1.0, 0.0);
}

MarketParams MarketParams::with_costs(double lambda_buy, double mu_sell) const {
    return MarketParams(r_, alpha_, sigma_, beta_, lambda_buy, mu_sell, c_, b_);
}

double liquidation_value(const MarketParams& p, double x, double y) {
    if (y >= 0) return x + (1.0 - p.mu_sell()) * y;
    return x + y / (1.0 - p.lambda_buy());
}

PointClass classify_point(const MarketParams& p, double x, double y, double tol) {
    if (tol < 0) throw ModelError("classification tolerance must be nonnegative");
    const double L = liquidation_value(p, x, y);
    const double lo = p.b();
    const double hi = p.safe_level();
    // Ruin is tested first so that the two boundary bands never overlap, even for
    // tolerances comparable to c/r - b.
    if (std::abs(L - lo) <= tol) return PointClass::RuinBoundary;
    if (L < lo) return PointClass::BelowRuin;
    if (std::abs(L - hi) <= tol) return PointClass::SafeBoundary;
    if (L > hi) return PointClass::Safe;
    return PointClass::Interior;
}

Position transaction_shift(const MarketParams& p, double x, double y, Trade action, double h) {
    if (h < 0) throw ModelError("transaction amount must be nonnegative");
    if (action == Trade::Buy) return {x - h, y + (1.0 - p.lambda_buy()) * h};
    return {x + (1.0 - p.mu_sell()) * h, y - h};
}

LiquidationOrder full_liquidation_amounts(double y, const MarketParams& p) {
    return {std::max(-y, 0.0) / (1.0 - p.lambda_buy()), std::max(y, 0.0)};
}

Position liquidate(const MarketParams& p, double x, double y) {
    const auto order = full_liquidation_amounts(y, p);
    if (order.sell_amount > 0) return {x + (1.0 - p.mu_sell()) * order.sell_amount, 0.0};
    if (order.buy_amount > 0) return {x - order.buy_amount, 0.0};
    return {x, 0.0};
}

double segment_crossing(const MarketParams& p, Position from, Position to, double level) {
    auto at = [&](double t) {
        return liquidation_value(p, from.x + t * (to.x - from.x), from.y + t * (to.y - from.y));
    };
    // Break points of the piecewise-linear restriction.
    double knots[3] = {0.0, 1.0, 1.0};
    int n = 2;
    if ((from.y < 0 && to.y > 0) || (from.y > 0 && to.y < 0)) {
        knots[1] = from.y / (from.y - to.y);
        knots[2] = 1.0;
        n = 3;
    }
    for (int k = 0; k + 1 < n; ++k) {
        const double t0 = knots[k], t1 = knots[k + 1];
        const double l0 = at(t0), l1 = at(t1);
        if ((l0 - level) * (l1 - level) <= 0) {
            if (l1 == l0) return t0;
            return std::clamp(t0 + (level - l0) / (l1 - l0) * (t1 - t0), t0, t1);
        }
    }
    throw ModelError("segment does not cross the requested liquidation level");
}

const char* to_string(PointClass c) {
    switch (c) {
        case PointClass::BelowRuin: return "BelowRuin";
        case PointClass::RuinBoundary: return "RuinBoundary";
        case PointClass::Interior: return "Interior";
        case PointClass::SafeBoundary: return "SafeBoundary";
        case PointClass::Safe: return "Safe";
    }
    return "?";
}

}  // namespace ruin
