#pragma once

#include <map>
#include <stdexcept>
#include <string>
#include <utility>

namespace ruin {

/// Thrown for parameter sets and configuration values that violate a model invariant.
class ModelError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Market and investor constants. Validated on construction; immutable afterwards.
///
/// Cash amount x sits in the money market, y is the dollar amount held in the stock.
/// Buying costs lambda (ask = P/(1-lambda)), selling costs mu (bid = (1-mu)P).
class MarketParams {
public:
    MarketParams(double r, double alpha, double sigma, double beta,
                 double lambda_buy, double mu_sell, double c, double b);

    /// Reads the flat keys r, alpha, sigma, beta, lambda, mu, c, b.
    /// Missing or unknown keys raise ModelError naming the key.
    static MarketParams from_map(const std::map<std::string, std::string>& kv);

    /// Reference set with d = 2 and beta/r = 1 (r=0.04, alpha=0.08, sigma=0.2,
    /// beta=0.04, lambda=mu=0.1, c=1, b=0).
    static MarketParams reference();

    /// Same market with different proportional costs.
    MarketParams with_costs(double lambda_buy, double mu_sell) const;

    double r() const { return r_; }
    double alpha() const { return alpha_; }
    double sigma() const { return sigma_; }
    double beta() const { return beta_; }
    double lambda_buy() const { return lambda_; }
    double mu_sell() const { return mu_; }
    double c() const { return c_; }
    double b() const { return b_; }
    /// Safe level c/r: consumption is covered by interest from here on.
    double safe_level() const { return c_ / r_; }

private:
    double r_, alpha_, sigma_, beta_, lambda_, mu_, c_, b_;
};

enum class PointClass { BelowRuin, RuinBoundary, Interior, SafeBoundary, Safe };

enum class Trade { Buy, Sell };

struct Position {
    double x;
    double y;
};

inline constexpr double kDefaultGeomTol = 1e-9;

/// L(x,y) = x + (1-mu) y^+ - y^- / (1-lambda).
double liquidation_value(const MarketParams& p, double x, double y);

PointClass classify_point(const MarketParams& p, double x, double y,
                          double tol = kDefaultGeomTol);

/// Buy h dollars of stock: (x-h, y+(1-lambda)h). Sell h dollars of stock: (x+(1-mu)h, y-h).
Position transaction_shift(const MarketParams& p, double x, double y, Trade action, double h);

struct LiquidationOrder {
    double buy_amount;
    double sell_amount;
};

/// Amounts that close the stock position: (y^-/(1-lambda), y^+).
LiquidationOrder full_liquidation_amounts(double y, const MarketParams& p);

/// Applies full_liquidation_amounts to (x,y); the result is (L(x,y), 0).
Position liquidate(const MarketParams& p, double x, double y);

/// Parameter t in [0,1] where L(from + t (to - from)) = level, assuming L(from) and L(to)
/// bracket the level. L restricted to a segment is piecewise linear with at most one kink
/// (where y changes sign), so the root is solved exactly per piece.
double segment_crossing(const MarketParams& p, Position from, Position to, double level);

const char* to_string(PointClass c);

}  // namespace ruin
