#include "ruin/closed_form.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <string>

namespace ruin {

namespace {

std::atomic<std::uint64_t> g_clamp_events{0};

// base = (c - r z) / (c - r b) for a wealth-like argument z. Returns the value of
// base^expo and its first two derivatives with respect to z.
struct PowerJet {
    double f, f1, f2;
};

PowerJet power_of_base(const MarketParams& p, double z, double expo) {
    const double denom = p.c() - p.r() * p.b();
    const double base = (p.c() - p.r() * z) / denom;
    if (base <= 0) return {0.0, 0.0, 0.0};
    const double dbase = -p.r() / denom;
    const double f = std::pow(base, expo);
    const double f1 = expo * std::pow(base, expo - 1.0) * dbase;
    const double f2 = expo * (expo - 1.0) * std::pow(base, expo - 2.0) * dbase * dbase;
    return {f, f1, f2};
}

// Checks z >= b for a closed-form evaluation; z within the geometric tolerance below b
// returns false after counting a clamp event.
bool admissible_argument(const MarketParams& p, double z, const char* what) {
    if (z >= p.b()) return true;
    if (z >= p.b() - kDefaultGeomTol) {
        g_clamp_events.fetch_add(1, std::memory_order_relaxed);
        return false;
    }
    throw ModelError(std::string(what) + ": point lies below the ruin level");
}

double clamped_power(const MarketParams& p, double z, double expo) {
    if (z <= p.b()) return 1.0;
    if (z >= p.safe_level()) return 0.0;
    return power_of_base(p, z, expo).f;
}

void check_price(const MarketParams& p, double k) {
    const double lo = 1.0 - p.mu_sell();
    const double hi = 1.0 / (1.0 - p.lambda_buy());
    if (!(k >= lo && k <= hi)) throw ModelError("price k must lie in [1-mu, 1/(1-lambda)]");
}

}  // namespace

ClosedFormConstants compute_constants(const MarketParams& p) {
    const double R = 0.5 * std::pow((p.alpha() - p.r()) / p.sigma(), 2);
    const double s = p.r() + p.beta() + R;
    // s^2 - 4 r beta = (r - beta)^2 + 2 R (r + beta) + R^2 >= 0.
    const double disc = (p.r() - p.beta()) * (p.r() - p.beta()) + R * (2.0 * (p.r() + p.beta()) + R);
    const double d = (s + std::sqrt(disc)) / (2.0 * p.r());
    return {d, R};
}

double OperatorValues::max() const { return std::max({generator, sell, buy}); }

OperatorValues vi_operator_eval(const MarketParams& p, const Jet& f, double x, double y) {
    OperatorValues out{};
    out.generator = p.beta() * f.value - (p.r() * x - p.c()) * f.ux - p.alpha() * y * f.uy -
                    0.5 * p.sigma() * p.sigma() * y * y * f.uyy;
    out.sell = -(1.0 - p.mu_sell()) * f.ux + f.uy;
    out.buy = f.ux - (1.0 - p.lambda_buy()) * f.uy;
    return out;
}

double upper_bound_psi(const MarketParams& p, double x, double y) {
    const double L = liquidation_value(p, x, y);
    if (!admissible_argument(p, L, "upper_bound_psi")) return 1.0;
    return power_of_base(p, L, p.beta() / p.r()).f;
}

double frictionless_psi_k(const MarketParams& p, const ClosedFormConstants& cf, double k,
                          double x, double y) {
    check_price(p, k);
    const double z = x + k * y;
    if (!admissible_argument(p, z, "frictionless_psi_k")) return 1.0;
    return power_of_base(p, z, cf.d).f;
}

double lower_bound_psi(const MarketParams& p, const ClosedFormConstants& cf, double x, double y) {
    const double L = liquidation_value(p, x, y);
    if (!admissible_argument(p, L, "lower_bound_psi")) return 1.0;
    return power_of_base(p, L, cf.d).f;
}

double lower_bound_psi_by_branches(const MarketParams& p, const ClosedFormConstants& cf,
                                   double x, double y) {
    return std::max(frictionless_psi_k(p, cf, 1.0 - p.mu_sell(), x, y),
                    frictionless_psi_k(p, cf, 1.0 / (1.0 - p.lambda_buy()), x, y));
}

Jet upper_bound_jet(const MarketParams& p, double x, double y) {
    const double L = liquidation_value(p, x, y);
    const auto g = power_of_base(p, L, p.beta() / p.r());
    const double slope = y >= 0 ? 1.0 - p.mu_sell() : 1.0 / (1.0 - p.lambda_buy());
    return {g.f, g.f1, g.f1 * slope, g.f2 * slope * slope};
}

Jet psi_k_jet(const MarketParams& p, const ClosedFormConstants& cf, double k, double x, double y) {
    check_price(p, k);
    const auto g = power_of_base(p, x + k * y, cf.d);
    return {g.f, g.f1, g.f1 * k, g.f2 * k * k};
}

double midpoint_price(const MarketParams& p) {
    return 0.5 * ((1.0 - p.mu_sell()) + 1.0 / (1.0 - p.lambda_buy()));
}

double upper_bound_psi_clamped(const MarketParams& p, double x, double y) {
    return clamped_power(p, liquidation_value(p, x, y), p.beta() / p.r());
}

double frictionless_psi_k_clamped(const MarketParams& p, const ClosedFormConstants& cf,
                                  double k, double x, double y) {
    return clamped_power(p, x + k * y, cf.d);
}

double lower_bound_psi_clamped(const MarketParams& p, const ClosedFormConstants& cf,
                               double x, double y) {
    return clamped_power(p, liquidation_value(p, x, y), cf.d);
}

std::uint64_t clamp_event_count() { return g_clamp_events.load(); }

double LyapunovSpec::value(double x, double y) const {
    return -std::pow(x + k * y - b + 1.0, p) / p;
}

Jet LyapunovSpec::jet(double x, double y) const {
    const double s = x + k * y - b + 1.0;
    const double h = -std::pow(s, p) / p;
    const double h1 = -std::pow(s, p - 1.0);
    const double h2 = (1.0 - p) * std::pow(s, p - 2.0);
    return {h, h1, h1 * k, h2 * k * k};
}

double lyapunov_critical_p(const MarketParams& p, double k) {
    const double theta = p.r() / (1.0 - p.lambda_buy()) + p.alpha() * k;
    const double a = 0.5 * theta * theta / (p.sigma() * p.sigma() * k * k);
    // beta = a * q / (1 - q)  <=>  q = beta / (a + beta)
    return p.beta() / (a + p.beta());
}

LyapunovSpec build_lyapunov_unchecked(const MarketParams& p, double k, double p_exp) {
    const double theta = p.r() / (1.0 - p.lambda_buy()) + p.alpha() * k;
    return {k, p_exp, theta, p.b()};
}

LyapunovSpec build_lyapunov(const MarketParams& p, double k, std::optional<double> p_exp) {
    const double lo = 1.0 - p.mu_sell();
    const double hi = 1.0 / (1.0 - p.lambda_buy());
    if (!(k > lo && k < hi)) throw ModelError("Lyapunov price k must lie in (1-mu, 1/(1-lambda))");
    const double p_crit = lyapunov_critical_p(p, k);
    const double chosen = p_exp.value_or(0.5 * p_crit);
    if (!(chosen > 0 && chosen < 1)) throw ModelError("Lyapunov exponent must lie in (0,1)");
    const auto spec = build_lyapunov_unchecked(p, k, chosen);
    const double rhs = 0.5 * spec.theta * spec.theta / (p.sigma() * p.sigma() * k * k) *
                       chosen / (1.0 - chosen);
    if (!(p.beta() > rhs))
        throw ModelError("Lyapunov exponent violates beta > theta^2 p / (2 sigma^2 k^2 (1-p))");
    return spec;
}

}  // namespace ruin
