#pragma once

#include <cstdint>
#include <optional>

#include "ruin/market.hpp"

namespace ruin {

/// Exponents of the frictionless ruin probability.
struct ClosedFormConstants {
    double d;  ///< exponent of psi_k and of the lower bound
    double R;  ///< 0.5 * ((alpha - r) / sigma)^2
};

ClosedFormConstants compute_constants(const MarketParams& p);

/// Value and the partial derivatives the generator needs.
struct Jet {
    double value;
    double ux;
    double uy;
    double uyy;
};

/// The three terms of the variational inequality at one point.
struct OperatorValues {
    double generator;  ///< beta u - (r x - c) u_x - alpha y u_y - 0.5 sigma^2 y^2 u_yy
    double sell;       ///< -(1-mu) u_x + u_y
    double buy;        ///< u_x - (1-lambda) u_y

    double max() const;
};

OperatorValues vi_operator_eval(const MarketParams& p, const Jet& f, double x, double y);

/// Ruin probability of liquidating immediately and never trading again:
/// ((c - r L) / (c - r b))^(beta/r), zero from L = c/r on.
/// Throws ModelError when L < b beyond the geometric tolerance; points within the
/// tolerance below b evaluate to 1 and bump clamp_event_count().
double upper_bound_psi(const MarketParams& p, double x, double y);

/// Frictionless ruin probability at wealth x + k y, with k in [1-mu, 1/(1-lambda)].
double frictionless_psi_k(const MarketParams& p, const ClosedFormConstants& cf, double k,
                          double x, double y);

/// ((c - r L) / (c - r b))^d.
double lower_bound_psi(const MarketParams& p, const ClosedFormConstants& cf, double x, double y);

/// max(psi_{1-mu}, psi_{1/(1-lambda)}); agrees with lower_bound_psi.
double lower_bound_psi_by_branches(const MarketParams& p, const ClosedFormConstants& cf,
                                   double x, double y);

Jet upper_bound_jet(const MarketParams& p, double x, double y);
Jet psi_k_jet(const MarketParams& p, const ClosedFormConstants& cf, double k, double x, double y);

/// Midpoint of the bid-ask interval [1-mu, 1/(1-lambda)].
double midpoint_price(const MarketParams& p);

/// Evaluation for simulated states, which may overshoot the boundaries by a time step:
/// everything at or below b maps to 1, everything at or above the candidate's zero set
/// maps to 0. Never throws.
double upper_bound_psi_clamped(const MarketParams& p, double x, double y);
double frictionless_psi_k_clamped(const MarketParams& p, const ClosedFormConstants& cf,
                                  double k, double x, double y);
double lower_bound_psi_clamped(const MarketParams& p, const ClosedFormConstants& cf,
                               double x, double y);

/// Count of evaluations that were clamped to 1 because L fell just below b.
std::uint64_t clamp_event_count();

/// Strict classical subsolution l(x,y) = h(x + k y), h(z) = -(z - b + 1)^p / p.
struct LyapunovSpec {
    double k;
    double p;
    double theta;  ///< r/(1-lambda) + alpha k
    double b;

    double value(double x, double y) const;
    Jet jet(double x, double y) const;
};

/// Largest exponent allowed by beta > 0.5 theta^2 / (sigma^2 k^2) * p / (1-p).
double lyapunov_critical_p(const MarketParams& p, double k);

/// Chooses p = p_crit / 2 unless an exponent is supplied. Throws ModelError for k outside
/// the open bid-ask interval or a supplied exponent that breaks the strict inequality.
LyapunovSpec build_lyapunov(const MarketParams& p, double k,
                            std::optional<double> p_exp = std::nullopt);

/// Builds the function without checking the subsolution inequality (diagnostics only).
LyapunovSpec build_lyapunov_unchecked(const MarketParams& p, double k, double p_exp);

}  // namespace ruin
