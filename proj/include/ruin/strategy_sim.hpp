#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <random>
#include <stdexcept>

#include "ruin/closed_form.hpp"
#include "ruin/grid.hpp"

namespace ruin {

using Rng = std::mt19937_64;

/// Independent stream for one path, keyed by (seed, path index).
Rng path_rng(std::uint64_t seed, std::uint64_t path_index);

enum class StrategyKind { LiquidateNow, NoTransaction, FeedbackRegionMap };

class StrategySpec {
public:
    static StrategySpec liquidate_now();
    static StrategySpec no_transaction();
    /// Trades out of Buy/Sell cells to the nearest label change along the trade ray,
    /// located by bisection to `h_tol`.
    static StrategySpec feedback(std::shared_ptr<const RegionMap> regions, double h_tol = 1e-4);

    StrategyKind kind() const { return kind_; }
    const RegionMap* regions() const { return regions_.get(); }
    double h_tol() const { return h_tol_; }

private:
    StrategySpec(StrategyKind k, std::shared_ptr<const RegionMap> m, double tol)
        : kind_(k), regions_(std::move(m)), h_tol_(tol) {}
    StrategyKind kind_;
    std::shared_ptr<const RegionMap> regions_;
    double h_tol_;
};

const char* to_string(StrategyKind k);

struct PathState {
    double x = 0.0;
    double y = 0.0;
    double t = 0.0;
    bool alive = true;
    double cum_buy = 0.0;
    double cum_sell = 0.0;
    bool liquidated = false;  ///< LiquidateNow has already closed the position
};

/// Drift and volatility of the uncontrolled dynamics; separate from MarketParams so the
/// stepping can be exercised with sigma = 0.
struct DiffusionCoefficients {
    double r, c, alpha, sigma;
    static DiffusionCoefficients of(const MarketParams& p) {
        return {p.r(), p.c(), p.alpha(), p.sigma()};
    }
};

/// One Euler-Maruyama step without transactions. No normal variate is drawn when y == 0.
PathState step_diffusion(const PathState& s, const DiffusionCoefficients& k, double dt, Rng& rng);
/// Same step drawing from a caller-owned normal distribution (keeps its cached variate).
PathState step_diffusion(const PathState& s, const DiffusionCoefficients& k, double dt, Rng& rng,
                         std::normal_distribution<double>& normal);
PathState step_diffusion(const PathState& s, const MarketParams& p, double dt, Rng& rng);

/// Raised when the feedback bisection cannot bracket a label change.
class StrategyError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// At most one trade direction per call.
PathState apply_strategy(const PathState& s, const StrategySpec& strat, const MarketParams& p);

enum class DeathMode { SampleDeath, DiscountDeath };
enum class PathEnd { Ruin, Safe, Death, Censored, Horizon };

const char* to_string(DeathMode m);
const char* to_string(PathEnd e);

struct SimOptions {
    double dt = 1e-3;
    DeathMode mode = DeathMode::SampleDeath;
    std::optional<double> t_max;     ///< censoring horizon; default 20 / beta
    std::optional<double> horizon;   ///< stop alive paths at this time (martingale tests)

    double censor_time(const MarketParams& p) const { return t_max.value_or(20.0 / p.beta()); }
};

struct PathOutcome {
    double value = 0.0;  ///< 1 / e^{-beta tau_b} on ruin (per mode), 0 otherwise
    PathEnd end = PathEnd::Censored;
    bool flagged = false;
    PathState final;
};

/// Alternates apply_strategy and step_diffusion from (x0, y0) until ruin, safety, death,
/// censoring or the optional horizon. Deterministic stretches with y == 0 and no further
/// trading are advanced in closed form over whole Euler steps.
PathOutcome simulate_path(const MarketParams& p, const StrategySpec& strat, double x0, double y0,
                          const SimOptions& opt, Rng& rng);

struct MCResult {
    double estimate = 0.0;
    double std_error = 0.0;
    long n_paths = 0;
    long n_ruin = 0;
    long n_safe = 0;
    long n_death = 0;
    long censored = 0;
    long flagged = 0;
};

/// Mean and standard error over n_paths independent paths. Identical for any worker count.
MCResult estimate_ruin_probability(const MarketParams& p, const StrategySpec& strat, double x0,
                                   double y0, double dt, long n_paths, DeathMode mode,
                                   std::uint64_t seed, int workers = 1,
                                   std::optional<double> t_max = std::nullopt);

enum class CandidateKind { UpperBound, PsiK, LowerBound };

struct Candidate {
    CandidateKind kind;
    double k = 1.0;  ///< price for PsiK
    double operator()(const MarketParams& p, const ClosedFormConstants& cf, double x, double y) const;
};

const char* to_string(CandidateKind k);

enum class MartingaleDirection { Super, Sub };

struct MartingaleReport {
    double v0 = 0.0;
    double mean = 0.0;
    double std_error = 0.0;
    double z = 0.0;
    bool pass = false;
    long n_paths = 0;
};

/// Samples candidate(X_rho, Y_rho) with rho = min(horizon, ruin, safety, sampled death);
/// dead paths contribute 0. Super passes when mean <= v0 + 3 stderr, Sub when
/// mean >= v0 - 3 stderr.
MartingaleReport martingale_test(const MarketParams& p, const Candidate& candidate,
                                 const StrategySpec& strat, double x0, double y0, double horizon,
                                 long n_paths, MartingaleDirection direction, std::uint64_t seed,
                                 double dt = 1e-3, int workers = 1);

/// Pairwise (cascade) sum; the result depends only on the order of `v`.
double pairwise_sum(const double* v, std::size_t n);

}  // namespace ruin
