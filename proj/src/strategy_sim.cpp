#include "ruin/strategy_sim.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <limits>
#include <mutex>
#include <thread>
#include <vector>

namespace ruin {

Rng path_rng(std::uint64_t seed, std::uint64_t path_index) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(path_index),
                      static_cast<std::uint32_t>(path_index >> 32)};
    return Rng(seq);
}

StrategySpec StrategySpec::liquidate_now() { return {StrategyKind::LiquidateNow, nullptr, 0.0}; }

StrategySpec StrategySpec::no_transaction() { return {StrategyKind::NoTransaction, nullptr, 0.0}; }

StrategySpec StrategySpec::feedback(std::shared_ptr<const RegionMap> regions, double h_tol) {
    if (!regions || !regions->grid) throw ModelError("feedback strategy needs a region map");
    if (!(h_tol > 0)) throw ModelError("feedback h_tol must be positive");
    return {StrategyKind::FeedbackRegionMap, std::move(regions), h_tol};
}

const char* to_string(StrategyKind k) {
    switch (k) {
        case StrategyKind::LiquidateNow: return "liquidate";
        case StrategyKind::NoTransaction: return "none";
        case StrategyKind::FeedbackRegionMap: return "feedback";
    }
    return "?";
}

const char* to_string(DeathMode m) {
    return m == DeathMode::SampleDeath ? "sample" : "discount";
}

const char* to_string(PathEnd e) {
    switch (e) {
        case PathEnd::Ruin: return "ruin";
        case PathEnd::Safe: return "safe";
        case PathEnd::Death: return "death";
        case PathEnd::Censored: return "censored";
        case PathEnd::Horizon: return "horizon";
    }
    return "?";
}

const char* to_string(CandidateKind k) {
    switch (k) {
        case CandidateKind::UpperBound: return "upper";
        case CandidateKind::PsiK: return "psi_k";
        case CandidateKind::LowerBound: return "lower";
    }
    return "?";
}

PathState step_diffusion(const PathState& s, const DiffusionCoefficients& k, double dt, Rng& rng) {
    std::normal_distribution<double> normal;
    return step_diffusion(s, k, dt, rng, normal);
}

PathState step_diffusion(const PathState& s, const DiffusionCoefficients& k, double dt, Rng& rng,
                         std::normal_distribution<double>& normal) {
    if (!s.alive) throw std::logic_error("step_diffusion on a dead path");
    PathState out = s;
    out.x = s.x + (k.r * s.x - k.c) * dt;
    if (s.y != 0.0) {
        out.y = s.y + k.alpha * s.y * dt + k.sigma * s.y * std::sqrt(dt) * normal(rng);
    }
    out.t = s.t + dt;
    return out;
}

PathState step_diffusion(const PathState& s, const MarketParams& p, double dt, Rng& rng) {
    return step_diffusion(s, DiffusionCoefficients::of(p), dt, rng);
}

namespace {

bool is_trade_label(Region r) { return r == Region::Buy || r == Region::Sell; }

// Smallest trade (to h_tol) whose landing point no longer carries `action`'s label.
double feedback_trade_size(const RegionMap& map, const MarketParams& p, double x, double y,
                           Trade action, Region label, double h_tol) {
    auto label_after = [&](double h) {
        const Position q = transaction_shift(p, x, y, action, h);
        return map.lookup(q.x, q.y);
    };
    const Grid& g = *map.grid;
    double lo = 0.0, hi = 0.5 * std::min(g.dx(), g.dy());
    int doublings = 0;
    while (label_after(hi) == label) {
        lo = hi;
        hi *= 2.0;
        if (++doublings > 60) throw StrategyError("feedback trade did not leave the trade region");
    }
    while (hi - lo > h_tol) {
        const double mid = 0.5 * (lo + hi);
        if (label_after(mid) == label) lo = mid; else hi = mid;
    }
    return hi;
}

}  // namespace

PathState apply_strategy(const PathState& s, const StrategySpec& strat, const MarketParams& p) {
    if (!s.alive) throw std::logic_error("apply_strategy on a dead path");
    PathState out = s;
    switch (strat.kind()) {
        case StrategyKind::NoTransaction:
            return out;
        case StrategyKind::LiquidateNow: {
            if (s.liquidated) return out;
            const auto order = full_liquidation_amounts(s.y, p);
            const Position q = liquidate(p, s.x, s.y);
            out.x = q.x;
            out.y = q.y;
            out.cum_buy += order.buy_amount;
            out.cum_sell += order.sell_amount;
            out.liquidated = true;
            return out;
        }
        case StrategyKind::FeedbackRegionMap: {
            const RegionMap& map = *strat.regions();
            const Region label = map.lookup(s.x, s.y);
            if (!is_trade_label(label)) return out;
            const Trade action = label == Region::Buy ? Trade::Buy : Trade::Sell;
            const double h = feedback_trade_size(map, p, s.x, s.y, action, label, strat.h_tol());
            const Position q = transaction_shift(p, s.x, s.y, action, h);
            out.x = q.x;
            out.y = q.y;
            (action == Trade::Buy ? out.cum_buy : out.cum_sell) += h;
            return out;
        }
    }
    return out;
}

namespace {

// Smallest n with n dt >= time.
long first_step_at(double time, double dt) {
    if (time <= 0) return 0;
    long n = static_cast<long>(std::ceil(time / dt));
    while (n > 0 && static_cast<double>(n - 1) * dt >= time) --n;
    while (static_cast<double>(n) * dt < time) ++n;
    return n;
}

// Smallest n with (n + 1) dt > tau: the path dies before the observation at step n + 1.
long death_step(double tau, double dt) {
    long n = std::max(0L, static_cast<long>(std::floor(tau / dt)) - 1);
    while (n > 0 && static_cast<double>(n) * dt > tau) --n;
    while (static_cast<double>(n + 1) * dt <= tau) ++n;
    return n;
}

constexpr long kNever = std::numeric_limits<long>::max();

// Euler iterate of x' = r x - c after m steps from x: s + (x - s)(1 + r dt)^m.
double euler_cash(const MarketParams& p, double x, double dt, long m) {
    const double s = p.safe_level();
    return s + (x - s) * std::pow(1.0 + p.r() * dt, static_cast<double>(m));
}

// Steps until the deterministic cash iterate first reaches b; x lies in (b, c/r).
long steps_to_ruin(const MarketParams& p, double x, double dt) {
    const double s = p.safe_level();
    const double ratio = (s - p.b()) / (s - x);
    long m = static_cast<long>(std::ceil(std::log(ratio) / std::log1p(p.r() * dt)));
    m = std::max(m, 1L);
    while (m > 1 && euler_cash(p, x, dt, m - 1) <= p.b()) --m;
    while (euler_cash(p, x, dt, m) > p.b()) ++m;
    return m;
}

bool trades_again(const StrategySpec& strat, const PathState& s) {
    switch (strat.kind()) {
        case StrategyKind::NoTransaction: return false;
        case StrategyKind::LiquidateNow: return !s.liquidated;
        case StrategyKind::FeedbackRegionMap: return true;
    }
    return true;
}

}  // namespace

PathOutcome simulate_path(const MarketParams& p, const StrategySpec& strat, double x0, double y0,
                          const SimOptions& opt, Rng& rng) {
    if (!(opt.dt > 0)) throw ModelError("dt must be positive");
    if (liquidation_value(p, x0, y0) < p.b() - kDefaultGeomTol)
        throw ModelError("initial point lies below the ruin level");

    const DiffusionCoefficients coeff = DiffusionCoefficients::of(p);
    const double dt = opt.dt;
    double tau_death = std::numeric_limits<double>::infinity();
    if (opt.mode == DeathMode::SampleDeath) tau_death = std::exponential_distribution<double>(p.beta())(rng);

    const long n_censor = first_step_at(opt.censor_time(p), dt);
    const long n_horizon = opt.horizon ? first_step_at(*opt.horizon, dt) : kNever;
    const long n_death = std::isfinite(tau_death) ? death_step(tau_death, dt) : kNever;

    std::normal_distribution<double> normal;
    PathOutcome out;
    PathState s{x0, y0, 0.0, true, 0.0, 0.0, false};
    auto finish = [&](PathEnd end) {
        out.end = end;
        if (end == PathEnd::Death) s.alive = false;
        if (end == PathEnd::Ruin)
            out.value = opt.mode == DeathMode::SampleDeath ? 1.0 : std::exp(-p.beta() * s.t);
        out.final = s;
        return out;
    };

    for (long n = 0;; ++n) {
        s.t = static_cast<double>(n) * dt;
        try {
            s = apply_strategy(s, strat, p);
        } catch (const StrategyError&) {
            out.flagged = true;
        }
        const double L = liquidation_value(p, s.x, s.y);
        if (L <= p.b()) return finish(PathEnd::Ruin);
        if (L >= p.safe_level()) return finish(PathEnd::Safe);
        if (n >= n_horizon) return finish(PathEnd::Horizon);
        if (n >= n_censor) return finish(PathEnd::Censored);
        if (n >= n_death) return finish(PathEnd::Death);

        if (s.y == 0.0 && !trades_again(strat, s)) {
            // Deterministic cash drain: jump to the first event in closed form.
            const long n_ruin = n + steps_to_ruin(p, s.x, dt);
            const long n_end = std::min({n_ruin, n_horizon, n_censor, n_death});
            s.x = euler_cash(p, s.x, dt, n_end - n);
            s.t = static_cast<double>(n_end) * dt;
            if (n_end == n_ruin) return finish(PathEnd::Ruin);
            if (n_end == n_horizon) return finish(PathEnd::Horizon);
            if (n_end == n_censor) return finish(PathEnd::Censored);
            return finish(PathEnd::Death);
        }
        s = step_diffusion(s, coeff, dt, rng, normal);
    }
}

double pairwise_sum(const double* v, std::size_t n) {
    if (n <= 8) {
        double s = 0.0;
        for (std::size_t k = 0; k < n; ++k) s += v[k];
        return s;
    }
    const std::size_t half = n / 2;
    return pairwise_sum(v, half) + pairwise_sum(v + half, n - half);
}

namespace {

// Runs fn(path_index) for every path, split into contiguous index blocks per worker.
template <class Fn>
void for_each_path(long n_paths, int workers, Fn fn) {
    const long nw = std::min<long>(workers > 0 ? workers : std::max(1u, std::thread::hardware_concurrency()), n_paths);
    if (nw <= 1) {
        for (long k = 0; k < n_paths; ++k) fn(k);
        return;
    }
    std::vector<std::thread> pool;
    std::exception_ptr failure;
    std::mutex failure_mutex;
    const long chunk = (n_paths + nw - 1) / nw;
    for (long w = 0; w < nw; ++w) {
        const long lo = std::min(n_paths, w * chunk), hi = std::min(n_paths, lo + chunk);
        pool.emplace_back([&, lo, hi] {
            try {
                for (long k = lo; k < hi; ++k) fn(k);
            } catch (...) {
                std::lock_guard lock(failure_mutex);
                if (!failure) failure = std::current_exception();
            }
        });
    }
    for (auto& t : pool) t.join();
    if (failure) std::rethrow_exception(failure);
}

struct Moments {
    double mean;
    double std_error;
};

Moments sample_moments(const std::vector<double>& v) {
    const auto n = v.size();
    const double mean = pairwise_sum(v.data(), n) / static_cast<double>(n);
    std::vector<double> sq(n);
    for (std::size_t k = 0; k < n; ++k) sq[k] = (v[k] - mean) * (v[k] - mean);
    const double var = n > 1 ? pairwise_sum(sq.data(), n) / static_cast<double>(n - 1) : 0.0;
    return {mean, std::sqrt(var / static_cast<double>(n))};
}

}  // namespace

MCResult estimate_ruin_probability(const MarketParams& p, const StrategySpec& strat, double x0,
                                   double y0, double dt, long n_paths, DeathMode mode,
                                   std::uint64_t seed, int workers, std::optional<double> t_max) {
    if (n_paths < 100) throw ModelError("n_paths must be >= 100");
    SimOptions opt;
    opt.dt = dt;
    opt.mode = mode;
    opt.t_max = t_max;

    std::vector<double> values(static_cast<std::size_t>(n_paths));
    std::vector<PathEnd> ends(static_cast<std::size_t>(n_paths));
    std::vector<unsigned char> flags(static_cast<std::size_t>(n_paths));
    for_each_path(n_paths, workers, [&](long k) {
        Rng rng = path_rng(seed, static_cast<std::uint64_t>(k));
        const auto o = simulate_path(p, strat, x0, y0, opt, rng);
        values[static_cast<std::size_t>(k)] = o.value;
        ends[static_cast<std::size_t>(k)] = o.end;
        flags[static_cast<std::size_t>(k)] = o.flagged;
    });

    MCResult r;
    const auto m = sample_moments(values);
    r.estimate = std::clamp(m.mean, 0.0, 1.0);
    r.std_error = m.std_error;
    r.n_paths = n_paths;
    for (std::size_t k = 0; k < values.size(); ++k) {
        switch (ends[k]) {
            case PathEnd::Ruin: ++r.n_ruin; break;
            case PathEnd::Safe: ++r.n_safe; break;
            case PathEnd::Death: ++r.n_death; break;
            case PathEnd::Censored:
            case PathEnd::Horizon: ++r.censored; break;
        }
        r.flagged += flags[k];
    }
    return r;
}

double Candidate::operator()(const MarketParams& p, const ClosedFormConstants& cf, double x,
                             double y) const {
    switch (kind) {
        case CandidateKind::UpperBound: return upper_bound_psi_clamped(p, x, y);
        case CandidateKind::PsiK: return frictionless_psi_k_clamped(p, cf, k, x, y);
        case CandidateKind::LowerBound: return lower_bound_psi_clamped(p, cf, x, y);
    }
    return 0.0;
}

MartingaleReport martingale_test(const MarketParams& p, const Candidate& candidate,
                                 const StrategySpec& strat, double x0, double y0, double horizon,
                                 long n_paths, MartingaleDirection direction, std::uint64_t seed,
                                 double dt, int workers) {
    if (!(horizon > 0)) throw ModelError("martingale horizon must be positive");
    if (n_paths < 2) throw ModelError("martingale test needs at least two paths");
    const auto cf = compute_constants(p);
    if (candidate.kind == CandidateKind::PsiK) frictionless_psi_k(p, cf, candidate.k, x0, y0);

    SimOptions opt;
    opt.dt = dt;
    opt.mode = DeathMode::SampleDeath;
    opt.horizon = horizon;
    opt.t_max = std::max(horizon, 20.0 / p.beta());

    std::vector<double> values(static_cast<std::size_t>(n_paths));
    for_each_path(n_paths, workers, [&](long k) {
        Rng rng = path_rng(seed, static_cast<std::uint64_t>(k));
        const auto o = simulate_path(p, strat, x0, y0, opt, rng);
        values[static_cast<std::size_t>(k)] =
            o.end == PathEnd::Death ? 0.0 : candidate(p, cf, o.final.x, o.final.y);
    });

    MartingaleReport rep;
    const auto m = sample_moments(values);
    rep.v0 = candidate(p, cf, x0, y0);
    rep.mean = m.mean;
    rep.std_error = m.std_error;
    rep.n_paths = n_paths;
    const double scale = std::max(m.std_error, 1e-15);
    rep.z = (m.mean - rep.v0) / scale;
    rep.pass = direction == MartingaleDirection::Super ? m.mean <= rep.v0 + 3.0 * scale
                                                       : m.mean >= rep.v0 - 3.0 * scale;
    return rep;
}

}  // namespace ruin
