#include <doctest.h>

#include <cmath>

#include "ruin/closed_form.hpp"
#include "ruin/strategy_sim.hpp"
#include "ruin/vi_solver.hpp"

using namespace ruin;

namespace {

// Euler steps of x' = r x - c from x0 until x <= b, counted independently of the simulator.
int euler_ruin_steps(const MarketParams& p, double x0, double dt) {
    double x = x0;
    int n = 0;
    while (x > p.b()) {
        x += (p.r() * x - p.c()) * dt;
        ++n;
    }
    return n;
}

}  // namespace

TEST_CASE("path streams are reproducible and distinct") {
    auto a = path_rng(42, 7), b = path_rng(42, 7), c = path_rng(42, 8), d = path_rng(43, 7);
    const auto va = a();
    CHECK(va == b());
    CHECK(va != c());
    CHECK(va != d());
}

TEST_CASE("diffusion step: cash axis draws nothing, sigma = 0 is the Euler drift") {
    const auto p = MarketParams::reference();
    Rng rng(1);
    const Rng before = rng;
    PathState s{10.0, 0.0};
    const auto n = step_diffusion(s, p, 0.01, rng);
    CHECK(n.y == 0.0);
    CHECK(n.x == doctest::Approx(10.0 + (0.4 - 1.0) * 0.01));
    CHECK(n.t == doctest::Approx(0.01));
    CHECK(rng == before);

    DiffusionCoefficients k{0.04, 1.0, 0.08, 0.0};
    PathState q{10.0, 3.0};
    for (int i = 0; i < 100; ++i) q = step_diffusion(q, k, 0.01, rng);
    CHECK(q.y == doctest::Approx(3.0 * std::pow(1.0 + 0.08 * 0.01, 100)).epsilon(1e-12));
}

TEST_CASE("one-step mean of the stock position matches the drift") {
    const auto k = DiffusionCoefficients::of(MarketParams::reference());
    Rng rng(99);
    std::normal_distribution<double> normal;
    const double dt = 0.01, y0 = 2.0;
    const int n = 1000000;
    double sum = 0.0;
    for (int i = 0; i < n; ++i) sum += step_diffusion(PathState{5.0, y0}, k, dt, rng, normal).y;
    const double se = k.sigma * y0 * std::sqrt(dt) / std::sqrt(static_cast<double>(n));
    CHECK(std::abs(sum / n - y0 * (1.0 + k.alpha * dt)) < 4.0 * se);
}

TEST_CASE("liquidate-now closes once at value L; no-transaction is the identity") {
    const auto p = MarketParams::reference();
    const auto ln = StrategySpec::liquidate_now();
    auto s = apply_strategy(PathState{10.0, 5.0}, ln, p);
    CHECK(s.x == doctest::Approx(14.5));
    CHECK(s.y == 0.0);
    CHECK(s.cum_sell == doctest::Approx(5.0));
    CHECK(s.cum_buy == 0.0);
    CHECK(s.liquidated);
    s.y = 1.0;
    const auto again = apply_strategy(s, ln, p);
    CHECK(again.y == 1.0);

    const auto sh = apply_strategy(PathState{20.0, -9.0}, ln, p);
    CHECK(sh.x == doctest::Approx(10.0));
    CHECK(sh.cum_buy == doctest::Approx(10.0));

    const PathState q{7.0, -2.0, 1.5};
    const auto nt = apply_strategy(q, StrategySpec::no_transaction(), p);
    CHECK(nt.x == q.x);
    CHECK(nt.y == q.y);
    CHECK(nt.cum_buy == 0.0);
    CHECK(nt.cum_sell == 0.0);
}

TEST_CASE("feedback trades to the label change along the ray, one direction per call") {
    const auto p = MarketParams::reference();
    const auto g = build_grid(p, GridSpec::defaults(p, 51));
    auto m = std::make_shared<RegionMap>(RegionMap{g, std::vector<Region>(g->size(), Region::Boundary)});
    for (int n : g->interior()) {
        const double y = g->y(g->row(n));
        m->labels[n] = y > 10 ? Region::Sell : (y < -2 ? Region::Buy : Region::NoTrade);
    }
    const double h = 1e-4;
    const auto fb = StrategySpec::feedback(m, h);

    const PathState s0{5.0, 15.0};
    const auto s = apply_strategy(s0, fb, p);
    CHECK(s.cum_buy == 0.0);
    CHECK(s.cum_sell > 0.0);
    CHECK(liquidation_value(p, s.x, s.y) == doctest::Approx(liquidation_value(p, s0.x, s0.y)));
    CHECK(m->lookup(s.x, s.y) != Region::Sell);
    CHECK(m->lookup(s.x - (1 - p.mu_sell()) * 2 * h, s.y + 2 * h) == Region::Sell);

    const PathState b0{10.0, -4.0};
    const auto b = apply_strategy(b0, fb, p);
    CHECK(b.cum_sell == 0.0);
    CHECK(b.cum_buy > 0.0);
    CHECK(m->lookup(b.x, b.y) != Region::Buy);

    const PathState n0{10.0, 1.0};
    const auto n = apply_strategy(n0, fb, p);
    CHECK(n.x == n0.x);
    CHECK(n.y == n0.y);
}

TEST_CASE("paths started on the boundary end immediately") {
    const auto p = MarketParams::reference();
    Rng rng(3);
    SimOptions opt;
    const auto safe = simulate_path(p, StrategySpec::no_transaction(), p.safe_level(), 0.0, opt, rng);
    CHECK(safe.end == PathEnd::Safe);
    CHECK(safe.value == 0.0);
    const auto ruin = simulate_path(p, StrategySpec::no_transaction(), p.b(), 0.0, opt, rng);
    CHECK(ruin.end == PathEnd::Ruin);
    CHECK(ruin.value == 1.0);
}

TEST_CASE("liquidate-now on the cash axis: discounted mode is exact, sampled mode agrees") {
    const auto p = MarketParams::reference();
    const double dt = 1e-3;
    const double oracle = std::exp(-p.beta() * euler_ruin_steps(p, 12.5, dt) * dt);
    const auto disc = estimate_ruin_probability(p, StrategySpec::liquidate_now(), 12.5, 0.0, dt, 1000,
                                                DeathMode::DiscountDeath, 1);
    CHECK(disc.estimate == doctest::Approx(oracle).epsilon(1e-9));
    CHECK(disc.std_error < 1e-12);

    const auto samp = estimate_ruin_probability(p, StrategySpec::liquidate_now(), 12.5, 0.0, dt, 20000,
                                                DeathMode::SampleDeath, 5);
    CHECK(std::abs(samp.estimate - oracle) < 3.0 * samp.std_error);
    CHECK(samp.n_ruin + samp.n_safe + samp.n_death + samp.censored == samp.n_paths);
    // Continuous-time value of the same problem.
    CHECK(std::abs(samp.estimate - upper_bound_psi(p, 12.5, 0.0)) < 3.0 * samp.std_error + 1e-3);
}

TEST_CASE("discretisation bias shrinks with the step") {
    const auto p = MarketParams::reference();
    double prev = 1.0;
    for (double dt : {0.01, 0.005, 0.0025}) {
        const auto r = estimate_ruin_probability(p, StrategySpec::liquidate_now(), 12.5, 0.0, dt, 100,
                                                 DeathMode::DiscountDeath, 1);
        const double bias = std::abs(r.estimate - 0.5);
        CHECK(bias < prev);
        prev = bias;
    }
}

TEST_CASE("without stock the wealth drifts down below c/r") {
    const auto p = MarketParams::reference();
    Rng rng(8);
    SimOptions opt;
    opt.horizon = 2.0;
    opt.mode = DeathMode::DiscountDeath;
    const auto out = simulate_path(p, StrategySpec::no_transaction(), 20.0, 0.0, opt, rng);
    CHECK(out.end == PathEnd::Horizon);
    CHECK(out.final.x < 20.0);
    CHECK(out.final.x == doctest::Approx(25.0 - 5.0 * std::pow(1.0 + 0.04 * 1e-3, 2000)).epsilon(1e-9));
}

TEST_CASE("estimates are bitwise independent of the worker count") {
    const auto p = MarketParams::reference();
    const auto a = estimate_ruin_probability(p, StrategySpec::no_transaction(), 10.0, 5.0, 0.01, 1000,
                                             DeathMode::SampleDeath, 77, 1);
    const auto b = estimate_ruin_probability(p, StrategySpec::no_transaction(), 10.0, 5.0, 0.01, 1000,
                                             DeathMode::SampleDeath, 77, 4);
    CHECK(a.estimate == b.estimate);
    CHECK(a.std_error == b.std_error);
    CHECK(a.n_ruin == b.n_ruin);
    CHECK_THROWS_AS(estimate_ruin_probability(p, StrategySpec::no_transaction(), 10.0, 5.0, 0.01, 99,
                                              DeathMode::SampleDeath, 77),
                    ModelError);
}

TEST_CASE("martingale checks of the closed forms") {
    const auto p = MarketParams::reference();
    const auto up = martingale_test(p, Candidate{CandidateKind::UpperBound}, StrategySpec::liquidate_now(), 10.0,
                                    5.0, 1.0, 4000, MartingaleDirection::Super, 21);
    CHECK(up.pass);
    CHECK(std::abs(up.z) <= 3.0);
    CHECK(up.v0 == doctest::Approx(upper_bound_psi(p, 10.0, 5.0)));

    const auto psik = martingale_test(p, Candidate{CandidateKind::PsiK, 1.0}, StrategySpec::no_transaction(),
                                      10.0, 5.0, 1.0, 4000, MartingaleDirection::Sub, 22);
    CHECK(psik.pass);
}

TEST_CASE("feedback from the solved regions lies between the bounds") {
    const auto p = MarketParams::reference();
    const auto cf = compute_constants(p);
    const auto res = solve(p, GridSpec::defaults(p, 51), SolverConfig{});
    const auto regions = std::make_shared<RegionMap>(res.regions);
    const long paths = 4000;
    for (auto [x, y] : {std::pair{12.5, 0.0}, std::pair{5.0, 5.0}}) {
        const auto fb = estimate_ruin_probability(p, StrategySpec::feedback(regions), x, y, 0.01, paths,
                                                  DeathMode::SampleDeath, 9);
        const auto ln = estimate_ruin_probability(p, StrategySpec::liquidate_now(), x, y, 0.01, paths,
                                                  DeathMode::SampleDeath, 9);
        CHECK(fb.estimate <= ln.estimate + 3.0 * std::hypot(fb.std_error, ln.std_error));
        CHECK(fb.estimate >= lower_bound_psi(p, cf, x, y) - 3.0 * fb.std_error);
        CHECK(fb.flagged == 0);
    }
}

TEST_CASE("pairwise sum agrees with a long double sum") {
    std::vector<double> v(100003);
    long double ref = 0;
    for (std::size_t i = 0; i < v.size(); ++i) {
        v[i] = 1.0 / (1.0 + static_cast<double>(i % 977));
        ref += v[i];
    }
    CHECK(pairwise_sum(v.data(), v.size()) == doctest::Approx(static_cast<double>(ref)).epsilon(1e-14));
    CHECK(pairwise_sum(v.data(), 0) == 0.0);
}
