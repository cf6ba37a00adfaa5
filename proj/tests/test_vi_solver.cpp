#include <doctest.h>

#include <cmath>
#include <random>

#include "ruin/closed_form.hpp"
#include "ruin/vi_solver.hpp"

using namespace ruin;

namespace {

std::shared_ptr<const Grid> default_grid(int n, const MarketParams& p = MarketParams::reference()) {
    return build_grid(p, GridSpec::defaults(p, n));
}

double sup_diff(const ValueField& a, const ValueField& b) {
    double d = 0.0;
    for (std::size_t k = 0; k < a.values.size(); ++k) d = std::max(d, std::abs(a.values[k] - b.values[k]));
    return d;
}

}  // namespace

TEST_CASE("every candidate map is a sub-stochastic affine map") {
    const auto g = default_grid(41);
    for (int reach : {1, 8}) {
        const ViScheme s(g, reach);
        for (int n : g->interior()) {
            auto check = [&](const AffineMap& m) {
                double total = m.constant;
                for (int t = 0; t < m.terms; ++t) {
                    CHECK(m.weights[t] >= 0.0);
                    CHECK(g->is_active(m.nodes[t]));
                    total += m.weights[t];
                }
                CHECK(m.constant >= 0.0);
                CHECK(total <= 1.0 + 1e-12);
            };
            check(s.diffusion_map(n));
            for (Trade t : {Trade::Buy, Trade::Sell}) {
                const auto maps = s.trade_maps(n, t);
                CHECK(maps.size() >= 1);
                CHECK(static_cast<int>(maps.size()) <= reach);
                for (const auto& m : maps) check(m);
            }
            CHECK(s.generator_rate(n) > g->params().beta());
        }
    }
}

TEST_CASE("a trade landing exactly on a node returns that node's value") {
    const auto p = MarketParams::reference();
    // dx = (1 - mu) dy makes one sell step end on the lower-right diagonal node.
    GridSpec s;
    s.y_min = -5;
    s.y_max = 45;
    s.ny = 101;
    const double dy = 0.5, dx = 0.9 * dy;
    s.x_min = -45;
    s.nx = static_cast<int>(std::ceil((31.0 - s.x_min.value()) / dx)) + 1;
    s.x_max = *s.x_min + (s.nx - 1) * dx;
    const auto g = build_grid(p, s);
    const ViScheme scheme(g, 1);
    auto f = make_field(g, FieldInit::Zero);
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int n : g->interior()) f[n] = u(rng);
    int checked = 0;
    for (int n : g->interior()) {
        const int i = g->col(n), j = g->row(n);
        const int target = g->index(i + 1, j - 1);
        if (g->node_class(target) != NodeClass::Interior) continue;
        CHECK(scheme.transaction_candidate(f, n, Trade::Sell) == doctest::Approx(f[target]).epsilon(1e-12));
        CHECK(scheme.trade_step(n, Trade::Sell) == doctest::Approx(dy));
        ++checked;
    }
    CHECK(checked > 100);
}

TEST_CASE("trade target beyond the strip uses the boundary value") {
    const auto p = MarketParams::reference();
    const auto g = default_grid(101, p);
    const ViScheme scheme(g, 8);
    const auto f = make_field(g, FieldInit::UpperBound);
    // A node next to the ruin boundary with a long position: buying lowers L into ruin.
    for (int n : g->interior()) {
        const double x = g->x(g->col(n)), y = g->y(g->row(n));
        if (y > 5 && liquidation_value(p, x, y) < 0.2) {
            CHECK(scheme.transaction_candidate(f, n, Trade::Buy) <= 1.0);
            CHECK(scheme.trade_maps(n, Trade::Buy).back().constant == 1.0);
            break;
        }
    }
}

TEST_CASE("sweep is monotone and maps [0,1] into itself") {
    const auto g = default_grid(41);
    const ViScheme scheme(g, 8);
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int trial = 0; trial < 20; ++trial) {
        auto a = make_field(g, FieldInit::Zero);
        auto b = a;
        for (int n : g->interior()) {
            a[n] = u(rng);
            b[n] = std::min(1.0, a[n] + 0.3 * u(rng));
        }
        ValueField ta = a, tb = b;
        scheme.sweep(a, ta, 1.0, 1);
        scheme.sweep(b, tb, 1.0, 1);
        for (int n : g->interior()) {
            CHECK(ta[n] <= tb[n] + 1e-15);
            CHECK(ta[n] >= 0.0);
            CHECK(tb[n] <= 1.0);
        }
    }
}

TEST_CASE("sweeps from the upper bound decrease and from the lower bound increase") {
    const auto g = default_grid(51);
    const ViScheme scheme(g, 8);
    for (auto init : {FieldInit::UpperBound, FieldInit::LowerBound}) {
        auto f = make_field(g, init);
        ValueField next = f;
        for (int it = 0; it < 200; ++it) {
            scheme.sweep(f, next, 1.0, 1);
            for (int n : g->interior()) {
                if (init == FieldInit::UpperBound) CHECK(next[n] <= f[n] + 1e-12);
                else CHECK(next[n] >= f[n] - 1e-12);
            }
            std::swap(f, next);
        }
    }
}

TEST_CASE("results do not depend on the worker count") {
    const auto g = default_grid(61);
    const ViScheme scheme(g, 8);
    const auto f = make_field(g, FieldInit::UpperBound);
    ValueField a = f, b = f;
    CHECK(scheme.sweep(f, a, 1.0, 1) == scheme.sweep(f, b, 1.0, 3));
    CHECK(a.values == b.values);

    SolverConfig c1, c3;
    c1.trade_reach = c3.trade_reach = 8;
    c3.workers = 3;
    const auto r1 = solve(scheme, c1), r3 = solve(scheme, c3);
    CHECK(r1.field.values == r3.field.values);
    CHECK(r1.regions.labels == r3.regions.labels);
}

TEST_CASE("converged solve: boundary exactness, residual, sandwich, nonempty regions") {
    const auto p = MarketParams::reference();
    const auto cf = compute_constants(p);
    SolverConfig cfg;
    const auto res = solve(p, GridSpec::defaults(p, 101), cfg);
    CHECK(res.report.converged);
    CHECK(res.report.sup_update <= cfg.tol_sup);
    CHECK(res.report.residual <= cfg.tol_sup);
    const auto& g = *res.field.grid;
    for (int n = 0; n < g.size(); ++n) {
        if (g.node_class(n) == NodeClass::RuinBoundary) CHECK(res.field[n] == 1.0);
        if (g.node_class(n) == NodeClass::SafeBoundary) CHECK(res.field[n] == 0.0);
    }
    for (int n : g.interior()) {
        const double x = g.x(g.col(n)), y = g.y(g.row(n));
        CHECK(res.field[n] <= upper_bound_psi(p, x, y) + 1e-12);
        CHECK(res.field[n] >= lower_bound_psi(p, cf, x, y) - 0.02);
    }
    CHECK(res.regions.count(Region::NoTrade) > 0);
    CHECK(res.regions.count(Region::Buy) > 0);
    CHECK(res.regions.count(Region::Sell) > 0);
    const auto rr = vi_residual(ViScheme(res.field.grid, cfg.trade_reach), res.field);
    CHECK(rr.boundary_violation == 0.0);
    CHECK(rr.max_complementarity <= 1e-8);
}

TEST_CASE("policy polish and plain value iteration reach the same fixed point") {
    const auto g = default_grid(31);
    const ViScheme scheme(g, 8);
    SolverConfig polished, plain;
    plain.policy_polish = false;
    plain.tol_sup = 1e-12;
    plain.tol_bind = 1e-6;
    polished.tol_sup = 1e-12;
    const auto a = solve(scheme, polished);
    const auto b = solve(scheme, plain);
    CHECK(a.report.polish_used);
    CHECK_FALSE(b.report.polish_used);
    // Plain iteration stops at update 1e-12 with contraction ~ 1 - beta dt per sweep.
    CHECK(sup_diff(a.field, b.field) < 1e-8);
}

TEST_CASE("non-convergence carries the partial result") {
    const auto g = default_grid(31);
    const ViScheme scheme(g, 8);
    SolverConfig cfg;
    cfg.policy_polish = false;
    cfg.max_iters = 3;
    try {
        solve(scheme, cfg);
        FAIL("expected NonConvergence");
    } catch (const NonConvergence& e) {
        CHECK_FALSE(e.partial().report.converged);
        CHECK(e.partial().report.sweeps == 3);
        CHECK(e.partial().report.sup_update > cfg.tol_sup);
    }
}

TEST_CASE("solver configuration validation") {
    SolverConfig c;
    CHECK_NOTHROW(c.validate());
    c.damping = 0;
    CHECK_THROWS_AS(c.validate(), ModelError);
    c = SolverConfig{};
    c.tol_bind = 1e-12;
    CHECK_THROWS_AS(c.validate(), ModelError);
    c = SolverConfig{};
    c.trade_reach = 0;
    CHECK_THROWS_AS(c.validate(), ModelError);
}

TEST_CASE("diffusion step on the cash axis is consistent with the upper bound") {
    // On y = 0 the upper bound solves the generator equation, so the discrete diffusion
    // fixed point reproduces it up to the truncation error of the upwind difference.
    // beta = r makes it linear in x and the difference exact; take beta > r.
    const auto p = MarketParams(0.04, 0.08, 0.2, 0.07, 0.1, 0.1, 1, 0);
    double prev = 1.0;
    for (int n : {51, 101, 201}) {
        const auto g = default_grid(n, p);
        const ViScheme scheme(g, 1);
        const auto f = make_field(g, FieldInit::UpperBound);
        double err = 0.0;
        for (int node : g->interior())
            if (g->y(g->row(node)) == 0.0)
                err = std::max(err, std::abs(scheme.diffusion_fixed_point(f, node) - f[node]));
        CHECK(err < prev);
        CHECK(err < 0.05 * g->dx());
        prev = err;
    }
}

TEST_CASE("frictionless limit approaches the closed form under refinement") {
    const auto p = MarketParams::reference().with_costs(1e-4, 1e-4);
    const auto cf = compute_constants(p);
    double prev = 1.0;
    for (int n : {51, 101}) {
        const auto res = solve(p, GridSpec::defaults(p, n), SolverConfig{});
        const auto& g = *res.field.grid;
        double err = 0.0;
        for (int node : g.interior())
            err = std::max(err, std::abs(res.field[node] - frictionless_psi_k(p, cf, 1.0, g.x(g.col(node)),
                                                                              g.y(g.row(node)))));
        CHECK(err < prev);
        prev = err;
    }
    CHECK(prev < 0.03);
}

TEST_CASE("no-trade region shrinks as costs fall") {
    const auto base = MarketParams::reference();
    std::size_t prev = 0;
    bool first = true;
    for (double cost : {0.1, 0.01, 0.001}) {
        const auto p = base.with_costs(cost, cost);
        const auto res = solve(p, GridSpec::defaults(p, 101), SolverConfig{});
        const auto nt = res.regions.count(Region::NoTrade);
        if (!first) CHECK(nt < prev);
        prev = nt;
        first = false;
    }
}
