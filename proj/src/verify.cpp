#include "ruin/verify.hpp"

#include <algorithm>
#include <cmath>

#include "ruin/closed_form.hpp"

namespace ruin {

CheckResult check_sandwich(const ValueField& field, double tol) {
    const Grid& g = *field.grid;
    const auto& p = g.params();
    const auto cf = compute_constants(p);
    double worst = -1.0;
    for (int n : g.interior()) {
        const double x = g.x(g.col(n)), y = g.y(g.row(n));
        const double lo = lower_bound_psi_clamped(p, cf, x, y);
        const double hi = upper_bound_psi_clamped(p, x, y);
        worst = std::max({worst, lo - field[n], field[n] - hi});
    }
    return {"sandwich", worst <= tol, worst, tol};
}

CheckResult check_boundary(const ValueField& field) {
    const Grid& g = *field.grid;
    double worst = 0.0;
    for (int n = 0; n < g.size(); ++n) {
        const auto c = g.node_class(n);
        if (c == NodeClass::RuinBoundary) worst = std::max(worst, std::abs(field[n] - 1.0));
        if (c == NodeClass::SafeBoundary) worst = std::max(worst, std::abs(field[n]));
    }
    return {"boundary", worst == 0.0, worst, 0.0};
}

namespace {

double sup_error_vs_mid(const ValueField& field) {
    const Grid& g = *field.grid;
    const auto& p = g.params();
    const auto cf = compute_constants(p);
    const double k = midpoint_price(p);
    double err = 0.0;
    for (int n : g.interior())
        err = std::max(err, std::abs(field[n] - frictionless_psi_k_clamped(p, cf, k, g.x(g.col(n)),
                                                                           g.y(g.row(n)))));
    return err;
}

}  // namespace

CheckResult check_frictionless(const MarketParams& p, const GridSpec& grid, const SolverConfig& cfg,
                               double cost, double tol) {
    const auto q = p.with_costs(cost, cost);
    const auto res = solve(q, grid, cfg);
    const double err = sup_error_vs_mid(res.field);
    return {"frictionless_limit", err <= tol, err, tol};
}

CheckResult check_lyapunov(const MarketParams& p, const GridSpec& grid, std::optional<double> k,
                           std::optional<double> p_exp, int samples) {
    const double kk = k.value_or(midpoint_price(p));
    const LyapunovSpec ell = p_exp ? build_lyapunov_unchecked(p, kk, *p_exp) : build_lyapunov(p, kk);
    const double span_l = p.safe_level() - p.b();
    double worst = -std::numeric_limits<double>::infinity();
    for (int a = 0; a < samples; ++a) {
        const double L = p.b() + (a + 0.5) / samples * span_l;
        for (int c = 0; c < samples; ++c) {
            const double y = grid.y_min + (c + 0.5) / samples * (grid.y_max - grid.y_min);
            const double x = y >= 0 ? L - (1.0 - p.mu_sell()) * y : L - y / (1.0 - p.lambda_buy());
            worst = std::max(worst, vi_operator_eval(p, ell.jet(x, y), x, y).max());
        }
    }
    return {"lyapunov_scan", worst < 0.0, worst, 0.0};
}

std::vector<CheckResult> martingale_battery(const MarketParams& p, Position start, double horizon,
                                            long n_paths, std::uint64_t seed, double dt, int workers) {
    const double k = midpoint_price(p);
    struct Case {
        const char* name;
        Candidate candidate;
        StrategySpec strat;
        MartingaleDirection dir;
    };
    const Case cases[] = {
        {"martingale_upper_liquidate_super", {CandidateKind::UpperBound}, StrategySpec::liquidate_now(),
         MartingaleDirection::Super},
        {"martingale_psik_none_sub", {CandidateKind::PsiK, k}, StrategySpec::no_transaction(),
         MartingaleDirection::Sub},
        {"martingale_psik_liquidate_sub", {CandidateKind::PsiK, k}, StrategySpec::liquidate_now(),
         MartingaleDirection::Sub},
    };
    std::vector<CheckResult> out;
    std::uint64_t s = seed;
    for (const auto& c : cases) {
        const auto rep = martingale_test(p, c.candidate, c.strat, start.x, start.y, horizon, n_paths,
                                         c.dir, s++, dt, workers);
        const double against = c.dir == MartingaleDirection::Super ? rep.z : -rep.z;
        out.push_back({c.name, rep.pass, against, 3.0});
    }
    return out;
}

CheckResult check_mc_upper(const MarketParams& p, const std::vector<Position>& points, long n_paths,
                           double dt, std::uint64_t seed, int workers) {
    double worst = 0.0;
    std::uint64_t s = seed;
    for (const auto& q : points) {
        const auto r = estimate_ruin_probability(p, StrategySpec::liquidate_now(), q.x, q.y, dt, n_paths,
                                                 DeathMode::SampleDeath, s++, workers);
        const double target = upper_bound_psi(p, q.x, q.y);
        const double dev = std::abs(r.estimate - target);
        worst = std::max(worst, r.std_error > 0 ? dev / r.std_error : (dev > 1e-12 ? HUGE_VAL : 0.0));
    }
    return {"mc_vs_upper_bound", worst <= 3.0, worst, 3.0};
}

std::vector<RefinementRow> refinement_study(const MarketParams& p, const GridSpec& base,
                                            const std::vector<int>& sizes, const SolverConfig& cfg) {
    if (sizes.size() < 2) throw ModelError("refinement needs at least two grid sizes");
    const int n0 = sizes.front();
    if (n0 < 3) throw ModelError("grid sizes must be >= 3");
    for (std::size_t k = 1; k < sizes.size(); ++k)
        if (sizes[k] <= sizes[k - 1] || (sizes[k] - 1) % (n0 - 1) != 0)
            throw ModelError("grid sizes must increase and nest: (n - 1) must be a multiple of " +
                             std::to_string(n0 - 1));

    GridSpec spec = base;
    spec.nx = spec.ny = n0;
    const auto coarse = build_grid(p, spec);

    std::vector<ValueField> fields;
    for (int n : sizes) {
        const auto g = n == n0 ? coarse : refine_grid(*coarse, (n - 1) / (n0 - 1));
        fields.push_back(solve(ViScheme(g, cfg.trade_reach), cfg).field);
    }

    std::vector<RefinementRow> rows;
    for (std::size_t k = 1; k < sizes.size(); ++k) {
        const Grid& gc = *fields[k - 1].grid;
        const Grid& gf = *fields[k].grid;
        const int f = (sizes[k] - 1) / (sizes[k - 1] - 1);
        double diff = 0.0;
        for (int n : gc.active()) {
            const int m = gf.index(gc.col(n) * f, gc.row(n) * f);
            diff = std::max(diff, std::abs(fields[k - 1][n] - fields[k][m]));
        }
        rows.push_back({sizes[k - 1], sizes[k], diff, sup_error_vs_mid(fields[k - 1]),
                        sup_error_vs_mid(fields[k])});
    }
    return rows;
}

CheckResult check_refinement(const std::vector<RefinementRow>& rows) {
    double worst_ratio = 0.0;
    for (std::size_t k = 1; k < rows.size(); ++k)
        worst_ratio = std::max(worst_ratio, rows[k].sup_diff / std::max(rows[k - 1].sup_diff, 1e-300));
    return {"refinement_cauchy", worst_ratio <= 1.0, worst_ratio, 1.0};
}

bool VerifyReport::all_pass() const {
    return std::all_of(checks.begin(), checks.end(), [](const CheckResult& c) { return c.pass; });
}

VerifyReport run_verification(const ExperimentConfig& cfg, const ValueField& field) {
    VerifyReport rep;
    const auto& p = cfg.market;
    const auto& v = cfg.verify;
    rep.checks.push_back(check_sandwich(field, v.sandwich_tol));
    rep.checks.push_back(check_boundary(field));
    rep.checks.push_back(check_frictionless(p, cfg.grid, cfg.solver, v.frictionless_cost, v.frictionless_tol));
    rep.checks.push_back(check_lyapunov(p, cfg.grid, v.lyapunov_k, v.lyapunov_p, v.lyapunov_samples));
    for (auto& c : martingale_battery(p, v.martingale_point, v.martingale_horizon, v.mc_paths,
                                      cfg.mc.seed, cfg.mc.dt, cfg.workers))
        rep.checks.push_back(std::move(c));
    rep.checks.push_back(check_mc_upper(p, v.mc_points, v.mc_paths, cfg.mc.dt, cfg.mc.seed + 100, cfg.workers));
    rep.checks.push_back(check_refinement(refinement_study(p, cfg.grid, v.refinement, cfg.solver)));
    return rep;
}

}  // namespace ruin
