// Command-line front end: solve, bounds, simulate, verify, sweep, region-map.
#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "ruin/closed_form.hpp"
#include "ruin/config.hpp"
#include "ruin/verify.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using namespace ruin;

namespace {

enum Exit { kOk = 0, kConfig = 1, kNonConvergence = 2, kVerifyFailed = 3 };

fs::path out_dir(const ExperimentConfig& cfg) {
    fs::path d(cfg.output_dir);
    std::error_code ec;
    fs::create_directories(d, ec);
    if (ec) throw ModelError("cannot create output directory '" + cfg.output_dir + "': " + ec.message());
    return d;
}

void write_json(const json& j, const fs::path& path) {
    std::ofstream os(path);
    if (!os) throw ModelError("cannot write '" + path.string() + "'");
    os << j.dump(2) << '\n';
}

json report_json(const SolveReport& r) {
    return json{{"iterations", r.iterations},     {"sup_update", r.sup_update},
                {"residual", r.residual},         {"wall_ms", r.wall_ms},
                {"converged", r.converged},       {"sweeps", r.sweeps},
                {"policy_iterations", r.policy_iterations}};
}

void write_solution(const SolveResult& res, const fs::path& dir) {
    write_value_csv(res.field, (dir / "value.csv").string());
    write_region_csv(res.regions, (dir / "regions.csv").string());
    write_json(report_json(res.report), dir / "report.json");
}

int cmd_solve(const ExperimentConfig& cfg) {
    const auto dir = out_dir(cfg);
    try {
        const auto res = solve(cfg.market, cfg.grid, cfg.solver);
        write_solution(res, dir);
        std::printf("converged: %ld iterations, sup update %.3g, residual %.3g, %.0f ms\n",
                    res.report.iterations, res.report.sup_update, res.report.residual, res.report.wall_ms);
        return kOk;
    } catch (const NonConvergence& e) {
        write_solution(e.partial(), dir);
        std::fprintf(stderr, "error: %s\n", e.what());
        return kNonConvergence;
    }
}

int cmd_bounds(const ExperimentConfig& cfg) {
    const auto dir = out_dir(cfg);
    const auto grid = build_grid(cfg.market, cfg.grid);
    const auto& p = cfg.market;
    const auto cf = compute_constants(p);
    const double k = midpoint_price(p);
    std::ofstream os(dir / "bounds.csv");
    if (!os) throw ModelError("cannot write bounds.csv");
    os << "x,y,psi_upper,psi_lower,psi_k_mid\n";
    for (int n : grid->active()) {
        const double x = grid->x(grid->col(n)), y = grid->y(grid->row(n));
        os << format_double(x) << ',' << format_double(y) << ','
           << format_double(upper_bound_psi_clamped(p, x, y)) << ','
           << format_double(lower_bound_psi_clamped(p, cf, x, y)) << ','
           << format_double(frictionless_psi_k_clamped(p, cf, k, x, y)) << '\n';
    }
    std::printf("wrote %zu rows to %s\n", grid->active().size(), (dir / "bounds.csv").c_str());
    return kOk;
}

// Saved solution from the output directory when present, otherwise a fresh solve.
SolveResult saved_or_solved(const ExperimentConfig& cfg, const fs::path& dir) {
    const auto grid = build_grid(cfg.market, cfg.grid);
    const auto value_path = dir / "value.csv";
    if (fs::exists(value_path)) {
        const ViScheme scheme(grid, cfg.solver.trade_reach);
        auto field = read_value_csv(grid, value_path.string());
        auto regions = fs::exists(dir / "regions.csv") ? read_region_csv(grid, (dir / "regions.csv").string())
                                                       : extract_region_map(scheme, field, cfg.solver);
        return {std::move(field), std::move(regions), SolveReport{}};
    }
    return solve(ViScheme(grid, cfg.solver.trade_reach), cfg.solver);
}

int cmd_simulate(const ExperimentConfig& cfg) {
    const auto dir = out_dir(cfg);
    const auto& m = cfg.mc;
    StrategySpec strat = StrategySpec::no_transaction();
    switch (m.strategy) {
        case StrategyKind::LiquidateNow: strat = StrategySpec::liquidate_now(); break;
        case StrategyKind::NoTransaction: break;
        case StrategyKind::FeedbackRegionMap: {
            auto regions = std::make_shared<RegionMap>(saved_or_solved(cfg, dir).regions);
            strat = StrategySpec::feedback(std::move(regions), m.h_tol);
            break;
        }
    }
    const auto r = estimate_ruin_probability(cfg.market, strat, m.x0, m.y0, m.dt, m.n_paths, m.mode,
                                             m.seed, cfg.workers, m.t_max);
    json j{{"estimate", r.estimate}, {"stderr", r.std_error}, {"n_paths", r.n_paths},
           {"n_ruin", r.n_ruin},     {"n_safe", r.n_safe},    {"n_death", r.n_death},
           {"censored", r.censored}, {"flagged", r.flagged},  {"strategy", to_string(m.strategy)},
           {"mode", to_string(m.mode)}, {"x0", m.x0},         {"y0", m.y0},
           {"dt", m.dt},             {"seed", m.seed}};
    write_json(j, dir / "mc.json");
    std::printf("estimate %.6f +- %.6f (%ld paths)\n", r.estimate, r.std_error, r.n_paths);
    return kOk;
}

int cmd_verify(const ExperimentConfig& cfg) {
    const auto dir = out_dir(cfg);
    const auto sol = saved_or_solved(cfg, dir);
    const auto rep = run_verification(cfg, sol.field);
    json checks = json::array();
    for (const auto& c : rep.checks) {
        checks.push_back({{"name", c.name}, {"pass", c.pass}, {"metric", c.metric}, {"threshold", c.threshold}});
        std::printf("%-34s %s  metric=%.6g threshold=%.6g\n", c.name.c_str(), c.pass ? "PASS" : "FAIL",
                    c.metric, c.threshold);
    }
    write_json(json{{"pass", rep.all_pass()}, {"checks", checks}}, dir / "verify.json");
    return rep.all_pass() ? kOk : kVerifyFailed;
}

int cmd_sweep(const ExperimentConfig& cfg, const std::vector<int>& sizes) {
    if (sizes.size() < 2) throw ModelError("sweep needs at least two grid sizes");
    const auto dir = out_dir(cfg);
    const auto rows = refinement_study(cfg.market, cfg.grid, sizes, cfg.solver);
    std::ofstream os(dir / "sweep.csv");
    if (!os) throw ModelError("cannot write sweep.csv");
    os << "n_coarse,n_fine,sup_diff,err_psi_mid_coarse,err_psi_mid_fine\n";
    for (const auto& r : rows) {
        os << r.n_coarse << ',' << r.n_fine << ',' << format_double(r.sup_diff) << ','
           << format_double(r.err_mid_coarse) << ',' << format_double(r.err_mid_fine) << '\n';
        std::printf("%d -> %d: sup diff %.3g, error vs psi_k %.3g -> %.3g\n", r.n_coarse, r.n_fine,
                    r.sup_diff, r.err_mid_coarse, r.err_mid_fine);
    }
    return kOk;
}

int cmd_region_map(const ExperimentConfig& cfg) {
    const auto dir = out_dir(cfg);
    const auto value_path = dir / "value.csv";
    if (!fs::exists(value_path)) throw ModelError("no value.csv in '" + dir.string() + "'; run solve first");
    const auto grid = build_grid(cfg.market, cfg.grid);
    const ViScheme scheme(grid, cfg.solver.trade_reach);
    const auto field = read_value_csv(grid, value_path.string());
    const auto regions = extract_region_map(scheme, field, cfg.solver);
    write_region_csv(regions, (dir / "regions.csv").string());
    std::printf("no-trade %zu, buy %zu, sell %zu nodes\n", regions.count(Region::NoTrade),
                regions.count(Region::Buy), regions.count(Region::Sell));
    return kOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Minimal lifetime ruin probability under proportional transaction costs"};
    app.require_subcommand(1);
    std::string config_path;
    std::string output_override;
    int workers = -1;

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("-c,--config", config_path, "INI configuration file")->required();
        sub->add_option("-o,--output", output_override, "output directory (overrides [run] output_dir)");
        sub->add_option("-w,--workers", workers, "worker threads, 0 = auto (overrides [run] workers)");
    };
    auto* solve_cmd = app.add_subcommand("solve", "solve the variational inequality on the grid");
    auto* bounds_cmd = app.add_subcommand("bounds", "tabulate the closed-form bounds at grid nodes");
    auto* sim_cmd = app.add_subcommand("simulate", "Monte Carlo ruin probability of one strategy");
    auto* verify_cmd = app.add_subcommand("verify", "run the cross-validation battery");
    auto* sweep_cmd = app.add_subcommand("sweep", "grid refinement study");
    auto* region_cmd = app.add_subcommand("region-map", "re-extract regions from a saved value.csv");
    for (auto* s : {solve_cmd, bounds_cmd, sim_cmd, verify_cmd, sweep_cmd, region_cmd}) add_common(s);

    std::optional<std::string> strategy, mode;
    std::optional<double> x0, y0, dt;
    std::optional<long> paths;
    std::optional<std::uint64_t> seed;
    sim_cmd->add_option("--strategy", strategy, "liquidate | none | feedback");
    sim_cmd->add_option("--x0", x0, "initial cash");
    sim_cmd->add_option("--y0", y0, "initial stock position");
    sim_cmd->add_option("--dt", dt, "time step");
    sim_cmd->add_option("--paths", paths, "number of paths");
    sim_cmd->add_option("--mode", mode, "sample | discount");
    sim_cmd->add_option("--seed", seed, "random seed");

    std::vector<int> sizes;
    sweep_cmd->add_option("--sizes", sizes, "grid sizes, e.g. 51,101,201")->delimiter(',')->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kConfig;
    }

    try {
        std::ifstream in(config_path);
        if (!in) throw ModelError("cannot open config file '" + config_path + "'");
        ExperimentConfig cfg = parse_config(in);
        if (!output_override.empty()) cfg.output_dir = output_override;
        if (workers >= 0) cfg.workers = cfg.solver.workers = workers;
        if (strategy) {
            if (*strategy == "liquidate") cfg.mc.strategy = StrategyKind::LiquidateNow;
            else if (*strategy == "none") cfg.mc.strategy = StrategyKind::NoTransaction;
            else if (*strategy == "feedback") cfg.mc.strategy = StrategyKind::FeedbackRegionMap;
            else throw ModelError("--strategy must be liquidate, none or feedback");
        }
        if (mode) {
            if (*mode == "sample") cfg.mc.mode = DeathMode::SampleDeath;
            else if (*mode == "discount") cfg.mc.mode = DeathMode::DiscountDeath;
            else throw ModelError("--mode must be sample or discount");
        }
        if (x0) cfg.mc.x0 = *x0;
        if (y0) cfg.mc.y0 = *y0;
        if (dt) {
            if (!(*dt > 0)) throw ModelError("--dt must be positive");
            cfg.mc.dt = *dt;
        }
        if (paths) {
            if (*paths < 100) throw ModelError("--paths must be >= 100");
            cfg.mc.n_paths = *paths;
        }
        if (seed) cfg.mc.seed = *seed;

        if (*solve_cmd) return cmd_solve(cfg);
        if (*bounds_cmd) return cmd_bounds(cfg);
        if (*sim_cmd) return cmd_simulate(cfg);
        if (*verify_cmd) return cmd_verify(cfg);
        if (*sweep_cmd) return cmd_sweep(cfg, sizes);
        if (*region_cmd) return cmd_region_map(cfg);
    } catch (const NonConvergence& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kNonConvergence;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kConfig;
    }
    return kConfig;
}
