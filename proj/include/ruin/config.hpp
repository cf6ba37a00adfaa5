#pragma once

#include <cstdint>
#include <istream>
#include <optional>
#include <string>
#include <vector>

#include "ruin/grid.hpp"
#include "ruin/market.hpp"
#include "ruin/strategy_sim.hpp"
#include "ruin/vi_solver.hpp"

namespace ruin {

struct McConfig {
    double dt = 1e-3;
    long n_paths = 100000;
    std::uint64_t seed = 12345;
    DeathMode mode = DeathMode::SampleDeath;
    std::optional<double> t_max;
    double x0 = 12.5;
    double y0 = 0.0;
    StrategyKind strategy = StrategyKind::LiquidateNow;
    double h_tol = 1e-4;
};

/// Settings of the cross-validation battery run by `verify`.
struct VerifyConfig {
    std::optional<double> lyapunov_p;   ///< exponent override, taken without the p-inequality check
    std::optional<double> lyapunov_k;
    int lyapunov_samples = 100;         ///< per axis
    double sandwich_tol = 0.02;
    double frictionless_cost = 1e-4;
    double frictionless_tol = 0.02;
    std::vector<Position> mc_points{{5, 0}, {12.5, 0}, {20, 0}, {5, 5}, {10, -2}};
    long mc_paths = 100000;
    double martingale_horizon = 1.0;
    Position martingale_point{10.0, 5.0};
    std::vector<int> refinement{51, 101, 201};
};

struct ExperimentConfig {
    MarketParams market = MarketParams::reference();
    GridSpec grid;
    SolverConfig solver;
    McConfig mc;
    VerifyConfig verify;
    std::string output_dir = "out";
    int workers = 1;
};

/// Parses INI text with sections [market], [grid], [solver], [mc], [run], [verify].
/// [market] must list every parameter; other sections are optional. Unknown sections or
/// keys and malformed values raise ModelError naming the key.
ExperimentConfig parse_config(std::istream& in);
ExperimentConfig load_config(const std::string& path);

}  // namespace ruin
