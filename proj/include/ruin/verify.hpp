#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ruin/config.hpp"

namespace ruin {

struct CheckResult {
    std::string name;
    bool pass = false;
    double metric = 0.0;
    double threshold = 0.0;
};

/// max over interior nodes of max(psi_lower - u, u - psi_upper); passes when <= tol.
CheckResult check_sandwich(const ValueField& field, double tol);

/// max |u - boundary data| over ruin- and safe-boundary nodes; passes only when exactly 0.
CheckResult check_boundary(const ValueField& field);

/// Solves with both costs set to `cost` and compares against the frictionless closed form
/// at the midpoint price.
CheckResult check_frictionless(const MarketParams& p, const GridSpec& grid, const SolverConfig& cfg,
                               double cost, double tol);

/// Max of the three operators applied to the Lyapunov function over a samples x samples
/// midpoint lattice in (L, y) coordinates covering the strip between the grid's truncation
/// rows. Passes when strictly negative. An explicit exponent bypasses the p-inequality.
CheckResult check_lyapunov(const MarketParams& p, const GridSpec& grid, std::optional<double> k,
                           std::optional<double> p_exp, int samples);

/// Supermartingale test of the upper bound under liquidation and submartingale tests of
/// psi_k (midpoint price) under no trading and under liquidation. The metric is the z-score
/// signed so that positive values count against the claimed direction.
std::vector<CheckResult> martingale_battery(const MarketParams& p, Position start, double horizon,
                                            long n_paths, std::uint64_t seed, double dt, int workers);

/// max over points of |MC(liquidate) - psi_upper| / stderr; passes when <= 3.
CheckResult check_mc_upper(const MarketParams& p, const std::vector<Position>& points, long n_paths,
                           double dt, std::uint64_t seed, int workers);

struct RefinementRow {
    int n_coarse;
    int n_fine;
    double sup_diff;         ///< on the coarse grid's active nodes
    double err_mid_coarse;   ///< sup |u - psi_k(midpoint)| over interior nodes
    double err_mid_fine;
};

/// Solves on nested grids with n = sizes[k] nodes per axis, all refinements of the
/// sizes[0] grid built from `base`'s y-range. Every (n_k - 1) must be a multiple of
/// (n_0 - 1); at least two sizes.
std::vector<RefinementRow> refinement_study(const MarketParams& p, const GridSpec& base,
                                            const std::vector<int>& sizes, const SolverConfig& cfg);

/// Passes when each consecutive sup difference is no larger than the previous one.
CheckResult check_refinement(const std::vector<RefinementRow>& rows);

struct VerifyReport {
    std::vector<CheckResult> checks;
    bool all_pass() const;
};

VerifyReport run_verification(const ExperimentConfig& cfg, const ValueField& field);

}  // namespace ruin
