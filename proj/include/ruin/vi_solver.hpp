#pragma once

#include <array>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "ruin/grid.hpp"

namespace ruin {

struct SolverConfig {
    long max_iters = 200000;  ///< cap on value-iteration sweeps
    double tol_sup = 1e-8;    ///< sup-norm update that declares convergence
    double tol_bind = 1e-6;   ///< binding threshold for region labels and residual checks
    double damping = 1.0;     ///< u <- (1 - damping) u + damping * min(...)
    int workers = 1;          ///< threads per sweep; 0 picks hardware concurrency
    /// Howard (policy iteration) polish between the warm-up and the final sweeps.
    bool policy_polish = true;
    int warmup_sweeps = 50;
    int max_policy_iters = 100;
    /// Number of cell-edge crossings along a trade ray offered as trade targets; 1 keeps
    /// only the adjacent cell edge.
    int trade_reach = 8;

    void validate() const;
};

struct SolveReport {
    long iterations = 0;         ///< sweeps plus policy-iteration linear solves
    long sweeps = 0;
    int policy_iterations = 0;
    bool polish_used = false;
    double sup_update = 0.0;     ///< last sweep's sup-norm update
    double residual = 0.0;       ///< positive part of the max VI residual
    double wall_ms = 0.0;
    bool converged = false;
};

/// Affine map u -> constant + sum_k weight_k * u[node_k] with nonnegative weights.
struct AffineMap {
    std::array<int, 4> nodes{};
    std::array<double, 4> weights{};
    int terms = 0;
    double constant = 0.0;

    double apply(std::span<const double> u) const {
        double s = constant;
        for (int k = 0; k < terms; ++k) s += weights[k] * u[nodes[k]];
        return s;
    }
};

struct Candidates {
    double diffusion;
    double buy;
    double sell;

    double min() const { return std::min(diffusion, std::min(buy, sell)); }
};

/// Monotone discretization of the variational inequality on a fixed grid.
///
/// The generator is discretized by upwind first differences and a centered second
/// difference in y; a neighbor beyond the strip is replaced by the boundary crossing on
/// that axis (value 1 across the ruin level, 0 across the safe level). Each trade moves
/// the node along its trade direction to the edge of the adjacent cell and interpolates
/// linearly along that edge. With trade_reach > 1 the trade candidate is the minimum over
/// the first trade_reach edge crossings along the ray. Every candidate is a convex combination of node values and
/// boundary data, so one sweep is monotone and maps [0,1] into itself.
class ViScheme {
public:
    explicit ViScheme(std::shared_ptr<const Grid> grid, int trade_reach = 1);

    const Grid& grid() const { return *grid_; }
    std::shared_ptr<const Grid> grid_ptr() const { return grid_; }

    /// Center value solving the discrete L u = 0 with all neighbors frozen.
    double diffusion_fixed_point(const ValueField& field, int node) const;
    /// Smallest field value over the reachable trade targets.
    double transaction_candidate(const ValueField& field, int node, Trade action) const;
    Candidates candidates(std::span<const double> u, int node) const;

    /// beta + sum of the generator weights at an interior node (units 1/time).
    double generator_rate(int node) const;
    /// Trade amount of one cell-step.
    double trade_step(int node, Trade action) const;
    int trade_reach() const { return reach_; }

    /// One Jacobi sweep: reads `in`, writes `out` (boundary values copied). Returns the
    /// sup-norm update over interior nodes. Results do not depend on `workers`.
    double sweep(const ValueField& in, ValueField& out, double damping, int workers) const;

    const AffineMap& diffusion_map(int node) const { return stencil(node).diffusion; }
    /// Trade targets ordered by trade amount; the first one is the adjacent cell edge.
    std::span<const AffineMap> trade_maps(int node, Trade action) const;
    const AffineMap& trade_map(int node, Trade action) const { return trade_maps(node, action)[0]; }
    /// Index of map `k` of trade_maps(node, action) in a node-independent numbering.
    int trade_map_id(int node, Trade action, int k) const;
    const AffineMap& map_by_id(int id) const { return pool_[static_cast<std::size_t>(id)]; }

private:
    struct Stencil {
        AffineMap diffusion;
        int buy_begin, buy_count;
        int sell_begin, sell_count;
        double rate;
        double buy_step;
        double sell_step;
    };
    const Stencil& stencil(int node) const;
    Stencil build_stencil(int node);
    AffineMap build_diffusion(int i, int j, double& rate) const;
    void build_trades(int i, int j, Trade action, double& step);
    AffineMap edge_map(Position land, int ai, int aj, int bi, int bj, double s) const;
    double min_trade(std::span<const double> u, int begin, int count) const;

    std::shared_ptr<const Grid> grid_;
    std::vector<int> slot_;  // node -> stencil index, -1 for non-interior nodes
    std::vector<Stencil> stencils_;
    std::vector<AffineMap> pool_;  // trade maps of all stencils
    int reach_;
};

/// One value-iteration sweep returning the new field and its sup-norm update.
std::pair<ValueField, double> vi_sweep(const ViScheme& scheme, const ValueField& field,
                                       const SolverConfig& cfg);

struct ResidualReport {
    /// Per interior node (same order as Grid::interior()): u - D(u), u - Buy(u), u - Sell(u).
    std::vector<std::array<double, 3>> per_node;
    double sup_positive = 0.0;       ///< max over nodes of the positive part of the max residual
    double max_complementarity = 0.0;  ///< max over nodes of min_k |residual_k|
    double boundary_violation = 0.0;   ///< max |u - boundary data| over boundary and truncation nodes
};

/// Discrete residual of max{Lu, sell, buy} in probability units: each term is u minus the
/// corresponding candidate. Dividing by trade_step (or multiplying by generator_rate)
/// recovers the operator scale.
ResidualReport vi_residual(const ViScheme& scheme, const ValueField& field);

RegionMap extract_region_map(const ViScheme& scheme, const ValueField& field,
                             const SolverConfig& cfg);

struct SolveResult {
    ValueField field;
    RegionMap regions;
    SolveReport report;
};

class NonConvergence : public std::runtime_error {
public:
    NonConvergence(SolveResult partial);
    const SolveResult& partial() const { return *partial_; }

private:
    std::shared_ptr<SolveResult> partial_;
};

/// Iterates to the discrete fixed point u = min(D u, Buy u, Sell u). Starts from `init`
/// (default: 1 in the interior). Throws NonConvergence when max_iters sweeps do not bring
/// the update below tol_sup.
SolveResult solve(const ViScheme& scheme, const SolverConfig& cfg,
                  std::optional<ValueField> init = std::nullopt);
SolveResult solve(const MarketParams& p, const GridSpec& grid, const SolverConfig& cfg);

}  // namespace ruin
