#include "ruin/vi_solver.hpp"

#include <Eigen/Sparse>
#include <Eigen/SparseLU>
#include <algorithm>
#include <chrono>
#include <cmath>
#include <stdexcept>
#include <mutex>
#include <thread>

#include "ruin/closed_form.hpp"

namespace ruin {

void SolverConfig::validate() const {
    if (max_iters < 1) throw ModelError("solver max_iters must be >= 1");
    if (!(tol_sup > 0)) throw ModelError("solver tol_sup must be positive");
    if (!(tol_bind >= tol_sup)) throw ModelError("solver tol_bind must be >= tol_sup");
    if (!(damping > 0 && damping <= 1)) throw ModelError("solver damping must lie in (0,1]");
    if (workers < 0) throw ModelError("workers must be >= 0");
    if (warmup_sweeps < 0 || max_policy_iters < 0)
        throw ModelError("warmup_sweeps and max_policy_iters must be >= 0");
    if (trade_reach < 1) throw ModelError("solver trade_reach must be >= 1");
}

namespace {

int resolve_workers(int workers) {
    if (workers > 0) return workers;
    return std::max(1u, std::thread::hardware_concurrency());
}

// A lattice point seen from an interior stencil: either a node that carries a field
// value, or a point beyond the strip whose nearest boundary data replaces it.
struct Endpoint {
    bool inside;
    int node;          // valid when inside
    double level;      // boundary level crossed on the way out (when !inside)
    double value;      // boundary data at that level
};

void add_term(AffineMap& m, int node, double w) {
    if (w == 0.0) return;
    for (int k = 0; k < m.terms; ++k)
        if (m.nodes[k] == node) {
            m.weights[k] += w;
            return;
        }
    if (m.terms == 4) throw std::logic_error("stencil overflow");
    m.nodes[m.terms] = node;
    m.weights[m.terms] = w;
    ++m.terms;
}

}  // namespace

ViScheme::ViScheme(std::shared_ptr<const Grid> grid, int trade_reach)
    : grid_(std::move(grid)), reach_(trade_reach) {
    if (reach_ < 1) throw ModelError("trade_reach must be >= 1");
    slot_.assign(static_cast<std::size_t>(grid_->size()), -1);
    stencils_.reserve(grid_->interior().size());
    for (int n : grid_->interior()) {
        slot_[n] = static_cast<int>(stencils_.size());
        stencils_.push_back(build_stencil(n));
    }
}

const ViScheme::Stencil& ViScheme::stencil(int node) const {
    const int s = slot_.at(static_cast<std::size_t>(node));
    if (s < 0) throw std::out_of_range("node is not interior");
    return stencils_[static_cast<std::size_t>(s)];
}

ViScheme::Stencil ViScheme::build_stencil(int node) {
    const int i = grid_->col(node), j = grid_->row(node);
    Stencil s{};
    s.diffusion = build_diffusion(i, j, s.rate);
    s.buy_begin = static_cast<int>(pool_.size());
    build_trades(i, j, Trade::Buy, s.buy_step);
    if (static_cast<int>(pool_.size()) == s.buy_begin) pool_.push_back(AffineMap{{}, {}, 0, 1.0});
    s.sell_begin = static_cast<int>(pool_.size());
    s.buy_count = s.sell_begin - s.buy_begin;
    build_trades(i, j, Trade::Sell, s.sell_step);
    if (static_cast<int>(pool_.size()) == s.sell_begin) pool_.push_back(AffineMap{{}, {}, 0, 1.0});
    s.sell_count = static_cast<int>(pool_.size()) - s.sell_begin;
    return s;
}

namespace {

Endpoint resolve(const Grid& g, int i, int j) {
    const auto& p = g.params();
    if (g.in_box(i, j) && g.is_active(g.index(i, j))) return {true, g.index(i, j), 0.0, 0.0};
    const double L = liquidation_value(p, g.x(i), g.y(j));
    if (L < p.b()) return {false, -1, p.b(), 1.0};
    if (L > p.safe_level()) return {false, -1, p.safe_level(), 0.0};
    throw std::logic_error("lattice point inside the strip lies outside the grid box");
}

}  // namespace

AffineMap ViScheme::build_diffusion(int i, int j, double& rate) const {
    const auto& g = *grid_;
    const auto& p = g.params();
    const double x = g.x(i), y = g.y(j);
    const Position here{x, y};

    struct Arm {
        Endpoint end;
        double dist;
        double w = 0.0;
    };
    auto arm = [&](int ii, int jj, double full) {
        Arm a{resolve(g, ii, jj), full};
        if (!a.end.inside) {
            const double t = segment_crossing(p, here, {g.x(ii), g.y(jj)}, a.end.level);
            a.dist = std::max(t, 1e-12) * full;
        }
        return a;
    };
    Arm left = arm(i - 1, j, g.dx()), right = arm(i + 1, j, g.dx());
    Arm down = arm(i, j - 1, g.dy()), up = arm(i, j + 1, g.dy());

    const double drift_x = p.r() * x - p.c();
    if (drift_x < 0) left.w += -drift_x / left.dist;
    if (drift_x > 0) right.w += drift_x / right.dist;
    const double drift_y = p.alpha() * y;
    if (drift_y > 0) up.w += drift_y / up.dist;
    if (drift_y < 0) down.w += -drift_y / down.dist;
    const double diff = 0.5 * p.sigma() * p.sigma() * y * y;
    if (diff > 0) {
        const double span = up.dist + down.dist;
        up.w += 2.0 * diff / (up.dist * span);
        down.w += 2.0 * diff / (down.dist * span);
    }

    rate = p.beta() + left.w + right.w + up.w + down.w;
    AffineMap m;
    for (const Arm* a : {&left, &right, &down, &up}) {
        if (a->w == 0.0) continue;
        if (a->end.inside)
            add_term(m, a->end.node, a->w / rate);
        else
            m.constant += a->w * a->end.value / rate;
    }
    return m;
}

AffineMap ViScheme::edge_map(Position land, int ai, int aj, int bi, int bj, double s) const {
    const auto& g = *grid_;
    const auto& p = g.params();
    AffineMap m;
    const Endpoint a = resolve(g, ai, aj), b = resolve(g, bi, bj);
    double sa = 0.0, sb = 1.0;
    if (!a.inside) {
        const double t = segment_crossing(p, land, {g.x(ai), g.y(aj)}, a.level);
        sa = s - t * s;
    }
    if (!b.inside) {
        const double t = segment_crossing(p, land, {g.x(bi), g.y(bj)}, b.level);
        sb = s + t * (1.0 - s);
    }
    const double span = sb - sa;
    if (span <= 1e-15) {
        m.constant = !a.inside ? a.value : b.value;
        return m;
    }
    const double wa = (sb - s) / span, wb = (s - sa) / span;
    if (a.inside) add_term(m, a.node, wa); else m.constant += wa * a.value;
    if (b.inside) add_term(m, b.node, wb); else m.constant += wb * b.value;
    return m;
}

// Walks the trade ray from node (i,j) through successive cell edges. Each crossing
// becomes one target map; the walk stops after reach_ targets, on leaving the strip, or
// past the truncation rows.
void ViScheme::build_trades(int i, int j, Trade action, double& step) {
    const auto& g = *grid_;
    const auto& p = g.params();
    const double x = g.x(i), y = g.y(j);
    // Per unit of trade: buy moves (-1, 1-lambda), sell moves (1-mu, -1).
    const double vx = action == Trade::Buy ? -1.0 : 1.0 - p.mu_sell();
    const double vy = action == Trade::Buy ? 1.0 - p.lambda_buy() : -1.0;
    const int sx = vx > 0 ? 1 : -1, sy = vy > 0 ? 1 : -1;
    const double tcol = g.dx() / std::abs(vx), trow = g.dy() / std::abs(vy);
    constexpr double kSnap = 1e-12;

    int mc = 1, mr = 1;
    step = std::min(tcol, trow);
    for (int made = 0; made < reach_; ++made) {
        const double tc = mc * tcol, tr = mr * trow;
        const double t = std::min(tc, tr);
        const bool on_col = tc <= tr * (1 + kSnap);
        const bool on_row = tr <= tc * (1 + kSnap);
        if (on_col) ++mc;
        if (on_row) ++mr;

        const Position land = transaction_shift(p, x, y, action, t);
        const double L = liquidation_value(p, land.x, land.y);
        if (L <= p.b() || L >= p.safe_level()) {
            AffineMap m;
            m.constant = L <= p.b() ? 1.0 : 0.0;
            pool_.push_back(m);
            return;
        }
        int ai, aj, bi, bj;
        double s;
        if (on_col && on_row) {
            ai = bi = i + sx * (mc - 1);
            aj = bj = j + sy * (mr - 1);
            s = 0.0;
        } else if (on_col) {
            ai = bi = i + sx * (mc - 1);
            const double q = vy * t / g.dy();
            aj = j + static_cast<int>(std::floor(q));
            bj = aj + 1;
            s = q - std::floor(q);
        } else {
            aj = bj = j + sy * (mr - 1);
            const double q = vx * t / g.dx();
            ai = i + static_cast<int>(std::floor(q));
            bi = ai + 1;
            s = q - std::floor(q);
        }
        if (aj < 0 || bj >= g.ny() || ai < 0 || bi >= g.nx()) return;
        pool_.push_back(edge_map(land, ai, aj, bi, bj, std::clamp(s, 0.0, 1.0)));
    }
}

std::span<const AffineMap> ViScheme::trade_maps(int node, Trade action) const {
    const auto& s = stencil(node);
    const int begin = action == Trade::Buy ? s.buy_begin : s.sell_begin;
    const int count = action == Trade::Buy ? s.buy_count : s.sell_count;
    return {pool_.data() + begin, static_cast<std::size_t>(count)};
}

int ViScheme::trade_map_id(int node, Trade action, int k) const {
    const auto& s = stencil(node);
    const int count = action == Trade::Buy ? s.buy_count : s.sell_count;
    if (k < 0 || k >= count) throw std::out_of_range("trade map index");
    return (action == Trade::Buy ? s.buy_begin : s.sell_begin) + k;
}

double ViScheme::min_trade(std::span<const double> u, int begin, int count) const {
    double v = 1.0;
    for (int k = begin; k < begin + count; ++k) v = std::min(v, pool_[static_cast<std::size_t>(k)].apply(u));
    return v;
}

double ViScheme::diffusion_fixed_point(const ValueField& field, int node) const {
    return stencil(node).diffusion.apply(field.values);
}

double ViScheme::transaction_candidate(const ValueField& field, int node, Trade action) const {
    const auto& s = stencil(node);
    return action == Trade::Buy ? min_trade(field.values, s.buy_begin, s.buy_count)
                                : min_trade(field.values, s.sell_begin, s.sell_count);
}

Candidates ViScheme::candidates(std::span<const double> u, int node) const {
    const auto& s = stencil(node);
    return {s.diffusion.apply(u), min_trade(u, s.buy_begin, s.buy_count),
            min_trade(u, s.sell_begin, s.sell_count)};
}

double ViScheme::generator_rate(int node) const { return stencil(node).rate; }

double ViScheme::trade_step(int node, Trade action) const {
    return action == Trade::Buy ? stencil(node).buy_step : stencil(node).sell_step;
}

double ViScheme::sweep(const ValueField& in, ValueField& out, double damping, int workers) const {
    if (out.values.size() != in.values.size()) out.values = in.values;
    out.grid = in.grid;
    const auto& interior = grid_->interior();
    const std::span<const double> u(in.values);

    auto run = [&](std::size_t lo, std::size_t hi, double& sup) {
        double local = 0.0;
        for (std::size_t k = lo; k < hi; ++k) {
            const int n = interior[k];
            const auto& st = stencils_[k];
            const double best = std::min({st.diffusion.apply(u), min_trade(u, st.buy_begin, st.buy_count),
                                          min_trade(u, st.sell_begin, st.sell_count)});
            const double next = damping == 1.0 ? best : (1.0 - damping) * u[n] + damping * best;
            if (!(next >= 0.0 && next <= 1.0))
                throw std::logic_error("monotone sweep left [0,1]");
            out.values[n] = next;
            local = std::max(local, std::abs(next - u[n]));
        }
        sup = local;
    };

    // Copy fixed nodes once per sweep; they never change.
    for (int n = 0; n < grid_->size(); ++n)
        if (grid_->node_class(n) != NodeClass::Interior) out.values[n] = in.values[n];

    const int nw = std::min<int>(resolve_workers(workers), static_cast<int>(interior.size()));
    if (nw <= 1) {
        double sup = 0.0;
        run(0, interior.size(), sup);
        return sup;
    }
    std::vector<double> sups(static_cast<std::size_t>(nw), 0.0);
    std::vector<std::thread> pool;
    const std::size_t chunk = (interior.size() + nw - 1) / nw;
    std::exception_ptr failure;
    std::mutex failure_mutex;
    for (int w = 0; w < nw; ++w) {
        const std::size_t lo = std::min(interior.size(), w * chunk);
        const std::size_t hi = std::min(interior.size(), lo + chunk);
        pool.emplace_back([&, lo, hi, w] {
            try {
                run(lo, hi, sups[static_cast<std::size_t>(w)]);
            } catch (...) {
                std::lock_guard lock(failure_mutex);
                failure = std::current_exception();
            }
        });
    }
    for (auto& t : pool) t.join();
    if (failure) std::rethrow_exception(failure);
    return *std::max_element(sups.begin(), sups.end());
}

std::pair<ValueField, double> vi_sweep(const ViScheme& scheme, const ValueField& field,
                                       const SolverConfig& cfg) {
    ValueField out = field;
    const double sup = scheme.sweep(field, out, cfg.damping, cfg.workers);
    return {std::move(out), sup};
}

ResidualReport vi_residual(const ViScheme& scheme, const ValueField& field) {
    const auto& g = scheme.grid();
    ResidualReport rep;
    rep.per_node.reserve(g.interior().size());
    for (int n : g.interior()) {
        const auto c = scheme.candidates(field.values, n);
        const double u = field[n];
        const std::array<double, 3> r{u - c.diffusion, u - c.buy, u - c.sell};
        rep.per_node.push_back(r);
        const double mx = std::max({r[0], r[1], r[2]});
        rep.sup_positive = std::max(rep.sup_positive, std::max(mx, 0.0));
        const double mn = std::min({std::abs(r[0]), std::abs(r[1]), std::abs(r[2])});
        rep.max_complementarity = std::max(rep.max_complementarity, mn);
    }
    ValueField expected = field;
    boundary_values(expected);
    for (int n = 0; n < g.size(); ++n)
        if (g.node_class(n) != NodeClass::Interior)
            rep.boundary_violation = std::max(rep.boundary_violation, std::abs(field[n] - expected[n]));
    return rep;
}

RegionMap extract_region_map(const ViScheme& scheme, const ValueField& field,
                             const SolverConfig& cfg) {
    const auto& g = scheme.grid();
    RegionMap map{scheme.grid_ptr(),
                  std::vector<Region>(static_cast<std::size_t>(g.size()), Region::Boundary)};
    for (int n : g.interior()) {
        const auto c = scheme.candidates(field.values, n);
        const double u = field[n];
        Region r = Region::NoTrade;
        if (std::abs(u - c.buy) <= cfg.tol_bind && c.buy < c.diffusion && c.buy < c.sell)
            r = Region::Buy;
        else if (std::abs(u - c.sell) <= cfg.tol_bind && c.sell < c.diffusion && c.sell < c.buy)
            r = Region::Sell;
        map.labels[n] = r;
    }
    return map;
}

NonConvergence::NonConvergence(SolveResult partial)
    : std::runtime_error("value iteration did not converge: final sup-norm update " +
                         format_double(partial.report.sup_update) + ", residual " +
                         format_double(partial.report.residual)),
      partial_(std::make_shared<SolveResult>(std::move(partial))) {}

namespace {

// A node's policy: -1 for the diffusion map, otherwise the id of a trade map.
struct Choice {
    int map;
    double value;
};

Choice best_choice(const ViScheme& scheme, std::span<const double> u, int node) {
    Choice best{-1, scheme.diffusion_map(node).apply(u)};
    for (Trade t : {Trade::Sell, Trade::Buy}) {
        const auto maps = scheme.trade_maps(node, t);
        for (std::size_t k = 0; k < maps.size(); ++k) {
            const double v = maps[k].apply(u);
            if (v < best.value) best = {scheme.trade_map_id(node, t, static_cast<int>(k)), v};
        }
    }
    return best;
}

const AffineMap& chosen_map(const ViScheme& scheme, int node, int map) {
    return map < 0 ? scheme.diffusion_map(node) : scheme.map_by_id(map);
}

// Howard iteration on the min-form fixed point: freeze the minimizing candidate at every
// node, solve the resulting linear system exactly, re-select, repeat until the selection
// is stable. Returns the number of linear solves, or -1 if a system was singular or left
// [0,1] (the caller then falls back to plain sweeps).
int policy_polish(const ViScheme& scheme, ValueField& field, int max_policy_iters) {
    const auto& g = scheme.grid();
    const auto& interior = g.interior();
    const auto n_unknown = static_cast<Eigen::Index>(interior.size());
    std::vector<int> unknown(static_cast<std::size_t>(g.size()), -1);
    for (std::size_t k = 0; k < interior.size(); ++k) unknown[interior[k]] = static_cast<int>(k);

    std::vector<int> policy(interior.size());
    for (std::size_t k = 0; k < interior.size(); ++k)
        policy[k] = best_choice(scheme, field.values, interior[k]).map;

    int solves = 0;
    for (int it = 0; it < max_policy_iters; ++it) {
        std::vector<Eigen::Triplet<double>> trips;
        trips.reserve(interior.size() * 4);
        Eigen::VectorXd rhs(n_unknown);
        for (std::size_t k = 0; k < interior.size(); ++k) {
            const auto& m = chosen_map(scheme, interior[k], policy[k]);
            const auto row = static_cast<int>(k);
            trips.emplace_back(row, row, 1.0);
            double b = m.constant;
            for (int t = 0; t < m.terms; ++t) {
                const int col = unknown[m.nodes[t]];
                if (col >= 0)
                    trips.emplace_back(row, col, -m.weights[t]);
                else
                    b += m.weights[t] * field[m.nodes[t]];
            }
            rhs[row] = b;
        }
        Eigen::SparseMatrix<double> A(n_unknown, n_unknown);
        A.setFromTriplets(trips.begin(), trips.end());
        A.makeCompressed();
        Eigen::SparseLU<Eigen::SparseMatrix<double>, Eigen::COLAMDOrdering<int>> lu;
        lu.compute(A);
        if (lu.info() != Eigen::Success) return -1;
        const Eigen::VectorXd sol = lu.solve(rhs);
        if (lu.info() != Eigen::Success) return -1;
        ++solves;
        for (Eigen::Index k = 0; k < n_unknown; ++k) {
            const double v = sol[k];
            if (!std::isfinite(v) || v < -1e-9 || v > 1.0 + 1e-9) return -1;
            field[interior[static_cast<std::size_t>(k)]] = std::clamp(v, 0.0, 1.0);
        }

        std::size_t changed = 0;
        for (std::size_t k = 0; k < interior.size(); ++k) {
            const int n = interior[k];
            const Choice c = best_choice(scheme, field.values, n);
            const double current = chosen_map(scheme, n, policy[k]).apply(field.values);
            // Switch only on a strict improvement so that ties cannot cycle.
            if (c.map != policy[k] && c.value < current - 1e-14) {
                policy[k] = c.map;
                ++changed;
            }
        }
        if (changed == 0) break;
    }
    return solves;
}

}  // namespace

SolveResult solve(const ViScheme& scheme, const SolverConfig& cfg, std::optional<ValueField> init) {
    cfg.validate();
    const auto t0 = std::chrono::steady_clock::now();
    ValueField field = init ? std::move(*init) : make_field(scheme.grid_ptr(), FieldInit::One);
    if (field.grid != scheme.grid_ptr() || field.values.size() != static_cast<std::size_t>(scheme.grid().size()))
        throw ModelError("initial field does not belong to the scheme's grid");
    boundary_values(field);
    ValueField next = field;

    SolveReport rep;
    auto do_sweep = [&] {
        rep.sup_update = scheme.sweep(field, next, cfg.damping, cfg.workers);
        std::swap(field, next);
        ++rep.sweeps;
        return rep.sup_update <= cfg.tol_sup;
    };

    bool converged = false;
    const long warmup = cfg.policy_polish ? std::min<long>(cfg.warmup_sweeps, cfg.max_iters) : cfg.max_iters;
    while (!converged && rep.sweeps < warmup) converged = do_sweep();

    if (!converged && cfg.policy_polish) {
        ValueField trial = field;
        const int solves = policy_polish(scheme, trial, cfg.max_policy_iters);
        if (solves > 0) {
            field = std::move(trial);
            rep.policy_iterations = solves;
            rep.polish_used = true;
        }
    }
    while (!converged && rep.sweeps < cfg.max_iters) converged = do_sweep();

    rep.iterations = rep.sweeps + rep.policy_iterations;
    rep.residual = vi_residual(scheme, field).sup_positive;
    rep.converged = converged;
    rep.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();

    SolveResult out{field, extract_region_map(scheme, field, cfg), rep};
    if (!converged) throw NonConvergence(std::move(out));
    return out;
}

SolveResult solve(const MarketParams& p, const GridSpec& grid, const SolverConfig& cfg) {
    const ViScheme scheme(build_grid(p, grid), cfg.trade_reach);
    return solve(scheme, cfg);
}

}  // namespace ruin
