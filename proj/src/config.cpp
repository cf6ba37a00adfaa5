#include "ruin/config.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

namespace ruin {

namespace {

namespace pt = boost::property_tree;

// Key/value pairs of one section; every key must be consumed exactly by a known reader.
class Section {
public:
    Section(std::string name, std::map<std::string, std::string> kv)
        : name_(std::move(name)), kv_(std::move(kv)) {}

    const std::map<std::string, std::string>& raw() const { return kv_; }

    std::optional<std::string> text(const std::string& key) {
        used_.insert(key);
        auto it = kv_.find(key);
        if (it == kv_.end()) return std::nullopt;
        return it->second;
    }

    std::optional<double> number(const std::string& key) {
        auto t = text(key);
        if (!t) return std::nullopt;
        try {
            std::size_t used = 0;
            const double v = std::stod(*t, &used);
            if (used == t->size()) return v;
        } catch (const std::exception&) {
        }
        throw ModelError(where(key) + " is not a number: '" + *t + "'");
    }

    std::optional<long> integer(const std::string& key) {
        auto t = text(key);
        if (!t) return std::nullopt;
        try {
            std::size_t used = 0;
            const long v = std::stol(*t, &used);
            if (used == t->size()) return v;
        } catch (const std::exception&) {
        }
        throw ModelError(where(key) + " is not an integer: '" + *t + "'");
    }

    std::optional<bool> flag(const std::string& key) {
        auto t = text(key);
        if (!t) return std::nullopt;
        if (*t == "true" || *t == "1" || *t == "yes") return true;
        if (*t == "false" || *t == "0" || *t == "no") return false;
        throw ModelError(where(key) + " is not a boolean: '" + *t + "'");
    }

    void reject_unused() const {
        for (const auto& [k, v] : kv_)
            if (!used_.count(k)) throw ModelError("unknown key '" + k + "' in section [" + name_ + "]");
    }

    std::string where(const std::string& key) const { return "[" + name_ + "] key '" + key + "'"; }

private:
    std::string name_;
    std::map<std::string, std::string> kv_;
    std::set<std::string> used_;
};

template <class T>
void assign(T& dst, const std::optional<T>& v) {
    if (v) dst = *v;
}

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, sep)) {
        const auto a = item.find_first_not_of(" \t");
        const auto b = item.find_last_not_of(" \t");
        out.push_back(a == std::string::npos ? "" : item.substr(a, b - a + 1));
    }
    return out;
}

double to_number(const std::string& s, const std::string& where) {
    try {
        std::size_t used = 0;
        const double v = std::stod(s, &used);
        if (used == s.size()) return v;
    } catch (const std::exception&) {
    }
    throw ModelError(where + " has a malformed entry '" + s + "'");
}

void read_grid(Section& s, const MarketParams& p, GridSpec& g) {
    const long n = s.integer("n").value_or(201);
    if (n < 3 || n > 100000) throw ModelError(s.where("n") + " must lie in [3, 100000]");
    g = GridSpec::defaults(p, static_cast<int>(n));
    if (auto v = s.integer("nx")) g.nx = static_cast<int>(*v);
    if (auto v = s.integer("ny")) g.ny = static_cast<int>(*v);
    assign(g.y_min, s.number("y_min"));
    assign(g.y_max, s.number("y_max"));
    if (auto v = s.number("x_min")) g.x_min = *v;
    if (auto v = s.number("x_max")) g.x_max = *v;
    assign(g.geom_tol, s.number("geom_tol"));
}

void read_solver(Section& s, SolverConfig& c) {
    assign(c.max_iters, s.integer("max_iters"));
    assign(c.tol_sup, s.number("tol_sup"));
    assign(c.tol_bind, s.number("tol_bind"));
    assign(c.damping, s.number("damping"));
    assign(c.policy_polish, s.flag("policy_polish"));
    if (auto v = s.integer("warmup_sweeps")) c.warmup_sweeps = static_cast<int>(*v);
    if (auto v = s.integer("max_policy_iters")) c.max_policy_iters = static_cast<int>(*v);
    if (auto v = s.integer("trade_reach")) c.trade_reach = static_cast<int>(*v);
    c.validate();
}

void read_mc(Section& s, McConfig& m) {
    assign(m.dt, s.number("dt"));
    assign(m.n_paths, s.integer("n_paths"));
    if (auto v = s.integer("seed")) {
        if (*v < 0) throw ModelError(s.where("seed") + " must be nonnegative");
        m.seed = static_cast<std::uint64_t>(*v);
    }
    if (auto v = s.text("mode")) {
        if (*v == "sample") m.mode = DeathMode::SampleDeath;
        else if (*v == "discount") m.mode = DeathMode::DiscountDeath;
        else throw ModelError(s.where("mode") + " must be 'sample' or 'discount'");
    }
    if (auto v = s.number("t_max")) m.t_max = *v;
    assign(m.x0, s.number("x0"));
    assign(m.y0, s.number("y0"));
    if (auto v = s.text("strategy")) {
        if (*v == "liquidate") m.strategy = StrategyKind::LiquidateNow;
        else if (*v == "none") m.strategy = StrategyKind::NoTransaction;
        else if (*v == "feedback") m.strategy = StrategyKind::FeedbackRegionMap;
        else throw ModelError(s.where("strategy") + " must be 'liquidate', 'none' or 'feedback'");
    }
    assign(m.h_tol, s.number("h_tol"));
    if (!(m.dt > 0)) throw ModelError(s.where("dt") + " must be positive");
    if (m.n_paths < 100) throw ModelError(s.where("n_paths") + " must be >= 100");
    if (m.t_max && !(*m.t_max > 0)) throw ModelError(s.where("t_max") + " must be positive");
    if (!(m.h_tol > 0)) throw ModelError(s.where("h_tol") + " must be positive");
}

void read_verify(Section& s, VerifyConfig& v) {
    if (auto x = s.number("lyapunov_p")) v.lyapunov_p = *x;
    if (auto x = s.number("lyapunov_k")) v.lyapunov_k = *x;
    if (auto x = s.integer("lyapunov_samples")) v.lyapunov_samples = static_cast<int>(*x);
    assign(v.sandwich_tol, s.number("sandwich_tol"));
    assign(v.frictionless_cost, s.number("frictionless_cost"));
    assign(v.frictionless_tol, s.number("frictionless_tol"));
    assign(v.mc_paths, s.integer("mc_paths"));
    assign(v.martingale_horizon, s.number("martingale_horizon"));
    if (auto x = s.text("martingale_point")) {
        const auto xy = split(*x, ':');
        if (xy.size() != 2) throw ModelError(s.where("martingale_point") + " must read x:y");
        v.martingale_point = {to_number(xy[0], s.where("martingale_point")),
                              to_number(xy[1], s.where("martingale_point"))};
    }
    if (auto x = s.text("mc_points")) {
        v.mc_points.clear();
        for (const auto& item : split(*x, ',')) {
            const auto xy = split(item, ':');
            if (xy.size() != 2) throw ModelError(s.where("mc_points") + " entries must read x:y");
            v.mc_points.push_back({to_number(xy[0], s.where("mc_points")),
                                   to_number(xy[1], s.where("mc_points"))});
        }
    }
    if (auto x = s.text("refinement")) {
        v.refinement.clear();
        for (const auto& item : split(*x, ','))
            v.refinement.push_back(static_cast<int>(to_number(item, s.where("refinement"))));
    }
    if (v.lyapunov_samples < 2) throw ModelError(s.where("lyapunov_samples") + " must be >= 2");
    if (v.mc_paths < 100) throw ModelError(s.where("mc_paths") + " must be >= 100");
    if (!(v.martingale_horizon > 0)) throw ModelError(s.where("martingale_horizon") + " must be positive");
    if (!(v.frictionless_cost > 0 && v.frictionless_cost < 1))
        throw ModelError(s.where("frictionless_cost") + " must lie in (0,1)");
}

}  // namespace

ExperimentConfig parse_config(std::istream& in) {
    pt::ptree tree;
    try {
        pt::read_ini(in, tree);
    } catch (const pt::ini_parser_error& e) {
        throw ModelError(std::string("config syntax error: ") + e.message() + " (line " +
                         std::to_string(e.line()) + ")");
    }

    static const std::set<std::string> known{"market", "grid", "solver", "mc", "run", "verify"};
    std::map<std::string, Section> sections;
    for (const auto& [name, node] : tree) {
        if (!known.count(name)) {
            if (node.empty()) throw ModelError("key '" + name + "' appears outside any section");
            throw ModelError("unknown config section [" + name + "]");
        }
        std::map<std::string, std::string> kv;
        for (const auto& [k, v] : node) kv[k] = v.get_value<std::string>();
        sections.emplace(name, Section(name, std::move(kv)));
    }
    auto section = [&](const std::string& name) -> Section& {
        auto it = sections.find(name);
        if (it == sections.end()) it = sections.emplace(name, Section(name, {})).first;
        return it->second;
    };

    if (!sections.count("market")) throw ModelError("config has no [market] section");
    ExperimentConfig cfg;
    cfg.market = MarketParams::from_map(section("market").raw());
    read_grid(section("grid"), cfg.market, cfg.grid);
    read_solver(section("solver"), cfg.solver);
    read_mc(section("mc"), cfg.mc);
    read_verify(section("verify"), cfg.verify);

    Section& run = section("run");
    if (auto v = run.integer("workers")) {
        if (*v < 0) throw ModelError(run.where("workers") + " must be >= 0");
        cfg.workers = static_cast<int>(*v);
    }
    if (auto v = run.text("output_dir")) cfg.output_dir = *v;
    cfg.solver.workers = cfg.workers;

    for (const auto& [name, s] : sections)
        if (name != "market") s.reject_unused();
    return cfg;
}

ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ModelError("cannot open config file '" + path + "'");
    return parse_config(in);
}

}  // namespace ruin
