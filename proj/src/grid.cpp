#include "ruin/grid.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "ruin/closed_form.hpp"

namespace ruin {

namespace {

constexpr double kPadFraction = 0.01;

struct StripExtent {
    double lo, hi;
};

// x-range of the closed strip over rows y in [y_min, y_max].
StripExtent strip_extent(const MarketParams& p, double y_min, double y_max) {
    const double lo = p.b() - (1.0 - p.mu_sell()) * std::max(y_max, 0.0) +
                      std::max(-y_max, 0.0) / (1.0 - p.lambda_buy());
    const double hi = p.safe_level() + std::max(-y_min, 0.0) / (1.0 - p.lambda_buy()) -
                      (1.0 - p.mu_sell()) * std::max(y_min, 0.0);
    return {lo, hi};
}

}  // namespace

GridSpec GridSpec::defaults(const MarketParams& p, int n) {
    GridSpec s;
    s.y_min = -0.2 * p.safe_level();
    s.y_max = 1.8 * p.safe_level();
    s.nx = n;
    s.ny = n;
    return s;
}

const char* to_string(NodeClass c) {
    switch (c) {
        case NodeClass::BelowRuin: return "BelowRuin";
        case NodeClass::RuinBoundary: return "RuinBoundary";
        case NodeClass::Interior: return "Interior";
        case NodeClass::SafeBoundary: return "SafeBoundary";
        case NodeClass::Safe: return "Safe";
        case NodeClass::Truncation: return "Truncation";
    }
    return "?";
}

std::optional<NodeClass> node_class_from_string(const std::string& s) {
    for (auto c : {NodeClass::BelowRuin, NodeClass::RuinBoundary, NodeClass::Interior,
                   NodeClass::SafeBoundary, NodeClass::Safe, NodeClass::Truncation})
        if (s == to_string(c)) return c;
    return std::nullopt;
}

Grid::Grid(const MarketParams& p, const GridSpec& spec)
    : params_(p), spec_(spec), nx_(spec.nx), ny_(spec.ny) {
    if (nx_ < 3 || ny_ < 3) throw ModelError("grid needs nx >= 3 and ny >= 3");
    if (!(spec.y_min < spec.y_max)) throw ModelError("grid needs y_min < y_max");
    if (!(spec.geom_tol >= 0)) throw ModelError("geometric tolerance must be nonnegative");
    dy_ = (spec.y_max - spec.y_min) / (ny_ - 1);

    const auto strip = strip_extent(p, spec.y_min, spec.y_max);
    if (spec.x_min || spec.x_max) {
        if (!spec.x_min || !spec.x_max) throw ModelError("x_min and x_max must be given together");
        if (!(*spec.x_min < *spec.x_max)) throw ModelError("grid needs x_min < x_max");
        if (*spec.x_min > strip.lo || *spec.x_max < strip.hi)
            throw ModelError("explicit x-range does not cover the solvency strip");
        dx_ = (*spec.x_max - *spec.x_min) / (nx_ - 1);
        x_anchor_ = *spec.x_min;
        i_anchor_ = 0;
    } else {
        const double width = strip.hi - strip.lo;
        const double pad = kPadFraction * width;
        const double gap = p.safe_level() - p.b();
        // Prefer a spacing that divides c/r - b with a node on x = b.
        bool anchored = false;
        for (int m = static_cast<int>((nx_ - 1) * gap / (width + 2 * pad)); m >= 1; --m) {
            const double h = gap / m;
            const int left = static_cast<int>(std::ceil((p.b() - strip.lo + pad) / h));
            const int right = static_cast<int>(std::ceil((strip.hi + pad - p.b()) / h));
            if (left + right <= nx_ - 1) {
                dx_ = h;
                x_anchor_ = p.b();
                i_anchor_ = left + (nx_ - 1 - left - right) / 2;
                anchored = true;
                break;
            }
        }
        if (!anchored) {
            dx_ = (width + 2 * pad) / (nx_ - 1);
            x_anchor_ = strip.lo - pad;
            i_anchor_ = 0;
        }
    }

    classes_.resize(static_cast<std::size_t>(size()));
    for (int j = 0; j < ny_; ++j) {
        for (int i = 0; i < nx_; ++i) {
            const int n = index(i, j);
            NodeClass c{};
            switch (classify_point(p, x(i), y(j), spec.geom_tol)) {
                case PointClass::BelowRuin: c = NodeClass::BelowRuin; break;
                case PointClass::RuinBoundary: c = NodeClass::RuinBoundary; break;
                case PointClass::SafeBoundary: c = NodeClass::SafeBoundary; break;
                case PointClass::Safe: c = NodeClass::Safe; break;
                case PointClass::Interior:
                    c = (j == 0 || j == ny_ - 1) ? NodeClass::Truncation : NodeClass::Interior;
                    break;
            }
            classes_[n] = c;
            if (c == NodeClass::Interior) interior_.push_back(n);
            if (c != NodeClass::BelowRuin && c != NodeClass::Safe) active_.push_back(n);
        }
    }
    if (interior_.empty()) throw ModelError("grid has no interior node inside the solvency strip");
}

bool Grid::is_active(int node) const {
    const auto c = classes_[node];
    return c != NodeClass::BelowRuin && c != NodeClass::Safe;
}

std::size_t Grid::count(NodeClass c) const {
    return static_cast<std::size_t>(std::count(classes_.begin(), classes_.end(), c));
}

int Grid::nearest(double xv, double yv) const {
    const int i = std::clamp(static_cast<int>(std::lround((xv - x_lo()) / dx_)), 0, nx_ - 1);
    const int j = std::clamp(static_cast<int>(std::lround((yv - spec_.y_min) / dy_)), 0, ny_ - 1);
    return index(i, j);
}

std::shared_ptr<const Grid> build_grid(const MarketParams& p, const GridSpec& spec) {
    return std::make_shared<const Grid>(p, spec);
}

std::shared_ptr<const Grid> refine_grid(const Grid& coarse, int factor) {
    if (factor < 1) throw ModelError("refinement factor must be >= 1");
    GridSpec s = coarse.spec();
    s.x_min = coarse.x_lo();
    s.x_max = coarse.x_hi();
    s.nx = (coarse.nx() - 1) * factor + 1;
    s.ny = (coarse.ny() - 1) * factor + 1;
    return build_grid(coarse.params(), s);
}

ExtendedGrid extend_grid_upward(const Grid& base, double new_y_max) {
    const auto& p = base.params();
    GridSpec s = base.spec();
    const int extra_rows = static_cast<int>(std::lround((new_y_max - s.y_max) / base.dy()));
    if (extra_rows < 1) throw ModelError("extension must add at least one row");
    s.ny = base.ny() + extra_rows;
    s.y_max = s.y_min + (s.ny - 1) * base.dy();
    const auto strip = strip_extent(p, s.y_min, s.y_max);
    const double pad = kPadFraction * (strip.hi - strip.lo);
    const int extra_cols =
        std::max(0, static_cast<int>(std::ceil((base.x_lo() - (strip.lo - pad)) / base.dx())));
    s.nx = base.nx() + extra_cols;
    s.x_min = base.x_lo() - extra_cols * base.dx();
    s.x_max = base.x_hi();
    return {build_grid(p, s), extra_cols};
}

ValueField make_field(std::shared_ptr<const Grid> grid, FieldInit init) {
    ValueField f{grid, std::vector<double>(static_cast<std::size_t>(grid->size()), 0.0)};
    const auto& p = grid->params();
    const auto cf = compute_constants(p);
    for (int n : grid->interior()) {
        const double x = grid->x(grid->col(n)), y = grid->y(grid->row(n));
        switch (init) {
            case FieldInit::Zero: f[n] = 0.0; break;
            case FieldInit::One: f[n] = 1.0; break;
            case FieldInit::UpperBound: f[n] = upper_bound_psi_clamped(p, x, y); break;
            case FieldInit::LowerBound: f[n] = lower_bound_psi_clamped(p, cf, x, y); break;
        }
    }
    boundary_values(f);
    return f;
}

void boundary_values(ValueField& field) {
    const auto& g = *field.grid;
    for (int n = 0; n < g.size(); ++n) {
        switch (g.node_class(n)) {
            case NodeClass::BelowRuin:
            case NodeClass::RuinBoundary: field[n] = 1.0; break;
            case NodeClass::SafeBoundary:
            case NodeClass::Safe: field[n] = 0.0; break;
            case NodeClass::Truncation:
                field[n] = upper_bound_psi_clamped(g.params(), g.x(g.col(n)), g.y(g.row(n)));
                break;
            case NodeClass::Interior: break;
        }
    }
}

const char* to_string(Region r) {
    switch (r) {
        case Region::NoTrade: return "NoTrade";
        case Region::Buy: return "Buy";
        case Region::Sell: return "Sell";
        case Region::Boundary: return "Boundary";
    }
    return "?";
}

Region RegionMap::lookup(double x, double y) const {
    const auto& p = grid->params();
    const double L = liquidation_value(p, x, y);
    if (L <= p.b() || L >= p.safe_level()) return Region::Boundary;
    return labels[grid->nearest(x, y)];
}

std::size_t RegionMap::count(Region r) const {
    return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), r));
}

std::string format_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

namespace {

std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) out.push_back(cell);
    return out;
}

std::ofstream open_out(const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw ModelError("cannot open '" + path + "' for writing");
    return os;
}

std::ifstream open_in(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ModelError("cannot open '" + path + "' for reading");
    return is;
}

// Checks that a CSV row's coordinates belong to the expected node.
void check_row_node(const Grid& g, int node, const std::vector<std::string>& cells,
                    const std::string& path) {
    const double x = std::stod(cells[0]), y = std::stod(cells[1]);
    const double ex = g.x(g.col(node)), ey = g.y(g.row(node));
    if (std::abs(x - ex) > 1e-9 * (1 + std::abs(ex)) || std::abs(y - ey) > 1e-9 * (1 + std::abs(ey)))
        throw ModelError("'" + path + "' does not match the grid at (" + cells[0] + "," + cells[1] + ")");
}

}  // namespace

void write_value_csv(const ValueField& field, std::ostream& os) {
    const auto& g = *field.grid;
    os << "x,y,value,class\n";
    for (int n : g.active())
        os << format_double(g.x(g.col(n))) << ',' << format_double(g.y(g.row(n))) << ','
           << format_double(field[n]) << ',' << to_string(g.node_class(n)) << '\n';
}

void write_value_csv(const ValueField& field, const std::string& path) {
    auto os = open_out(path);
    write_value_csv(field, os);
}

ValueField read_value_csv(std::shared_ptr<const Grid> grid, const std::string& path) {
    auto is = open_in(path);
    std::string line;
    if (!std::getline(is, line) || line != "x,y,value,class")
        throw ModelError("'" + path + "' lacks the header x,y,value,class");
    ValueField f = make_field(grid, FieldInit::Zero);
    const auto& active = grid->active();
    std::size_t k = 0;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        const auto cells = split_csv(line);
        if (cells.size() != 4 || k >= active.size())
            throw ModelError("'" + path + "' has an unexpected row: " + line);
        const int n = active[k++];
        check_row_node(*grid, n, cells, path);
        f[n] = std::stod(cells[2]);
    }
    if (k != active.size()) throw ModelError("'" + path + "' has too few rows for the grid");
    return f;
}

void write_region_csv(const RegionMap& map, std::ostream& os) {
    const auto& g = *map.grid;
    os << "x,y,region\n";
    for (int n : g.active())
        os << format_double(g.x(g.col(n))) << ',' << format_double(g.y(g.row(n))) << ','
           << to_string(map.labels[n]) << '\n';
}

void write_region_csv(const RegionMap& map, const std::string& path) {
    auto os = open_out(path);
    write_region_csv(map, os);
}

RegionMap read_region_csv(std::shared_ptr<const Grid> grid, const std::string& path) {
    auto is = open_in(path);
    std::string line;
    if (!std::getline(is, line) || line != "x,y,region")
        throw ModelError("'" + path + "' lacks the header x,y,region");
    RegionMap m{grid, std::vector<Region>(static_cast<std::size_t>(grid->size()), Region::Boundary)};
    const auto& active = grid->active();
    std::size_t k = 0;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        const auto cells = split_csv(line);
        if (cells.size() != 3 || k >= active.size())
            throw ModelError("'" + path + "' has an unexpected row: " + line);
        const int n = active[k++];
        check_row_node(*grid, n, cells, path);
        bool found = false;
        for (auto r : {Region::NoTrade, Region::Buy, Region::Sell, Region::Boundary})
            if (cells[2] == to_string(r)) { m.labels[n] = r; found = true; }
        if (!found) throw ModelError("'" + path + "' has an unknown region '" + cells[2] + "'");
    }
    if (k != active.size()) throw ModelError("'" + path + "' has too few rows for the grid");
    return m;
}

}  // namespace ruin
