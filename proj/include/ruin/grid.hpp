#pragma once

#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "ruin/market.hpp"

namespace ruin {

/// Truncated rectangular lattice over the solvency strip b <= L(x,y) <= c/r.
///
/// Rows run from y_min to y_max. The x-extent covers the strip over that y-range plus a
/// small padding unless x_min/x_max are given explicitly. When the node count allows it,
/// the x spacing divides c/r - b and the lattice passes through x = b, so the y = 0 row
/// carries exact ruin- and safe-boundary nodes.
struct GridSpec {
    double y_min = 0.0;
    double y_max = 0.0;
    int nx = 0;
    int ny = 0;
    std::optional<double> x_min;
    std::optional<double> x_max;
    double geom_tol = kDefaultGeomTol;

    /// y in [-0.2 c/r, 1.8 c/r] with n x n nodes; y = 0 is a row whenever (n-1) % 10 == 0.
    static GridSpec defaults(const MarketParams& p, int n);
};

enum class NodeClass { BelowRuin, RuinBoundary, Interior, SafeBoundary, Safe, Truncation };

const char* to_string(NodeClass c);
std::optional<NodeClass> node_class_from_string(const std::string& s);

class Grid {
public:
    /// Classifies every node. Throws ModelError for an invalid spec or when no node
    /// is interior.
    Grid(const MarketParams& p, const GridSpec& spec);

    const MarketParams& params() const { return params_; }
    const GridSpec& spec() const { return spec_; }
    int nx() const { return nx_; }
    int ny() const { return ny_; }
    int size() const { return nx_ * ny_; }
    double dx() const { return dx_; }
    double dy() const { return dy_; }
    double x(int i) const { return x_anchor_ + (i - i_anchor_) * dx_; }
    double y(int j) const { return spec_.y_min + j * dy_; }
    double x_lo() const { return x(0); }
    double x_hi() const { return x(nx_ - 1); }
    int index(int i, int j) const { return j * nx_ + i; }
    int col(int node) const { return node % nx_; }
    int row(int node) const { return node / nx_; }
    bool in_box(int i, int j) const { return i >= 0 && i < nx_ && j >= 0 && j < ny_; }

    NodeClass node_class(int node) const { return classes_[node]; }
    const std::vector<NodeClass>& classes() const { return classes_; }
    /// Interior nodes in row-major order; these are the solver's unknowns.
    const std::vector<int>& interior() const { return interior_; }
    /// Nodes inside the closed strip (interior, both boundaries, truncation rows).
    const std::vector<int>& active() const { return active_; }
    bool is_active(int node) const;

    std::size_t count(NodeClass c) const;

    /// Nearest node to (x,y), clamped into the box.
    int nearest(double x, double y) const;

private:
    MarketParams params_;
    GridSpec spec_;
    int nx_, ny_;
    double dx_, dy_;
    double x_anchor_;
    int i_anchor_;
    std::vector<NodeClass> classes_;
    std::vector<int> interior_;
    std::vector<int> active_;
};

std::shared_ptr<const Grid> build_grid(const MarketParams& p, const GridSpec& spec);

/// Grid over the same box with (n-1) * factor + 1 nodes per axis; the coarse nodes are a
/// subset of the fine ones.
std::shared_ptr<const Grid> refine_grid(const Grid& coarse, int factor);

/// Same lattice extended upward so that y_max roughly doubles. Node (i,j) of the base
/// grid is node (i + column_offset, j) of the extension.
struct ExtendedGrid {
    std::shared_ptr<const Grid> grid;
    int column_offset;
};
ExtendedGrid extend_grid_upward(const Grid& base, double new_y_max);

/// Per-node probability field over a grid. Nodes outside the strip hold the continuous
/// extension of the value function (1 below ruin, 0 in the safe region).
struct ValueField {
    std::shared_ptr<const Grid> grid;
    std::vector<double> values;

    double operator[](int node) const { return values[node]; }
    double& operator[](int node) { return values[node]; }
};

enum class FieldInit { Zero, One, UpperBound, LowerBound };

/// Field with interior values from `init` and boundary data already applied.
ValueField make_field(std::shared_ptr<const Grid> grid, FieldInit init);

/// Ruin boundary and below := 1, safe boundary and beyond := 0, truncation rows := upper
/// bound. Interior values are untouched.
void boundary_values(ValueField& field);

enum class Region { NoTrade, Buy, Sell, Boundary };

const char* to_string(Region r);

struct RegionMap {
    std::shared_ptr<const Grid> grid;
    std::vector<Region> labels;

    Region at_node(int node) const { return labels[node]; }
    /// Nearest-node label; points outside the box get the label of the clamped node,
    /// points outside the strip are Boundary.
    Region lookup(double x, double y) const;
    std::size_t count(Region r) const;
};

/// Writes `x,y,value,class`, one row per active node, 17 significant digits.
void write_value_csv(const ValueField& field, std::ostream& os);
void write_value_csv(const ValueField& field, const std::string& path);
/// Reads a file written by write_value_csv for the same grid. Throws ModelError when the
/// rows do not match the grid's active nodes.
ValueField read_value_csv(std::shared_ptr<const Grid> grid, const std::string& path);

void write_region_csv(const RegionMap& map, std::ostream& os);
void write_region_csv(const RegionMap& map, const std::string& path);
RegionMap read_region_csv(std::shared_ptr<const Grid> grid, const std::string& path);

/// Shortest round-trip decimal form with 17 significant digits.
std::string format_double(double v);

}  // namespace ruin
