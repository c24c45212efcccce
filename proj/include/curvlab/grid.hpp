#pragma once

#include <array>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "curvlab/common.hpp"

namespace curvlab {

// Uniform node lattice over a box in R^n. Node storage is C order: the last
// axis varies fastest.
class ChartGrid {
public:
    ChartGrid(std::vector<int> shape, double spacing, std::vector<double> origin);

    int dim() const { return static_cast<int>(shape_.size()); }
    double spacing() const { return h_; }
    const std::vector<int>& shape() const { return shape_; }
    const std::vector<double>& origin() const { return origin_; }
    const std::vector<std::size_t>& strides() const { return strides_; }
    std::size_t node_count() const { return count_; }

    std::size_t index(const int* multi) const;
    void unravel(std::size_t node, int* multi) const;
    double coord(std::size_t node, int axis) const;
    std::vector<double> point(std::size_t node) const;
    std::vector<double> upper() const;  // far corner of the box

    bool interior(std::size_t node) const { return interior_[node] != 0; }
    const NodeMask& interior_mask() const { return interior_; }
    NodeMask full_mask() const { return NodeMask(count_, 1); }

    bool same_as(const ChartGrid& other) const;

private:
    std::vector<int> shape_;
    double h_;
    std::vector<double> origin_;
    std::vector<std::size_t> strides_;
    std::size_t count_ = 0;
    NodeMask interior_;
};

using GridPtr = std::shared_ptr<const ChartGrid>;

GridPtr make_grid(std::vector<int> shape, double spacing, std::vector<double> origin);

// Increasing multi-indices (i1 < ... < ik) of {0..n-1} in lexicographic order.
const std::vector<std::vector<int>>& multi_indices(int n, int k);
int multi_index_position(int n, const std::vector<int>& sorted_indices);

enum class EdgeClosure { FourthOrder, SecondOrder };

struct FormField {
    GridPtr grid;
    int degree = 0;
    std::vector<double> coeffs;  // node-major, coefficient-minor

    int ncoef() const;
    double& at(std::size_t node, int c) { return coeffs[node * ncoef() + c]; }
    double at(std::size_t node, int c) const { return coeffs[node * ncoef() + c]; }

    static FormField zeros(GridPtr grid, int degree);
    static FormField from_function(GridPtr grid, int degree,
                                   const std::function<void(const double* x, double* out)>& fn);
};

struct MapField {
    GridPtr grid;
    int target_dim = 0;
    std::vector<double> values;  // node-major

    double& at(std::size_t node, int c) { return values[node * target_dim + c]; }
    double at(std::size_t node, int c) const { return values[node * target_dim + c]; }

    static MapField from_function(GridPtr grid, int target_dim,
                                  const std::function<void(const double* x, double* out)>& fn);
};

// d/dx_axis of a node-major array with ncomp components per node.
std::vector<double> partial_derivative(const ChartGrid& grid, const std::vector<double>& data, int ncomp,
                                       int axis, EdgeClosure closure = EdgeClosure::FourthOrder);

FormField exterior_derivative(const FormField& f, EdgeClosure closure = EdgeClosure::FourthOrder);
FormField wedge(const FormField& a, const FormField& b);

// a + s * b, same degree and grid.
FormField axpy(const FormField& a, double s, const FormField& b);
FormField scaled(const FormField& a, double s);
// Pointwise product of a form with a scalar node array.
FormField multiply(const FormField& a, const std::vector<double>& scalar);

struct IntegralResult {
    double value = 0.0;
    bool empty = false;
};

// Trapezoidal product rule over the union of closed grid cells whose corners
// all lie in region.
IntegralResult integrate_top_form(const FormField& f, const NodeMask& region);
std::vector<double> top_form_weights(const ChartGrid& grid, const NodeMask& region);

std::vector<double> interpolate(const MapField& f, const std::vector<double>& x);

double max_abs(const std::vector<double>& v, const NodeMask* mask = nullptr, int ncomp = 1);

}  // namespace curvlab
