#pragma once

#include <vector>

#include "curvlab/grid.hpp"

namespace curvlab {

// Symmetric n x n matrix per node, upper triangle stored row by row.
struct MetricField {
    GridPtr grid;
    int n = 0;
    std::vector<double> entries;

    int ncomp() const { return n * (n + 1) / 2; }
    static int slot(int n, int i, int j);
    double at(std::size_t node, int i, int j) const { return entries[node * ncomp() + slot(n, i, j)]; }
    double& at(std::size_t node, int i, int j) { return entries[node * ncomp() + slot(n, i, j)]; }

    static MetricField from_function(GridPtr grid, const std::function<void(const double* x, double* g)>& fn);
};

struct GeometryOptions {
    double definiteness_floor = 1e-10;
    EdgeClosure closure = EdgeClosure::FourthOrder;
};

struct FrameBundle {
    GridPtr grid;
    int n = 0;
    std::vector<int> axis_order;
    // frame[node*n*n + a*n + i] = dx_a(X_i)
    std::vector<double> frame;
    // coframe[i] is the one-form theta^i
    std::vector<FormField> coframe;
    // connection[i*n + j] = omega^i_j, curvature[i*n + j] = Omega^i_j
    std::vector<FormField> connection;
    std::vector<FormField> curvature;

    bool has_connection() const { return !connection.empty(); }
    bool has_curvature() const { return !curvature.empty(); }
    const FormField& omega(int i, int j) const { return connection[i * n + j]; }
    const FormField& Omega(int i, int j) const { return curvature[i * n + j]; }
};

MetricField metric_from_immersion(const MapField& y, const GeometryOptions& opt = {});

// Gram-Schmidt of (d_{order[0]}, ..., d_{order[n-1]}) against g; identity
// order when axis_order is empty.
FrameBundle gram_schmidt_frame(const MetricField& g, const std::vector<int>& axis_order = {},
                               const GeometryOptions& opt = {});

// Levi-Civita connection one-forms, convention nabla X_j = sum_i omega^i_j X_i.
FrameBundle connection_forms(const MetricField& g, FrameBundle fb, const GeometryOptions& opt = {});

// max over i and interior nodes of |d theta^i + sum_j omega^i_j ^ theta^j|
double structural_residual(const FrameBundle& fb, const GeometryOptions& opt = {});

// Omega^i_j = d omega^i_j + sum_k omega^i_k ^ omega^k_j
FrameBundle curvature_forms(FrameBundle fb, const GeometryOptions& opt = {});

// Independent curvature route through the Riemann tensor of g (no d omega).
FrameBundle curvature_from_riemann(const MetricField& g, FrameBundle fb, const GeometryOptions& opt = {});

// (1/(n (n/2)!)) sum_zeta sgn(zeta) Omega^{z1}_{z2} ^ ... ^ Omega^{z(n-1)}_{zn}
FormField pfaffian(const FrameBundle& fb);

// All stages for a metric: frame, connection, curvature.
FrameBundle frame_pipeline(const MetricField& g, const std::vector<int>& axis_order = {},
                           const GeometryOptions& opt = {});

MapField gauss_map(const MapField& y, const GeometryOptions& opt = {});

// nu^* sigma_{S^n} as det(d_1 nu, ..., d_n nu, nu).
FormField sphere_pullback(const MapField& nu, const GeometryOptions& opt = {});

double small_det(std::vector<double> m, int n);

}  // namespace curvlab
