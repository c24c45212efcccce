#pragma once

#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "curvlab/geometry.hpp"

namespace curvlab {

enum class KernelKind {
    Polynomial,  // (1 - r^2)^4
    Cosine,      // ((1 + cos(pi r)) / 2)^2
};

struct MollifierKernel {
    KernelKind kind = KernelKind::Polynomial;

    double profile(double r) const;  // unnormalized, supported in r < 1
    std::string name() const;
    static MollifierKernel from_name(const std::string& name);
};

struct RoughnessSpec {
    double alpha = 0.8;
    int lacunarity = 2;
    int depth = 6;
    double amplitude = 1e-3;
    std::uint64_t seed = 1;
};

struct Mollified {
    MapField field;
    NodeMask valid;  // nodes at distance >= eps from the chart edge
};

// Continuous multiplier of the normalized radial kernel phi_eps on a plane
// wave of frequency |xi| in R^n, as a function of s = |xi| eps:
// (phi_eps * e^{i xi.x}) = F(s) e^{i xi.x}.
double kernel_fourier_factor(const MollifierKernel& kernel, int n, double s);

// Normalized lattice weights of phi_eps on offsets -R..R per axis (C order).
std::vector<double> kernel_weights(const ChartGrid& grid, const MollifierKernel& kernel, double eps, int& radius);

// phi_eps * (f chi_U) with zero extension outside the chart.
Mollified mollify_field(const MapField& f, const MollifierKernel& kernel, double eps);

struct DefectScan {
    int r = 0;
    std::vector<double> eps;
    std::vector<double> defect;
    std::vector<char> dropped;  // not an immersion after mollification
    LinearFit fit;              // log defect against log eps over kept scales
};

DefectScan metric_defect_scan(const MapField& y, const MollifierKernel& kernel, int r,
                              const std::vector<double>& eps_list);

struct C1BetaRow {
    double eps = 0.0;
    double c0 = 0.0, c1 = 0.0, holder = 0.0, total = 0.0;
};

struct C1BetaTable {
    double beta = 0.0;
    bool out_of_range = false;  // beta >= 2 alpha - 1
    bool decreasing = false;
    std::vector<C1BetaRow> rows;
};

C1BetaTable metric_c1beta_convergence(const MapField& y, const MollifierKernel& kernel, double beta,
                                      const std::vector<double>& eps_list,
                                      double alpha = std::numeric_limits<double>::quiet_NaN());

// base + sum_{k=1}^{depth} amp a^{-k(1+alpha)} sin(a^k <w_k, x> + p_k) nu_base
MapField lacunary_immersion(const MapField& base, const RoughnessSpec& spec);

// Scalar sum_{k=1}^{depth} amp a^{-k alpha} sin(a^k <w_k, x> + p_k), Hoelder alpha.
MapField lacunary_field(GridPtr grid, const RoughnessSpec& spec);

// Unit-speed planar curve over s in [-1/2, 1/2] whose tangent angle is
// amp sum_{k=k_min}^{k_max} a^{-k alpha} sin(a^k s). The induced metric is
// exactly 1, so any metric defect after mollification is the quadratic
// commutator alone.
struct CorrugationSpec {
    double alpha = 0.8;
    double base = 2.0;
    int k_min = -60;
    int k_max = 14;
    double amplitude = 0.05;
    int nodes = 131073;
    int oversample = 8;
};
MapField corrugated_curve(const CorrugationSpec& spec);

// Lower estimate of sup |f(x) - f(x')| / |x - x'|^alpha from all nearest
// neighbour pairs plus pair_budget quasi-random pairs.
double holder_seminorm_estimate(const MapField& f, double alpha, std::size_t pair_budget = 20000,
                                const NodeMask* mask = nullptr);

void write_scan_csv(const DefectScan& s, const std::string& path);
std::string scan_summary_json(const DefectScan& s);

}  // namespace curvlab
