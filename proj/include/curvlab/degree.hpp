#pragma once

#include <functional>
#include <string>
#include <vector>

#include "curvlab/grid.hpp"
#include "curvlab/mollify.hpp"
#include "curvlab/sphere_cells.hpp"

namespace curvlab {

enum class ClearancePolicy {
    InterpolationDefect,  // 2 * (max image-simplex diameter)^2 / 8
    SimplexDiameter,      // 2 * max image-simplex diameter
};

struct DegreeOptions {
    double clearance_floor = -1.0;  // radians; negative selects the policy value
    ClearancePolicy policy = ClearancePolicy::InterpolationDefect;
    int max_subdivisions = 1;
    // Cells whose center lies within one circumradius of u(boundary) are
    // replaced by refine^n sub-targets; 0 or 1 disables.
    int refine = 8;
    // Clearances beyond this (radians) are reported as the cutoff itself.
    double clearance_cutoff = 0.2;
};

struct DegreeResult {
    int degree = 0;
    int hits = 0;          // simplices whose image contains z, unsigned
    bool regular = true;
    double clearance = 0.0;
};

struct DegreeReport {
    int n = 0;
    std::vector<double> targets;  // unit vectors, flattened
    std::vector<double> area;     // H^n weight carried by each target
    std::vector<std::size_t> cell;
    std::vector<char> subtarget;
    std::vector<int> degrees;
    std::vector<int> hits;
    std::vector<char> regular;
    std::vector<double> clearance;
    double clearance_floor = 0.0;
    double integral = 0.0;       // sum of deg * area over regular targets
    double excluded_area = 0.0;  // area of irregular targets
    std::size_t irregular_simplices = 0;

    std::size_t size() const { return degrees.size(); }
    const double* target(std::size_t t) const { return &targets[t * (n + 1)]; }
    // sum over regular targets of phi(z) deg(z) area(z)
    double pairing(const std::function<double(const double*)>& phi) const;
};

// Region cells are the closed grid cells whose corners all lie in region.
double max_image_diameter(const MapField& u, const NodeMask& region);
double clearance_floor_for(const MapField& u, const NodeMask& region, const DegreeOptions& opt);

DegreeResult brouwer_degree(const MapField& u, const NodeMask& region, const double* z,
                            const DegreeOptions& opt = {});

DegreeReport degree_at_targets(const MapField& u, const NodeMask& region, const std::vector<double>& targets,
                               const std::vector<double>& areas, const DegreeOptions& opt = {});

DegreeReport degree_field(const MapField& u, const NodeMask& region, const SphereCellGrid& cells,
                          const DegreeOptions& opt = {});

// Geodesic distance from each target to the image of the region boundary,
// capped at cutoff.
std::vector<double> boundary_clearance(const MapField& u, const NodeMask& region,
                                       const std::vector<double>& targets, double cutoff);

// Conservative raster of u(E): cells hit by some image simplex.
std::vector<char> image_cells(const MapField& u, const NodeMask& E, const SphereCellGrid& cells);
double spherical_image_measure(const MapField& u, const NodeMask& E, const SphereCellGrid& cells);

// Sum of spherical_image_measure over pairwise disjoint parts.
double extrinsic_curvature_bound(const MapField& u, const std::vector<NodeMask>& parts,
                                 const SphereCellGrid& cells);

// Area of cells whose center lies within one cell diameter of u(boundary of E).
double boundary_layer_area(const MapField& u, const NodeMask& E, const SphereCellGrid& cells);

// Sum over Kuhn simplices of the signed integral of phi over the radial
// projection of the image simplex. Equals the integral of phi deg(u) for the
// piecewise linear interpolant, with no target sampling.
struct SimplicialPairing {
    double value = 0.0;
    std::size_t skipped_simplices = 0;  // image spans a hemisphere, left out
};
SimplicialPairing simplicial_pairing(const MapField& u, const NodeMask& region,
                                     const std::function<double(const double*)>& phi, int order = 3);

struct WeakConvergenceRow {
    double eps = 0.0;
    double pairing = 0.0;     // simplicial_pairing of nu_eps
    double difference = 0.0;  // |pairing - previous pairing|, 0 on the first row
    double sampled = 0.0;     // degree_field(...).pairing(phi) of nu_eps
    double sampled_difference = 0.0;
    double excluded_area = 0.0;
};

struct WeakConvergenceTable {
    std::vector<WeakConvergenceRow> rows;  // eps in decreasing order
    double reference = 0.0;                // unmollified map, both routes
    double reference_sampled = 0.0;
    double clearance_floor = 0.0;  // shared by all scales
    double max_route_gap = 0.0;    // max |pairing - sampled| over rows and reference
    std::size_t region_nodes = 0;
    bool monotone = false;  // successive differences strictly decrease
    bool sampled_monotone = false;
};

// Pairings of phi with deg(nu_eps) for the Gauss maps of phi_eps * y. All
// scales share the chart box that stays valid at the largest eps, so every
// nu_eps is computed from uncontaminated values on the same domain. The
// sampled route carries the target quadrature error (about 1e-3 on a 32^2
// face grid), which is larger than the late differences; monotone refers to
// the simplicial route.
WeakConvergenceTable weak_convergence_experiment(const MapField& y, std::vector<double> eps_list,
                                                 const std::function<double(const double*)>& phi,
                                                 const SphereCellGrid& cells, const MollifierKernel& kernel = {},
                                                 const DegreeOptions& opt = {});

void write_degree_csv(const DegreeReport& r, const std::string& path);
std::string degree_summary_json(const DegreeReport& r);

}  // namespace curvlab
