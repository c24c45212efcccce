#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "curvlab/grid.hpp"
#include "curvlab/mollify.hpp"

namespace curvlab {

struct DistanceBounds {
    double lower = 0.0;
    double upper = 0.0;
};

// Bounded open set U in R^n. Analytic regions report the exact distance
// from a closed box to the boundary (lower == upper); sampled regions report
// one-sided bounds.
class Region {
public:
    struct Impl {
        virtual ~Impl() = default;
        virtual bool contains(const double* x) const = 0;
        virtual DistanceBounds box_distance(const double* lo, const double* hi) const = 0;
    };

    Region() = default;
    Region(int n, std::vector<double> lo, std::vector<double> hi, std::shared_ptr<const Impl> impl, std::string id);

    int dim() const { return n_; }
    const std::vector<double>& lo() const { return lo_; }  // bounding box
    const std::vector<double>& hi() const { return hi_; }
    const std::string& id() const { return id_; }

    bool contains(const double* x) const { return impl_->contains(x); }
    // Distance between the closed box [lo, hi] and the boundary of U.
    DistanceBounds box_distance(const double* lo, const double* hi) const { return impl_->box_distance(lo, hi); }
    double point_distance(const double* x) const { return impl_->box_distance(x, x).lower; }

    static Region box(std::vector<double> lo, std::vector<double> hi);
    static Region unit_cube(int n);
    static Region ball(std::vector<double> center, double radius);
    static Region annulus(std::vector<double> center, double r_in, double r_out);
    // Simple closed polygon in R^2, either orientation.
    static Region polygon(std::vector<std::array<double, 2>> vertices, std::string id = "polygon");
    // Koch snowflake of the given generation on the triangle inscribed in the
    // circle of radius 1 about the origin.
    static Region koch_snowflake(int generation);
    // Scalar signed distance samples, positive inside.
    static Region sampled(const MapField& signed_distance, std::string id = "sampled");

private:
    int n_ = 0;
    std::vector<double> lo_, hi_;
    std::shared_ptr<const Impl> impl_;
    std::string id_;
};

std::vector<std::array<double, 2>> koch_snowflake_vertices(int generation);
double polygon_area(const std::vector<std::array<double, 2>>& v);
// Points along every edge with spacing at most `spacing`, vertices included.
std::vector<double> polygon_boundary_points(const std::vector<std::array<double, 2>>& v, double spacing);

constexpr int kMaxCubeDim = 4;

// Q = 2^{-k} (l + (0,1)^n)
struct DyadicCube {
    int k = 0;
    std::array<std::int64_t, kMaxCubeDim> l{};

    double side() const { return std::ldexp(1.0, -k); }
    bool operator<(const DyadicCube& o) const { return k != o.k ? k < o.k : l < o.l; }
    bool operator==(const DyadicCube& o) const { return k == o.k && l == o.l; }
};

struct WhitneyDecomposition {
    int n = 0;
    int k_root = 0;
    int k_max = 0;
    std::string region_id;
    std::vector<DyadicCube> cubes;  // sorted by (k, l)
    std::map<int, std::size_t> census;
    std::size_t frontier = 0;  // boundary cubes left unresolved at k_max

    double diam(const DyadicCube& q) const { return q.side() * std::sqrt(double(n)); }
    void bounds(const DyadicCube& q, double* lo, double* hi) const;
    double volume() const;
};

// Top-down dyadic refinement: a cube is accepted once its distance lower
// bound reaches diam Q; the parent's rejection caps the distance at 4 diam Q.
// For sampled regions the cap carries the slack of the lower bound (half a
// sample-cell diagonal), so cubes at k_max should span several sample cells.
WhitneyDecomposition whitney_decompose(const Region& U, int k_max);

struct WhitneyCheck {
    std::size_t cubes = 0;
    std::size_t property_ok = 0;   // diam <= dist <= 4 diam under probing
    std::size_t overlaps = 0;      // nested or repeated dyadic cubes
    std::size_t coverage_probes = 0;
    std::size_t uncovered = 0;     // interior probes beyond the floor that no cube covers
    double worst_low = 0.0;        // min over cubes of probed dist / diam
    double worst_high = 0.0;       // max over cubes of probed dist / diam
    bool ok() const { return property_ok == cubes && overlaps == 0 && uncovered == 0; }
};

// Re-checks the Whitney properties using only the membership predicate:
// dist(Q, boundary) is located between lattice probes of spacing side/probes
// around each cube, so it is known up to the probe diagonal.
WhitneyCheck verify_whitney(const Region& U, const WhitneyDecomposition& W, int probes = 8,
                            std::size_t coverage_probes = 20000);

// Exact dyadic disjointness: count of cubes that coincide with or lie inside
// another cube of the list.
std::size_t dyadic_overlaps(const std::vector<DyadicCube>& cubes, int n);

// Least-squares slope of log2 |W_k| against k over populated k in [k_lo, k_hi].
double whitney_census_slope(const WhitneyDecomposition& W, int k_lo, int k_hi);

struct BoxDimension {
    double dimension = 0.0;
    bool unstable = false;
    std::vector<double> eps;
    std::vector<double> counts;
    std::vector<double> local_slopes;  // window fit starting at each eps
    std::size_t range_begin = 0, range_end = 0;  // eps indices of the fitted range, inclusive
};

// Box counting over a geometric eps ladder (four rungs per octave) spanning
// [eps_lo, eps_hi], which must cover two decades. N(eps) is the smallest
// count over the 2^dim half-box mesh offsets. Local slopes are least-squares
// fits over a factor-4 window, which averages out the log-periodic wobble of
// self-similar sets. The dimension is fitted over the longest run of local
// slopes whose spread is below 0.05; without one the full-range slope is
// returned with the unstable flag set.
BoxDimension box_dimension(const std::vector<double>& points, int dim, double eps_lo, double eps_hi);

struct LevelSetDimensions {
    std::vector<double> levels;
    std::vector<double> dims;      // NaN for empty levels
    std::vector<char> empty;
    std::vector<char> unstable;
    double bound = 0.0;            // n - alpha + 0.1
    double fraction_within = 0.0;  // over nonempty levels
    bool degenerate = false;       // every level empty
};

// Level sets f^{-1}(r) as the centers of mesh cells where f - r changes sign.
LevelSetDimensions level_set_boxdim(const MapField& f, const std::vector<double>& levels, double alpha,
                                    double eps_lo = 0.0, double eps_hi = 0.0);

// count levels uniform in (min f, max f), reproducible from seed
std::vector<double> sample_levels(const MapField& f, std::size_t count, std::uint64_t seed);

// t -> M(t) as an (n-1)-form sampled on a caller-supplied grid.
struct ScaleFamily {
    int n = 0;
    std::function<FormField(double t, const GridPtr& grid)> evaluate;
    std::string description;
    std::vector<double> domain_lo, domain_hi;  // empty: defined everywhere

    // M(t) = M for every t
    static ScaleFamily constant(int n, std::function<void(const double* x, double* out)> form, std::string description);
};

// sum_j coef_j sin(<freq_j, x> + phase_j) on coefficient `component` of an
// (n-1)-form.
struct TrigForm {
    struct Term {
        int component = 0;
        double coef = 0.0;
        std::vector<double> freq;
        double phase = 0.0;
    };
    int n = 2;
    std::vector<Term> terms;

    void evaluate(const double* x, double* out) const;
    // Exact mollification family phi_t * M through the kernel's Fourier factor.
    ScaleFamily mollified(const MollifierKernel& kernel) const;
    // Exterior derivative coefficient (top form) at x.
    double derivative(const double* x) const;
};

struct FractalIntegralOptions {
    int local_cells = 16;       // quadrature cells per axis on each cube
    double theta_est = 0.5;     // certification threshold: census slope < n - 1 + theta_est
    double t0 = -1.0;           // trace stand-in; default half the finest cube diameter
    int slope_from = -1000;     // census fit from this generation; -1000 means the last five
    bool t0_sensitivity = true;  // repeat the boundary terms at t0 / 2
};

struct FractalIntegral {
    double value = 0.0;          // sum + tail
    double sum = 0.0;
    double tail = 0.0;
    double interior = 0.0;       // sum of cube integrals of dM(diam Q)
    double boundary = 0.0;       // sum of boundary terms
    double census_slope = 0.0;
    double ratio = 0.0;          // 2^(slope - n)
    double t0 = 0.0;
    double t0_sensitivity = 0.0;  // |value(t0 / 2) - value(t0)|
    std::map<int, double> per_generation;
};

FractalIntegral fractal_integral(const ScaleFamily& M, const WhitneyDecomposition& W,
                                 const FractalIntegralOptions& opt = {});

void write_whitney_csv(const WhitneyDecomposition& W, const std::string& path);
std::string whitney_summary_json(const WhitneyDecomposition& W, int k_lo, int k_hi);

}  // namespace curvlab
