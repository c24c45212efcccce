#pragma once

#include <cstdint>
#include <string>

#include "curvlab/geometry.hpp"

namespace curvlab {

// A sampled immersion over a rectangular chart together with the chart
// extents needed by closed-form oracles.
struct ChartFixture {
    std::string id;
    GridPtr grid;
    MapField y;
    // colatitude/azimuth extents for the spherical-coordinate charts
    double theta_lo = 0, theta_hi = 0, phi_extent = 0;
};

// Node count along an axis of length L at spacing h, rounded to nearest.
int nodes_for_extent(double extent, double h);

// Colatitude band chart (theta, phi): theta symmetric about pi/2 with lower
// edge as close to theta_lo as the spacing allows; phi from 0 to the largest
// multiple of h not exceeding phi_max.
GridPtr band_grid(double h, double theta_lo, double phi_max);

// Ellipsoid (a sin t cos p, b sin t sin p, c cos t); a = b = c = R is a sphere.
ChartFixture ellipsoid_band(double h, double theta_lo, double a, double b, double c,
                            double phi_max = 6.283185307179586);
ChartFixture sphere_band(double h, double theta_lo, double radius = 1.0, double phi_max = 6.283185307179586);

// (cos x1, sin x1, x2) over [0, len1] x [0, len2]
ChartFixture cylinder_patch(double h, double len1, double len2);
ChartFixture plane_patch(double h, double len1, double len2);
// (x1, x2, f(x1, x2)) over a square centred at the origin
ChartFixture graph_patch(double h, double half_width, const std::function<double(double, double)>& f);

// Hyperspherical chart of the unit S^4 in R^5, angles centred away from the
// coordinate singularities.
ChartFixture sphere4_patch(double h, double half_width);

// Metrics without an immersion.
MetricField product_sphere_flat_metric(double h, double half_width);    // S^2 x R^2
MetricField product_sphere_sphere_metric(double h, double half_width);  // S^2 x S^2
MetricField random_smooth_metric(GridPtr grid, std::uint64_t seed, double amplitude = 0.15);

// Closed forms for the (1,1,c) spheroid band between colatitudes t0 < t1.
double spheroid_normal_cos(double theta, double c);
double spheroid_band_curvature_integral(double t0, double t1, double c, double phi_extent);
// Gauss curvature of the (1,1,c) spheroid at colatitude theta.
double spheroid_gauss_curvature(double theta, double c);

}  // namespace curvlab
