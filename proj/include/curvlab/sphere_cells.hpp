#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "curvlab/common.hpp"

namespace curvlab {

// Partition of S^n by radial projection of the 2(n+1) faces of the cube
// [-1,1]^{n+1}, each face gridded k x ... x k. Face f sits on axis f/2 with
// sign + for even f.
class SphereCellGrid {
public:
    SphereCellGrid(int n, int k);

    int n() const { return n_; }
    int k() const { return k_; }
    int faces() const { return 2 * (n_ + 1); }
    std::size_t size() const { return count_; }

    const double* center(std::size_t cell) const { return &centers_[cell * (n_ + 1)]; }
    double area(std::size_t cell) const { return areas_[cell]; }
    const std::vector<double>& areas() const { return areas_; }
    // Largest geodesic distance from the center to a cell corner.
    double circumradius(std::size_t cell) const { return radii_[cell]; }
    double max_circumradius() const { return max_radius_; }
    double total_area() const;

    std::size_t locate(const double* x) const;

    // Sub-cells of a cell split s ways per face axis: unit centers (flattened)
    // and areas.
    void subcells(std::size_t cell, int s, std::vector<double>& centers, std::vector<double>& areas) const;

private:
    void face_point(int face, const double* u, double* x) const;
    double face_area(const double* lo, double width, int order) const;

    int n_, k_;
    std::size_t count_;
    std::vector<double> centers_, areas_, radii_;
    double max_radius_ = 0.0;
};

double sphere_volume(int n);
double angle_between(const double* a, const double* b, int dim);

// Bucketed unit vectors for radius queries in R^{n+1}.
class PointIndex {
public:
    PointIndex(const std::vector<double>& points, int dim, double bucket);
    // Calls f(i) for every point within chordal distance r of c.
    void query(const double* c, double r, const std::function<void(std::uint32_t)>& f) const;
    std::size_t size() const { return count_; }

private:
    std::uint64_t key(const long* b) const;
    std::vector<double> pts_;
    int dim_;
    double bucket_;
    std::size_t count_;
    std::vector<std::uint64_t> keys_;     // sorted bucket keys
    std::vector<std::uint32_t> offsets_;  // start offsets into order_, size keys_+1
    std::vector<std::uint32_t> order_;
};

}  // namespace curvlab
