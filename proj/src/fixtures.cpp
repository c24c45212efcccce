#include "curvlab/fixtures.hpp"

#include <cmath>
#include <numbers>
#include <random>

namespace curvlab {

int nodes_for_extent(double extent, double h) { return static_cast<int>(std::lround(extent / h)) + 1; }

GridPtr band_grid(double h, double theta_lo, double phi_max) {
    const double pi = std::numbers::pi;
    const int nt = nodes_for_extent(pi - 2 * theta_lo, h);
    const int np = static_cast<int>(std::floor(phi_max / h + 1e-9)) + 1;
    const double t0 = pi / 2 - 0.5 * (nt - 1) * h;
    return make_grid({nt, np}, h, {t0, 0.0});
}

ChartFixture ellipsoid_band(double h, double theta_lo, double a, double b, double c, double phi_max) {
    ChartFixture f;
    f.id = "ellipsoid";
    f.grid = band_grid(h, theta_lo, phi_max);
    f.theta_lo = f.grid->origin()[0];
    f.theta_hi = f.grid->upper()[0];
    f.phi_extent = f.grid->upper()[1];
    f.y = MapField::from_function(f.grid, 3, [=](const double* x, double* out) {
        const double st = std::sin(x[0]), ct = std::cos(x[0]);
        out[0] = a * st * std::cos(x[1]);
        out[1] = b * st * std::sin(x[1]);
        out[2] = c * ct;
    });
    return f;
}

ChartFixture sphere_band(double h, double theta_lo, double radius, double phi_max) {
    auto f = ellipsoid_band(h, theta_lo, radius, radius, radius, phi_max);
    f.id = "sphere";
    return f;
}

ChartFixture cylinder_patch(double h, double len1, double len2) {
    ChartFixture f;
    f.id = "cylinder";
    f.grid = make_grid({nodes_for_extent(len1, h), nodes_for_extent(len2, h)}, h, {0.0, 0.0});
    f.y = MapField::from_function(f.grid, 3, [](const double* x, double* out) {
        out[0] = std::cos(x[0]);
        out[1] = std::sin(x[0]);
        out[2] = x[1];
    });
    return f;
}

ChartFixture plane_patch(double h, double len1, double len2) {
    ChartFixture f;
    f.id = "plane";
    f.grid = make_grid({nodes_for_extent(len1, h), nodes_for_extent(len2, h)}, h, {0.0, 0.0});
    f.y = MapField::from_function(f.grid, 3, [](const double* x, double* out) {
        out[0] = x[0];
        out[1] = x[1];
        out[2] = 0.0;
    });
    return f;
}

ChartFixture graph_patch(double h, double half_width, const std::function<double(double, double)>& fn) {
    ChartFixture f;
    f.id = "graph";
    const int m = nodes_for_extent(2 * half_width, h);
    const double o = -0.5 * (m - 1) * h;
    f.grid = make_grid({m, m}, h, {o, o});
    f.y = MapField::from_function(f.grid, 3, [&](const double* x, double* out) {
        out[0] = x[0];
        out[1] = x[1];
        out[2] = fn(x[0], x[1]);
    });
    return f;
}

ChartFixture sphere4_patch(double h, double half_width) {
    ChartFixture f;
    f.id = "sphere4";
    const int m = nodes_for_extent(2 * half_width, h);
    const double pi2 = std::numbers::pi / 2;
    const double w = 0.5 * (m - 1) * h;
    f.grid = make_grid({m, m, m, m}, h, {pi2 - w, pi2 - w, pi2 - w, -w});
    f.y = MapField::from_function(f.grid, 5, [](const double* x, double* out) {
        const double s1 = std::sin(x[0]), s2 = std::sin(x[1]), s3 = std::sin(x[2]);
        out[0] = std::cos(x[0]);
        out[1] = s1 * std::cos(x[1]);
        out[2] = s1 * s2 * std::cos(x[2]);
        out[3] = s1 * s2 * s3 * std::cos(x[3]);
        out[4] = s1 * s2 * s3 * std::sin(x[3]);
    });
    return f;
}

MetricField product_sphere_flat_metric(double h, double half_width) {
    const int m = nodes_for_extent(2 * half_width, h);
    const double w = 0.5 * (m - 1) * h, pi2 = std::numbers::pi / 2;
    auto grid = make_grid({m, m, m, m}, h, {pi2 - w, -w, -w, -w});
    return MetricField::from_function(grid, [](const double* x, double* g) {
        for (int i = 0; i < 16; ++i) g[i] = 0;
        const double s = std::sin(x[0]);
        g[0] = 1;
        g[5] = s * s;
        g[10] = 1;
        g[15] = 1;
    });
}

MetricField product_sphere_sphere_metric(double h, double half_width) {
    const int m = nodes_for_extent(2 * half_width, h);
    const double w = 0.5 * (m - 1) * h, pi2 = std::numbers::pi / 2;
    auto grid = make_grid({m, m, m, m}, h, {pi2 - w, -w, pi2 - w, -w});
    return MetricField::from_function(grid, [](const double* x, double* g) {
        for (int i = 0; i < 16; ++i) g[i] = 0;
        const double s = std::sin(x[0]), t = std::sin(x[2]);
        g[0] = 1;
        g[5] = s * s;
        g[10] = 1;
        g[15] = t * t;
    });
}

MetricField random_smooth_metric(GridPtr grid, std::uint64_t seed, double amplitude) {
    const int n = grid->dim();
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> freq(0.5, 2.5), phase(0.0, 2 * std::numbers::pi);
    // one plane wave per upper-triangle entry
    std::vector<std::vector<double>> k(n * n, std::vector<double>(n));
    std::vector<double> ph(n * n);
    for (int e = 0; e < n * n; ++e) {
        for (int a = 0; a < n; ++a) k[e][a] = freq(rng);
        ph[e] = phase(rng);
    }
    const double amp = amplitude / n;
    return MetricField::from_function(grid, [=](const double* x, double* g) {
        for (int i = 0; i < n; ++i)
            for (int j = i; j < n; ++j) {
                const int e = i * n + j;
                double arg = ph[e];
                for (int a = 0; a < n; ++a) arg += k[e][a] * x[a];
                const double v = (i == j ? 1.0 : 0.0) + amp * std::sin(arg);
                g[i * n + j] = v;
                g[j * n + i] = v;
            }
    });
}

double spheroid_normal_cos(double theta, double c) {
    const double st = std::sin(theta), ct = std::cos(theta);
    return ct / std::sqrt(c * c * st * st + ct * ct);
}

double spheroid_band_curvature_integral(double t0, double t1, double c, double phi_extent) {
    return phi_extent * (spheroid_normal_cos(t0, c) - spheroid_normal_cos(t1, c));
}

double spheroid_gauss_curvature(double theta, double c) {
    const double st = std::sin(theta), ct = std::cos(theta);
    const double d = c * c * st * st + ct * ct;
    return c * c / (d * d);
}

}  // namespace curvlab
