#include <doctest.h>

#include <cmath>
#include <numbers>

#include "curvlab/fixtures.hpp"
#include "curvlab/mollify.hpp"

using namespace curvlab;

namespace {

double max_on(const MapField& a, const MapField& b, const NodeMask& mask) {
    double e = 0.0;
    for (std::size_t k = 0; k < mask.size(); ++k)
        if (mask[k])
            for (int c = 0; c < a.target_dim; ++c) e = std::max(e, std::abs(a.at(k, c) - b.at(k, c)));
    return e;
}

// Continuous damping factor of cos(x_1) under the normalized 2D radial bump
// of radius eps, by polar Gauss-Legendre quadrature.
double fourier_factor_2d(const MollifierKernel& k, double eps) {
    auto gl = gauss_legendre(200);
    double num = 0.0, den = 0.0;
    const int nt = 400;
    for (int it = 0; it < nt; ++it) {
        const double t = 2.0 * std::numbers::pi * it / nt;
        for (std::size_t i = 0; i < gl.nodes.size(); ++i) {
            const double r = 0.5 * (gl.nodes[i] + 1.0), w = 0.5 * gl.weights[i];
            const double p = k.profile(r) * r * w;
            num += p * std::cos(eps * r * std::cos(t));
            den += p;
        }
    }
    return num / den;
}

}  // namespace

TEST_CASE("kernel weights") {
    auto grid = make_grid({65, 65}, 1.0 / 64, {0, 0});
    for (auto kind : {KernelKind::Polynomial, KernelKind::Cosine}) {
        MollifierKernel k{kind};
        int R = 0;
        auto w = kernel_weights(*grid, k, 0.1, R);
        CHECK(R == 6);
        double s = 0.0;
        for (double v : w) s += v;
        CHECK(std::abs(s - 1.0) <= 1e-12);
        const int W = 2 * R + 1;
        for (int i = 0; i < W; ++i)
            for (int j = 0; j < W; ++j) {
                CHECK(w[i * W + j] == w[(W - 1 - i) * W + (W - 1 - j)]);
                CHECK(w[i * W + j] == w[j * W + i]);
            }
    }
    CHECK(MollifierKernel::from_name("cosine").kind == KernelKind::Cosine);
    CHECK_THROWS_AS(MollifierKernel::from_name("box"), Error);
    int R = 0;
    CHECK_THROWS_WITH_AS(kernel_weights(*grid, {}, 1.5 / 64, R), "kernel under-resolved", Error);
}

TEST_CASE("mollify preserves constants and linear fields") {
    auto grid = make_grid({81, 61}, 1.0 / 64, {0, 0});
    auto f = MapField::from_function(grid, 2, [](const double* x, double* o) {
        o[0] = 3.5;
        o[1] = 2.0 * x[0] - 0.7 * x[1] + 0.25;
    });
    for (double eps : {0.05, 0.2}) {
        auto m = mollify_field(f, {}, eps);
        std::size_t valid = 0;
        for (std::size_t k = 0; k < m.valid.size(); ++k) {
            if (!m.valid[k]) continue;
            ++valid;
            CHECK(std::abs(m.field.at(k, 0) - 3.5) <= 1e-12);
            CHECK(std::abs(m.field.at(k, 1) - f.at(k, 1)) <= 1e-12);
            CHECK(grid->coord(k, 0) >= eps - 1e-12);
        }
        CHECK(valid > 0);
    }
}

TEST_CASE("mollify of sin matches the continuous Fourier factor") {
    auto grid = make_grid({257, 257}, 1.0 / 256, {0, 0});
    auto f = MapField::from_function(grid, 1, [](const double* x, double* o) { o[0] = std::sin(x[0]); });
    for (auto kind : {KernelKind::Polynomial, KernelKind::Cosine}) {
        MollifierKernel k{kind};
        const double factor = fourier_factor_2d(k, 0.1);
        auto m = mollify_field(f, k, 0.1);
        double err = 0.0;
        for (std::size_t n = 0; n < m.valid.size(); ++n)
            if (m.valid[n]) err = std::max(err, std::abs(m.field.at(n, 0) - factor * std::sin(grid->coord(n, 0))));
        CHECK(err <= 1e-8);
        CHECK(std::abs(kernel_fourier_factor(k, 2, 0.1) - factor) <= 1e-12);
        CHECK(std::abs(kernel_fourier_factor(k, 2, 7.0) - fourier_factor_2d(k, 7.0)) <= 1e-10);
    }
    CHECK(kernel_fourier_factor({}, 3, 0.0) == 1.0);
}

TEST_CASE("direct and FFT convolution agree") {
    auto grid = make_grid({41, 37}, 1.0 / 32, {0, 0});
    auto f = MapField::from_function(grid, 1, [](const double* x, double* o) {
        o[0] = std::exp(x[0]) * std::cos(3.0 * x[1]);
    });
    // radius 3 runs direct (7x7 taps), radius 8 runs through FFTW; compare
    // each against an explicit sum
    for (double eps : {3.0 / 32, 8.0 / 32}) {
        int R = 0;
        auto w = kernel_weights(*grid, {}, eps, R);
        auto m = mollify_field(f, {}, eps);
        const int W = 2 * R + 1;
        double err = 0.0;
        for (int i = 0; i < 41; ++i)
            for (int j = 0; j < 37; ++j) {
                double s = 0.0;
                for (int a = -R; a <= R; ++a)
                    for (int b = -R; b <= R; ++b) {
                        int p = i - a, q = j - b;
                        if (p < 0 || p >= 41 || q < 0 || q >= 37) continue;
                        s += w[(a + R) * W + (b + R)] * f.values[p * 37 + q];
                    }
                err = std::max(err, std::abs(s - m.field.values[i * 37 + j]));
            }
        CHECK(err <= 1e-13);
    }
}

TEST_CASE("second-order accuracy for smooth fields") {
    auto grid = make_grid({513}, 1.0 / 512, {0});
    auto f = MapField::from_function(grid, 1, [](const double* x, double* o) { o[0] = std::cos(4.0 * x[0]); });
    std::vector<double> lx, ly;
    for (double eps : {0.02, 0.04, 0.08}) {
        auto m = mollify_field(f, {}, eps);
        lx.push_back(std::log(eps));
        ly.push_back(std::log(max_on(m.field, f, m.valid)));
    }
    CHECK(fit_line(lx, ly).slope == doctest::Approx(2.0).epsilon(0.03));
}

TEST_CASE("metric defect scan on a smooth sphere chart") {
    auto fx = sphere_band(1.0 / 128, 0.5, 1.0, 1.5);
    std::vector<double> eps = {0.03, 0.05, 0.08, 0.13, 0.2};
    auto scan = metric_defect_scan(fx.y, {}, 0, eps);
    CHECK(scan.fit.slope >= 1.85);
    for (char d : scan.dropped) CHECK(d == 0);
    CHECK_THROWS_AS(metric_defect_scan(fx.y, {}, 2, eps), Error);
}

TEST_CASE("corrugated curve is unit speed with the quadratic scaling law") {
    CorrugationSpec cs;
    cs.alpha = 0.8;
    cs.k_max = 11;
    cs.nodes = 16385;
    auto y = corrugated_curve(cs);
    const double h = y.grid->spacing();
    double worst = 0.0;
    for (int i = 1; i + 1 < cs.nodes; ++i) {
        double dx = (y.values[(i + 1) * 2] - y.values[(i - 1) * 2]) / (2 * h);
        double dy = (y.values[(i + 1) * 2 + 1] - y.values[(i - 1) * 2 + 1]) / (2 * h);
        worst = std::max(worst, std::abs(std::hypot(dx, dy) - 1.0));
    }
    CHECK(worst < 1e-3);
    std::vector<double> eps;
    for (int i = 0; i < 7; ++i) eps.push_back(4e-3 * std::pow(7.5, i / 6.0));
    auto s0 = metric_defect_scan(y, {}, 0, eps);
    auto s1 = metric_defect_scan(y, {KernelKind::Cosine}, 0, eps);
    CHECK(std::abs(s0.fit.slope - 1.6) <= 0.15);
    CHECK(std::abs(s0.fit.slope - s1.fit.slope) <= 0.1);
}

TEST_CASE("lacunary immersion") {
    auto fx = sphere_band(1.0 / 128, 0.5, 1.0, 1.5);
    RoughnessSpec spec;
    spec.amplitude = 0.0;
    auto same = lacunary_immersion(fx.y, spec);
    CHECK(same.values == fx.y.values);

    spec.alpha = 0.8;
    spec.amplitude = 1e-3;
    spec.depth = 6;
    auto y6 = lacunary_immersion(fx.y, spec);
    spec.depth = 7;
    auto y7 = lacunary_immersion(fx.y, spec);
    auto dy = [](const MapField& y) {
        MapField d;
        d.grid = y.grid;
        d.target_dim = 3;
        d.values = partial_derivative(*y.grid, y.values, 3, 1);
        return d;
    };
    auto interior = fx.grid->interior_mask();
    double s6 = holder_seminorm_estimate(dy(y6), 0.8, 20000, &interior);
    double s7 = holder_seminorm_estimate(dy(y7), 0.8, 20000, &interior);
    CHECK(std::isfinite(s6));
    CHECK(std::abs(s7 - s6) <= 0.25 * s6);

    spec.amplitude = 50.0;
    spec.alpha = 0.2;
    CHECK_THROWS_WITH_AS(lacunary_immersion(fx.y, spec), "amplitude too large", Error);
}

TEST_CASE("holder seminorm estimate") {
    auto grid = make_grid({201}, 0.01, {-1.0});
    auto cst = MapField::from_function(grid, 1, [](const double*, double* o) { o[0] = 2.0; });
    CHECK(holder_seminorm_estimate(cst, 0.5) == 0.0);
    auto lin = MapField::from_function(grid, 1, [](const double* x, double* o) { o[0] = -3.0 * x[0]; });
    CHECK(holder_seminorm_estimate(lin, 1.0) == doctest::Approx(3.0).epsilon(1e-9));
    auto cusp = MapField::from_function(grid, 1, [](const double* x, double* o) { o[0] = std::pow(std::abs(x[0]), 0.6); });
    CHECK(holder_seminorm_estimate(cusp, 0.6) >= 0.95);
    auto g2 = make_grid({41, 41}, 0.05, {0, 0});
    auto lin2 = MapField::from_function(g2, 1, [](const double* x, double* o) { o[0] = 3.0 * x[0] + 4.0 * x[1]; });
    double est = holder_seminorm_estimate(lin2, 1.0);
    CHECK(est <= 5.0 + 1e-9);
    CHECK(est >= 4.0);
}

TEST_CASE("C^{1,beta} convergence of mollified metrics") {
    auto fx = sphere_band(1.0 / 128, 0.5, 1.0, 1.5);
    std::vector<double> eps = {0.2, 0.12, 0.07, 0.04};
    auto t = metric_c1beta_convergence(fx.y, {}, 0.5, eps);
    CHECK(t.decreasing);
    CHECK_FALSE(t.out_of_range);
    CHECK(t.rows.size() == 4);
    CHECK(t.rows.back().total < t.rows.front().total);

    RoughnessSpec spec;
    spec.alpha = 0.9;
    spec.amplitude = 2e-3;
    spec.depth = 5;
    auto y = lacunary_immersion(fx.y, spec);
    auto in_range = metric_c1beta_convergence(y, {}, 0.7, eps, 0.9);
    CHECK_FALSE(in_range.out_of_range);
    auto out = metric_c1beta_convergence(y, {}, 0.9, eps, 0.9);
    CHECK(out.out_of_range);
}
