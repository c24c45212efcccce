#include <doctest.h>

#include <cmath>
#include <functional>
#include <map>
#include <numbers>

#include "curvlab/chern.hpp"
#include "curvlab/fixtures.hpp"

#include "alt_oracle.hpp"

using namespace curvlab;
using namespace curvlab::oracle;

namespace {

FrameBundle sphere_chart_bundle(double h, double phi_max = 1.0) {
    auto fx = sphere_band(h, 0.3, 1.0, phi_max);
    return frame_pipeline(metric_from_immersion(fx.y));
}

}  // namespace

TEST_CASE("transgression coefficients") {
    auto c2 = transgression_coefficients(2);
    REQUIRE(c2.size() == 1);
    CHECK(c2[0] == doctest::Approx(1.0 / (12.0 * std::numbers::pi * std::numbers::pi)).epsilon(1e-15));
    auto c4 = transgression_coefficients(4);
    REQUIRE(c4.size() == 2);
    const double pi4 = std::pow(std::numbers::pi, 4);
    CHECK(c4[0] == doctest::Approx(1.0 / (pi4 * 105.0 * 16.0)).epsilon(1e-15));
    CHECK(c4[1] == doctest::Approx(-1.0 / (pi4 * 15.0 * 32.0)).epsilon(1e-15));
    CHECK_THROWS_AS(transgression_coefficients(3), Error);
}

TEST_CASE("phi_form n = 2 is omega^1_2") {
    auto fb = sphere_chart_bundle(1.0 / 32);
    auto phi = phi_form(fb, 0);
    CHECK(phi.degree == 1);
    REQUIRE(phi.coeffs.size() == fb.omega(0, 1).coeffs.size());
    for (std::size_t k = 0; k < phi.coeffs.size(); ++k) CHECK(phi.coeffs[k] == fb.omega(0, 1).coeffs[k]);
    CHECK_THROWS_AS(phi_form(fb, 1), Error);
    CHECK_THROWS_AS(phi_form(fb, -1), Error);
}

TEST_CASE("flat metric gives vanishing Phi and Pi") {
    auto grid = make_grid({9, 9, 9, 9}, 0.1, {0, 0, 0, 0});
    auto g = MetricField::from_function(grid, [](const double*, double* m) {
        for (int i = 0; i < 16; ++i) m[i] = (i % 5 == 0) ? 1.0 : 0.0;
    });
    auto fb = frame_pipeline(g);
    for (int i = 0; i < 2; ++i) {
        auto phi = phi_form(fb, i);
        CHECK(phi.degree == 3);
        CHECK(max_abs(phi.coeffs) == 0.0);
    }
    auto ts = gbc_primitive(fb, Convention::Paper);
    CHECK(max_abs(ts.pi_form.coeffs) == 0.0);
    CHECK_THROWS_WITH_AS(calibrate_transgression(fb), "degenerate calibration fixture", Error);
    CHECK_THROWS_AS(gbc_primitive(fb, Convention::Calibrated), Error);
}

TEST_CASE("odd dimension is rejected") {
    auto grid = make_grid({7, 7, 7}, 0.1, {0, 0, 0});
    auto g = random_smooth_metric(grid, 3);
    auto fb = frame_pipeline(g);
    CHECK_THROWS_AS(gbc_primitive(fb, Convention::Paper), Error);
    CHECK_THROWS_AS(phi_form(fb, 0), Error);
}

TEST_CASE("phi_form matches brute-force enumeration in four dimensions") {
    auto grid = make_grid({9, 9, 9, 9}, 0.08, {0, 0, 0, 0});
    std::vector<FrameBundle> bundles;
    bundles.push_back(frame_pipeline(random_smooth_metric(grid, 11, 0.3)));
    bundles.push_back(frame_pipeline(metric_from_immersion(sphere4_patch(0.08, 0.32).y)));
    bundles.push_back(frame_pipeline(product_sphere_sphere_metric(0.08, 0.32)));
    for (const auto& fb : bundles) {
        for (int i = 0; i < 2; ++i) {
            auto phi = phi_form(fb, i);
            const std::size_t stride = fb.grid->node_count() / 23 + 1;
            for (std::size_t node = 0; node < fb.grid->node_count(); node += stride) {
                auto ref = phi_oracle(fb, i, node);
                for (std::size_t c = 0; c < ref.size(); ++c) CHECK(std::abs(phi.at(node, c) - ref[c]) <= 1e-12);
            }
        }
    }
}

TEST_CASE("calibrated n = 2 sphere chart") {
    auto fb = sphere_chart_bundle(1.0 / 128);
    auto ts = gbc_primitive(fb, Convention::Calibrated);
    CHECK(ts.scale == doctest::Approx(12.0 * std::numbers::pi * std::numbers::pi).epsilon(1e-10));
    CHECK(ts.scale * ts.coefficients[0] == doctest::Approx(1.0).epsilon(1e-10));
    auto dpi = exterior_derivative(ts.pi_form);
    auto pf = pfaffian(fb);
    const auto& mask = fb.grid->interior_mask();
    double err = 0.0;
    for (std::size_t k = 0; k < mask.size(); ++k)
        if (mask[k]) err = std::max(err, std::abs(dpi.coeffs[k] - pf.coeffs[k]));
    CHECK(err <= 5e-4);
    CHECK(ts.calibration_residual <= 1e-3);
}

TEST_CASE("calibration against the Riemann route refines") {
    double prev = 0.0;
    for (double h : {1.0 / 32, 1.0 / 64, 1.0 / 128}) {
        auto fx = sphere_band(h, 0.3, 1.0, 1.0);
        auto g = metric_from_immersion(fx.y);
        auto fb = frame_pipeline(g);
        auto rb = curvature_from_riemann(g, fb);
        auto cal = calibrate_transgression(fb, pfaffian(rb));
        CHECK(cal.c_star == doctest::Approx(12.0 * std::numbers::pi * std::numbers::pi).epsilon(1e-4));
        if (prev > 0.0) CHECK(prev / cal.relative_residual >= 2.0);
        prev = cal.relative_residual;
    }
    CHECK(prev <= 1e-3);
}

TEST_CASE("four-dimensional coefficient fit recovers a consistent primitive") {
    auto s4 = sphere4_patch(0.05, 0.5);
    auto fb = frame_pipeline(metric_from_immersion(s4.y));
    auto fit = fit_transgression_coefficients(fb, pfaffian(fb));
    REQUIRE(fit.coefficients.size() == 2);
    CHECK(fit.coefficients[0] == doctest::Approx(1.0 / 3.0).epsilon(1e-3));
    CHECK(fit.coefficients[1] == doctest::Approx(0.5).epsilon(1e-3));
    CHECK(fit.relative_residual <= 1e-4);
}

TEST_CASE("Phi_0 is linear in a small metric perturbation") {
    auto grid = make_grid({33, 33}, 1.0 / 32, {0, 0});
    auto phi_at = [&](double lam) {
        auto g = MetricField::from_function(grid, [lam](const double* x, double* m) {
            double p = std::sin(2.0 * x[0] + x[1]);
            m[0] = 1.0 + lam * p;
            m[1] = m[2] = 0.5 * lam * std::cos(x[0] - x[1]);
            m[3] = 1.0 + lam * p * p;
        });
        return phi_form(frame_pipeline(g), 0);
    };
    double prev = 0.0;
    for (double lam : {1e-2, 5e-3}) {
        auto a = phi_at(lam), b = phi_at(2.0 * lam);
        auto defect = axpy(b, -2.0, a);
        double rel = max_abs(defect.coeffs) / max_abs(a.coeffs);
        CHECK(rel < 10.0 * lam);
        if (prev > 0.0) CHECK(prev / rel > 1.8);
        prev = rel;
    }
}
