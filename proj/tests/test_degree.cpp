#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

#include "curvlab/degree.hpp"
#include "curvlab/fixtures.hpp"

using namespace curvlab;

namespace {

MapField sphere_gauss(const ChartFixture& fx) { return gauss_map(fx.y); }

// Actual colatitude edge of a band chart.
double band_theta_lo(const ChartFixture& fx) { return fx.grid->origin()[0]; }

std::vector<double> unit(std::vector<double> v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    for (double& x : v) x /= std::sqrt(s);
    return v;
}

}  // namespace

TEST_CASE("sphere cells partition the sphere") {
    for (int k : {4, 16, 64}) {
        SphereCellGrid cells(2, k);
        CHECK(cells.size() == std::size_t(6 * k * k));
        CHECK(std::abs(cells.total_area() - 4.0 * std::numbers::pi) <= 1e-9);
    }
    SphereCellGrid c3(3, 6);
    CHECK(std::abs(c3.total_area() - 2.0 * std::numbers::pi * std::numbers::pi) <= 1e-9);
    SphereCellGrid c1(1, 8);
    CHECK(std::abs(c1.total_area() - 2.0 * std::numbers::pi) <= 1e-12);

    SphereCellGrid cells(2, 16);
    for (std::size_t c = 0; c < cells.size(); ++c) CHECK(cells.locate(cells.center(c)) == c);
    std::mt19937_64 rng(5);
    std::normal_distribution<double> nd;
    for (int i = 0; i < 2000; ++i) {
        auto x = unit({nd(rng), nd(rng), nd(rng)});
        auto c = cells.locate(x.data());
        CHECK(angle_between(x.data(), cells.center(c), 3) <= cells.circumradius(c) + 1e-12);
    }
    // ties between faces go to the lowest face index
    auto e = unit({1.0, 1.0, 0.0});
    CHECK(cells.locate(e.data()) / (16 * 16) == 0);
    auto f = unit({0.0, -1.0, -1.0});
    CHECK(cells.locate(f.data()) / (16 * 16) == 3);

    std::vector<double> sc, sa;
    cells.subcells(37, 4, sc, sa);
    CHECK(sa.size() == 16);
    double s = 0.0;
    for (double a : sa) s += a;
    CHECK(s == doctest::Approx(cells.area(37)).epsilon(1e-12));
}

TEST_CASE("point index matches brute force") {
    SphereCellGrid cells(2, 12);
    std::vector<double> pts(cells.size() * 3);
    for (std::size_t c = 0; c < cells.size(); ++c)
        for (int d = 0; d < 3; ++d) pts[c * 3 + d] = cells.center(c)[d];
    PointIndex idx(pts, 3, 0.1);
    std::mt19937_64 rng(9);
    std::normal_distribution<double> nd;
    for (int i = 0; i < 200; ++i) {
        auto q = unit({nd(rng), nd(rng), nd(rng)});
        double r = 0.02 + 0.3 * (i % 7) / 7.0;
        std::vector<std::uint32_t> got;
        idx.query(q.data(), r, [&](std::uint32_t t) { got.push_back(t); });
        std::sort(got.begin(), got.end());
        std::vector<std::uint32_t> want;
        for (std::uint32_t t = 0; t < cells.size(); ++t) {
            double d2 = 0.0;
            for (int d = 0; d < 3; ++d) d2 += (pts[t * 3 + d] - q[d]) * (pts[t * 3 + d] - q[d]);
            if (d2 <= r * r) want.push_back(t);
        }
        CHECK(got == want);
    }
}

TEST_CASE("brouwer degree examples") {
    auto grid = make_grid({17, 17}, 1.0 / 16, {0, 0});
    NodeMask all = grid->full_mask();
    auto p = unit({0.2, 0.3, 0.9});
    auto constant = MapField::from_function(grid, 3, [&](const double*, double* o) {
        for (int c = 0; c < 3; ++c) o[c] = p[c];
    });
    auto z = unit({-0.5, 0.1, 0.4});
    CHECK(brouwer_degree(constant, all, z.data()).degree == 0);
    CHECK(brouwer_degree(constant, all, p.data()).regular == false);

    auto fx = sphere_band(1.0 / 32, 0.3);
    auto nu = sphere_gauss(fx);
    auto inside = unit({0.3, 0.4, 0.2});
    auto r = brouwer_degree(nu, fx.grid->full_mask(), inside.data());
    CHECK(r.degree == 1);
    CHECK(r.hits == 1);
    CHECK(r.regular);
    auto polar = unit({0.01, 0.02, 1.0});
    CHECK(brouwer_degree(nu, fx.grid->full_mask(), polar.data()).degree == 0);

    // azimuth doubled: equatorial targets are covered twice
    auto bg = band_grid(1.0 / 32, 0.3, 2.0 * std::numbers::pi);
    auto wrap = MapField::from_function(bg, 3, [](const double* x, double* o) {
        o[0] = std::sin(x[0]) * std::cos(2.0 * x[1]);
        o[1] = std::sin(x[0]) * std::sin(2.0 * x[1]);
        o[2] = std::cos(x[0]);
    });
    auto eq = unit({std::cos(1.0), std::sin(1.0), 0.0});
    CHECK(brouwer_degree(wrap, bg->full_mask(), eq.data()).degree == 2);

    // target on the image of the boundary circle
    const double t0 = band_theta_lo(fx);
    std::vector<double> edge = {std::sin(t0) * std::cos(1.0), std::sin(t0) * std::sin(1.0), std::cos(t0)};
    CHECK_THROWS_WITH_AS(brouwer_degree(nu, fx.grid->full_mask(), edge.data()), "target not admissible", Error);
}

TEST_CASE("degree field over a sphere band") {
    const double h = 1.0 / 64;
    auto fx = sphere_band(h, 0.3);
    auto nu = sphere_gauss(fx);
    SphereCellGrid cells(2, 32);
    auto rep = degree_field(nu, fx.grid->full_mask(), cells);
    const double t0 = band_theta_lo(fx);
    const double phi_ext = fx.grid->upper()[1];
    const double exact = phi_ext * 2.0 * std::cos(t0);
    CHECK(std::abs(rep.integral - exact) <= 5e-3);
    CHECK(rep.excluded_area < 3e-3);
    CHECK(rep.irregular_simplices == 0);
    for (std::size_t t = 0; t < rep.size(); ++t) {
        CHECK((rep.degrees[t] == 0 || rep.degrees[t] == 1));
        if (rep.regular[t] && rep.hits[t] > 0) CHECK(rep.degrees[t] >= 1);
    }

    // clearance floor policies
    DegreeOptions wide;
    wide.policy = ClearancePolicy::SimplexDiameter;
    CHECK(clearance_floor_for(nu, fx.grid->full_mask(), wide) ==
          doctest::Approx(2.0 * max_image_diameter(nu, fx.grid->full_mask())));
    CHECK(clearance_floor_for(nu, fx.grid->full_mask(), {}) < clearance_floor_for(nu, fx.grid->full_mask(), wide));
}

TEST_CASE("plane immersion has zero degree") {
    auto fx = plane_patch(1.0 / 16, 1.0, 1.0);
    auto nu = gauss_map(fx.y);
    SphereCellGrid cells(2, 8);
    DegreeOptions opt;
    opt.clearance_floor = 0.05;
    auto rep = degree_field(nu, fx.grid->full_mask(), cells, opt);
    std::size_t flagged = 0;
    for (std::size_t t = 0; t < rep.size(); ++t) {
        CHECK(rep.degrees[t] == 0);
        if (!rep.regular[t]) {
            ++flagged;
            CHECK(angle_between(rep.target(t), nu.values.data(), 3) < 0.05 + 1e-12);
        }
    }
    CHECK(flagged > 0);
}

TEST_CASE("additivity and local constancy") {
    auto fx = ellipsoid_band(1.0 / 32, 0.4, 1.0, 1.0, 2.0);
    auto nu = gauss_map(fx.y);
    const auto& g = *fx.grid;
    NodeMask A(g.node_count(), 0), B(g.node_count(), 0);
    std::vector<int> m(2);
    const int cut = g.shape()[1] / 3;
    for (std::size_t k = 0; k < g.node_count(); ++k) {
        g.unravel(k, m.data());
        if (m[1] <= cut) A[k] = 1;
        if (m[1] >= cut) B[k] = 1;
    }
    SphereCellGrid cells(2, 16);
    std::vector<double> tg, ar;
    for (std::size_t c = 0; c < cells.size(); ++c) {
        tg.insert(tg.end(), cells.center(c), cells.center(c) + 3);
        ar.push_back(cells.area(c));
    }
    auto ra = degree_at_targets(nu, A, tg, ar);
    auto rb = degree_at_targets(nu, B, tg, ar);
    auto ru = degree_at_targets(nu, g.full_mask(), tg, ar);
    int checked = 0;
    for (std::size_t t = 0; t < ar.size(); ++t) {
        if (!(ra.regular[t] && rb.regular[t] && ru.regular[t])) continue;
        CHECK(ru.degrees[t] == ra.degrees[t] + rb.degrees[t]);
        ++checked;
    }
    CHECK(checked > 1000);

    // two sub-targets inside a cell far from the boundary image agree
    for (std::size_t c = 0; c < cells.size(); c += 7) {
        std::vector<double> sc, sa;
        cells.subcells(c, 2, sc, sa);
        auto rs = degree_at_targets(nu, g.full_mask(), sc, sa);
        if (rs.clearance[0] <= 2.0 * cells.circumradius(c)) continue;
        for (std::size_t t = 1; t < sa.size(); ++t) CHECK(rs.degrees[t] == rs.degrees[0]);
    }
}

TEST_CASE("spherical image measure") {
    auto grid = make_grid({9, 9}, 0.1, {0, 0});
    auto p = unit({0.3, -0.2, 0.8});
    auto constant = MapField::from_function(grid, 3, [&](const double*, double* o) {
        for (int c = 0; c < 3; ++c) o[c] = p[c];
    });
    SphereCellGrid cells(2, 16);
    NodeMask one(grid->node_count(), 0);
    one[grid->index(std::vector<int>{3, 3}.data())] = 1;
    one[grid->index(std::vector<int>{3, 4}.data())] = 1;
    one[grid->index(std::vector<int>{4, 3}.data())] = 1;
    one[grid->index(std::vector<int>{4, 4}.data())] = 1;
    CHECK(spherical_image_measure(constant, one, cells) == doctest::Approx(cells.area(cells.locate(p.data()))));

    const double h = 1.0 / 64;
    auto fx = sphere_band(h, 0.3);
    auto nu = gauss_map(fx.y);
    const auto& g = *fx.grid;
    std::vector<int> m(2);
    const double t1 = 0.8, t2 = 1.6;
    NodeMask band(g.node_count(), 0);
    double lo = 10, hi = -10;
    for (std::size_t k = 0; k < g.node_count(); ++k) {
        g.unravel(k, m.data());
        double th = g.coord(k, 0);
        if (th >= t1 && th <= t2) {
            band[k] = 1;
            lo = std::min(lo, th);
            hi = std::max(hi, th);
        }
    }
    SphereCellGrid fine(2, 48);
    const double phi_ext = g.upper()[1];
    const double exact = phi_ext * (std::cos(lo) - std::cos(hi));
    const double meas = spherical_image_measure(nu, band, fine);
    CHECK(meas >= exact);
    CHECK(meas <= exact + boundary_layer_area(nu, band, fine) + 1e-12);

    // monotone and subadditive on random subsets
    std::mt19937_64 rng(17);
    auto small = sphere_band(1.0 / 16, 0.3);
    auto snu = gauss_map(small.y);
    SphereCellGrid sc(2, 16);
    for (int trial = 0; trial < 6; ++trial) {
        NodeMask a(small.grid->node_count(), 0), b(small.grid->node_count(), 0);
        std::bernoulli_distribution coin(0.6);
        for (std::size_t k = 0; k < a.size(); ++k) {
            a[k] = coin(rng);
            b[k] = coin(rng);
        }
        NodeMask ab(a.size()), sub(a.size());
        for (std::size_t k = 0; k < a.size(); ++k) {
            ab[k] = a[k] | b[k];
            sub[k] = a[k] & b[k];
        }
        double ma = spherical_image_measure(snu, a, sc), mb = spherical_image_measure(snu, b, sc);
        double mab = spherical_image_measure(snu, ab, sc), ms = spherical_image_measure(snu, sub, sc);
        CHECK(ms <= ma + 1e-12);
        CHECK(ma <= mab + 1e-12);
        CHECK(mab <= ma + mb + 1e-12);
    }

    CHECK(extrinsic_curvature_bound(nu, {}, fine) == 0.0);
    CHECK(extrinsic_curvature_bound(nu, {band}, fine) == doctest::Approx(meas));
    CHECK_THROWS_WITH_AS(extrinsic_curvature_bound(nu, {band, band}, fine), "overlapping parts", Error);
}

TEST_CASE("simplicial pairing") {
    auto fx = sphere_band(1.0 / 128, 0.5, 1.0, 1.5);
    auto nu = sphere_gauss(fx);
    const auto& g = *fx.grid;
    NodeMask all(g.node_count(), 1);
    auto phi = [](const double* z) { return 1.0 + z[0] + 0.5 * z[1] * z[2]; };

    // tensor Gauss-Legendre over the chart rectangle of the unit sphere
    const double t0 = g.origin()[0], t1 = t0 + (g.shape()[0] - 1) * g.spacing();
    const double p0 = g.origin()[1], p1 = p0 + (g.shape()[1] - 1) * g.spacing();
    auto gl = gauss_legendre(60);
    double oracle = 0.0;
    for (std::size_t i = 0; i < gl.nodes.size(); ++i)
        for (std::size_t j = 0; j < gl.nodes.size(); ++j) {
            const double th = t0 + (t1 - t0) * 0.5 * (gl.nodes[i] + 1.0);
            const double ph = p0 + (p1 - p0) * 0.5 * (gl.nodes[j] + 1.0);
            const double z[3] = {std::sin(th) * std::cos(ph), std::sin(th) * std::sin(ph), std::cos(th)};
            oracle += 0.25 * (t1 - t0) * (p1 - p0) * gl.weights[i] * gl.weights[j] * std::sin(th) * phi(z);
        }
    auto sp = simplicial_pairing(nu, all, phi);
    CHECK(sp.skipped_simplices == 0);
    CHECK(std::abs(sp.value - oracle) <= 2e-5);

    auto one = [](const double*) { return 1.0; };
    CHECK(std::abs(simplicial_pairing(nu, all, one).value - (p1 - p0) * (std::cos(t0) - std::cos(t1))) <= 2e-5);

    // target sampling agrees up to its quadrature error
    auto rep = degree_field(nu, all, SphereCellGrid(2, 32));
    CHECK(std::abs(rep.pairing(phi) - sp.value) <= 3e-3);

    // antipodal map on S^2 reverses the degree
    MapField anti = nu;
    for (double& v : anti.values) v = -v;
    auto phi_neg = [&](const double* z) {
        const double w[3] = {-z[0], -z[1], -z[2]};
        return phi(w);
    };
    CHECK(std::abs(simplicial_pairing(anti, all, phi_neg).value + sp.value) <= 1e-12);
}

TEST_CASE("weak convergence of mollified Gauss map degrees") {
    auto fx = sphere_band(1.0 / 128, 0.5, 1.0, 1.5);
    RoughnessSpec spec;
    spec.alpha = 0.9;
    spec.amplitude = 0.01;
    spec.depth = 6;
    auto y = lacunary_immersion(fx.y, spec);
    auto phi = [](const double* z) { return 1.0 + z[0] + 0.5 * z[1] * z[2]; };
    SphereCellGrid cells(2, 32);
    auto t = weak_convergence_experiment(y, {0.02, 0.16, 0.04, 0.08}, phi, cells);
    REQUIRE(t.rows.size() == 4);
    CHECK(t.rows.front().eps == 0.16);
    CHECK(t.monotone);
    CHECK(t.rows.back().difference < 0.25 * t.rows[1].difference);
    CHECK(std::abs(t.rows.back().pairing - t.reference) < t.rows.back().difference);
    CHECK(t.max_route_gap <= 5e-3);

    CHECK_THROWS_AS(weak_convergence_experiment(y, {}, phi, cells), Error);
    CHECK_THROWS_WITH_AS(weak_convergence_experiment(y, {1.2}, phi, cells),
                         "chart too small for the largest mollification scale", Error);
}

TEST_CASE("degree report serialization is deterministic") {
    auto fx = sphere_band(1.0 / 16, 0.3);
    auto nu = gauss_map(fx.y);
    SphereCellGrid cells(2, 8);
    auto dir = std::filesystem::temp_directory_path() / "curvlab_degree_test";
    std::filesystem::create_directories(dir);
    std::string text[2];
    for (int run = 0; run < 2; ++run) {
        set_thread_count(run == 0 ? 1 : 4);
        auto rep = degree_field(nu, fx.grid->full_mask(), cells);
        auto path = (dir / ("d" + std::to_string(run) + ".csv")).string();
        write_degree_csv(rep, path);
        std::ifstream in(path);
        std::stringstream ss;
        ss << in.rdbuf() << degree_summary_json(rep);
        text[run] = ss.str();
    }
    set_thread_count(1);
    CHECK(text[0] == text[1]);
    CHECK(text[0].find("target,cell,subtarget,z0,z1,z2,area,degree,hits,regular,clearance") == 0);
}
