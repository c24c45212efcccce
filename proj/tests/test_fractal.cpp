#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>

#include <json.hpp>

#include "curvlab/fractal.hpp"

using namespace curvlab;

namespace {

// line integral of a 1-form along a closed polygon, Gauss-Legendre per edge
double polygon_line_integral(const std::vector<std::array<double, 2>>& v, const TrigForm& M) {
    auto gl = gauss_legendre(8);
    double s = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) {
        const auto a = v[i], b = v[(i + 1) % v.size()];
        for (std::size_t q = 0; q < gl.nodes.size(); ++q) {
            const double t = 0.5 * (gl.nodes[q] + 1.0), w = 0.5 * gl.weights[q];
            double x[2] = {a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])}, o[2];
            M.evaluate(x, o);
            s += w * (o[0] * (b[0] - a[0]) + o[1] * (b[1] - a[1]));
        }
    }
    return s;
}

ScaleFamily x1_dx2() {
    return ScaleFamily::constant(2, [](const double* x, double* o) { o[0] = 0.0, o[1] = x[0]; }, "x1 dx2");
}

bool has_cube(const WhitneyDecomposition& W, int k, std::array<std::int64_t, kMaxCubeDim> l) {
    return std::binary_search(W.cubes.begin(), W.cubes.end(), DyadicCube{k, l});
}

}  // namespace

TEST_CASE("region distances") {
    auto sq = Region::unit_cube(2);
    double p[2] = {0.3, 0.5};
    CHECK(sq.contains(p));
    CHECK(sq.point_distance(p) == doctest::Approx(0.3));
    double lo[2] = {0.25, 0.25}, hi[2] = {0.5, 0.5};
    auto d = sq.box_distance(lo, hi);
    CHECK(d.lower == doctest::Approx(0.25));
    CHECK(d.lower == d.upper);

    auto disk = Region::ball({0.0, 0.0}, 1.0);
    double q[2] = {0.6, 0.0};
    CHECK(disk.point_distance(q) == doctest::Approx(0.4));
    double blo[2] = {0.0, 0.0}, bhi[2] = {0.3, 0.4};
    CHECK(disk.box_distance(blo, bhi).lower == doctest::Approx(0.5));

    auto ring = Region::annulus({0.0, 0.0}, 0.5, 1.0);
    double c[2] = {0.0, 0.0}, m[2] = {0.7, 0.0};
    CHECK_FALSE(ring.contains(c));
    CHECK(ring.point_distance(m) == doctest::Approx(0.2));

    // square as a polygon matches the analytic box
    auto poly = Region::polygon({{0, 0}, {1, 0}, {1, 1}, {0, 1}});
    CHECK(poly.contains(p));
    CHECK(poly.point_distance(p) == doctest::Approx(0.3));
    CHECK(poly.box_distance(lo, hi).lower == doctest::Approx(0.25));
    double out[2] = {1.5, 0.5};
    CHECK_FALSE(poly.contains(out));
}

TEST_CASE("Koch snowflake vertices") {
    for (int g : {0, 1, 3, 5}) {
        auto v = koch_snowflake_vertices(g);
        CHECK(v.size() == 3 * std::size_t(std::pow(4, g)));
        // A_g = A_0 (1 + 1/3 sum_{j<g} (4/9)^j)
        const double a0 = 0.75 * std::sqrt(3.0);
        double a = a0;
        for (int j = 0; j < g; ++j) a += a0 / 3.0 * std::pow(4.0 / 9.0, j);
        CHECK(std::abs(polygon_area(v)) == doctest::Approx(a).epsilon(1e-12));
    }
    CHECK(std::abs(polygon_area(koch_snowflake_vertices(8))) == doctest::Approx(0.4 * 3.0 * std::sqrt(3.0)).epsilon(1e-3));
    auto pts = polygon_boundary_points(koch_snowflake_vertices(1), 0.01);
    CHECK(pts.size() % 2 == 0);
    CHECK_THROWS_AS(koch_snowflake_vertices(11), Error);
}

TEST_CASE("Whitney decomposition of cubes") {
    auto W1 = whitney_decompose(Region::unit_cube(1), 8);
    CHECK(has_cube(W1, 2, {1}));
    CHECK(has_cube(W1, 2, {2}));
    for (int k = 2; k <= 8; ++k) CHECK(W1.census.at(k) == 2);

    // in the plane the four generation-2 central cubes sit at distance
    // 1/4 < their diameter, so the central block comes from generation 3
    auto W2 = whitney_decompose(Region::unit_cube(2), 9);
    for (std::int64_t i = 2; i <= 5; ++i)
        for (std::int64_t j = 2; j <= 5; ++j) CHECK(has_cube(W2, 3, {i, j}));
    CHECK(W2.census.count(2) == 0);
    auto chk = verify_whitney(Region::unit_cube(2), W2);
    CHECK(chk.ok());
    CHECK(chk.worst_low >= 1.0);
    CHECK(chk.worst_high <= 4.0 + 1.0 / 8.0 * std::sqrt(2.0));

    double prev = 0.0;
    for (int k : {6, 8, 10}) {
        const double v = whitney_decompose(Region::unit_cube(2), k).volume();
        CHECK(v > prev);
        CHECK(v < 1.0);
        prev = v;
    }
    CHECK(prev > 0.97);

    auto W3 = whitney_decompose(Region::unit_cube(3), 4);
    CHECK(verify_whitney(Region::unit_cube(3), W3, 4, 5000).ok());
}

TEST_CASE("Whitney census on smooth boundaries") {
    auto disk = Region::ball({0.0, 0.0}, 1.0);
    auto W = whitney_decompose(disk, 9);
    CHECK(verify_whitney(disk, W, 4).ok());
    const double s = whitney_census_slope(W, 4, 9);
    CHECK(s >= 0.8);
    CHECK(s <= 1.2);

    auto ring = Region::annulus({0.0, 0.0}, 0.4, 1.0);
    auto Wr = whitney_decompose(ring, 9);
    CHECK(verify_whitney(ring, Wr, 4).ok());
    CHECK(whitney_census_slope(Wr, 5, 9) == doctest::Approx(1.0).epsilon(0.1));

    auto Ws = whitney_decompose(Region::unit_cube(2), 9);
    CHECK(whitney_census_slope(Ws, 4, 9) == doctest::Approx(1.0).epsilon(0.1));

    CHECK_THROWS_WITH_AS(whitney_census_slope(W, 8, 9), "census slope needs at least three populated generations",
                         Error);
    CHECK_THROWS_WITH_AS(whitney_decompose(Region::box({0.0, 0.0}, {1.0, 1e-4}), 6), "region thinner than resolution",
                         Error);
}

TEST_CASE("Whitney census on the Koch snowflake") {
    auto U = Region::koch_snowflake(6);
    auto W = whitney_decompose(U, 9);
    const double s = whitney_census_slope(W, 5, 9);
    CHECK(std::abs(s - std::log(4.0) / std::log(3.0)) <= 0.08);
    auto chk = verify_whitney(U, W, 4, 10000);
    CHECK(chk.ok());
}

TEST_CASE("Whitney decomposition of a sampled region") {
    // cubes stay several sample cells wide down to k_max
    auto grid = make_grid({801, 801}, 0.0025, {-1.0, -1.0});
    auto sdf = MapField::from_function(grid, 1, [](const double* x, double* o) { o[0] = 0.8 - std::hypot(x[0], x[1]); });
    auto U = Region::sampled(sdf, "sampled-disk");
    auto W = whitney_decompose(U, 7);
    CHECK(W.cubes.size() > 0);
    CHECK(verify_whitney(U, W, 4).ok());
    CHECK(verify_whitney(Region::ball({0.0, 0.0}, 0.8), W, 4).property_ok == W.cubes.size());
    CHECK(dyadic_overlaps(W.cubes, 2) == 0);
}

TEST_CASE("dyadic overlap detection") {
    std::vector<DyadicCube> cubes = {{2, {1, 1}}, {3, {2, 2}}, {3, {4, 4}}, {2, {1, 1}}, {4, {15, 15}}};
    // (3,{2,2}) sits inside (2,{1,1}), which is also repeated
    CHECK(dyadic_overlaps(cubes, 2) == 2);
    std::vector<DyadicCube> clean = {{1, {0, 0}}, {2, {2, 0}}, {2, {3, 1}}, {3, {-1, 0}}};
    CHECK(dyadic_overlaps(clean, 2) == 0);
}

TEST_CASE("box dimension") {
    std::vector<double> seg;
    for (int i = 0; i <= 200000; ++i) {
        const double t = i / 200000.0;
        seg.push_back(0.1 + 0.7 * t);
        seg.push_back(0.2 + 0.5 * t);
    }
    auto bs = box_dimension(seg, 2, 1e-3, 0.2);
    CHECK(std::abs(bs.dimension - 1.0) <= 0.05);
    CHECK_FALSE(bs.unstable);

    auto koch = polygon_boundary_points(koch_snowflake_vertices(7), 2e-4);
    auto bk = box_dimension(koch, 2, 2e-3, 0.3);
    CHECK(std::abs(bk.dimension - std::log(4.0) / std::log(3.0)) <= 0.05);

    auto grid = make_grid({200001}, 1.0 / 200000, {0.0});
    RoughnessSpec spec;
    spec.alpha = 0.5;
    spec.depth = 14;
    spec.amplitude = 1.0;
    auto f = lacunary_field(grid, spec);
    std::vector<double> graph;
    for (std::size_t i = 0; i < f.values.size(); ++i) {
        graph.push_back(grid->coord(i, 0));
        graph.push_back(f.values[i]);
    }
    auto bg = box_dimension(graph, 2, 1e-3, 0.2);
    CHECK(bg.dimension <= 1.55);
    CHECK(bg.dimension > 1.2);

    CHECK_THROWS_WITH_AS(box_dimension(seg, 2, 1e-2, 0.2), "eps range must span two decades", Error);
}

TEST_CASE("level set dimensions") {
    auto grid = make_grid({513, 513}, 1.0 / 512, {0.0, 0.0});
    auto lin = MapField::from_function(grid, 1, [](const double* x, double* o) { o[0] = 0.6 * x[0] + 0.8 * x[1]; });
    auto r = level_set_boxdim(lin, {0.3, 0.7, 1.0}, 1.0);
    for (double d : r.dims) CHECK(std::abs(d - 1.0) <= 0.05);
    CHECK(r.fraction_within == 1.0);
    CHECK_FALSE(r.degenerate);

    auto cst = MapField::from_function(grid, 1, [](const double*, double* o) { o[0] = 2.0; });
    auto rc = level_set_boxdim(cst, sample_levels(cst, 5, 3), 1.0);
    CHECK(rc.degenerate);
    for (char e : rc.empty) CHECK(e);

    auto fine = make_grid({1025, 1025}, 1.0 / 1024, {0.0, 0.0});
    RoughnessSpec spec;
    spec.alpha = 0.75;
    spec.depth = 9;
    spec.amplitude = 1.0;
    auto f = lacunary_field(fine, spec);
    auto levels = sample_levels(f, 50, 7);
    CHECK(levels == sample_levels(f, 50, 7));
    auto rl = level_set_boxdim(f, levels, 0.75);
    CHECK(rl.bound == doctest::Approx(1.35));
    CHECK(rl.fraction_within >= 0.9);
}

TEST_CASE("fractal integral of constant families") {
    auto M = x1_dx2();
    auto Wsq = whitney_decompose(Region::unit_cube(2), 9);
    auto rs = fractal_integral(M, Wsq);
    CHECK(rs.boundary == 0.0);
    CHECK(std::abs(rs.interior - Wsq.volume()) <= 1e-12);
    CHECK(std::abs(rs.value - 1.0) <= 2e-3);
    CHECK(rs.tail > 0.0);

    auto disk = whitney_decompose(Region::ball({0.0, 0.0}, 1.0), 9);
    auto rd = fractal_integral(M, disk);
    CHECK(std::abs(rd.value - std::numbers::pi) <= 2e-3);
    CHECK(rd.census_slope < 1.5);

    // linearity over constant families
    auto Wl = whitney_decompose(Region::ball({0.1, -0.2}, 0.9), 7);
    auto M1 = ScaleFamily::constant(2, [](const double* x, double* o) { o[0] = std::sin(x[1]), o[1] = x[0] * x[0]; }, "m1");
    auto M2 = ScaleFamily::constant(2, [](const double* x, double* o) { o[0] = x[0] * x[1], o[1] = std::cos(x[0]); }, "m2");
    const double a = 1.7, b = -0.6;
    auto M12 = ScaleFamily::constant(2, [a, b](const double* x, double* o) {
        o[0] = a * std::sin(x[1]) + b * x[0] * x[1];
        o[1] = a * x[0] * x[0] + b * std::cos(x[0]);
    }, "a m1 + b m2");
    const double f1 = fractal_integral(M1, Wl).value, f2 = fractal_integral(M2, Wl).value;
    CHECK(std::abs(fractal_integral(M12, Wl).value - (a * f1 + b * f2)) <= 1e-10);
}

TEST_CASE("fractal integral on the Koch snowflake") {
    TrigForm M;
    M.n = 2;
    M.terms = {{0, 0.7, {1.3, -0.4}, 0.3}, {1, 1.1, {0.5, 2.1}, -0.8}, {1, 0.4, {3.0, 1.0}, 1.1}};
    const auto verts = koch_snowflake_vertices(6);
    const double oracle = polygon_line_integral(verts, M);
    auto W = whitney_decompose(Region::koch_snowflake(6), 9);
    auto r1 = fractal_integral(M.mollified({KernelKind::Polynomial}), W);
    auto r2 = fractal_integral(M.mollified({KernelKind::Cosine}), W);
    CHECK(std::abs(r1.value - r2.value) <= 1e-2);
    CHECK(std::abs(r1.value - oracle) <= 1e-2);
    CHECK(r1.t0_sensitivity <= 1e-3);
    CHECK(r1.boundary != 0.0);

    FractalIntegralOptions strict;
    strict.theta_est = 0.1;
    CHECK_THROWS_WITH_AS(fractal_integral(M.mollified({}), W, strict), "integral not certified", Error);

    auto restricted = ScaleFamily::constant(2, [](const double* x, double* o) { o[0] = 0.0, o[1] = x[0]; }, "x1 dx2");
    restricted.domain_lo = {-0.5, -0.5};
    restricted.domain_hi = {0.5, 0.5};
    CHECK_THROWS_WITH_AS(fractal_integral(restricted, W), "cube outside evaluator grid", Error);
}

TEST_CASE("mollified trig form") {
    TrigForm M;
    M.n = 2;
    M.terms = {{0, 1.0, {0.0, 2.0}, 0.0}, {1, 0.5, {3.0, 0.0}, 0.4}};
    auto fam = M.mollified({});
    auto grid = make_grid({5, 5}, 0.1, {0.0, 0.0});
    auto f0 = fam.evaluate(1e-9, grid);
    auto f1 = fam.evaluate(0.3, grid);
    double x[2] = {grid->coord(7, 0), grid->coord(7, 1)}, o[2];
    M.evaluate(x, o);
    CHECK(f0.at(7, 0) == doctest::Approx(o[0]).epsilon(1e-9));
    CHECK(f1.at(7, 0) == doctest::Approx(o[0] * kernel_fourier_factor({}, 2, 0.6)).epsilon(1e-12));
    CHECK(f1.at(7, 1) == doctest::Approx(o[1] * kernel_fourier_factor({}, 2, 0.9)).epsilon(1e-12));
    // d(sin(2 x2) dx1 + 0.5 sin(3 x1 + 0.4) dx2)
    const double expect = -2.0 * std::cos(2.0 * x[1]) + 1.5 * std::cos(3.0 * x[0] + 0.4);
    CHECK(M.derivative(x) == doctest::Approx(expect).epsilon(1e-14));
}

TEST_CASE("Whitney output is deterministic") {
    auto U = Region::ball({0.0, 0.0}, 1.0);
    auto dir = std::filesystem::temp_directory_path() / "curvlab_fractal_test";
    std::filesystem::create_directories(dir);
    std::string text[2];
    for (int run = 0; run < 2; ++run) {
        set_thread_count(run == 0 ? 1 : 4);
        auto W = whitney_decompose(U, 7);
        auto path = (dir / ("w" + std::to_string(run) + ".csv")).string();
        write_whitney_csv(W, path);
        std::ifstream in(path);
        std::stringstream ss;
        ss << in.rdbuf() << whitney_summary_json(W, 4, 7);
        text[run] = ss.str();
    }
    set_thread_count(1);
    CHECK(text[0] == text[1]);
    CHECK(text[0].find("k,l0,l1\n") == 0);
    auto W = whitney_decompose(U, 7);
    auto j = nlohmann::json::parse(whitney_summary_json(W, 4, 7));
    CHECK(j["cubes"].get<std::size_t>() == W.cubes.size());
    CHECK(j["census_slope"].get<double>() == doctest::Approx(whitney_census_slope(W, 4, 7)));
}
