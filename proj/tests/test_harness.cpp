#include <doctest.h>

#include <array>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>

#include <json.hpp>

#include "curvlab/harness.hpp"

using namespace curvlab;
namespace fs = std::filesystem;

namespace {

constexpr double kPi = std::numbers::pi;

Scenario sphere_scenario(double h = 1.0 / 64, int cells = 32) {
    Scenario s;
    s.name = "test";
    s.resolutions = {h};
    s.cells = cells;
    return s;
}

// Extent of a band chart in (theta, phi).
std::array<double, 3> band_extent(const ChartGrid& g) {
    return {g.origin()[0], g.upper()[0], g.upper()[1] - g.origin()[1]};
}

// phi_len int_a^b f(theta) sin(theta) dtheta, composite Simpson
double band_zonal_integral(double a, double b, double phi_len, const std::function<double(double)>& f) {
    const int m = 20000;
    const double h = (b - a) / m;
    double s = 0.0;
    for (int i = 0; i <= m; ++i) {
        const double t = a + i * h;
        const double w = (i == 0 || i == m) ? 1.0 : (i % 2 ? 4.0 : 2.0);
        s += w * f(t) * std::sin(t);
    }
    return phi_len * s * h / 3.0;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::string config_error(const std::string& text) {
    try {
        scenario_from_json(nlohmann::json::parse(text));
    } catch (const ConfigError& e) {
        return e.what();
    }
    return "";
}

fs::path scratch(const std::string& name) {
    auto p = fs::temp_directory_path() / ("curvlab_harness_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

}  // namespace

TEST_CASE("test function values") {
    const double north[3] = {0.0, 0.0, 1.0}, south[3] = {0.0, 0.0, -1.0};
    const double eq[3] = {1.0, 0.0, 0.0};
    auto c = TestFunction::constant(2.5);
    CHECK(c(north) == 2.5);
    CHECK(c.lower() == 2.5);
    CHECK(c.upper() == 2.5);

    auto cap = TestFunction::cap({0.0, 0.0, 2.0}, 0.6, 0.2);
    CHECK(cap(north) == 1.0);
    CHECK(cap(south) == 0.0);
    const double on_rim[3] = {std::sin(0.6), 0.0, std::cos(0.6)};
    CHECK(cap(on_rim) == doctest::Approx(0.5).epsilon(1e-12));
    const double inner[3] = {std::sin(0.5), 0.0, std::cos(0.5)}, outer[3] = {std::sin(0.7), 0.0, std::cos(0.7)};
    CHECK(cap(inner) == doctest::Approx(1.0));
    CHECK(cap(outer) == doctest::Approx(0.0));
    CHECK(cap.lower() == 0.0);
    CHECK(cap.upper() == 1.0);

    // default width resolves to four cell diameters
    SphereCellGrid cells(2, 16);
    auto wide = TestFunction::cap({0.0, 0.0, 1.0}, 0.6).resolved(cells);
    CHECK(wide.width == doctest::Approx(8.0 * cells.max_circumradius()));
    CHECK_THROWS_AS(TestFunction::cap({0.0, 1.0}, 0.6).resolved(cells), Error);
    CHECK_THROWS_AS(TestFunction::cap({0.0, 0.0, 1.0}, 0.2, 0.5), Error);
    CHECK_THROWS_AS(TestFunction::cap({0.0, 0.0, 0.0}, 0.2), Error);

    auto p2 = TestFunction::zonal({0.0, 0.0, 1.0}, 2);
    CHECK(p2(north) == doctest::Approx(1.0));
    CHECK(p2(eq) == doctest::Approx(-0.5));
    const double z[3] = {0.6, 0.0, 0.8};
    CHECK(p2(z) == doctest::Approx(0.5 * (3 * 0.64 - 1)));
    CHECK(TestFunction::zonal({0.0, 0.0, 1.0}, 3)(z) == doctest::Approx(0.5 * (5 * 0.512 - 3 * 0.8)));
    CHECK(TestFunction::zonal({0.0, 0.0, 1.0}, 0)(z) == 1.0);

    auto grid = std::make_shared<SphereCellGrid>(2, 2);
    std::vector<double> vals(grid->size());
    for (std::size_t i = 0; i < vals.size(); ++i) vals[i] = double(i);
    auto tab = TestFunction::from_table(grid, vals);
    CHECK(tab(north) == double(grid->locate(north)));
    CHECK(tab.lower() == 0.0);
    CHECK(tab.upper() == double(vals.size() - 1));
    CHECK_THROWS_AS(TestFunction::from_table(grid, {1.0, 2.0}), Error);
}

TEST_CASE("scenario parsing") {
    auto s = scenario_from_json(nlohmann::json::object());
    CHECK(s.fixture.kind == "sphere");
    CHECK(s.audits.empty());
    CHECK(s.resolutions.size() == 1);

    auto j = nlohmann::json::parse(R"({
        "name": "e", "seed": 9,
        "fixture": {"kind": "ellipsoid", "a": 1, "b": 1, "c": 2, "roughness": {"alpha": 0.9}, "region": {"kind": "disk"}},
        "resolution": {"h": [0.02, 0.01], "cells": 16},
        "mollify": {"eps": [0.1, 0.05, 0.02], "kernel": "cosine"},
        "test_functions": [{"kind": "cap", "axis": [0, 0, 1], "radius": 0.5}, {"kind": "zonal", "degree": 2}],
        "tolerances": {"cov_rel": 0.02},
        "gauss_bonnet": {"deltas": [0.2, 0.1]},
        "audits": ["weak_convergence", "cov_indicator"]
    })");
    auto e = scenario_from_json(j);
    CHECK(e.name == "e");
    CHECK(e.fixture.kind == "ellipsoid");
    CHECK(e.fixture.rough);
    CHECK(e.fixture.roughness.alpha == 0.9);
    CHECK(e.fixture.roughness.seed == 9);
    CHECK(e.fixture.region.kind == "disk");
    CHECK(e.resolutions == std::vector<double>{0.02, 0.01});
    CHECK(e.finest() == 0.01);
    CHECK(e.coarsest() == 0.02);
    CHECK(e.kernel.kind == KernelKind::Cosine);
    CHECK(e.test_functions.size() == 2);
    CHECK(e.test_functions[1].kind == TestFunctionKind::Zonal);
    CHECK(e.tol.cov_rel == 0.02);
    CHECK(e.tol.cov_abs == Tolerances{}.cov_abs);
    CHECK(e.deltas.size() == 2);

    CHECK(scenario_from_json(nlohmann::json::parse(R"({"resolution": {"h": 0.01}})")).resolutions ==
          std::vector<double>{0.01});
}

TEST_CASE("scenario errors name the field") {
    CHECK(config_error(R"({"fixture": {"kind": "torus"}})") ==
          "config error at fixture.kind: expected one of sphere, ellipsoid, graph, cylinder, plane, got \"torus\"");
    CHECK(config_error(R"({"fixtures": {}})").find("config error at fixtures: unknown field") == 0);
    CHECK(config_error(R"({"resolution": {"h": [0.01, 0.02]}})") == "config error at resolution.h: spacings must decrease");
    CHECK(config_error(R"({"resolution": {"h": [0.01, "x"]}})") == "config error at resolution.h[1]: expected a number");
    CHECK(config_error(R"({"seed": -1})") == "config error at seed: expected a nonnegative integer");
    CHECK(config_error(R"({"test_functions": [{"kind": "cap", "axis": [0, 1]}]})") ==
          "config error at test_functions[0].axis: expected 3 components");
    CHECK(config_error(R"({"test_functions": [{"kind": "table", "k": 1, "values": [1]}]})") ==
          "config error at test_functions[0].values: expected 6 values (6 k^2)");
    CHECK(config_error(R"({"audits": ["gauss_bonnet", "gauss_bonnet"]})") ==
          "config error at audits[1]: duplicate audit \"gauss_bonnet\"");
    CHECK(config_error(R"({"audits": ["weak_convergence"]})") ==
          "config error at mollify.eps: weak_convergence needs at least three scales");
    CHECK(config_error(R"([1, 2])") == "config error at top level: expected an object");
    CHECK(config_error(R"({"tolerances": {"boxdim_fraction": 1.5}})") ==
          "config error at tolerances.boxdim_fraction: must lie in [0, 1]");

    auto dir = scratch("parse");
    {
        std::ofstream out(dir / "bad.json");
        out << "{\n  \"name\": \"x\",\n  \"seed\": ,\n}\n";
    }
    try {
        load_scenario((dir / "bad.json").string());
        FAIL("expected a parse error");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("config parse error at line 3, column 11") == 0);
    }
    std::string msg;
    CHECK(run_file((dir / "bad.json").string(), (dir / "out").string(), &msg) == 2);
    CHECK(msg.find("line 3") != std::string::npos);
    CHECK_FALSE(fs::exists(dir / "out"));
    CHECK(run_file((dir / "missing.json").string(), "", &msg) == 2);
}

TEST_CASE("schema lists every accepted field") {
    auto schema = scenario_schema();
    CHECK(schema["$schema"] == "https://json-schema.org/draft/2020-12/schema");
    // every schema property parses on its own
    for (auto it = schema["properties"].begin(); it != schema["properties"].end(); ++it)
        CHECK(config_error("{\"" + it.key() + "\": null}").find("unknown field") == std::string::npos);
    for (auto it = schema["properties"]["fixture"]["properties"].begin();
         it != schema["properties"]["fixture"]["properties"].end(); ++it)
        CHECK(config_error("{\"fixture\": {\"" + it.key() + "\": null}}").find("unknown field") == std::string::npos);
    CHECK(schema["properties"]["audits"]["items"]["enum"].size() == audit_names().size());
}

TEST_CASE("change of variables with the indicator") {
    auto s = sphere_scenario();
    s.resolutions = {1.0 / 32, 1.0 / 64};
    auto r = cov_check_indicator(s);
    CHECK(r.status == "pass");
    // the chart covers the theta range centered in [0.3, pi - 0.3] on whole cells
    const auto [lo, hi, len] = band_extent(*build_fixture(s.fixture, s.finest()).chart.grid);
    CHECK(lo <= 0.3);
    CHECK(lo > 0.3 - 1.0 / 64);
    CHECK(hi == doctest::Approx(kPi - lo));
    CHECK(len <= 2.0 * kPi);
    CHECK(len > 2.0 * kPi - 1.0 / 64);
    const double band = len * (std::cos(lo) - std::cos(hi));
    CHECK(r.metrics["closed_form"].get<double>() == doctest::Approx(band).epsilon(1e-12));
    CHECK(std::abs(r.metrics["lhs"].get<double>() - band) <= 1e-3);
    CHECK(std::abs(r.metrics["rhs"].get<double>() - band) <= 0.05);
    CHECK(r.metrics.contains("observed_order"));
    CHECK(r.csv_rows.size() == 2);

    auto flat = sphere_scenario();
    flat.fixture.kind = "plane";
    auto rf = cov_check_indicator(flat);
    CHECK(rf.status == "pass");
    CHECK(rf.metrics["lhs"].get<double>() == 0.0);
    CHECK(rf.metrics["rhs"].get<double>() == 0.0);

    // zero tolerance has to fail
    s.tol.cov_abs = 0.0;
    s.tol.cov_rel = 0.0;
    CHECK(cov_check_indicator(s).status == "fail");
}

TEST_CASE("change of variables with test functions") {
    auto s = sphere_scenario(1.0 / 128, 48);
    FixtureCache cache;
    const auto [lo, hi, len] = band_extent(*cache.get(s.fixture, s.finest()).chart.grid);
    const double c = std::cos(lo);

    auto one = cov_check_testfunction(s, TestFunction::constant(1.0), &cache);
    auto ind = cov_check_indicator(s, &cache);
    CHECK(one.metrics["lhs"].get<double>() == doctest::Approx(ind.metrics["lhs"].get<double>()).epsilon(1e-12));
    CHECK(one.metrics["rhs"].get<double>() == doctest::Approx(ind.metrics["rhs"].get<double>()).epsilon(1e-12));

    SphereCellGrid cells(2, s.cells);
    auto cap = TestFunction::cap({0.0, 0.0, 1.0}, 0.6).resolved(cells);
    const double w = cap.width;
    auto profile = [&](double t) {
        if (t <= 0.6 - w / 2) return 1.0;
        if (t >= 0.6 + w / 2) return 0.0;
        const double u = (0.6 + w / 2 - t) / w;
        return u * u * (3 - 2 * u);
    };
    const double cap_oracle = band_zonal_integral(lo, hi, len, profile);
    auto rc = cov_check_testfunction(s, cap, &cache);
    CHECK(rc.status == "pass");
    CHECK(std::abs(rc.metrics["lhs"].get<double>() - cap_oracle) <= 0.01 * cap_oracle);
    CHECK(std::abs(rc.metrics["rhs"].get<double>() - cap_oracle) <= 0.01 * cap_oracle);
    CHECK(rc.metrics["layer_cake_gap_lhs"].get<double>() <= 2 * s.tol.cov_rel);
    CHECK(rc.metrics["layer_cake_gap_rhs"].get<double>() <= 2 * s.tol.cov_rel);
    CHECK(rc.metrics.contains("width_sensitivity"));
    CHECK(rc.csv_rows.size() == 64);

    // P1 integrates to zero over the symmetric band, P2 to len (c^3 - c)
    auto r1 = cov_check_testfunction(s, TestFunction::zonal({0.0, 0.0, 1.0}, 1), &cache);
    CHECK(r1.status == "pass");
    CHECK(std::abs(r1.metrics["lhs"].get<double>()) <= 1e-9);
    auto r2 = cov_check_testfunction(s, TestFunction::zonal({0.0, 0.0, 1.0}, 2), &cache);
    CHECK(r2.status == "pass");
    const double p2 = len * (c * c * c - c);
    CHECK(std::abs(r2.metrics["lhs"].get<double>() - p2) <= 2e-3);
    CHECK(std::abs(r2.metrics["rhs"].get<double>() - p2) <= 0.01 * std::abs(p2) + 2e-3);
    CHECK(r2.metrics["relative_difference"].get<double>() <= 0.01);

    // on the (1,1,2) ellipsoid the normal colatitude is atan(2 tan theta)
    auto e = s;
    e.fixture.kind = "ellipsoid";
    const auto ext = band_extent(*cache.get(e.fixture, e.finest()).chart.grid);
    const double elo = std::atan(2.0 * std::tan(ext[0]));
    const double e_oracle = band_zonal_integral(elo, kPi - elo, ext[2], profile);
    auto re = cov_check_testfunction(e, cap, &cache);
    CHECK(re.status == "pass");
    CHECK(std::abs(re.metrics["lhs"].get<double>() - e_oracle) <= 0.01 * e_oracle);
    CHECK(std::abs(re.metrics["rhs"].get<double>() - e_oracle) <= 0.01 * e_oracle);
}

TEST_CASE("sublevel box dimension audit") {
    auto s = sphere_scenario(1.0 / 128, 16);
    s.levels = 20;
    auto r = sublevel_boxdim_audit(s, TestFunction::zonal({0.0, 1.0, 0.0}, 1));
    CHECK(r.status == "pass");
    CHECK(r.metrics["bound"].get<double>() == doctest::Approx(1.1));
    CHECK(std::abs(r.metrics["mean_dimension"].get<double>() - 1.0) <= 0.1);
    CHECK(r.csv_rows.size() == 20);

    auto rc = sublevel_boxdim_audit(s, TestFunction::constant(1.0));
    CHECK(rc.status == "inconclusive");
    CHECK(rc.metrics["degenerate"].get<bool>());
}

TEST_CASE("Gauss-Bonnet over polar-cap covers") {
    auto s = sphere_scenario();
    s.deltas = {0.1};
    auto r = gauss_bonnet_closed(s);
    const double v = r.metrics["integrals"][0].get<double>();
    CHECK(std::abs(v - 4.0 * kPi * std::cos(0.1)) <= 0.005 * 4.0 * kPi * std::cos(0.1));

    auto e = sphere_scenario();
    e.fixture.kind = "ellipsoid";
    auto re = gauss_bonnet_closed(e);
    CHECK(re.status == "pass");
    CHECK(re.metrics["relative_error"].get<double>() <= 0.01);
    CHECK(re.csv_rows.size() == e.deltas.size());
    // the integrals grow toward 4 pi as the caps shrink
    for (std::size_t i = 1; i < re.csv_rows.size(); ++i) CHECK(re.csv_rows[i][1] > re.csv_rows[i - 1][1]);

    auto flat = sphere_scenario();
    flat.fixture.kind = "cylinder";
    auto rf = gauss_bonnet_closed(flat);
    CHECK(rf.status == "pass");
    CHECK(std::abs(rf.metrics["integral"].get<double>()) <= 1e-9);
}

TEST_CASE("degree positivity") {
    auto s = sphere_scenario();
    auto r = degree_positivity_audit(s);
    CHECK(r.status == "pass");
    CHECK(r.metrics["applicable"].get<bool>());
    CHECK(r.metrics["violations"].get<std::size_t>() == 0);
    CHECK(r.metrics["checked_targets"].get<std::size_t>() > 0);
    CHECK(r.metrics["bump_integral_min"].get<double>() > 0.0);
    // the sphere Gauss map is injective, so every checked degree is exactly 1
    for (const auto& row : r.csv_rows) CHECK(row[4] == 1.0);

    auto e = s;
    e.fixture.kind = "ellipsoid";
    CHECK(degree_positivity_audit(e).status == "pass");

    auto cyl = s;
    cyl.fixture.kind = "cylinder";
    auto rc = degree_positivity_audit(cyl);
    CHECK_FALSE(rc.metrics["applicable"].get<bool>());
    CHECK(rc.metrics["control"].get<bool>());
    CHECK(rc.metrics["nonzero_degrees"].get<std::size_t>() == 0);
    CHECK(rc.metrics["regular_targets"].get<std::size_t>() > 0);
}

TEST_CASE("extrinsic curvature bound") {
    auto s = sphere_scenario();
    auto r = extrinsic_bound_audit(s);
    CHECK(r.status == "pass");
    const auto& fam = r.metrics["families"];
    CHECK(fam["empty"]["sum"].get<double>() == 0.0);
    // two geodesic caps of radius 0.4 in the Gauss image; the image measure
    // counts touched cells, so it exceeds the area by at most the boundary layer
    const double cap_area = 2.0 * kPi * (1.0 - std::cos(0.4));
    const double layer = fam["caps"]["slack"].get<double>() / 2;
    for (const auto& part : fam["caps"]["parts"]) {
        CHECK(part.get<double>() >= cap_area - 0.02);
        CHECK(part.get<double>() <= cap_area + layer);
    }
    CHECK(fam["tiles"]["parts"].size() == 4);
    CHECK(fam["tiles"]["sum"].get<double>() <= r.metrics["pfaffian_integral"].get<double>() +
                                                    fam["tiles"]["slack"].get<double>());

    auto cyl = s;
    cyl.fixture.kind = "cylinder";
    CHECK(extrinsic_bound_audit(cyl).status == "inconclusive");
}

TEST_CASE("weak convergence audit") {
    auto s = sphere_scenario(1.0 / 64, 16);
    s.fixture.rough = true;
    s.fixture.roughness.alpha = 0.9;
    s.fixture.roughness.amplitude = 0.01;
    s.fixture.roughness.depth = 5;
    s.mollify_eps = {0.16, 0.08, 0.04};
    auto r = weak_convergence_audit(s, TestFunction::constant(1.0));
    CHECK(r.csv_rows.size() == 3);
    CHECK(r.metrics["differences"].size() == 3);
    CHECK((r.status == "pass") == r.metrics["monotone"].get<bool>());
    s.mollify_eps = {0.1, 0.05};
    CHECK_THROWS_AS(weak_convergence_audit(s, TestFunction::constant(1.0)), Error);
}

TEST_CASE("runs are deterministic and report every audit") {
    auto empty = scratch("empty");
    auto s = sphere_scenario(1.0 / 32, 16);
    auto r0 = run(s, empty.string());
    CHECK(r0.exit_code == 0);
    CHECK(r0.reports.empty());
    CHECK(r0.result["audits"].empty());
    CHECK(r0.result["status"] == "pass");
    CHECK(std::distance(fs::directory_iterator(empty), fs::directory_iterator()) == 1);

    s.test_functions = {TestFunction::constant(1.0), TestFunction::zonal({0.0, 0.0, 1.0}, 2)};
    s.audits = {"extrinsic_bound", "cov_testfunction", "cov_indicator"};
    s.deltas = {0.3, 0.2};
    std::string text[2];
    for (int i = 0; i < 2; ++i) {
        set_thread_count(i == 0 ? 1 : 4);
        auto dir = scratch("det" + std::to_string(i));
        auto res = run(s, dir.string());
        CHECK(res.exit_code == 0);
        std::vector<std::string> names;
        for (const auto& rep : res.reports) names.push_back(rep.name);
        CHECK(names == std::vector<std::string>{"cov_indicator", "cov_testfunction_0", "cov_testfunction_1",
                                                "extrinsic_bound"});
        for (const auto& n : names) text[i] += slurp(dir / (n + ".json")) + slurp(dir / (n + ".csv"));
        text[i] += slurp(dir / "result.json");
    }
    set_thread_count(1);
    CHECK(text[0] == text[1]);

    auto fail = s;
    fail.tol.cov_abs = 0.0;
    fail.tol.cov_rel = 0.0;
    fail.audits = {"cov_indicator"};
    auto dir = scratch("fail");
    auto rf = run(fail, dir.string());
    CHECK(rf.exit_code == 1);
    auto j = nlohmann::json::parse(slurp(dir / "result.json"));
    CHECK(j["status"] == "fail");
    CHECK(j["audits"]["cov_indicator"]["status"] == "fail");

    // config file entry point
    auto cfg = scratch("cfg");
    {
        std::ofstream out(cfg / "s.json");
        out << R"({"name": "plane", "fixture": {"kind": "plane"}, "resolution": {"h": 0.05, "cells": 8},
                   "audits": ["cov_indicator", "gauss_bonnet"]})";
    }
    std::string msg;
    CHECK(run_file((cfg / "s.json").string(), (cfg / "out").string(), &msg) == 0);
    CHECK(msg == "pass");
    CHECK(fs::exists(cfg / "out" / "gauss_bonnet.csv"));
}
