#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "curvlab/degree.hpp"
#include "curvlab/fixtures.hpp"
#include "curvlab/mollify.hpp"

namespace curvlab {

enum class TestFunctionKind { Constant, Cap, Zonal, Table };

// Bounded test function on S^n, evaluated at unit vectors of R^{n+1}.
struct TestFunction {
    TestFunctionKind kind = TestFunctionKind::Constant;
    double value = 1.0;           // constant
    std::vector<double> axis;     // cap center or zonal axis, unit
    double radius = 0.5;          // cap angular radius
    double width = 0.0;           // cap transition width in radians; <= 0 picks 4 sphere-cell diameters
    int degree = 1;               // zonal Legendre degree
    std::shared_ptr<const SphereCellGrid> table_cells;
    std::vector<double> table;    // one value per cell of table_cells

    double operator()(const double* z) const;
    double lower() const;  // bounds of the range, used by the layer-cake quadrature
    double upper() const;
    std::string describe() const;
    // Resolves a default cap width against the target cell grid.
    TestFunction resolved(const SphereCellGrid& cells) const;

    static TestFunction constant(double v);
    // 1 inside angle radius - width/2, 0 beyond radius + width/2, smoothstep between.
    static TestFunction cap(std::vector<double> axis, double radius, double width = 0.0);
    // P_l(<axis, z>)
    static TestFunction zonal(std::vector<double> axis, int degree);
    static TestFunction from_table(std::shared_ptr<const SphereCellGrid> cells, std::vector<double> values);
};

struct RegionSpec {
    std::string kind = "full";  // full | disk | koch
    int generation = 4;         // koch
    double scale = 0.45;        // disk radius / snowflake circumradius over the shorter chart side
};

struct FixtureSpec {
    std::string kind = "sphere";  // sphere | ellipsoid | graph | cylinder | plane
    double theta_lo = 0.3;        // band charts
    double phi_max = 6.283185307179586;
    double radius = 1.0;          // sphere
    double a = 1.0, b = 1.0, c = 2.0;  // ellipsoid
    double curvature = 1.0;       // graph: z = curvature (x1^2 + x2^2) / 2
    double half_width = 0.5;      // graph
    double len1 = 1.0, len2 = 1.0;  // cylinder and plane
    bool rough = false;
    RoughnessSpec roughness;      // lacunary normal perturbation when rough
    RegionSpec region;

    bool band() const { return kind == "sphere" || kind == "ellipsoid"; }
};

// Sampled immersion plus everything the audits share.
struct FixtureData {
    ChartFixture chart;
    NodeMask region;
    FormField pf;
    MapField nu;
    double alpha = 1.0;  // Hoelder exponent of nu
};

FixtureData build_fixture(const FixtureSpec& spec, double h);

struct Tolerances {
    double cov_abs = 0.05;
    double cov_rel = 0.01;
    double layer_cake = 0.02;      // route agreement, relative
    double gap_ceiling = 0.05;     // excluded target area beyond which a run is inconclusive
    double gauss_bonnet_rel = 0.01;
    double boxdim_fraction = 0.9;
};

struct Scenario {
    std::string name = "scenario";
    std::uint64_t seed = 1;
    FixtureSpec fixture;
    std::vector<double> resolutions = {1.0 / 128};  // chart spacings, coarse to fine
    int cells = 64;                                 // sphere cells per face axis
    std::vector<double> mollify_eps;
    MollifierKernel kernel;
    std::vector<TestFunction> test_functions;
    Tolerances tol;
    std::vector<double> deltas = {0.4, 0.3, 0.2, 0.1};  // polar exclusions for closed covers
    int levels = 50;
    std::vector<std::string> audits;
    std::string output = "out";

    double finest() const { return resolutions.back(); }
    double coarsest() const { return resolutions.front(); }
};

class ConfigError : public Error {
public:
    using Error::Error;
};

// Validates against the scenario schema; errors name the offending field.
Scenario scenario_from_json(const nlohmann::json& j);
Scenario load_scenario(const std::string& path);
nlohmann::ordered_json scenario_schema();
const std::vector<std::string>& audit_names();

struct AuditReport {
    std::string name;
    std::string status = "pass";  // pass | fail | inconclusive
    nlohmann::ordered_json metrics = nlohmann::ordered_json::object();
    std::vector<std::string> csv_header;
    std::vector<std::vector<double>> csv_rows;

    bool failed() const { return status == "fail"; }
};

// Shares fixture builds across audits of one run.
class FixtureCache {
public:
    const FixtureData& get(const FixtureSpec& spec, double h);

private:
    std::map<std::string, std::unique_ptr<FixtureData>> store_;
};

AuditReport cov_check_indicator(const Scenario& s, FixtureCache* cache = nullptr);
// Direct routes on both sides plus the layer-cake reconstruction over
// A_r = {phi o nu > r} and {phi > r} with 64 Gauss-Legendre levels.
AuditReport cov_check_testfunction(const Scenario& s, const TestFunction& phi, FixtureCache* cache = nullptr);
AuditReport sublevel_boxdim_audit(const Scenario& s, const TestFunction& phi, FixtureCache* cache = nullptr);
AuditReport gauss_bonnet_closed(const Scenario& s);
AuditReport degree_positivity_audit(const Scenario& s, FixtureCache* cache = nullptr);
AuditReport extrinsic_bound_audit(const Scenario& s, FixtureCache* cache = nullptr);
AuditReport weak_convergence_audit(const Scenario& s, const TestFunction& phi);

struct RunResult {
    int exit_code = 0;  // 0 all pass or inconclusive, 1 any failure
    std::vector<AuditReport> reports;
    nlohmann::ordered_json result;
};

// Runs the selected audits in dependency order and writes one CSV and JSON
// per audit plus result.json under out_dir.
RunResult run(const Scenario& s, const std::string& out_dir);
// Config file entry point: 2 on schema or parse errors.
int run_file(const std::string& path, const std::string& out_override = "", std::string* message = nullptr);

void write_report(const AuditReport& r, const std::string& dir);

}  // namespace curvlab
