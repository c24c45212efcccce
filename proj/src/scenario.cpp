#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <set>
#include <sstream>

#include "curvlab/harness.hpp"

namespace curvlab {

namespace {

using json = nlohmann::json;
using ojson = nlohmann::ordered_json;

constexpr double kInf = std::numeric_limits<double>::infinity();

std::string join(const std::vector<std::string>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? ", " : "") + v[i];
    return s;
}

class Field {
public:
    Field(const json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) fail("expected an object");
    }

    [[noreturn]] void fail(const std::string& what, const std::string& key = "") const {
        std::string where = path_;
        if (!key.empty()) where += (where.empty() ? "" : ".") + key;
        throw ConfigError("config error at " + (where.empty() ? std::string("top level") : where) + ": " + what);
    }

    void allow(const std::vector<std::string>& keys) const {
        for (auto it = j_.begin(); it != j_.end(); ++it)
            if (std::find(keys.begin(), keys.end(), it.key()) == keys.end())
                fail("unknown field (allowed: " + join(keys) + ")", it.key());
    }

    bool has(const std::string& key) const { return j_.contains(key); }

    Field child(const std::string& key) const { return Field(j_.at(key), sub(key)); }

    double number(const std::string& key, double def, double lo = -kInf, double hi = kInf, bool open_lo = false) const {
        if (!has(key)) return def;
        const auto& v = j_.at(key);
        if (!v.is_number()) fail("expected a number", key);
        return check_range(v.get<double>(), key, lo, hi, open_lo);
    }

    long long integer(const std::string& key, long long def, long long lo, long long hi) const {
        if (!has(key)) return def;
        const auto& v = j_.at(key);
        if (!v.is_number_integer()) fail("expected an integer", key);
        const long long x = v.get<long long>();
        if (x < lo || x > hi) fail("must lie in [" + std::to_string(lo) + ", " + std::to_string(hi) + "]", key);
        return x;
    }

    std::uint64_t unsigned_integer(const std::string& key, std::uint64_t def) const {
        if (!has(key)) return def;
        const auto& v = j_.at(key);
        if (!v.is_number_unsigned()) fail("expected a nonnegative integer", key);
        return v.get<std::uint64_t>();
    }

    std::string string(const std::string& key, const std::string& def, const std::vector<std::string>& choices = {}) const {
        if (!has(key)) return def;
        const auto& v = j_.at(key);
        if (!v.is_string()) fail("expected a string", key);
        auto s = v.get<std::string>();
        if (!choices.empty() && std::find(choices.begin(), choices.end(), s) == choices.end())
            fail("expected one of " + join(choices) + ", got \"" + s + "\"", key);
        return s;
    }

    bool boolean(const std::string& key, bool def) const {
        if (!has(key)) return def;
        const auto& v = j_.at(key);
        if (!v.is_boolean()) fail("expected true or false", key);
        return v.get<bool>();
    }

    // number or array of numbers
    std::vector<double> numbers(const std::string& key, std::vector<double> def, double lo, double hi, bool open_lo,
                                bool scalar_ok = false) const {
        if (!has(key)) return def;
        const auto& v = j_.at(key);
        std::vector<double> out;
        if (v.is_number() && scalar_ok) {
            out.push_back(check_range(v.get<double>(), key, lo, hi, open_lo));
            return out;
        }
        if (!v.is_array()) fail(scalar_ok ? "expected a number or an array of numbers" : "expected an array of numbers", key);
        for (std::size_t i = 0; i < v.size(); ++i) {
            const std::string k = key + "[" + std::to_string(i) + "]";
            if (!v[i].is_number()) fail("expected a number", k);
            out.push_back(check_range(v[i].get<double>(), k, lo, hi, open_lo));
        }
        return out;
    }

    const json& raw(const std::string& key) const { return j_.at(key); }
    std::string sub(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

private:
    double check_range(double x, const std::string& key, double lo, double hi, bool open_lo) const {
        if (!std::isfinite(x)) fail("must be finite", key);
        const bool low_bad = open_lo ? !(x > lo) : x < lo;
        if (low_bad || x > hi) {
            std::ostringstream os;
            os << "must lie in " << (open_lo ? "(" : "[") << lo << ", " << hi << "]";
            fail(os.str(), key);
        }
        return x;
    }

    const json& j_;
    std::string path_;
};

const std::vector<std::string> kFixtures = {"sphere", "ellipsoid", "graph", "cylinder", "plane"};
const std::vector<std::string> kRegions = {"full", "disk", "koch"};
const std::vector<std::string> kKinds = {"constant", "cap", "zonal", "table"};

TestFunction parse_test_function(const Field& f) {
    const auto kind = f.string("kind", "", kKinds);
    if (kind.empty()) f.fail("missing field", "kind");
    if (kind == "constant") {
        f.allow({"kind", "value"});
        return TestFunction::constant(f.number("value", 1.0));
    }
    if (kind == "cap" || kind == "zonal") {
        auto axis = f.numbers("axis", {0.0, 0.0, 1.0}, -kInf, kInf, false);
        if (axis.size() != 3) f.fail("expected 3 components", "axis");
        double s = 0.0;
        for (double a : axis) s += a * a;
        if (!(s > 0.0)) f.fail("must be nonzero", "axis");
        if (kind == "cap") {
            f.allow({"kind", "axis", "radius", "width"});
            const double radius = f.number("radius", 0.5, 0.0, std::numbers::pi, true);
            const double width = f.number("width", 0.0, 0.0, 2.0 * radius);
            return TestFunction::cap(axis, radius, width);
        }
        f.allow({"kind", "axis", "degree"});
        return TestFunction::zonal(axis, static_cast<int>(f.integer("degree", 1, 0, 32)));
    }
    f.allow({"kind", "k", "values"});
    const int k = static_cast<int>(f.integer("k", 4, 1, 256));
    auto cells = std::make_shared<SphereCellGrid>(2, k);
    auto values = f.numbers("values", {}, -kInf, kInf, false);
    if (values.size() != cells->size())
        f.fail("expected " + std::to_string(cells->size()) + " values (6 k^2)", "values");
    return TestFunction::from_table(cells, values);
}

}  // namespace

Scenario scenario_from_json(const json& j) {
    Field top(j, "");
    top.allow({"name", "seed", "fixture", "resolution", "mollify", "test_functions", "tolerances", "gauss_bonnet",
               "levels", "audits", "output"});
    Scenario s;
    s.name = top.string("name", s.name);
    s.seed = top.unsigned_integer("seed", s.seed);
    s.levels = static_cast<int>(top.integer("levels", s.levels, 1, 10000));
    s.output = top.string("output", s.output);

    if (top.has("fixture")) {
        auto f = top.child("fixture");
        f.allow({"kind", "theta_lo", "phi_max", "radius", "a", "b", "c", "curvature", "half_width", "len1", "len2",
                 "roughness", "region"});
        auto& x = s.fixture;
        x.kind = f.string("kind", x.kind, kFixtures);
        x.theta_lo = f.number("theta_lo", x.theta_lo, 0.0, 0.5 * std::numbers::pi, true);
        x.phi_max = f.number("phi_max", x.phi_max, 0.0, 2.0 * std::numbers::pi, true);
        x.radius = f.number("radius", x.radius, 0.0, kInf, true);
        x.a = f.number("a", x.a, 0.0, kInf, true);
        x.b = f.number("b", x.b, 0.0, kInf, true);
        x.c = f.number("c", x.c, 0.0, kInf, true);
        x.curvature = f.number("curvature", x.curvature);
        x.half_width = f.number("half_width", x.half_width, 0.0, kInf, true);
        x.len1 = f.number("len1", x.len1, 0.0, kInf, true);
        x.len2 = f.number("len2", x.len2, 0.0, kInf, true);
        x.roughness.seed = s.seed;
        if (f.has("roughness")) {
            auto r = f.child("roughness");
            r.allow({"alpha", "lacunarity", "depth", "amplitude", "seed"});
            x.rough = true;
            x.roughness.alpha = r.number("alpha", x.roughness.alpha, 0.0, 1.0, true);
            x.roughness.lacunarity = static_cast<int>(r.integer("lacunarity", x.roughness.lacunarity, 2, 64));
            x.roughness.depth = static_cast<int>(r.integer("depth", x.roughness.depth, 1, 40));
            x.roughness.amplitude = r.number("amplitude", x.roughness.amplitude, 0.0);
            x.roughness.seed = r.unsigned_integer("seed", x.roughness.seed);
        }
        if (f.has("region")) {
            auto r = f.child("region");
            r.allow({"kind", "generation", "scale"});
            x.region.kind = r.string("kind", x.region.kind, kRegions);
            x.region.generation = static_cast<int>(r.integer("generation", x.region.generation, 0, 8));
            x.region.scale = r.number("scale", x.region.scale, 0.0, 0.5, true);
        }
    } else {
        s.fixture.roughness.seed = s.seed;
    }

    if (top.has("resolution")) {
        auto r = top.child("resolution");
        r.allow({"h", "cells"});
        s.resolutions = r.numbers("h", s.resolutions, 0.0, 1.0, true, true);
        if (s.resolutions.empty()) r.fail("needs at least one spacing", "h");
        for (std::size_t i = 1; i < s.resolutions.size(); ++i)
            if (!(s.resolutions[i] < s.resolutions[i - 1])) r.fail("spacings must decrease", "h");
        s.cells = static_cast<int>(r.integer("cells", s.cells, 2, 512));
    }
    if (top.has("mollify")) {
        auto m = top.child("mollify");
        m.allow({"eps", "kernel"});
        s.mollify_eps = m.numbers("eps", {}, 0.0, kInf, true);
        s.kernel = MollifierKernel::from_name(m.string("kernel", "polynomial", {"polynomial", "cosine"}));
    }
    if (top.has("test_functions")) {
        const auto& arr = top.raw("test_functions");
        if (!arr.is_array()) top.fail("expected an array", "test_functions");
        for (std::size_t i = 0; i < arr.size(); ++i)
            s.test_functions.push_back(parse_test_function(Field(arr[i], "test_functions[" + std::to_string(i) + "]")));
    }
    if (top.has("tolerances")) {
        auto t = top.child("tolerances");
        t.allow({"cov_abs", "cov_rel", "layer_cake", "gap_ceiling", "gauss_bonnet_rel", "boxdim_fraction"});
        s.tol.cov_abs = t.number("cov_abs", s.tol.cov_abs, 0.0);
        s.tol.cov_rel = t.number("cov_rel", s.tol.cov_rel, 0.0);
        s.tol.layer_cake = t.number("layer_cake", s.tol.layer_cake, 0.0);
        s.tol.gap_ceiling = t.number("gap_ceiling", s.tol.gap_ceiling, 0.0);
        s.tol.gauss_bonnet_rel = t.number("gauss_bonnet_rel", s.tol.gauss_bonnet_rel, 0.0);
        s.tol.boxdim_fraction = t.number("boxdim_fraction", s.tol.boxdim_fraction, 0.0, 1.0);
    }
    if (top.has("gauss_bonnet")) {
        auto g = top.child("gauss_bonnet");
        g.allow({"deltas"});
        s.deltas = g.numbers("deltas", s.deltas, 0.0, 0.5 * std::numbers::pi, true);
        if (s.deltas.empty()) g.fail("needs at least one value", "deltas");
    }
    if (top.has("audits")) {
        const auto& arr = top.raw("audits");
        if (!arr.is_array()) top.fail("expected an array", "audits");
        std::set<std::string> seen;
        for (std::size_t i = 0; i < arr.size(); ++i) {
            const std::string key = "audits[" + std::to_string(i) + "]";
            if (!arr[i].is_string()) top.fail("expected a string", key);
            auto a = arr[i].get<std::string>();
            const auto& names = audit_names();
            if (std::find(names.begin(), names.end(), a) == names.end())
                top.fail("expected one of " + join(names) + ", got \"" + a + "\"", key);
            if (!seen.insert(a).second) top.fail("duplicate audit \"" + a + "\"", key);
            s.audits.push_back(a);
        }
    }
    for (const auto& a : s.audits)
        if (a == "weak_convergence" && s.mollify_eps.size() < 3)
            top.fail("weak_convergence needs at least three scales", "mollify.eps");
    return s;
}

Scenario load_scenario(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    const std::string text = ss.str();
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        std::size_t line = 1, col = 1;
        for (std::size_t i = 0; i + 1 < e.byte && i < text.size(); ++i) {
            if (text[i] == '\n') ++line, col = 1;
            else ++col;
        }
        throw ConfigError("config parse error at line " + std::to_string(line) + ", column " + std::to_string(col) +
                          ": " + e.what());
    }
    return scenario_from_json(j);
}

ojson scenario_schema() {
    auto num = [](double lo, double hi, bool excl_lo = false) {
        ojson o = {{"type", "number"}};
        if (std::isfinite(lo)) o[excl_lo ? "exclusiveMinimum" : "minimum"] = lo;
        if (std::isfinite(hi)) o["maximum"] = hi;
        return o;
    };
    auto int_ = [](long long lo, long long hi) { return ojson{{"type", "integer"}, {"minimum", lo}, {"maximum", hi}}; };
    auto enum_ = [](const std::vector<std::string>& v) { return ojson{{"type", "string"}, {"enum", v}}; };
    auto obj = [](ojson props) {
        return ojson{{"type", "object"}, {"additionalProperties", false}, {"properties", std::move(props)}};
    };
    const double pi = std::numbers::pi;

    ojson roughness = obj({{"alpha", num(0, 1, true)}, {"lacunarity", int_(2, 64)}, {"depth", int_(1, 40)},
                           {"amplitude", num(0, kInf)}, {"seed", {{"type", "integer"}, {"minimum", 0}}}});
    ojson region = obj({{"kind", enum_(kRegions)}, {"generation", int_(0, 8)}, {"scale", num(0, 0.5, true)}});
    ojson fixture = obj({{"kind", enum_(kFixtures)},
                         {"theta_lo", num(0, pi / 2, true)},
                         {"phi_max", num(0, 2 * pi, true)},
                         {"radius", num(0, kInf, true)},
                         {"a", num(0, kInf, true)},
                         {"b", num(0, kInf, true)},
                         {"c", num(0, kInf, true)},
                         {"curvature", {{"type", "number"}}},
                         {"half_width", num(0, kInf, true)},
                         {"len1", num(0, kInf, true)},
                         {"len2", num(0, kInf, true)},
                         {"roughness", roughness},
                         {"region", region}});
    ojson spacing = num(0, 1, true);
    ojson resolution = obj({{"h", {{"oneOf", {spacing, {{"type", "array"}, {"items", spacing}, {"minItems", 1}}}}}},
                            {"cells", int_(2, 512)}});
    ojson mollify = obj({{"eps", {{"type", "array"}, {"items", num(0, kInf, true)}}},
                         {"kernel", enum_({"polynomial", "cosine"})}});
    ojson axis = {{"type", "array"}, {"items", {{"type", "number"}}}, {"minItems", 3}, {"maxItems", 3}};
    ojson tf = {{"type", "object"},
                {"required", {"kind"}},
                {"properties",
                 {{"kind", enum_(kKinds)},
                  {"value", {{"type", "number"}}},
                  {"axis", axis},
                  {"radius", num(0, pi, true)},
                  {"width", num(0, kInf)},
                  {"degree", int_(0, 32)},
                  {"k", int_(1, 256)},
                  {"values", {{"type", "array"}, {"items", {{"type", "number"}}}}}}}};
    ojson tol = obj({{"cov_abs", num(0, kInf)},
                     {"cov_rel", num(0, kInf)},
                     {"layer_cake", num(0, kInf)},
                     {"gap_ceiling", num(0, kInf)},
                     {"gauss_bonnet_rel", num(0, kInf)},
                     {"boxdim_fraction", num(0, 1)}});
    ojson gb = obj({{"deltas", {{"type", "array"}, {"items", num(0, pi / 2, true)}, {"minItems", 1}}}});
    ojson audits = {{"type", "array"}, {"items", enum_(audit_names())}, {"uniqueItems", true}};

    ojson s = {{"$schema", "https://json-schema.org/draft/2020-12/schema"},
               {"title", "curvlab scenario"},
               {"type", "object"},
               {"additionalProperties", false}};
    s["properties"] = {{"name", {{"type", "string"}}},
                       {"seed", {{"type", "integer"}, {"minimum", 0}}},
                       {"fixture", fixture},
                       {"resolution", resolution},
                       {"mollify", mollify},
                       {"test_functions", {{"type", "array"}, {"items", tf}}},
                       {"tolerances", tol},
                       {"gauss_bonnet", gb},
                       {"levels", int_(1, 10000)},
                       {"audits", audits},
                       {"output", {{"type", "string"}}}};
    return s;
}

}  // namespace curvlab
