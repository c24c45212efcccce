#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "curvlab/fractal.hpp"
#include "curvlab/harness.hpp"

namespace py = pybind11;
using namespace curvlab;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

// (m1, m2, d) array on a chart with spacing h and origin (x0, x1)
MapField map_from_array(const Array& a, double h, std::vector<double> origin) {
    if (a.ndim() != 3) throw py::value_error("expected an array of shape (m1, m2, d)");
    if (origin.empty()) origin = {0.0, 0.0};
    MapField m;
    m.grid = make_grid({int(a.shape(0)), int(a.shape(1))}, h, origin);
    m.target_dim = int(a.shape(2));
    m.values.assign(a.data(), a.data() + a.size());
    return m;
}

Array map_to_array(const MapField& m) {
    const auto& s = m.grid->shape();
    Array out({std::size_t(s[0]), std::size_t(s[1]), std::size_t(m.target_dim)});
    std::copy(m.values.begin(), m.values.end(), out.mutable_data());
    return out;
}

Array top_form_to_array(const FormField& f) {
    const auto& s = f.grid->shape();
    Array out({std::size_t(s[0]), std::size_t(s[1])});
    std::copy(f.coeffs.begin(), f.coeffs.end(), out.mutable_data());
    return out;
}

py::object to_python(const nlohmann::ordered_json& j) {
    return py::module_::import("json").attr("loads")(j.dump());
}

Scenario scenario_from(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError(std::string("config parse error: ") + e.what());
    }
    return scenario_from_json(j);
}

py::dict fixture_dict(const ChartFixture& c) {
    py::dict d;
    d["id"] = c.id;
    d["y"] = map_to_array(c.y);
    d["spacing"] = c.grid->spacing();
    d["origin"] = c.grid->origin();
    return d;
}

Region region_named(const std::string& kind, int generation) {
    if (kind == "square") return Region::unit_cube(2);
    if (kind == "disk") return Region::ball({0.0, 0.0}, 1.0);
    if (kind == "koch") return Region::koch_snowflake(generation);
    throw py::value_error("region must be square, disk or koch");
}

}  // namespace

PYBIND11_MODULE(_curvlab, m) {
    m.doc() = "Pfaffian, Brouwer degree and Whitney-cube numerics";
    // translators run newest first, so the subclass goes last
    auto error = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
    py::register_exception<ConfigError>(m, "ConfigError", error.ptr());

    m.def("set_thread_count", &set_thread_count);

    m.def("sphere_band", [](double h, double theta_lo, double radius) { return fixture_dict(sphere_band(h, theta_lo, radius)); },
          py::arg("h"), py::arg("theta_lo") = 0.3, py::arg("radius") = 1.0);
    m.def("ellipsoid_band",
          [](double h, double theta_lo, double a, double b, double c) {
              return fixture_dict(ellipsoid_band(h, theta_lo, a, b, c));
          },
          py::arg("h"), py::arg("theta_lo") = 0.3, py::arg("a") = 1.0, py::arg("b") = 1.0, py::arg("c") = 2.0);

    m.def("gauss_map", [](const Array& y, double h, std::vector<double> origin) {
        return map_to_array(gauss_map(map_from_array(y, h, std::move(origin))));
    }, py::arg("y"), py::arg("h"), py::arg("origin") = std::vector<double>{});

    m.def("pfaffian", [](const Array& y, double h, std::vector<double> origin) {
        auto ym = map_from_array(y, h, std::move(origin));
        return top_form_to_array(pfaffian(frame_pipeline(metric_from_immersion(ym))));
    }, py::arg("y"), py::arg("h"), py::arg("origin") = std::vector<double>{},
       "Pfaffian coefficient of the induced metric of an immersed surface patch.");

    m.def("integrate_top_form", [](const Array& f, double h) {
        if (f.ndim() != 2) throw py::value_error("expected an array of shape (m1, m2)");
        auto grid = make_grid({int(f.shape(0)), int(f.shape(1))}, h, {0.0, 0.0});
        FormField form = FormField::zeros(grid, 2);
        std::copy(f.data(), f.data() + f.size(), form.coeffs.begin());
        return integrate_top_form(form, grid->full_mask()).value;
    }, py::arg("f"), py::arg("h"));

    m.def("brouwer_degree", [](const Array& nu, double h, std::vector<double> z) {
        auto u = map_from_array(nu, h, {});
        if (int(z.size()) != u.target_dim) throw py::value_error("target dimension mismatch");
        auto r = brouwer_degree(u, u.grid->full_mask(), z.data());
        py::dict d;
        d["degree"] = r.degree;
        d["hits"] = r.hits;
        d["regular"] = r.regular;
        d["clearance"] = r.clearance;
        return d;
    }, py::arg("nu"), py::arg("h"), py::arg("z"));

    m.def("box_dimension", [](const Array& pts, double eps_lo, double eps_hi) {
        if (pts.ndim() != 2) throw py::value_error("expected points of shape (count, dim)");
        std::vector<double> flat(pts.data(), pts.data() + pts.size());
        auto r = box_dimension(flat, int(pts.shape(1)), eps_lo, eps_hi);
        py::dict d;
        d["dimension"] = r.dimension;
        d["unstable"] = r.unstable;
        d["eps"] = r.eps;
        d["counts"] = r.counts;
        return d;
    }, py::arg("points"), py::arg("eps_lo"), py::arg("eps_hi"));

    m.def("whitney", [](const std::string& region, int k_max, int generation) {
        auto W = whitney_decompose(region_named(region, generation), k_max);
        Array cubes({W.cubes.size(), std::size_t(3)});
        auto* p = cubes.mutable_data();
        for (const auto& q : W.cubes) *p++ = q.k, *p++ = double(q.l[0]), *p++ = double(q.l[1]);
        py::dict d;
        d["cubes"] = cubes;
        d["census"] = W.census;
        d["volume"] = W.volume();
        d["census_slope"] = whitney_census_slope(W, std::min(5, k_max - 2), k_max);
        return d;
    }, py::arg("region"), py::arg("k_max"), py::arg("generation") = 6,
       "Whitney cubes as rows (k, l0, l1) of Q = 2^-k (l + (0,1)^2).");

    m.def("fractal_area", [](const std::string& region, int k_max, int generation) {
        auto W = whitney_decompose(region_named(region, generation), k_max);
        auto M = ScaleFamily::constant(2, [](const double* x, double* o) { o[0] = 0.0, o[1] = x[0]; }, "x1 dx2");
        return fractal_integral(M, W).value;
    }, py::arg("region"), py::arg("k_max"), py::arg("generation") = 6,
       "Fractal integral of x1 dx2, the enclosed area.");

    m.def("scenario_schema", [] { return to_python(scenario_schema()); });
    m.def("validate_scenario", [](const std::string& text) {
        scenario_from(text);
        return true;
    }, py::arg("config_json"));
    m.def("audit_names", &audit_names);

    m.def("run", [](const std::string& text, const std::string& out_dir) {
        auto s = scenario_from(text);
        RunResult r;
        {
            py::gil_scoped_release release;
            r = run(s, out_dir);
        }
        py::dict d;
        d["exit_code"] = r.exit_code;
        d["result"] = to_python(r.result);
        return d;
    }, py::arg("config_json"), py::arg("out_dir"), "Runs a scenario given as JSON text.");
}
