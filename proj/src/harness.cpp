#include "curvlab/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numbers>
#include <random>
#include <sstream>

#include <Eigen/Dense>

#include "curvlab/fractal.hpp"

namespace curvlab {

namespace {

constexpr double kPi = std::numbers::pi;

double dot(const double* a, const double* b, int dim) {
    double s = 0.0;
    for (int i = 0; i < dim; ++i) s += a[i] * b[i];
    return s;
}

std::vector<double> normalized(std::vector<double> v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    if (!(s > 0.0)) throw Error("test function axis must be nonzero");
    for (double& x : v) x /= std::sqrt(s);
    return v;
}

double legendre(int l, double x) {
    if (l == 0) return 1.0;
    double p0 = 1.0, p1 = x;
    for (int k = 1; k < l; ++k) {
        const double p2 = ((2 * k + 1) * x * p1 - k * p0) / (k + 1);
        p0 = p1;
        p1 = p2;
    }
    return p1;
}

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

// Trapezoid node weights times the Pfaffian coefficient.
std::vector<double> pf_mass(const FixtureData& d, const NodeMask& region) {
    auto w = top_form_weights(*d.chart.grid, region);
    for (std::size_t k = 0; k < w.size(); ++k) w[k] *= d.pf.at(k, 0);
    return w;
}

std::vector<double> compose(const TestFunction& phi, const MapField& nu) {
    std::vector<double> out(nu.grid->node_count());
    for (std::size_t k = 0; k < out.size(); ++k) out[k] = phi(&nu.values[k * nu.target_dim]);
    return out;
}

double weighted_sum(const std::vector<double>& f, const std::vector<double>& mass) {
    double s = 0.0;
    for (std::size_t k = 0; k < f.size(); ++k) s += f[k] * mass[k];
    return s;
}

// Superlevel masses of a discrete measure: in(r) = sum of mass where value > r.
class LevelMass {
public:
    LevelMass(const std::vector<double>& values, const std::vector<double>& mass) {
        std::vector<std::size_t> order(values.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
        sorted_.reserve(order.size());
        prefix_.assign(order.size() + 1, 0.0);
        for (std::size_t i = 0; i < order.size(); ++i) {
            sorted_.push_back(values[order[i]]);
            prefix_[i + 1] = prefix_[i] + mass[order[i]];
        }
    }
    double total() const { return prefix_.back(); }
    double above(double r) const {
        const std::size_t i = std::upper_bound(sorted_.begin(), sorted_.end(), r) - sorted_.begin();
        return prefix_.back() - prefix_[i];
    }

private:
    std::vector<double> sorted_, prefix_;
};

struct LayerCake {
    double value = 0.0;
    std::vector<double> levels, weights, inner;  // inner: int_{A_r} or -int_{U \ A_r}
};

// int_0^inf mu(A_r) dr - int_-inf^0 mu(U \ A_r) dr with A_r = {value > r},
// Gauss-Legendre over the nonconstant part of [lo, hi].
LayerCake layer_cake(const LevelMass& m, double lo, double hi, int order) {
    LayerCake out;
    auto gl = gauss_legendre(order);
    auto segment = [&](double a, double b, bool positive) {
        if (!(b > a)) return;
        for (std::size_t q = 0; q < gl.nodes.size(); ++q) {
            const double r = 0.5 * (a + b) + 0.5 * (b - a) * gl.nodes[q];
            const double w = 0.5 * (b - a) * gl.weights[q];
            const double f = positive ? m.above(r) : -(m.total() - m.above(r));
            out.levels.push_back(r);
            out.weights.push_back(w);
            out.inner.push_back(f);
            out.value += w * f;
        }
    };
    if (hi > 0.0) {
        const double a = std::max(lo, 0.0);
        out.value += a * m.total();
        segment(a, hi, true);
    }
    if (lo < 0.0) {
        const double b = std::min(hi, 0.0);
        out.value += b * m.total();
        segment(lo, b, false);
    }
    return out;
}

double box_fraction_coord(const ChartGrid& g, int axis, double frac) {
    return g.origin()[axis] + frac * (g.shape()[axis] - 1) * g.spacing();
}

std::size_t nearest_node(const ChartGrid& g, const std::vector<double>& x) {
    std::vector<int> idx(g.dim());
    for (int a = 0; a < g.dim(); ++a)
        idx[a] = std::clamp(static_cast<int>(std::lround((x[a] - g.origin()[a]) / g.spacing())), 0, g.shape()[a] - 1);
    return g.index(idx.data());
}

// Nodes within one lattice step (any axis combination) of the mask.
NodeMask dilate(const ChartGrid& g, const NodeMask& m) {
    const int n = g.dim();
    NodeMask out(m.size(), 0);
    std::vector<int> idx(n), nb(n);
    int combos = 1;
    for (int a = 0; a < n; ++a) combos *= 3;
    for (std::size_t k = 0; k < m.size(); ++k) {
        if (!m[k]) continue;
        g.unravel(k, idx.data());
        for (int c = 0; c < combos; ++c) {
            int code = c;
            bool ok = true;
            for (int a = 0; a < n; ++a) {
                nb[a] = idx[a] + code % 3 - 1;
                code /= 3;
                ok = ok && nb[a] >= 0 && nb[a] < g.shape()[a];
            }
            if (ok) out[g.index(nb.data())] = 1;
        }
    }
    return out;
}

std::size_t count(const NodeMask& m) { return std::count_if(m.begin(), m.end(), [](std::uint8_t v) { return v != 0; }); }

NodeMask gauss_cap(const FixtureData& d, const double* center, double radius) {
    NodeMask m(d.nu.grid->node_count(), 0);
    const int dim = d.nu.target_dim;
    for (std::size_t k = 0; k < m.size(); ++k)
        m[k] = d.region[k] && angle_between(&d.nu.values[k * dim], center, dim) < radius;
    return m;
}

// Closed-form integral of Pf over a smooth spheroid band chart, NaN otherwise.
double band_closed_form(const FixtureSpec& f, const ChartGrid& g) {
    if (!f.band() || f.rough || f.region.kind != "full") return std::numeric_limits<double>::quiet_NaN();
    double c = 1.0;
    if (f.kind == "ellipsoid") {
        if (f.a != 1.0 || f.b != 1.0) return std::numeric_limits<double>::quiet_NaN();
        c = f.c;
    }
    const double t0 = g.origin()[0], t1 = g.upper()[0];
    return spheroid_band_curvature_integral(t0, t1, c, g.upper()[1] - g.origin()[1]);
}

double min_interior_pf(const FixtureData& d) {
    double mn = std::numeric_limits<double>::infinity();
    const auto& g = *d.chart.grid;
    for (std::size_t k = 0; k < g.node_count(); ++k)
        if (d.region[k] && g.interior(k)) mn = std::min(mn, d.pf.at(k, 0));
    return mn;
}

nlohmann::ordered_json vec_json(const double* v, int dim) {
    auto a = nlohmann::ordered_json::array();
    for (int i = 0; i < dim; ++i) a.push_back(v[i]);
    return a;
}

}  // namespace

double TestFunction::operator()(const double* z) const {
    switch (kind) {
        case TestFunctionKind::Constant:
            return value;
        case TestFunctionKind::Cap: {
            const int dim = static_cast<int>(axis.size());
            const double th = std::acos(std::clamp(dot(z, axis.data(), dim), -1.0, 1.0));
            const double w = width;
            if (th <= radius - 0.5 * w) return 1.0;
            if (th >= radius + 0.5 * w) return 0.0;
            const double t = (radius + 0.5 * w - th) / w;
            return t * t * (3.0 - 2.0 * t);
        }
        case TestFunctionKind::Zonal:
            return legendre(degree, std::clamp(dot(z, axis.data(), static_cast<int>(axis.size())), -1.0, 1.0));
        case TestFunctionKind::Table:
            return table[table_cells->locate(z)];
    }
    return 0.0;
}

double TestFunction::lower() const {
    switch (kind) {
        case TestFunctionKind::Constant: return value;
        case TestFunctionKind::Cap: return 0.0;
        case TestFunctionKind::Zonal: return degree == 0 ? 1.0 : -1.0;
        case TestFunctionKind::Table: return *std::min_element(table.begin(), table.end());
    }
    return 0.0;
}

double TestFunction::upper() const {
    switch (kind) {
        case TestFunctionKind::Constant: return value;
        case TestFunctionKind::Cap: return 1.0;
        case TestFunctionKind::Zonal: return 1.0;
        case TestFunctionKind::Table: return *std::max_element(table.begin(), table.end());
    }
    return 0.0;
}

std::string TestFunction::describe() const {
    auto axis_str = [&] {
        std::string s = "(";
        for (std::size_t i = 0; i < axis.size(); ++i) s += (i ? "," : "") + fmt(axis[i]);
        return s + ")";
    };
    switch (kind) {
        case TestFunctionKind::Constant: return "constant " + fmt(value);
        case TestFunctionKind::Cap: return "cap axis " + axis_str() + " radius " + fmt(radius) + " width " + fmt(width);
        case TestFunctionKind::Zonal: return "zonal P" + std::to_string(degree) + " axis " + axis_str();
        case TestFunctionKind::Table: return "table k " + std::to_string(table_cells->k());
    }
    return "";
}

TestFunction TestFunction::resolved(const SphereCellGrid& cells) const {
    TestFunction t = *this;
    if (t.kind == TestFunctionKind::Cap && !(t.width > 0.0)) t.width = 4.0 * 2.0 * cells.max_circumradius();
    if ((t.kind == TestFunctionKind::Cap || t.kind == TestFunctionKind::Zonal) && int(t.axis.size()) != cells.n() + 1)
        throw Error("test function axis does not match the sphere dimension");
    return t;
}

TestFunction TestFunction::constant(double v) {
    TestFunction t;
    t.value = v;
    return t;
}

TestFunction TestFunction::cap(std::vector<double> axis, double radius, double width) {
    if (!(radius > 0.0 && radius < kPi)) throw Error("cap radius must lie in (0, pi)");
    if (width < 0.0 || width > 2.0 * radius) throw Error("cap width must lie in [0, 2 radius]");
    TestFunction t;
    t.kind = TestFunctionKind::Cap;
    t.axis = normalized(std::move(axis));
    t.radius = radius;
    t.width = width;
    return t;
}

TestFunction TestFunction::zonal(std::vector<double> axis, int degree) {
    if (degree < 0) throw Error("zonal degree must be nonnegative");
    TestFunction t;
    t.kind = TestFunctionKind::Zonal;
    t.axis = normalized(std::move(axis));
    t.degree = degree;
    return t;
}

TestFunction TestFunction::from_table(std::shared_ptr<const SphereCellGrid> cells, std::vector<double> values) {
    if (!cells || values.size() != cells->size()) throw Error("table size does not match the cell grid");
    TestFunction t;
    t.kind = TestFunctionKind::Table;
    t.table_cells = std::move(cells);
    t.table = std::move(values);
    return t;
}

FixtureData build_fixture(const FixtureSpec& f, double h) {
    FixtureData d;
    if (f.kind == "sphere") d.chart = sphere_band(h, f.theta_lo, f.radius, f.phi_max);
    else if (f.kind == "ellipsoid") d.chart = ellipsoid_band(h, f.theta_lo, f.a, f.b, f.c, f.phi_max);
    else if (f.kind == "graph") {
        const double k = f.curvature;
        d.chart = graph_patch(h, f.half_width, [k](double x1, double x2) { return 0.5 * k * (x1 * x1 + x2 * x2); });
    } else if (f.kind == "cylinder") d.chart = cylinder_patch(h, f.len1, f.len2);
    else if (f.kind == "plane") d.chart = plane_patch(h, f.len1, f.len2);
    else throw Error("unknown fixture " + f.kind);
    if (f.rough) {
        d.chart.y = lacunary_immersion(d.chart.y, f.roughness);
        d.alpha = f.roughness.alpha;
    }
    const auto& g = *d.chart.grid;
    if (f.region.kind == "full") {
        d.region = g.full_mask();
    } else {
        const auto up = g.upper();
        const double cx = 0.5 * (g.origin()[0] + up[0]), cy = 0.5 * (g.origin()[1] + up[1]);
        const double side = std::min(up[0] - g.origin()[0], up[1] - g.origin()[1]);
        const double r = f.region.scale * side;
        Region U;
        if (f.region.kind == "disk") U = Region::ball({0.0, 0.0}, 1.0);
        else if (f.region.kind == "koch") U = Region::koch_snowflake(f.region.generation);
        else throw Error("unknown region " + f.region.kind);
        d.region.assign(g.node_count(), 0);
        for (std::size_t k = 0; k < g.node_count(); ++k) {
            const double p[2] = {(g.coord(k, 0) - cx) / r, (g.coord(k, 1) - cy) / r};
            d.region[k] = U.contains(p);
        }
    }
    d.pf = pfaffian(frame_pipeline(metric_from_immersion(d.chart.y)));
    d.nu = gauss_map(d.chart.y);
    return d;
}

const FixtureData& FixtureCache::get(const FixtureSpec& f, double h) {
    std::ostringstream key;
    key << f.kind << '|' << fmt(f.theta_lo) << '|' << fmt(f.phi_max) << '|' << fmt(f.radius) << '|' << fmt(f.a) << '|'
        << fmt(f.b) << '|' << fmt(f.c) << '|' << fmt(f.curvature) << '|' << fmt(f.half_width) << '|' << fmt(f.len1)
        << '|' << fmt(f.len2) << '|' << f.rough << '|' << fmt(f.roughness.alpha) << '|' << f.roughness.lacunarity
        << '|' << f.roughness.depth << '|' << fmt(f.roughness.amplitude) << '|' << f.roughness.seed << '|'
        << f.region.kind << '|' << f.region.generation << '|' << fmt(f.region.scale) << '|' << fmt(h);
    auto& slot = store_[key.str()];
    if (!slot) slot = std::make_unique<FixtureData>(build_fixture(f, h));
    return *slot;
}

namespace {

const FixtureData& fetch(const Scenario& s, double h, FixtureCache* cache, FixtureCache& local) {
    return (cache ? *cache : local).get(s.fixture, h);
}

}  // namespace

AuditReport cov_check_indicator(const Scenario& s, FixtureCache* cache) {
    FixtureCache local;
    AuditReport r;
    r.name = "cov_indicator";
    r.csv_header = {"h", "lhs", "rhs", "difference", "excluded_area", "closed_form"};
    SphereCellGrid cells(2, s.cells);
    std::vector<double> diffs;
    double lhs = 0, rhs = 0, gap = 0, closed = 0;
    for (double h : s.resolutions) {
        const auto& d = fetch(s, h, cache, local);
        lhs = integrate_top_form(d.pf, d.region).value;
        auto rep = degree_field(d.nu, d.region, cells);
        rhs = rep.integral;
        gap = rep.excluded_area;
        closed = band_closed_form(s.fixture, *d.chart.grid);
        diffs.push_back(std::abs(lhs - rhs));
        r.csv_rows.push_back({h, lhs, rhs, diffs.back(), gap, closed});
    }
    const double diff = diffs.back();
    r.metrics["fixture"] = s.fixture.kind;
    r.metrics["cells"] = s.cells;
    r.metrics["h"] = s.finest();
    r.metrics["lhs"] = lhs;
    r.metrics["rhs"] = rhs;
    r.metrics["difference"] = diff;
    r.metrics["excluded_area"] = gap;
    if (std::isfinite(closed)) {
        r.metrics["closed_form"] = closed;
        r.metrics["lhs_closed_gap"] = std::abs(lhs - closed);
    }
    if (diffs.size() >= 2 && diffs[diffs.size() - 2] > 0.0 && diff > 0.0) {
        const double ratio = s.resolutions[s.resolutions.size() - 2] / s.finest();
        r.metrics["observed_order"] = std::log(diffs[diffs.size() - 2] / diff) / std::log(ratio);
    }
    const double tol = std::max(s.tol.cov_abs, s.tol.cov_rel * std::max(std::abs(lhs), std::abs(rhs)));
    r.metrics["tolerance"] = tol;
    if (gap > s.tol.gap_ceiling) r.status = "inconclusive";
    else r.status = diff <= tol ? "pass" : "fail";
    return r;
}

AuditReport cov_check_testfunction(const Scenario& s, const TestFunction& phi_in, FixtureCache* cache) {
    FixtureCache local;
    AuditReport r;
    r.name = "cov_testfunction";
    SphereCellGrid cells(2, s.cells);
    const TestFunction phi = phi_in.resolved(cells);
    const auto& d = fetch(s, s.finest(), cache, local);

    auto mass = pf_mass(d, d.region);
    auto f = compose(phi, d.nu);
    const double lhs = weighted_sum(f, mass);
    double scale = 0.0;
    for (std::size_t k = 0; k < f.size(); ++k) scale += std::abs(f[k] * mass[k]);

    auto rep = degree_field(d.nu, d.region, cells);
    auto phi_fn = [&](const double* z) { return phi(z); };
    const double rhs = rep.pairing(phi_fn);

    // sphere side as a discrete measure over regular targets
    std::vector<double> zval, zmass;
    for (std::size_t t = 0; t < rep.size(); ++t) {
        if (!rep.regular[t] || rep.degrees[t] == 0) continue;
        zval.push_back(phi(rep.target(t)));
        zmass.push_back(rep.degrees[t] * rep.area[t]);
    }
    const double lo = phi.lower(), hi = phi.upper();
    auto chart_lc = layer_cake(LevelMass(f, mass), lo, hi, 64);
    auto sphere_lc = layer_cake(LevelMass(zval, zmass), lo, hi, 64);

    const double diff = std::abs(lhs - rhs);
    const double rel = scale > 0.0 ? diff / scale : 0.0;
    const double chart_gap = scale > 0.0 ? std::abs(chart_lc.value - lhs) / scale : std::abs(chart_lc.value - lhs);
    const double sphere_gap = scale > 0.0 ? std::abs(sphere_lc.value - rhs) / scale : std::abs(sphere_lc.value - rhs);

    r.metrics["fixture"] = s.fixture.kind;
    r.metrics["test_function"] = phi.describe();
    r.metrics["h"] = s.finest();
    r.metrics["cells"] = s.cells;
    r.metrics["lhs"] = lhs;
    r.metrics["rhs"] = rhs;
    r.metrics["difference"] = diff;
    r.metrics["l1_scale"] = scale;
    r.metrics["relative_difference"] = rel;
    r.metrics["layer_cake_lhs"] = chart_lc.value;
    r.metrics["layer_cake_rhs"] = sphere_lc.value;
    r.metrics["layer_cake_gap_lhs"] = chart_gap;
    r.metrics["layer_cake_gap_rhs"] = sphere_gap;
    r.metrics["layer_cake_levels"] = chart_lc.levels.size();
    r.metrics["excluded_area"] = rep.excluded_area;
    if (phi.kind == TestFunctionKind::Cap) {
        TestFunction wide = phi;
        wide.width = std::min(2.0 * phi.width, 2.0 * phi.radius);
        const double lw = weighted_sum(compose(wide, d.nu), mass);
        r.metrics["width_sensitivity"] = scale > 0.0 ? std::abs(lw - lhs) / scale : std::abs(lw - lhs);
    }
    r.csv_header = {"r", "weight", "chart_inner", "sphere_inner"};
    for (std::size_t q = 0; q < chart_lc.levels.size(); ++q)
        r.csv_rows.push_back({chart_lc.levels[q], chart_lc.weights[q], chart_lc.inner[q], sphere_lc.inner[q]});

    if (rep.excluded_area > s.tol.gap_ceiling) r.status = "inconclusive";
    else {
        const bool direct_ok = scale > 0.0 ? rel <= s.tol.cov_rel : diff <= s.tol.cov_abs;
        const bool routes_ok = chart_gap <= s.tol.layer_cake && sphere_gap <= s.tol.layer_cake;
        r.status = direct_ok && routes_ok ? "pass" : "fail";
    }
    return r;
}

AuditReport sublevel_boxdim_audit(const Scenario& s, const TestFunction& phi_in, FixtureCache* cache) {
    FixtureCache local;
    AuditReport r;
    r.name = "sublevel_boxdim";
    SphereCellGrid cells(2, s.cells);
    const TestFunction phi = phi_in.resolved(cells);
    const auto& d = fetch(s, s.finest(), cache, local);
    MapField f;
    f.grid = d.chart.grid;
    f.target_dim = 1;
    f.values = compose(phi, d.nu);
    auto levels = sample_levels(f, s.levels, s.seed);
    auto res = level_set_boxdim(f, levels, d.alpha);
    r.metrics["fixture"] = s.fixture.kind;
    r.metrics["test_function"] = phi.describe();
    r.metrics["alpha"] = d.alpha;
    r.metrics["bound"] = res.bound;
    r.metrics["levels"] = levels.size();
    r.metrics["fraction_within"] = res.fraction_within;
    r.metrics["degenerate"] = res.degenerate;
    std::size_t empty = 0, unstable = 0;
    double mx = -1.0, sum = 0.0;
    std::size_t used = 0;
    r.csv_header = {"level", "dimension", "empty", "unstable"};
    for (std::size_t i = 0; i < levels.size(); ++i) {
        r.csv_rows.push_back({levels[i], res.dims[i], double(res.empty[i]), double(res.unstable[i])});
        if (res.empty[i]) {
            ++empty;
            continue;
        }
        unstable += res.unstable[i];
        mx = std::max(mx, res.dims[i]);
        sum += res.dims[i];
        ++used;
    }
    r.metrics["empty_levels"] = empty;
    r.metrics["unstable_levels"] = unstable;
    if (used) {
        r.metrics["max_dimension"] = mx;
        r.metrics["mean_dimension"] = sum / used;
    }
    if (res.degenerate) r.status = "inconclusive";
    else r.status = res.fraction_within >= s.tol.boxdim_fraction ? "pass" : "fail";
    return r;
}

AuditReport gauss_bonnet_closed(const Scenario& s) {
    AuditReport r;
    r.name = "gauss_bonnet";
    const auto& f = s.fixture;
    r.metrics["fixture"] = f.kind;
    if (f.kind == "cylinder" || f.kind == "plane") {
        auto d = build_fixture(f, s.finest());
        const double v = integrate_top_form(d.pf, d.region).value;
        r.metrics["integral"] = v;
        r.metrics["target"] = 0.0;
        r.csv_header = {"h", "integral"};
        r.csv_rows.push_back({s.finest(), v});
        r.status = std::abs(v) <= 1e-9 ? "pass" : "fail";
        return r;
    }
    if (!f.band()) throw Error("gauss_bonnet_closed needs a band or flat fixture");
    // spacing that divides 2 pi, so the azimuth seam closes
    const int N = std::max(8, static_cast<int>(std::lround(2.0 * kPi / s.finest())));
    const double h = 2.0 * kPi / N;
    r.csv_header = {"delta", "integral", "closed_form"};
    std::vector<double> x, y;
    auto deltas = s.deltas;
    std::sort(deltas.begin(), deltas.end(), std::greater<>());
    for (double delta : deltas) {
        FixtureSpec fd = f;
        fd.theta_lo = delta;
        fd.phi_max = 2.0 * kPi + 0.25 * h;
        fd.region = RegionSpec{};
        auto d = build_fixture(fd, h);
        const double v = integrate_top_form(d.pf, d.region).value;
        const double act = d.chart.grid->origin()[0];
        x.push_back(act * act);
        y.push_back(v);
        r.csv_rows.push_back({act, v, band_closed_form(fd, *d.chart.grid)});
    }
    const double target = 4.0 * kPi;
    // least squares in delta^2, quadratic once three exclusions are available
    double extrapolated = y.back();
    if (x.size() >= 2) {
        const int cols = x.size() >= 3 ? 3 : 2;
        Eigen::MatrixXd A(x.size(), cols);
        Eigen::VectorXd b(x.size());
        for (std::size_t i = 0; i < x.size(); ++i) {
            for (int c = 0; c < cols; ++c) A(i, c) = std::pow(x[i], c);
            b(i) = y[i];
        }
        extrapolated = A.colPivHouseholderQr().solve(b)(0);
    }
    r.metrics["h"] = h;
    r.metrics["deltas"] = deltas;
    r.metrics["integrals"] = y;
    r.metrics["extrapolated"] = extrapolated;
    r.metrics["target"] = target;
    r.metrics["relative_error"] = std::abs(extrapolated - target) / target;
    r.status = std::abs(extrapolated - target) <= s.tol.gauss_bonnet_rel * target ? "pass" : "fail";
    return r;
}

namespace {

struct Subregion {
    std::string family;
    NodeMask mask;
};

std::vector<Subregion> positivity_family(const Scenario& s, const FixtureData& d) {
    const auto& g = *d.chart.grid;
    const int dim = d.nu.target_dim;
    std::vector<Subregion> out;
    auto node_at = [&](double f0, double f1) {
        return nearest_node(g, {box_fraction_coord(g, 0, f0), box_fraction_coord(g, 1, f1)});
    };
    // caps in the Gauss image around interior points
    const std::size_t c0 = node_at(0.5, 0.5), c1 = node_at(0.3, 0.3);
    out.push_back({"cap", gauss_cap(d, &d.nu.values[c0 * dim], 0.3)});
    out.push_back({"cap", gauss_cap(d, &d.nu.values[c0 * dim], 0.6)});
    out.push_back({"cap", gauss_cap(d, &d.nu.values[c1 * dim], 0.3)});
    // coordinate bands along the first axis
    for (auto [a, b] : {std::pair{0.1, 0.5}, std::pair{0.4, 0.9}}) {
        NodeMask m(g.node_count(), 0);
        const double lo = box_fraction_coord(g, 0, a), hi = box_fraction_coord(g, 0, b);
        for (std::size_t k = 0; k < m.size(); ++k) m[k] = d.region[k] && g.coord(k, 0) >= lo && g.coord(k, 0) <= hi;
        out.push_back({"band", m});
    }
    // unions of Gaussian blobs thresholded at 1/2
    std::mt19937_64 rng(s.seed);
    std::uniform_real_distribution<double> u(0.15, 0.85), rr(0.08, 0.2);
    const auto up = g.upper();
    const double side = std::min(up[0] - g.origin()[0], up[1] - g.origin()[1]);
    for (int family = 0; family < 3; ++family) {
        std::vector<std::array<double, 3>> blobs;
        for (int b = 0; b < 4; ++b) {
            const double x0 = box_fraction_coord(g, 0, u(rng)), x1 = box_fraction_coord(g, 1, u(rng));
            blobs.push_back({x0, x1, rr(rng) * side});
        }
        NodeMask m(g.node_count(), 0);
        for (std::size_t k = 0; k < m.size(); ++k) {
            double v = 0.0;
            for (const auto& bl : blobs) {
                const double dx = g.coord(k, 0) - bl[0], dy = g.coord(k, 1) - bl[1];
                v += std::exp(-(dx * dx + dy * dy) / (bl[2] * bl[2]));
            }
            m[k] = d.region[k] && v > 0.5;
        }
        out.push_back({"blobs", m});
    }
    return out;
}

}  // namespace

AuditReport degree_positivity_audit(const Scenario& s, FixtureCache* cache) {
    FixtureCache local;
    AuditReport r;
    r.name = "degree_positivity";
    const auto& d = fetch(s, s.coarsest(), cache, local);
    const auto& g = *d.chart.grid;
    const int dim = d.nu.target_dim;
    SphereCellGrid cells(2, s.cells);
    const double min_pf = min_interior_pf(d);
    const bool positive = min_pf > 0.0;
    r.metrics["fixture"] = s.fixture.kind;
    r.metrics["h"] = s.coarsest();
    r.metrics["min_pfaffian"] = min_pf;
    r.metrics["applicable"] = positive;

    if (!positive) {
        // control: the Gauss image has no interior, so every admissible degree vanishes
        auto rep = degree_field(d.nu, d.region, cells);
        std::size_t nonzero = 0, regular = 0;
        for (std::size_t t = 0; t < rep.size(); ++t) {
            if (!rep.regular[t]) continue;
            ++regular;
            nonzero += rep.degrees[t] != 0;
        }
        r.metrics["control"] = true;
        r.metrics["regular_targets"] = regular;
        r.metrics["nonzero_degrees"] = nonzero;
        r.status = nonzero == 0 ? "pass" : "fail";
        return r;
    }

    r.csv_header = {"subregion", "nodes", "checked_targets", "violations", "min_degree", "bump_lhs_min", "bump_rhs_min"};
    auto failures = nlohmann::ordered_json::array();
    auto family = positivity_family(s, d);
    std::size_t total_checked = 0, total_viol = 0;
    double bump_min = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < family.size(); ++i) {
        const auto& V = family[i].mask;
        const std::size_t nodes = count(V);
        if (nodes < 4) continue;
        auto rep = degree_field(d.nu, V, cells);
        std::size_t checked = 0, viol = 0;
        int min_deg = std::numeric_limits<int>::max();
        for (std::size_t t = 0; t < rep.size(); ++t) {
            if (!rep.regular[t] || rep.hits[t] == 0) continue;
            ++checked;
            min_deg = std::min(min_deg, rep.degrees[t]);
            if (rep.degrees[t] < 1) {
                ++viol;
                if (failures.size() < 20)
                    failures.push_back({{"subregion", i}, {"target", vec_json(rep.target(t), dim)}, {"degree", rep.degrees[t]}});
            }
        }
        // bumps around image points of three nodes of V
        std::vector<std::size_t> inside;
        for (std::size_t k = 0; k < V.size(); ++k)
            if (V[k] && g.interior(k)) inside.push_back(k);
        auto mass = pf_mass(d, V);
        double lmin = std::numeric_limits<double>::infinity(), rmin = lmin;
        for (int q = 1; q <= 3 && !inside.empty(); ++q) {
            const std::size_t k = inside[inside.size() * q / 4];
            std::vector<double> z(&d.nu.values[k * dim], &d.nu.values[k * dim] + dim);
            auto bump = TestFunction::cap(z, 0.15, 0.1);
            const double lv = weighted_sum(compose(bump, d.nu), mass);
            const double rv = rep.pairing([&](const double* x) { return bump(x); });
            lmin = std::min(lmin, lv);
            rmin = std::min(rmin, rv);
        }
        bump_min = std::min({bump_min, lmin, rmin});
        total_checked += checked;
        total_viol += viol;
        r.csv_rows.push_back({double(i), double(nodes), double(checked), double(viol),
                              checked ? double(min_deg) : 0.0, lmin, rmin});
    }
    r.metrics["subregions"] = r.csv_rows.size();
    r.metrics["checked_targets"] = total_checked;
    r.metrics["violations"] = total_viol;
    r.metrics["bump_integral_min"] = bump_min;
    r.metrics["failures"] = failures;
    r.status = total_viol == 0 && bump_min > 0.0 && total_checked > 0 ? "pass" : "fail";
    return r;
}

AuditReport extrinsic_bound_audit(const Scenario& s, FixtureCache* cache) {
    FixtureCache local;
    AuditReport r;
    r.name = "extrinsic_bound";
    const auto& d = fetch(s, s.coarsest(), cache, local);
    const auto& g = *d.chart.grid;
    const int dim = d.nu.target_dim;
    SphereCellGrid cells(2, s.cells);
    const double total = integrate_top_form(d.pf, d.region).value;
    const double min_pf = min_interior_pf(d);
    r.metrics["fixture"] = s.fixture.kind;
    r.metrics["h"] = s.coarsest();
    r.metrics["pfaffian_integral"] = total;
    r.metrics["applicable"] = min_pf > 0.0;

    std::vector<std::pair<std::string, std::vector<NodeMask>>> families;
    families.push_back({"empty", {}});
    {
        auto at = [&](double f0, double f1) {
            return nearest_node(g, {box_fraction_coord(g, 0, f0), box_fraction_coord(g, 1, f1)});
        };
        const std::size_t k1 = at(0.3, 0.25), k2 = at(0.7, 0.75);
        auto p1 = gauss_cap(d, &d.nu.values[k1 * dim], 0.4);
        auto p2 = gauss_cap(d, &d.nu.values[k2 * dim], 0.4);
        auto near1 = dilate(g, p1);
        for (std::size_t k = 0; k < p2.size(); ++k) p2[k] = p2[k] && !near1[k];
        families.push_back({"caps", {p1, p2}});
    }
    {
        std::vector<NodeMask> tiles;
        const int m = g.shape()[1];
        std::vector<int> idx(g.dim());
        for (int j = 0; j < 4; ++j) {
            NodeMask t(g.node_count(), 0);
            const int lo = j * (m - 1) / 4 + 1, hi = (j + 1) * (m - 1) / 4 - 1;
            for (std::size_t k = 0; k < t.size(); ++k) {
                g.unravel(k, idx.data());
                t[k] = d.region[k] && idx[1] >= lo && idx[1] <= hi;
            }
            tiles.push_back(std::move(t));
        }
        families.push_back({"tiles", tiles});
    }

    r.csv_header = {"family", "parts", "sum", "slack", "bound"};
    bool ok = true;
    auto fam = nlohmann::ordered_json::object();
    for (std::size_t i = 0; i < families.size(); ++i) {
        const auto& parts = families[i].second;
        const double sum = extrinsic_curvature_bound(d.nu, parts, cells);
        double slack = 0.0;
        auto each = nlohmann::ordered_json::array();
        for (const auto& p : parts) {
            slack += boundary_layer_area(d.nu, p, cells);
            each.push_back(spherical_image_measure(d.nu, p, cells));
        }
        const bool pass = sum <= total + slack;
        ok = ok && pass;
        fam[families[i].first] = {{"sum", sum}, {"slack", slack}, {"parts", each}, {"pass", pass}};
        r.csv_rows.push_back({double(i), double(parts.size()), sum, slack, total + slack});
    }
    r.metrics["families"] = fam;
    if (min_pf <= 0.0) r.status = "inconclusive";
    else r.status = ok ? "pass" : "fail";
    return r;
}

AuditReport weak_convergence_audit(const Scenario& s, const TestFunction& phi_in) {
    AuditReport r;
    r.name = "weak_convergence";
    if (s.mollify_eps.size() < 3) throw Error("weak convergence needs at least three mollification scales");
    SphereCellGrid cells(2, s.cells);
    const TestFunction phi = phi_in.resolved(cells);
    FixtureSpec f = s.fixture;
    f.region = RegionSpec{};
    auto d = build_fixture(f, s.finest());
    auto t = weak_convergence_experiment(d.chart.y, s.mollify_eps, [&](const double* z) { return phi(z); }, cells,
                                         s.kernel);
    r.metrics["fixture"] = f.kind;
    r.metrics["h"] = s.finest();
    r.metrics["test_function"] = phi.describe();
    r.metrics["kernel"] = s.kernel.name();
    r.metrics["reference"] = t.reference;
    r.metrics["max_route_gap"] = t.max_route_gap;
    r.metrics["monotone"] = t.monotone;
    r.metrics["sampled_monotone"] = t.sampled_monotone;
    auto diffs = nlohmann::ordered_json::array();
    r.csv_header = {"eps", "pairing", "difference", "sampled", "sampled_difference", "excluded_area"};
    for (const auto& row : t.rows) {
        r.csv_rows.push_back({row.eps, row.pairing, row.difference, row.sampled, row.sampled_difference, row.excluded_area});
        diffs.push_back(row.difference);
    }
    r.metrics["differences"] = diffs;
    r.status = t.monotone ? "pass" : "fail";
    return r;
}

void write_report(const AuditReport& r, const std::string& dir) {
    std::filesystem::create_directories(dir);
    {
        nlohmann::ordered_json j;
        j["audit"] = r.name;
        j["status"] = r.status;
        j["metrics"] = r.metrics;
        std::ofstream out(std::filesystem::path(dir) / (r.name + ".json"));
        if (!out) throw Error("cannot write report in " + dir);
        out << j.dump(2) << '\n';
    }
    if (r.csv_header.empty()) return;
    std::ofstream out(std::filesystem::path(dir) / (r.name + ".csv"));
    if (!out) throw Error("cannot write report in " + dir);
    for (std::size_t i = 0; i < r.csv_header.size(); ++i) out << (i ? "," : "") << r.csv_header[i];
    out << '\n';
    for (const auto& row : r.csv_rows) {
        for (std::size_t i = 0; i < row.size(); ++i) out << (i ? "," : "") << fmt(row[i]);
        out << '\n';
    }
}

const std::vector<std::string>& audit_names() {
    static const std::vector<std::string> names = {"cov_indicator",    "cov_testfunction",  "sublevel_boxdim",
                                                   "gauss_bonnet",     "degree_positivity", "extrinsic_bound",
                                                   "weak_convergence"};
    return names;
}

RunResult run(const Scenario& s, const std::string& out_dir) {
    RunResult res;
    FixtureCache cache;
    auto selected = [&](const std::string& a) { return std::find(s.audits.begin(), s.audits.end(), a) != s.audits.end(); };
    std::vector<TestFunction> tfs = s.test_functions;
    if (tfs.empty()) tfs.push_back(TestFunction::constant(1.0));
    auto indexed = [&](AuditReport r, std::size_t i) {
        if (tfs.size() > 1) r.name += "_" + std::to_string(i);
        return r;
    };
    for (const auto& a : audit_names()) {
        if (!selected(a)) continue;
        if (a == "cov_indicator") res.reports.push_back(cov_check_indicator(s, &cache));
        else if (a == "cov_testfunction")
            for (std::size_t i = 0; i < tfs.size(); ++i) res.reports.push_back(indexed(cov_check_testfunction(s, tfs[i], &cache), i));
        else if (a == "sublevel_boxdim")
            for (std::size_t i = 0; i < tfs.size(); ++i) res.reports.push_back(indexed(sublevel_boxdim_audit(s, tfs[i], &cache), i));
        else if (a == "gauss_bonnet") res.reports.push_back(gauss_bonnet_closed(s));
        else if (a == "degree_positivity") res.reports.push_back(degree_positivity_audit(s, &cache));
        else if (a == "extrinsic_bound") res.reports.push_back(extrinsic_bound_audit(s, &cache));
        else if (a == "weak_convergence") res.reports.push_back(weak_convergence_audit(s, tfs.front()));
    }
    std::filesystem::create_directories(out_dir);
    nlohmann::ordered_json result;
    result["scenario"] = s.name;
    result["seed"] = s.seed;
    auto audits = nlohmann::ordered_json::object();
    bool failed = false;
    for (const auto& r : res.reports) {
        write_report(r, out_dir);
        audits[r.name] = {{"status", r.status}, {"metrics", r.metrics}};
        failed = failed || r.failed();
    }
    result["audits"] = audits;
    result["status"] = failed ? "fail" : "pass";
    std::ofstream out(std::filesystem::path(out_dir) / "result.json");
    if (!out) throw Error("cannot write result.json in " + out_dir);
    out << result.dump(2) << '\n';
    res.result = std::move(result);
    res.exit_code = failed ? 1 : 0;
    return res;
}

int run_file(const std::string& path, const std::string& out_override, std::string* message) {
    Scenario s;
    try {
        s = load_scenario(path);
    } catch (const ConfigError& e) {
        if (message) *message = e.what();
        return 2;
    }
    try {
        auto r = run(s, out_override.empty() ? s.output : out_override);
        if (message) *message = r.result["status"].get<std::string>();
        return r.exit_code;
    } catch (const Error& e) {
        if (message) *message = e.what();
        return 1;
    }
}

}  // namespace curvlab
