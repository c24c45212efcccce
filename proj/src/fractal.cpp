#include "curvlab/fractal.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <mutex>
#include <numbers>
#include <random>

#include <json.hpp>

namespace curvlab {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double box_gap(const double* qlo, const double* qhi, const double* lo, const double* hi, int n) {
    double s = 0.0;
    for (int a = 0; a < n; ++a) {
        const double g = std::max({0.0, lo[a] - qhi[a], qlo[a] - hi[a]});
        s += g * g;
    }
    return std::sqrt(s);
}

struct BoxImpl : Region::Impl {
    int n;
    std::vector<double> lo, hi;
    BoxImpl(std::vector<double> l, std::vector<double> h) : n(int(l.size())), lo(std::move(l)), hi(std::move(h)) {}

    bool contains(const double* x) const override {
        for (int a = 0; a < n; ++a)
            if (!(x[a] > lo[a] && x[a] < hi[a])) return false;
        return true;
    }
    DistanceBounds box_distance(const double* qlo, const double* qhi) const override {
        bool inside = true, outside = false;
        double d = kInf;
        for (int a = 0; a < n; ++a) {
            inside = inside && qlo[a] > lo[a] && qhi[a] < hi[a];
            outside = outside || qhi[a] < lo[a] || qlo[a] > hi[a];
            d = std::min({d, qlo[a] - lo[a], hi[a] - qhi[a]});
        }
        if (inside) return {d, d};
        if (outside) {
            const double g = box_gap(qlo, qhi, lo.data(), hi.data(), n);
            return {g, g};
        }
        return {0.0, 0.0};
    }
};

// nearest and farthest distance from c to the box
void box_radii(const double* c, const double* qlo, const double* qhi, int n, double& near, double& far) {
    double s0 = 0.0, s1 = 0.0;
    for (int a = 0; a < n; ++a) {
        const double g = std::max({0.0, qlo[a] - c[a], c[a] - qhi[a]});
        const double f = std::max(std::abs(c[a] - qlo[a]), std::abs(c[a] - qhi[a]));
        s0 += g * g;
        s1 += f * f;
    }
    near = std::sqrt(s0);
    far = std::sqrt(s1);
}

double sphere_gap(double near, double far, double r) {
    if (far < r) return r - far;
    if (near > r) return near - r;
    return 0.0;
}

struct AnnulusImpl : Region::Impl {
    int n;
    std::vector<double> c;
    double r0, r1;  // r0 = 0 for a ball
    AnnulusImpl(std::vector<double> center, double a, double b) : n(int(center.size())), c(std::move(center)), r0(a), r1(b) {}

    bool contains(const double* x) const override {
        double s = 0.0;
        for (int a = 0; a < n; ++a) s += (x[a] - c[a]) * (x[a] - c[a]);
        const double r = std::sqrt(s);
        return r < r1 && (r0 == 0.0 || r > r0);
    }
    DistanceBounds box_distance(const double* qlo, const double* qhi) const override {
        double near, far;
        box_radii(c.data(), qlo, qhi, n, near, far);
        double d = sphere_gap(near, far, r1);
        if (r0 > 0.0) d = std::min(d, sphere_gap(near, far, r0));
        return {d, d};
    }
};

double point_box_distance(const double* p, const double* qlo, const double* qhi) {
    const double gx = std::max({0.0, qlo[0] - p[0], p[0] - qhi[0]});
    const double gy = std::max({0.0, qlo[1] - p[1], p[1] - qhi[1]});
    return std::hypot(gx, gy);
}

double point_segment_distance(const double* p, const double* a, const double* b) {
    const double dx = b[0] - a[0], dy = b[1] - a[1];
    const double L2 = dx * dx + dy * dy;
    double t = L2 > 0.0 ? ((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / L2 : 0.0;
    t = std::clamp(t, 0.0, 1.0);
    return std::hypot(p[0] - a[0] - t * dx, p[1] - a[1] - t * dy);
}

// Liang-Barsky clip against the closed box
bool segment_meets_box(const double* a, const double* b, const double* qlo, const double* qhi) {
    double t0 = 0.0, t1 = 1.0;
    for (int ax = 0; ax < 2; ++ax) {
        const double d = b[ax] - a[ax];
        if (d == 0.0) {
            if (a[ax] < qlo[ax] || a[ax] > qhi[ax]) return false;
            continue;
        }
        double ta = (qlo[ax] - a[ax]) / d, tb = (qhi[ax] - a[ax]) / d;
        if (ta > tb) std::swap(ta, tb);
        t0 = std::max(t0, ta);
        t1 = std::min(t1, tb);
        if (t0 > t1) return false;
    }
    return true;
}

double segment_box_distance(const double* a, const double* b, const double* qlo, const double* qhi) {
    if (segment_meets_box(a, b, qlo, qhi)) return 0.0;
    double d = std::min(point_box_distance(a, qlo, qhi), point_box_distance(b, qlo, qhi));
    const double corners[4][2] = {{qlo[0], qlo[1]}, {qhi[0], qlo[1]}, {qlo[0], qhi[1]}, {qhi[0], qhi[1]}};
    for (const auto& c : corners) d = std::min(d, point_segment_distance(c, a, b));
    return d;
}

struct PolygonImpl : Region::Impl {
    std::vector<std::array<double, 2>> v;
    double x0 = 0, y0 = 0, b = 1;
    int nb = 1;
    std::vector<std::size_t> start;  // CSR bucket -> edge ids
    std::vector<std::uint32_t> edges;
    std::vector<std::size_t> row_start;  // CSR row -> nonempty bucket columns
    std::vector<int> row_cols;

    explicit PolygonImpl(std::vector<std::array<double, 2>> verts) : v(std::move(verts)) {
        const std::size_t E = v.size();
        double xmin = kInf, xmax = -kInf, ymin = kInf, ymax = -kInf, len = 0.0;
        for (std::size_t i = 0; i < E; ++i) {
            xmin = std::min(xmin, v[i][0]), xmax = std::max(xmax, v[i][0]);
            ymin = std::min(ymin, v[i][1]), ymax = std::max(ymax, v[i][1]);
            const auto& w = v[(i + 1) % E];
            len += std::hypot(w[0] - v[i][0], w[1] - v[i][1]);
        }
        const double extent = std::max(xmax - xmin, ymax - ymin);
        nb = std::clamp(static_cast<int>(std::ceil(extent / (2.0 * len / double(E)))), 1, 1024);
        b = extent / nb * (1.0 + 1e-9);
        x0 = xmin;
        y0 = ymin;
        std::vector<std::vector<std::uint32_t>> tmp(std::size_t(nb) * nb);
        for (std::size_t i = 0; i < E; ++i) {
            const auto& p = v[i];
            const auto& q = v[(i + 1) % E];
            const int c0 = col(std::min(p[0], q[0])), c1 = col(std::max(p[0], q[0]));
            const int r0 = row(std::min(p[1], q[1])), r1 = row(std::max(p[1], q[1]));
            for (int r = r0; r <= r1; ++r)
                for (int c = c0; c <= c1; ++c) tmp[std::size_t(r) * nb + c].push_back(std::uint32_t(i));
        }
        start.assign(tmp.size() + 1, 0);
        for (std::size_t k = 0; k < tmp.size(); ++k) start[k + 1] = start[k] + tmp[k].size();
        edges.reserve(start.back());
        for (auto& t : tmp) edges.insert(edges.end(), t.begin(), t.end());
        row_start.assign(nb + 1, 0);
        for (int r = 0; r < nb; ++r) {
            for (int c = 0; c < nb; ++c)
                if (!tmp[std::size_t(r) * nb + c].empty()) row_cols.push_back(c);
            row_start[r + 1] = row_cols.size();
        }
    }

    int col(double x) const { return std::clamp(static_cast<int>(std::floor((x - x0) / b)), 0, nb - 1); }
    int row(double y) const { return std::clamp(static_cast<int>(std::floor((y - y0) / b)), 0, nb - 1); }

    // crossing parity of a horizontal ray, cast toward the side with fewer
    // nonempty buckets
    bool contains(const double* x) const override {
        if (x[0] < x0 || x[1] < y0 || x[0] > x0 + nb * b || x[1] > y0 + nb * b) return false;
        const int r = row(x[1]), cx = col(x[0]);
        const int* first = row_cols.data() + row_start[r];
        const int* last = row_cols.data() + row_start[r + 1];
        const int* lb = std::lower_bound(first, last, cx);
        const bool right = last - lb <= lb - first;
        const int* from = right ? lb : first;
        const int* to = right ? last : std::upper_bound(first, last, cx);
        bool in = false;
        for (const int* pc = from; pc != to; ++pc) {
            const std::size_t k = std::size_t(r) * nb + *pc;
            for (std::size_t e = start[k]; e < start[k + 1]; ++e) {
                const auto& p = v[edges[e]];
                const auto& q = v[(edges[e] + 1) % v.size()];
                if ((p[1] > x[1]) == (q[1] > x[1])) continue;
                double xi = p[0] + (x[1] - p[1]) * (q[0] - p[0]) / (q[1] - p[1]);
                xi = std::clamp(xi, std::min(p[0], q[0]), std::max(p[0], q[0]));
                if (col(xi) != *pc) continue;
                if (right ? xi > x[0] : xi < x[0]) in = !in;
            }
        }
        return in;
    }

    DistanceBounds box_distance(const double* qlo, const double* qhi) const override {
        const int c0 = col(qlo[0]), c1 = col(qhi[0]), r0 = row(qlo[1]), r1 = row(qhi[1]);
        double best = kInf;
        auto scan = [&](int r, int c) {
            if (r < 0 || c < 0 || r >= nb || c >= nb) return;
            const std::size_t k = std::size_t(r) * nb + c;
            for (std::size_t e = start[k]; e < start[k + 1]; ++e) {
                const auto& p = v[edges[e]];
                const auto& q = v[(edges[e] + 1) % v.size()];
                best = std::min(best, segment_box_distance(p.data(), q.data(), qlo, qhi));
            }
        };
        for (int ring = 0;; ++ring) {
            if (ring > 0 && best <= (ring - 1) * b) break;
            if (c0 - ring < 0 && r0 - ring < 0 && c1 + ring >= nb && r1 + ring >= nb) break;
            for (int r = r0 - ring; r <= r1 + ring; ++r) {
                if (r == r0 - ring || r == r1 + ring) {
                    for (int c = c0 - ring; c <= c1 + ring; ++c) scan(r, c);
                } else {
                    scan(r, c0 - ring);
                    if (c1 + ring != c0 - ring) scan(r, c1 + ring);
                }
            }
        }
        return {best, best};
    }
};

struct SampledImpl : Region::Impl {
    MapField sdf;
    explicit SampledImpl(MapField f) : sdf(std::move(f)) {}

    double value_at(const double* x) const {
        const auto& g = *sdf.grid;
        const int n = g.dim();
        std::size_t base = 0;
        double frac[kMaxCubeDim];
        for (int a = 0; a < n; ++a) {
            const double u = (x[a] - g.origin()[a]) / g.spacing();
            int i = std::clamp(static_cast<int>(std::floor(u)), 0, g.shape()[a] - 2);
            frac[a] = std::clamp(u - i, 0.0, 1.0);
            base += std::size_t(i) * g.strides()[a];
        }
        double s = 0.0;
        for (int m = 0; m < (1 << n); ++m) {
            double w = 1.0;
            std::size_t node = base;
            for (int a = 0; a < n; ++a) {
                if ((m >> a) & 1) w *= frac[a], node += g.strides()[a];
                else w *= 1.0 - frac[a];
            }
            s += w * sdf.values[node];
        }
        return s;
    }

    bool contains(const double* x) const override {
        const auto& g = *sdf.grid;
        for (int a = 0; a < g.dim(); ++a) {
            const double top = g.origin()[a] + (g.shape()[a] - 1) * g.spacing();
            if (x[a] < g.origin()[a] || x[a] > top) return false;
        }
        return value_at(x) > 0.0;
    }

    // |sdf| is 1-Lipschitz; every point of the box is within half a cell
    // diagonal of a node in the widened index range.
    DistanceBounds box_distance(const double* qlo, const double* qhi) const override {
        const auto& g = *sdf.grid;
        const int n = g.dim();
        const double h = g.spacing();
        int lo[kMaxCubeDim], hi[kMaxCubeDim];
        bool clipped = false;
        for (int a = 0; a < n; ++a) {
            const double ulo = (qlo[a] - g.origin()[a]) / h, uhi = (qhi[a] - g.origin()[a]) / h;
            lo[a] = static_cast<int>(std::floor(ulo));
            hi[a] = static_cast<int>(std::ceil(uhi));
            if (lo[a] < 0 || hi[a] > g.shape()[a] - 1) clipped = true;
            lo[a] = std::clamp(lo[a], 0, g.shape()[a] - 1);
            hi[a] = std::clamp(hi[a], 0, g.shape()[a] - 1);
        }
        double mn = kInf, up = kInf;
        int idx[kMaxCubeDim];
        for (int a = 0; a < n; ++a) idx[a] = lo[a];
        double p[kMaxCubeDim];
        while (true) {
            std::size_t node = 0;
            for (int a = 0; a < n; ++a) {
                node += std::size_t(idx[a]) * g.strides()[a];
                p[a] = g.origin()[a] + idx[a] * h;
            }
            const double v = std::abs(sdf.values[node]);
            mn = std::min(mn, v);
            double gap = 0.0;
            for (int a = 0; a < n; ++a) {
                const double d = std::max({0.0, qlo[a] - p[a], p[a] - qhi[a]});
                gap += d * d;
            }
            up = std::min(up, v + std::sqrt(gap));
            int a = n - 1;
            while (a >= 0 && ++idx[a] > hi[a]) idx[a] = lo[a], --a;
            if (a < 0) break;
        }
        const double lower = clipped ? 0.0 : std::max(0.0, mn - 0.5 * h * std::sqrt(double(n)));
        return {lower, up};
    }
};

std::uint64_t mix(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

}  // namespace

Region::Region(int n, std::vector<double> lo, std::vector<double> hi, std::shared_ptr<const Impl> impl, std::string id)
    : n_(n), lo_(std::move(lo)), hi_(std::move(hi)), impl_(std::move(impl)), id_(std::move(id)) {
    if (n_ < 1 || n_ > kMaxCubeDim) throw Error("region dimension out of range");
}

Region Region::box(std::vector<double> lo, std::vector<double> hi) {
    if (lo.size() != hi.size() || lo.empty()) throw Error("box corners differ in dimension");
    for (std::size_t a = 0; a < lo.size(); ++a)
        if (!(hi[a] > lo[a])) throw Error("empty box");
    const int n = int(lo.size());
    return Region(n, lo, hi, std::make_shared<BoxImpl>(lo, hi), "box");
}

Region Region::unit_cube(int n) {
    auto r = box(std::vector<double>(n, 0.0), std::vector<double>(n, 1.0));
    r.id_ = "unit_cube";
    return r;
}

Region Region::ball(std::vector<double> center, double radius) {
    if (!(radius > 0.0)) throw Error("radius must be positive");
    const int n = int(center.size());
    std::vector<double> lo(n), hi(n);
    for (int a = 0; a < n; ++a) lo[a] = center[a] - radius, hi[a] = center[a] + radius;
    return Region(n, lo, hi, std::make_shared<AnnulusImpl>(center, 0.0, radius), "ball");
}

Region Region::annulus(std::vector<double> center, double r_in, double r_out) {
    if (!(r_in > 0.0 && r_out > r_in)) throw Error("annulus radii must satisfy 0 < r_in < r_out");
    const int n = int(center.size());
    std::vector<double> lo(n), hi(n);
    for (int a = 0; a < n; ++a) lo[a] = center[a] - r_out, hi[a] = center[a] + r_out;
    return Region(n, lo, hi, std::make_shared<AnnulusImpl>(center, r_in, r_out), "annulus");
}

Region Region::polygon(std::vector<std::array<double, 2>> vertices, std::string id) {
    if (vertices.size() < 3) throw Error("polygon needs at least three vertices");
    std::vector<double> lo = {kInf, kInf}, hi = {-kInf, -kInf};
    for (const auto& p : vertices)
        for (int a = 0; a < 2; ++a) lo[a] = std::min(lo[a], p[a]), hi[a] = std::max(hi[a], p[a]);
    return Region(2, lo, hi, std::make_shared<PolygonImpl>(std::move(vertices)), std::move(id));
}

Region Region::koch_snowflake(int generation) {
    return polygon(koch_snowflake_vertices(generation), "koch" + std::to_string(generation));
}

Region Region::sampled(const MapField& signed_distance, std::string id) {
    if (signed_distance.target_dim != 1) throw Error("signed distance must be scalar");
    const auto& g = *signed_distance.grid;
    const int n = g.dim();
    std::vector<double> lo(n), hi(n);
    for (int a = 0; a < n; ++a) {
        if (g.shape()[a] < 2) throw Error("signed distance grid needs two nodes per axis");
        lo[a] = g.origin()[a];
        hi[a] = lo[a] + (g.shape()[a] - 1) * g.spacing();
    }
    return Region(n, lo, hi, std::make_shared<SampledImpl>(signed_distance), std::move(id));
}

std::vector<std::array<double, 2>> koch_snowflake_vertices(int generation) {
    if (generation < 0 || generation > 10) throw Error("Koch generation must be in 0..10");
    std::vector<std::array<double, 2>> v;
    for (int i = 0; i < 3; ++i) {
        const double t = 0.5 * std::numbers::pi + 2.0 * std::numbers::pi * i / 3.0;
        v.push_back({std::cos(t), std::sin(t)});
    }
    const double c = 0.5, s = 0.5 * std::sqrt(3.0);
    for (int g = 0; g < generation; ++g) {
        std::vector<std::array<double, 2>> w;
        w.reserve(v.size() * 4);
        for (std::size_t i = 0; i < v.size(); ++i) {
            const auto& a = v[i];
            const auto& b = v[(i + 1) % v.size()];
            const double dx = (b[0] - a[0]) / 3.0, dy = (b[1] - a[1]) / 3.0;
            const std::array<double, 2> p1{a[0] + dx, a[1] + dy};
            const std::array<double, 2> p3{a[0] + 2.0 * dx, a[1] + 2.0 * dy};
            // counterclockwise boundary: the bump goes to the right of the edge
            const std::array<double, 2> p2{p1[0] + c * dx + s * dy, p1[1] - s * dx + c * dy};
            w.push_back(a);
            w.push_back(p1);
            w.push_back(p2);
            w.push_back(p3);
        }
        v = std::move(w);
    }
    return v;
}

double polygon_area(const std::vector<std::array<double, 2>>& v) {
    double s = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) {
        const auto& a = v[i];
        const auto& b = v[(i + 1) % v.size()];
        s += a[0] * b[1] - a[1] * b[0];
    }
    return 0.5 * std::abs(s);
}

std::vector<double> polygon_boundary_points(const std::vector<std::array<double, 2>>& v, double spacing) {
    if (!(spacing > 0.0)) throw Error("spacing must be positive");
    std::vector<double> out;
    for (std::size_t i = 0; i < v.size(); ++i) {
        const auto& a = v[i];
        const auto& b = v[(i + 1) % v.size()];
        const int m = std::max(1, static_cast<int>(std::ceil(std::hypot(b[0] - a[0], b[1] - a[1]) / spacing)));
        for (int j = 0; j < m; ++j) {
            const double t = double(j) / m;
            out.push_back(a[0] + t * (b[0] - a[0]));
            out.push_back(a[1] + t * (b[1] - a[1]));
        }
    }
    return out;
}

void WhitneyDecomposition::bounds(const DyadicCube& q, double* lo, double* hi) const {
    const double s = q.side();
    for (int a = 0; a < n; ++a) {
        lo[a] = double(q.l[a]) * s;
        hi[a] = double(q.l[a] + 1) * s;
    }
}

double WhitneyDecomposition::volume() const {
    double v = 0.0;
    for (const auto& q : cubes) v += std::pow(q.side(), n);
    return v;
}

WhitneyDecomposition whitney_decompose(const Region& U, int k_max) {
    const int n = U.dim();
    double extent = 0.0;
    for (int a = 0; a < n; ++a) extent = std::max(extent, U.hi()[a] - U.lo()[a]);
    WhitneyDecomposition W;
    W.n = n;
    W.region_id = U.id();
    W.k_root = -static_cast<int>(std::ceil(std::log2(extent)));
    W.k_max = k_max;
    if (k_max < W.k_root) throw Error("region thinner than resolution");

    // root cubes covering the bounding box
    std::vector<DyadicCube> cand;
    {
        const double scale = std::ldexp(1.0, W.k_root);
        std::int64_t lo[kMaxCubeDim], hi[kMaxCubeDim];
        for (int a = 0; a < n; ++a) {
            lo[a] = static_cast<std::int64_t>(std::floor(U.lo()[a] * scale));
            hi[a] = static_cast<std::int64_t>(std::floor(U.hi()[a] * scale));
        }
        DyadicCube q;
        q.k = W.k_root;
        for (int a = 0; a < n; ++a) q.l[a] = lo[a];
        while (true) {
            cand.push_back(q);
            int a = n - 1;
            while (a >= 0 && ++q.l[a] > hi[a]) q.l[a] = lo[a], --a;
            if (a < 0) break;
        }
    }

    enum : char { Drop, Accept, Split };
    for (int k = W.k_root; k <= k_max && !cand.empty(); ++k) {
        std::vector<char> status(cand.size());
        parallel_for(cand.size(), [&](std::size_t b, std::size_t e) {
            double lo[kMaxCubeDim], hi[kMaxCubeDim], mid[kMaxCubeDim];
            for (std::size_t i = b; i < e; ++i) {
                W.bounds(cand[i], lo, hi);
                const auto d = U.box_distance(lo, hi);
                if (d.lower > 0.0) {
                    for (int a = 0; a < n; ++a) mid[a] = 0.5 * (lo[a] + hi[a]);
                    if (!U.contains(mid)) status[i] = Drop;
                    else status[i] = d.lower >= W.diam(cand[i]) ? Accept : Split;
                } else {
                    status[i] = Split;
                }
            }
        });
        std::vector<DyadicCube> next;
        for (std::size_t i = 0; i < cand.size(); ++i) {
            if (status[i] == Accept) {
                W.cubes.push_back(cand[i]);
                ++W.census[k];
            } else if (status[i] == Split) {
                if (k == k_max) {
                    ++W.frontier;
                    continue;
                }
                for (int m = 0; m < (1 << n); ++m) {
                    DyadicCube c;
                    c.k = k + 1;
                    for (int a = 0; a < n; ++a) c.l[a] = 2 * cand[i].l[a] + ((m >> (n - 1 - a)) & 1);
                    next.push_back(c);
                }
            }
        }
        cand = std::move(next);
    }
    if (W.cubes.empty()) throw Error("region thinner than resolution");
    std::sort(W.cubes.begin(), W.cubes.end());
    return W;
}

std::size_t dyadic_overlaps(const std::vector<DyadicCube>& cubes, int n) {
    std::vector<DyadicCube> sorted = cubes;
    std::sort(sorted.begin(), sorted.end());
    if (sorted.empty()) return 0;
    const int k_min = sorted.front().k;
    std::size_t bad = 0;
    for (std::size_t i = 0; i < sorted.size(); ++i) {
        if (i > 0 && sorted[i] == sorted[i - 1]) {
            ++bad;
            continue;
        }
        for (int k = sorted[i].k - 1; k >= k_min; --k) {
            DyadicCube anc;
            anc.k = k;
            for (int a = 0; a < n; ++a) anc.l[a] = sorted[i].l[a] >> (sorted[i].k - k);
            if (std::binary_search(sorted.begin(), sorted.end(), anc)) {
                ++bad;
                break;
            }
        }
    }
    return bad;
}

WhitneyCheck verify_whitney(const Region& U, const WhitneyDecomposition& W, int probes,
                            std::size_t coverage_probes) {
    if (probes < 1) throw Error("probes must be positive");
    const int n = W.n;
    WhitneyCheck chk;
    chk.cubes = W.cubes.size();
    chk.overlaps = dyadic_overlaps(W.cubes, n);
    std::vector<double> ratio(W.cubes.size(), kInf);
    std::vector<char> ok(W.cubes.size(), 0);
    parallel_for(W.cubes.size(), [&](std::size_t b, std::size_t e) {
        double lo[kMaxCubeDim], hi[kMaxCubeDim], c[kMaxCubeDim], p[kMaxCubeDim];
        int j[kMaxCubeDim];
        for (std::size_t i = b; i < e; ++i) {
            const auto& q = W.cubes[i];
            W.bounds(q, lo, hi);
            const double side = q.side(), diam = W.diam(q), delta = side / probes;
            const double tol = delta * std::sqrt(double(n));
            for (int a = 0; a < n; ++a) c[a] = 0.5 * (lo[a] + hi[a]);
            // Chebyshev shells of the probe lattice centred on the cube
            double best = kInf;
            const int m_max = static_cast<int>(std::ceil((4.0 * diam + tol + 0.5 * side) / delta)) + 1;
            for (int m = 0; m <= m_max; ++m) {
                if (m * delta - 0.5 * side > best) break;
                for (int a = 0; a < n; ++a) j[a] = -m;
                while (true) {
                    int cheb = 0;
                    for (int a = 0; a < n; ++a) cheb = std::max(cheb, std::abs(j[a]));
                    if (cheb == m) {
                        for (int a = 0; a < n; ++a) p[a] = c[a] + j[a] * delta;
                        if (!U.contains(p)) best = std::min(best, box_gap(p, p, lo, hi, n));
                    }
                    int a = n - 1;
                    while (a >= 0 && ++j[a] > m) j[a] = -m, --a;
                    if (a < 0) break;
                }
            }
            ratio[i] = best / diam;
            ok[i] = best >= diam && best <= 4.0 * diam + tol;
        }
    });
    chk.worst_low = kInf;
    chk.worst_high = 0.0;
    for (std::size_t i = 0; i < ratio.size(); ++i) {
        chk.property_ok += ok[i] ? 1 : 0;
        chk.worst_low = std::min(chk.worst_low, ratio[i]);
        chk.worst_high = std::max(chk.worst_high, ratio[i]);
    }

    // interior points farther than twice the finest diameter from the
    // boundary must lie in the closure of some cube
    const double floor = 2.0 * std::sqrt(double(n)) * std::ldexp(1.0, -W.k_max);
    std::vector<int> gens;
    for (const auto& [k, cnt] : W.census) gens.push_back(k);
    std::vector<char> probe_in(coverage_probes, 0), probe_cov(coverage_probes, 0);
    parallel_for(coverage_probes, [&](std::size_t b, std::size_t e) {
        double x[kMaxCubeDim];
        for (std::size_t i = b; i < e; ++i) {
            for (int a = 0; a < n; ++a) {
                const double u = double(mix(i * kMaxCubeDim + a) >> 11) * 0x1.0p-53;
                x[a] = U.lo()[a] + u * (U.hi()[a] - U.lo()[a]);
            }
            if (!U.contains(x) || U.point_distance(x) < floor) continue;
            probe_in[i] = 1;
            for (int k : gens) {
                DyadicCube q;
                q.k = k;
                const double scale = std::ldexp(1.0, k);
                for (int a = 0; a < n; ++a) q.l[a] = static_cast<std::int64_t>(std::floor(x[a] * scale));
                if (std::binary_search(W.cubes.begin(), W.cubes.end(), q)) {
                    probe_cov[i] = 1;
                    break;
                }
            }
        }
    });
    for (std::size_t i = 0; i < coverage_probes; ++i) {
        chk.coverage_probes += probe_in[i];
        chk.uncovered += probe_in[i] && !probe_cov[i];
    }
    return chk;
}

double whitney_census_slope(const WhitneyDecomposition& W, int k_lo, int k_hi) {
    std::vector<double> x, y;
    for (const auto& [k, cnt] : W.census)
        if (k >= k_lo && k <= k_hi && cnt > 0) x.push_back(k), y.push_back(std::log2(double(cnt)));
    if (x.size() < 3) throw Error("census slope needs at least three populated generations");
    return fit_line(x, y).slope;
}

BoxDimension box_dimension(const std::vector<double>& points, int dim, double eps_lo, double eps_hi) {
    if (dim < 1 || dim > 3) throw Error("box counting supports dimensions 1 to 3");
    if (points.empty() || points.size() % dim) throw Error("empty point sample");
    if (!(eps_lo > 0.0) || eps_hi < 100.0 * eps_lo * (1.0 - 1e-12)) throw Error("eps range must span two decades");
    BoxDimension bd;
    // four rungs per octave; local slopes are fitted over one factor-4 window
    constexpr int kPerOctave = 4, kWindow = 8;
    for (int i = 0;; ++i) {
        const double e = eps_hi * std::pow(2.0, -double(i) / kPerOctave);
        if (e < eps_lo * (1.0 - 1e-12)) break;
        bd.eps.push_back(e);
    }
    const std::size_t P = points.size() / dim;
    double lo[3] = {kInf, kInf, kInf};
    for (std::size_t i = 0; i < P; ++i)
        for (int a = 0; a < dim; ++a) lo[a] = std::min(lo[a], points[i * dim + a]);
    bd.counts.resize(bd.eps.size());
    parallel_for(bd.eps.size(), [&](std::size_t b, std::size_t e) {
        std::vector<std::uint64_t> keys(P);
        for (std::size_t s = b; s < e; ++s) {
            const double eps = bd.eps[s];
            std::size_t best = std::numeric_limits<std::size_t>::max();
            for (int off = 0; off < (1 << dim); ++off) {
                for (std::size_t i = 0; i < P; ++i) {
                    std::uint64_t key = 0;
                    for (int a = 0; a < dim; ++a) {
                        const double shift = ((off >> a) & 1) ? 0.5 : 1.0;
                        const auto c = static_cast<std::uint64_t>((points[i * dim + a] - lo[a]) / eps + shift);
                        key = (key << 21) | (c & 0x1FFFFF);
                    }
                    keys[i] = key;
                }
                std::sort(keys.begin(), keys.end());
                best = std::min(best, std::size_t(std::unique(keys.begin(), keys.end()) - keys.begin()));
            }
            bd.counts[s] = double(best);
        }
    });
    std::vector<double> lx, ly;
    for (std::size_t s = 0; s < bd.eps.size(); ++s) {
        lx.push_back(std::log(1.0 / bd.eps[s]));
        ly.push_back(std::log(bd.counts[s]));
    }
    for (std::size_t s = 0; s + kWindow < lx.size(); ++s) {
        std::vector<double> wx(lx.begin() + s, lx.begin() + s + kWindow + 1);
        std::vector<double> wy(ly.begin() + s, ly.begin() + s + kWindow + 1);
        bd.local_slopes.push_back(fit_line(wx, wy).slope);
    }
    // longest run of local slopes with spread below 0.05; ties go to finer scales
    std::size_t best_len = 0, best_start = 0;
    for (std::size_t i = 0; i < bd.local_slopes.size(); ++i) {
        double mn = bd.local_slopes[i], mx = mn;
        std::size_t j = i;
        while (j + 1 < bd.local_slopes.size()) {
            const double v = bd.local_slopes[j + 1];
            if (std::max(mx, v) - std::min(mn, v) >= 0.05) break;
            mn = std::min(mn, v), mx = std::max(mx, v);
            ++j;
        }
        if (j - i + 1 >= best_len) best_len = j - i + 1, best_start = i;
    }
    if (best_len < 2) {
        bd.unstable = true;
        bd.range_begin = 0;
        bd.range_end = lx.size() - 1;
    } else {
        bd.range_begin = best_start;
        bd.range_end = best_start + best_len - 1 + kWindow;
    }
    std::vector<double> fx(lx.begin() + bd.range_begin, lx.begin() + bd.range_end + 1);
    std::vector<double> fy(ly.begin() + bd.range_begin, ly.begin() + bd.range_end + 1);
    bd.dimension = fit_line(fx, fy).slope;
    return bd;
}

LevelSetDimensions level_set_boxdim(const MapField& f, const std::vector<double>& levels, double alpha,
                                    double eps_lo, double eps_hi) {
    if (f.target_dim != 1) throw Error("level sets need a scalar field");
    const auto& g = *f.grid;
    const int n = g.dim();
    if (n > 3) throw Error("level sets supported for n <= 3");
    double extent = kInf;
    for (int a = 0; a < n; ++a) extent = std::min(extent, (g.shape()[a] - 1) * g.spacing());
    if (eps_lo <= 0.0) eps_lo = 2.0 * g.spacing();
    if (eps_hi <= 0.0) eps_hi = std::max(0.25 * extent, 100.0 * eps_lo);

    LevelSetDimensions out;
    out.levels = levels;
    out.bound = n - alpha + 0.1;
    out.dims.assign(levels.size(), std::numeric_limits<double>::quiet_NaN());
    out.empty.assign(levels.size(), 0);
    out.unstable.assign(levels.size(), 0);

    // cells by base node
    std::vector<std::size_t> cells;
    std::vector<int> idx(n);
    for (std::size_t node = 0; node < g.node_count(); ++node) {
        g.unravel(node, idx.data());
        bool ok = true;
        for (int a = 0; a < n && ok; ++a) ok = idx[a] + 1 < g.shape()[a];
        if (ok) cells.push_back(node);
    }
    std::vector<std::size_t> corner(std::size_t(1) << n, 0);
    for (std::size_t m = 0; m < corner.size(); ++m)
        for (int a = 0; a < n; ++a)
            if ((m >> a) & 1) corner[m] += g.strides()[a];

    for (std::size_t li = 0; li < levels.size(); ++li) {
        const double r = levels[li];
        std::vector<double> pts;
        std::vector<int> id(n);
        for (std::size_t base : cells) {
            bool above = false, below = false;
            for (std::size_t c : corner) {
                const double v = f.values[base + c] - r;
                above = above || v >= 0.0;
                below = below || v < 0.0;
            }
            if (!(above && below)) continue;
            g.unravel(base, id.data());
            for (int a = 0; a < n; ++a) pts.push_back(g.origin()[a] + (id[a] + 0.5) * g.spacing());
        }
        if (pts.empty()) {
            out.empty[li] = 1;
            continue;
        }
        auto bd = box_dimension(pts, n, eps_lo, eps_hi);
        out.dims[li] = bd.dimension;
        out.unstable[li] = bd.unstable;
    }
    std::size_t nonempty = 0, within = 0;
    for (std::size_t li = 0; li < levels.size(); ++li) {
        if (out.empty[li]) continue;
        ++nonempty;
        within += out.dims[li] <= out.bound ? 1 : 0;
    }
    out.degenerate = nonempty == 0;
    out.fraction_within = nonempty ? double(within) / nonempty : 0.0;
    return out;
}

std::vector<double> sample_levels(const MapField& f, std::size_t count, std::uint64_t seed) {
    if (f.values.empty()) throw Error("empty field");
    const auto [mn, mx] = std::minmax_element(f.values.begin(), f.values.end());
    std::mt19937_64 rng(seed);
    std::vector<double> out(count);
    for (auto& v : out) v = *mn + (*mx - *mn) * (double(rng() >> 11) * 0x1.0p-53);
    return out;
}

ScaleFamily ScaleFamily::constant(int n, std::function<void(const double*, double*)> form, std::string description) {
    ScaleFamily M;
    M.n = n;
    M.description = std::move(description);
    M.evaluate = [n, form = std::move(form)](double, const GridPtr& grid) {
        if (grid->dim() != n) throw Error("grid dimension mismatch");
        return FormField::from_function(grid, n - 1, form);
    };
    return M;
}

void TrigForm::evaluate(const double* x, double* out) const {
    for (int c = 0; c < n; ++c) out[c] = 0.0;
    for (const auto& t : terms) {
        double ph = t.phase;
        for (int a = 0; a < n; ++a) ph += t.freq[a] * x[a];
        out[t.component] += t.coef * std::sin(ph);
    }
}

double TrigForm::derivative(const double* x) const {
    double s = 0.0;
    for (const auto& t : terms) {
        double ph = t.phase;
        for (int a = 0; a < n; ++a) ph += t.freq[a] * x[a];
        // component c of an (n-1)-form omits axis n-1-c
        const int axis = n - 1 - t.component;
        s += ((axis % 2) ? -1.0 : 1.0) * t.coef * t.freq[axis] * std::cos(ph);
    }
    return s;
}

ScaleFamily TrigForm::mollified(const MollifierKernel& kernel) const {
    for (const auto& t : terms)
        if (int(t.freq.size()) != n || t.component < 0 || t.component >= n) throw Error("malformed trig term");
    ScaleFamily M;
    M.n = n;
    M.description = "mollification of a trigonometric (n-1)-form with the " + kernel.name() + " kernel";
    // damping factors per scale; a run only probes a handful of scales
    struct Cache {
        std::mutex mu;
        std::map<double, std::vector<double>> factors;
    };
    auto cache = std::make_shared<Cache>();
    TrigForm self = *this;
    M.evaluate = [self, kernel, cache](double t, const GridPtr& grid) {
        if (grid->dim() != self.n) throw Error("grid dimension mismatch");
        std::vector<double> f;
        {
            std::lock_guard<std::mutex> lock(cache->mu);
            auto it = cache->factors.find(t);
            if (it == cache->factors.end()) {
                for (const auto& term : self.terms) {
                    double k2 = 0.0;
                    for (double w : term.freq) k2 += w * w;
                    f.push_back(kernel_fourier_factor(kernel, self.n, std::sqrt(k2) * t));
                }
                cache->factors.emplace(t, f);
            } else {
                f = it->second;
            }
        }
        TrigForm damped = self;
        for (std::size_t j = 0; j < damped.terms.size(); ++j) damped.terms[j].coef *= f[j];
        return FormField::from_function(grid, self.n - 1, [&](const double* x, double* o) { damped.evaluate(x, o); });
    };
    return M;
}

namespace {

// Oriented boundary integral of an (n-1)-form over the box of a local grid,
// trapezoid rule on each face.
double boundary_integral(const FormField& F) {
    const auto& g = *F.grid;
    const int n = g.dim();
    const double h = g.spacing();
    std::vector<int> idx(n);
    double total = 0.0;
    for (std::size_t node = 0; node < g.node_count(); ++node) {
        g.unravel(node, idx.data());
        for (int a = 0; a < n; ++a) {
            const bool at_lo = idx[a] == 0, at_hi = idx[a] == g.shape()[a] - 1;
            if (!at_lo && !at_hi) continue;
            double w = 1.0;
            for (int b = 0; b < n; ++b) {
                if (b == a) continue;
                w *= (idx[b] == 0 || idx[b] == g.shape()[b] - 1) ? 0.5 * h : h;
            }
            const int comp = n - 1 - a;
            const double s = ((a % 2) ? -1.0 : 1.0) * (at_hi ? 1.0 : -1.0);
            total += s * w * F.at(node, comp);
        }
    }
    return total;
}

}  // namespace

FractalIntegral fractal_integral(const ScaleFamily& M, const WhitneyDecomposition& W, const FractalIntegralOptions& opt) {
    const int n = W.n;
    if (M.n != n) throw Error("scale family dimension mismatch");
    if (!M.evaluate) throw Error("scale family has no evaluator");
    if (opt.local_cells < 2) throw Error("local_cells must be at least 2");

    FractalIntegral out;
    const int from = opt.slope_from == -1000 ? std::max(W.k_root, W.k_max - 4) : std::max(opt.slope_from, W.k_root);
    out.census_slope = whitney_census_slope(W, from, W.k_max);
    if (out.census_slope >= n - 1 + opt.theta_est) throw Error("integral not certified");
    out.ratio = std::pow(2.0, out.census_slope - n);
    out.t0 = opt.t0 > 0.0 ? opt.t0 : 0.5 * std::sqrt(double(n)) * std::ldexp(1.0, -W.k_max);

    if (!M.domain_lo.empty()) {
        double lo[kMaxCubeDim], hi[kMaxCubeDim];
        for (const auto& q : W.cubes) {
            W.bounds(q, lo, hi);
            for (int a = 0; a < n; ++a)
                if (lo[a] < M.domain_lo[a] || hi[a] > M.domain_hi[a]) throw Error("cube outside evaluator grid");
        }
    }

    const std::size_t C = W.cubes.size();
    std::vector<double> interior(C), bnd(C), bnd_half(C);
    parallel_for(C, [&](std::size_t b, std::size_t e) {
        double lo[kMaxCubeDim], hi[kMaxCubeDim];
        for (std::size_t i = b; i < e; ++i) {
            const auto& q = W.cubes[i];
            W.bounds(q, lo, hi);
            const int m = opt.local_cells;
            auto grid = make_grid(std::vector<int>(n, m + 1), q.side() / m, std::vector<double>(lo, lo + n));
            const double dq = W.diam(q);
            auto Mq = M.evaluate(dq, grid);
            NodeMask all(grid->node_count(), 1);
            interior[i] = integrate_top_form(exterior_derivative(Mq), all).value;
            bnd[i] = boundary_integral(axpy(M.evaluate(out.t0, grid), -1.0, Mq));
            if (opt.t0_sensitivity) bnd_half[i] = boundary_integral(axpy(M.evaluate(0.5 * out.t0, grid), -1.0, Mq));
        }
    });
    double shift = 0.0;
    for (std::size_t i = 0; i < C; ++i) {
        out.interior += interior[i];
        out.boundary += bnd[i];
        out.per_generation[W.cubes[i].k] += interior[i] + bnd[i];
        shift += bnd_half[i] - bnd[i];
    }
    out.sum = out.interior + out.boundary;
    const double last = out.per_generation.rbegin()->second;
    out.tail = last * out.ratio / (1.0 - out.ratio);
    out.value = out.sum + out.tail;
    out.t0_sensitivity = std::abs(shift);
    return out;
}

void write_whitney_csv(const WhitneyDecomposition& W, const std::string& path) {
    std::FILE* f = std::fopen(path.c_str(), "w");
    if (!f) throw Error("cannot write " + path);
    std::fprintf(f, "k");
    for (int a = 0; a < W.n; ++a) std::fprintf(f, ",l%d", a);
    std::fprintf(f, "\n");
    for (const auto& q : W.cubes) {
        std::fprintf(f, "%d", q.k);
        for (int a = 0; a < W.n; ++a) std::fprintf(f, ",%lld", static_cast<long long>(q.l[a]));
        std::fprintf(f, "\n");
    }
    std::fclose(f);
}

std::string whitney_summary_json(const WhitneyDecomposition& W, int k_lo, int k_hi) {
    nlohmann::ordered_json j;
    j["region"] = W.region_id;
    j["n"] = W.n;
    j["k_root"] = W.k_root;
    j["k_max"] = W.k_max;
    j["cubes"] = W.cubes.size();
    j["frontier"] = W.frontier;
    j["volume"] = W.volume();
    nlohmann::ordered_json census = nlohmann::ordered_json::object();
    for (const auto& [k, c] : W.census) census[std::to_string(k)] = c;
    j["census"] = census;
    j["slope_range"] = {k_lo, k_hi};
    try {
        j["census_slope"] = whitney_census_slope(W, k_lo, k_hi);
    } catch (const Error&) {
        j["census_slope"] = nullptr;
    }
    return j.dump(2);
}

}  // namespace curvlab
