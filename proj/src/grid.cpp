#include "curvlab/grid.hpp"

#include <algorithm>
#include <cmath>
#include <iterator>
#include <map>
#include <mutex>

namespace curvlab {

ChartGrid::ChartGrid(std::vector<int> shape, double spacing, std::vector<double> origin)
    : shape_(std::move(shape)), h_(spacing), origin_(std::move(origin)) {
    if (shape_.empty()) throw Error("grid needs at least one axis");
    if (origin_.size() != shape_.size()) throw Error("grid origin and shape disagree in dimension");
    if (!(h_ > 0) || !std::isfinite(h_)) throw Error("grid spacing must be positive");
    for (int s : shape_)
        if (s < 5) throw Error("every grid axis needs at least 5 nodes");
    const int n = dim();
    strides_.assign(n, 1);
    for (int a = n - 2; a >= 0; --a) strides_[a] = strides_[a + 1] * static_cast<std::size_t>(shape_[a + 1]);
    count_ = strides_[0] * static_cast<std::size_t>(shape_[0]);
    interior_.assign(count_, 1);
    std::vector<int> m(n);
    for (std::size_t i = 0; i < count_; ++i) {
        unravel(i, m.data());
        for (int a = 0; a < n; ++a)
            if (m[a] < 2 || m[a] > shape_[a] - 3) {
                interior_[i] = 0;
                break;
            }
    }
}

std::size_t ChartGrid::index(const int* multi) const {
    std::size_t idx = 0;
    for (int a = 0; a < dim(); ++a) idx += strides_[a] * static_cast<std::size_t>(multi[a]);
    return idx;
}

void ChartGrid::unravel(std::size_t node, int* multi) const {
    for (int a = 0; a < dim(); ++a) {
        multi[a] = static_cast<int>(node / strides_[a]);
        node %= strides_[a];
    }
}

double ChartGrid::coord(std::size_t node, int axis) const {
    const auto i = (node / strides_[axis]) % static_cast<std::size_t>(shape_[axis]);
    return origin_[axis] + h_ * static_cast<double>(i);
}

std::vector<double> ChartGrid::point(std::size_t node) const {
    std::vector<double> x(dim());
    for (int a = 0; a < dim(); ++a) x[a] = coord(node, a);
    return x;
}

std::vector<double> ChartGrid::upper() const {
    std::vector<double> u(dim());
    for (int a = 0; a < dim(); ++a) u[a] = origin_[a] + h_ * (shape_[a] - 1);
    return u;
}

bool ChartGrid::same_as(const ChartGrid& o) const {
    return shape_ == o.shape_ && h_ == o.h_ && origin_ == o.origin_;
}

GridPtr make_grid(std::vector<int> shape, double spacing, std::vector<double> origin) {
    return std::make_shared<const ChartGrid>(std::move(shape), spacing, std::move(origin));
}

namespace {

void build_indices(int n, int k, int start, std::vector<int>& cur, std::vector<std::vector<int>>& out) {
    if (static_cast<int>(cur.size()) == k) {
        out.push_back(cur);
        return;
    }
    for (int i = start; i < n; ++i) {
        cur.push_back(i);
        build_indices(n, k, i + 1, cur, out);
        cur.pop_back();
    }
}

struct WedgeEntry {
    int a, b, out, sign;
    bool pair_with_next;  // equal degrees: (I,J) and (J,I) are summed together first
};

// Entries grouped by output index. For equal degrees the two orderings of an
// unordered split are adjacent so wedge(a,b) and wedge(b,a) add the same
// products in the same order.
const std::vector<WedgeEntry>& wedge_table(int n, int p, int q) {
    static std::mutex mu;
    static std::map<std::array<int, 3>, std::vector<WedgeEntry>> cache;
    std::lock_guard<std::mutex> lock(mu);
    auto key = std::array<int, 3>{n, p, q};
    auto it = cache.find(key);
    if (it != cache.end()) return it->second;
    const auto& ia = multi_indices(n, p);
    const auto& ib = multi_indices(n, q);
    auto split_sign = [](const std::vector<int>& x, const std::vector<int>& y, bool& overlap) {
        int inv = 0;
        overlap = false;
        for (int u : x)
            for (int v : y) {
                if (u == v) overlap = true;
                if (u > v) ++inv;
            }
        return (inv % 2) ? -1 : 1;
    };
    std::vector<WedgeEntry> table;
    const auto& outs = multi_indices(n, p + q);
    for (std::size_t o = 0; o < outs.size(); ++o) {
        for (std::size_t a = 0; a < ia.size(); ++a) {
            bool subset = std::includes(outs[o].begin(), outs[o].end(), ia[a].begin(), ia[a].end());
            if (!subset) continue;
            std::vector<int> rest;
            std::set_difference(outs[o].begin(), outs[o].end(), ia[a].begin(), ia[a].end(), std::back_inserter(rest));
            const int b = multi_index_position(n, rest);
            bool overlap;
            const int s = split_sign(ia[a], ib[b], overlap);
            if (p == q && p > 0) {
                if (static_cast<int>(a) > b) continue;  // emitted with its partner
                table.push_back({static_cast<int>(a), b, static_cast<int>(o), s, true});
                bool ov2;
                const int s2 = split_sign(ib[b], ia[a], ov2);
                table.push_back({b, static_cast<int>(a), static_cast<int>(o), s2, false});
            } else {
                table.push_back({static_cast<int>(a), b, static_cast<int>(o), s, false});
            }
        }
    }
    return cache.emplace(key, std::move(table)).first->second;
}

}  // namespace

const std::vector<std::vector<int>>& multi_indices(int n, int k) {
    static std::mutex mu;
    static std::map<std::pair<int, int>, std::vector<std::vector<int>>> cache;
    std::lock_guard<std::mutex> lock(mu);
    auto key = std::make_pair(n, k);
    auto it = cache.find(key);
    if (it != cache.end()) return it->second;
    std::vector<std::vector<int>> out;
    std::vector<int> cur;
    if (k >= 0 && k <= n) build_indices(n, k, 0, cur, out);
    return cache.emplace(key, std::move(out)).first->second;
}

int multi_index_position(int n, const std::vector<int>& sorted_indices) {
    const auto& all = multi_indices(n, static_cast<int>(sorted_indices.size()));
    auto it = std::lower_bound(all.begin(), all.end(), sorted_indices);
    if (it == all.end() || *it != sorted_indices) throw Error("not an increasing multi-index");
    return static_cast<int>(it - all.begin());
}

int FormField::ncoef() const { return static_cast<int>(binomial(grid->dim(), degree)); }

FormField FormField::zeros(GridPtr grid, int degree) {
    if (degree < 0 || degree > grid->dim()) throw Error("form degree out of range");
    FormField f;
    f.grid = std::move(grid);
    f.degree = degree;
    f.coeffs.assign(f.grid->node_count() * static_cast<std::size_t>(f.ncoef()), 0.0);
    return f;
}

FormField FormField::from_function(GridPtr grid, int degree,
                                   const std::function<void(const double*, double*)>& fn) {
    FormField f = zeros(std::move(grid), degree);
    const int nc = f.ncoef();
    const auto& g = *f.grid;
    parallel_for(g.node_count(), [&](std::size_t lo, std::size_t hi) {
        for (std::size_t i = lo; i < hi; ++i) {
            auto x = g.point(i);
            fn(x.data(), &f.coeffs[i * nc]);
        }
    });
    return f;
}

MapField MapField::from_function(GridPtr grid, int target_dim,
                                 const std::function<void(const double*, double*)>& fn) {
    MapField m;
    m.grid = std::move(grid);
    m.target_dim = target_dim;
    m.values.assign(m.grid->node_count() * static_cast<std::size_t>(target_dim), 0.0);
    const auto& g = *m.grid;
    parallel_for(g.node_count(), [&](std::size_t lo, std::size_t hi) {
        for (std::size_t i = lo; i < hi; ++i) {
            auto x = g.point(i);
            fn(x.data(), &m.values[i * target_dim]);
        }
    });
    return m;
}

std::vector<double> partial_derivative(const ChartGrid& grid, const std::vector<double>& data, int ncomp,
                                       int axis, EdgeClosure closure) {
    if (axis < 0 || axis >= grid.dim()) throw Error("derivative axis out of range");
    if (data.size() != grid.node_count() * static_cast<std::size_t>(ncomp))
        throw Error("field size does not match grid");
    std::vector<double> out(data.size());
    const std::size_t s = grid.strides()[axis] * static_cast<std::size_t>(ncomp);
    const int N = grid.shape()[axis];
    const double h = grid.spacing();
    const double c12 = 1.0 / (12.0 * h), c2 = 1.0 / (2.0 * h);
    parallel_for(grid.node_count(), [&](std::size_t lo, std::size_t hi) {
        for (std::size_t node = lo; node < hi; ++node) {
            const int i = static_cast<int>((node / grid.strides()[axis]) % static_cast<std::size_t>(N));
            for (int c = 0; c < ncomp; ++c) {
                const double* f = &data[node * ncomp + c];
                double d;
                if (i >= 2 && i <= N - 3) {
                    d = (f[-2 * (long)s] - 8 * f[-(long)s] + 8 * f[s] - f[2 * s]) * c12;
                } else if (closure == EdgeClosure::FourthOrder) {
                    if (i == 0)
                        d = (-25 * f[0] + 48 * f[s] - 36 * f[2 * s] + 16 * f[3 * s] - 3 * f[4 * s]) * c12;
                    else if (i == 1)
                        d = (-3 * f[-(long)s] - 10 * f[0] + 18 * f[s] - 6 * f[2 * s] + f[3 * s]) * c12;
                    else if (i == N - 1)
                        d = -(-25 * f[0] + 48 * f[-(long)s] - 36 * f[-2 * (long)s] + 16 * f[-3 * (long)s] -
                              3 * f[-4 * (long)s]) *
                            c12;
                    else
                        d = -(-3 * f[s] - 10 * f[0] + 18 * f[-(long)s] - 6 * f[-2 * (long)s] + f[-3 * (long)s]) *
                            c12;
                } else {
                    if (i == 0)
                        d = (-3 * f[0] + 4 * f[s] - f[2 * s]) * c2;
                    else if (i == N - 1)
                        d = (3 * f[0] - 4 * f[-(long)s] + f[-2 * (long)s]) * c2;
                    else
                        d = (f[s] - f[-(long)s]) * c2;
                }
                out[node * ncomp + c] = d;
            }
        }
    });
    return out;
}

FormField exterior_derivative(const FormField& f, EdgeClosure closure) {
    const int n = f.grid->dim();
    if (f.degree >= n) throw Error("top-degree form has no exterior derivative");
    const int k = f.degree;
    const int nin = f.ncoef();
    std::vector<std::vector<double>> partials(n);
    for (int a = 0; a < n; ++a) partials[a] = partial_derivative(*f.grid, f.coeffs, nin, a, closure);
    FormField out = FormField::zeros(f.grid, k + 1);
    const int nout = out.ncoef();
    const auto& outs = multi_indices(n, k + 1);
    struct Term {
        int out, axis, in, sign;
    };
    std::vector<Term> terms;
    for (int J = 0; J < nout; ++J) {
        const auto& idx = outs[J];
        for (int p = 0; p <= k; ++p) {
            std::vector<int> rest;
            for (int q = 0; q <= k; ++q)
                if (q != p) rest.push_back(idx[q]);
            terms.push_back({J, idx[p], multi_index_position(n, rest), (p % 2) ? -1 : 1});
        }
    }
    const std::size_t N = f.grid->node_count();
    parallel_for(N, [&](std::size_t lo, std::size_t hi) {
        for (std::size_t node = lo; node < hi; ++node)
            for (const auto& t : terms)
                out.coeffs[node * nout + t.out] += t.sign * partials[t.axis][node * nin + t.in];
    });
    return out;
}

FormField wedge(const FormField& a, const FormField& b) {
    if (!a.grid->same_as(*b.grid)) throw Error("wedge of forms on different grids");
    const int n = a.grid->dim();
    if (a.degree + b.degree > n) throw Error("wedge degree exceeds dimension");
    if (a.degree > b.degree) {
        FormField r = wedge(b, a);
        if ((a.degree * b.degree) % 2)
            for (auto& c : r.coeffs) c = -c;
        return r;
    }
    FormField out = FormField::zeros(a.grid, a.degree + b.degree);
    const auto& table = wedge_table(n, a.degree, b.degree);
    const int na = a.ncoef(), nb = b.ncoef(), no = out.ncoef();
    const std::size_t N = a.grid->node_count();
    parallel_for(N, [&](std::size_t lo, std::size_t hi) {
        for (std::size_t node = lo; node < hi; ++node) {
            const double* pa = &a.coeffs[node * na];
            const double* pb = &b.coeffs[node * nb];
            double* po = &out.coeffs[node * no];
            for (std::size_t t = 0; t < table.size(); ++t) {
                const auto& e = table[t];
                double v = e.sign * (pa[e.a] * pb[e.b]);
                if (e.pair_with_next) {
                    const auto& f = table[++t];
                    v += f.sign * (pa[f.a] * pb[f.b]);
                }
                po[e.out] += v;
            }
        }
    });
    return out;
}

FormField axpy(const FormField& a, double s, const FormField& b) {
    if (a.degree != b.degree || !a.grid->same_as(*b.grid)) throw Error("axpy: incompatible forms");
    FormField out = a;
    for (std::size_t i = 0; i < out.coeffs.size(); ++i) out.coeffs[i] += s * b.coeffs[i];
    return out;
}

FormField scaled(const FormField& a, double s) {
    FormField out = a;
    for (auto& c : out.coeffs) c *= s;
    return out;
}

FormField multiply(const FormField& a, const std::vector<double>& scalar) {
    if (scalar.size() != a.grid->node_count()) throw Error("multiply: scalar size mismatch");
    FormField out = a;
    const int nc = a.ncoef();
    for (std::size_t i = 0; i < scalar.size(); ++i)
        for (int c = 0; c < nc; ++c) out.coeffs[i * nc + c] *= scalar[i];
    return out;
}

std::vector<double> top_form_weights(const ChartGrid& g, const NodeMask& region) {
    if (region.size() != g.node_count()) throw Error("region mask size does not match grid");
    const int n = g.dim();
    const int corners = 1 << n;
    std::vector<std::size_t> offs(corners, 0);
    for (int c = 0; c < corners; ++c)
        for (int a = 0; a < n; ++a)
            if (c & (1 << a)) offs[c] += g.strides()[a];
    const double w = std::pow(g.spacing(), n) / corners;
    std::vector<double> weights(g.node_count(), 0.0);
    std::vector<int> m(n);
    for (std::size_t node = 0; node < g.node_count(); ++node) {
        g.unravel(node, m.data());
        bool cell = true;
        for (int a = 0; a < n; ++a)
            if (m[a] >= g.shape()[a] - 1) {
                cell = false;
                break;
            }
        if (!cell) continue;
        bool full = true;
        for (int c = 0; c < corners && full; ++c) full = region[node + offs[c]] != 0;
        if (!full) continue;
        for (int c = 0; c < corners; ++c) weights[node + offs[c]] += w;
    }
    return weights;
}

IntegralResult integrate_top_form(const FormField& f, const NodeMask& region) {
    if (f.degree != f.grid->dim()) throw Error("integrate_top_form needs a top-degree form");
    const auto w = top_form_weights(*f.grid, region);
    IntegralResult r;
    bool any = false;
    for (std::size_t i = 0; i < w.size(); ++i) {
        if (w[i] == 0) continue;
        any = true;
        r.value += w[i] * f.coeffs[i];
    }
    r.empty = !any;
    return r;
}

std::vector<double> interpolate(const MapField& f, const std::vector<double>& x) {
    const auto& g = *f.grid;
    const int n = g.dim();
    if (static_cast<int>(x.size()) != n) throw Error("query dimension mismatch");
    std::vector<int> base(n);
    std::vector<double> frac(n);
    for (int a = 0; a < n; ++a) {
        const double t = (x[a] - g.origin()[a]) / g.spacing();
        const double top = g.shape()[a] - 1;
        if (!(t >= -1e-9) || !(t <= top + 1e-9)) throw Error("query outside chart");
        int i = static_cast<int>(std::floor(t));
        i = std::clamp(i, 0, g.shape()[a] - 2);
        base[a] = i;
        frac[a] = std::clamp(t - i, 0.0, 1.0);
    }
    std::vector<double> out(f.target_dim, 0.0);
    const std::size_t b = g.index(base.data());
    for (int c = 0; c < (1 << n); ++c) {
        double w = 1;
        std::size_t node = b;
        for (int a = 0; a < n; ++a) {
            if (c & (1 << a)) {
                w *= frac[a];
                node += g.strides()[a];
            } else {
                w *= 1 - frac[a];
            }
        }
        if (w == 0) continue;
        for (int k = 0; k < f.target_dim; ++k) out[k] += w * f.at(node, k);
    }
    return out;
}

double max_abs(const std::vector<double>& v, const NodeMask* mask, int ncomp) {
    double m = 0;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (mask && !(*mask)[i / ncomp]) continue;
        m = std::max(m, std::abs(v[i]));
    }
    return m;
}

}  // namespace curvlab
