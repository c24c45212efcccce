#include "curvlab/degree.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <mutex>
#include <numbers>
#include <numeric>

#include <json.hpp>

#include "curvlab/geometry.hpp"

namespace curvlab {

namespace {

constexpr int kMaxDim = 5;

// Kuhn triangulation of the unit n-cube: simplex s has vertices given by
// corner bitmasks, with orientation sign sgn(pi).
struct Kuhn {
    int n = 0;
    std::vector<std::vector<int>> vmask;
    std::vector<int> sign;
    std::vector<std::size_t> corner_offset;

    Kuhn(const ChartGrid& grid) : n(grid.dim()) {
        std::vector<int> p(n);
        std::iota(p.begin(), p.end(), 0);
        do {
            std::vector<int> m(n + 1, 0);
            for (int k = 1; k <= n; ++k) m[k] = m[k - 1] | (1 << p[k - 1]);
            vmask.push_back(m);
            sign.push_back(permutation_sign(p));
        } while (std::next_permutation(p.begin(), p.end()));
        corner_offset.assign(std::size_t(1) << n, 0);
        for (std::size_t m = 0; m < corner_offset.size(); ++m)
            for (int a = 0; a < n; ++a)
                if ((m >> a) & 1) corner_offset[m] += grid.strides()[a];
    }
};

void check_sphere_map(const MapField& u, const NodeMask& region) {
    const int n = u.grid->dim();
    if (u.target_dim != n + 1) throw Error("map must take values in S^n with n the chart dimension");
    if (region.size() != u.grid->node_count()) throw Error("region mask does not match the grid");
    for (std::size_t k = 0; k < region.size(); ++k) {
        if (!region[k]) continue;
        double s = 0.0;
        for (int c = 0; c <= n; ++c) s += u.at(k, c) * u.at(k, c);
        if (std::abs(std::sqrt(s) - 1.0) > 1e-6) throw Error("map values are not unit vectors");
    }
}

// Base nodes of closed grid cells whose corners all lie in region.
std::vector<std::size_t> region_cells(const ChartGrid& grid, const NodeMask& region, const Kuhn& kuhn) {
    std::vector<std::size_t> out;
    std::vector<int> multi(grid.dim());
    for (std::size_t node = 0; node < grid.node_count(); ++node) {
        if (!region[node]) continue;
        grid.unravel(node, multi.data());
        bool ok = true;
        for (int a = 0; a < grid.dim() && ok; ++a) ok = multi[a] + 1 < grid.shape()[a];
        for (std::size_t m = 1; ok && m < kuhn.corner_offset.size(); ++m) ok = region[node + kuhn.corner_offset[m]] != 0;
        if (ok) out.push_back(node);
    }
    return out;
}

// Vertex node ids of the (n-1)-simplices on the boundary of the union of
// region cells, n ids per facet.
std::vector<std::size_t> boundary_facets(const ChartGrid& grid, const std::vector<std::size_t>& cells) {
    const int n = grid.dim();
    std::vector<char> is_cell(grid.node_count(), 0);
    for (auto c : cells) is_cell[c] = 1;
    std::vector<std::size_t> out;
    std::vector<int> multi(n);
    for (auto base : cells) {
        grid.unravel(base, multi.data());
        for (int a = 0; a < n; ++a) {
            for (int side = 0; side < 2; ++side) {
                bool open;
                if (side == 0) open = multi[a] == 0 || !is_cell[base - grid.strides()[a]];
                else open = multi[a] + 2 >= grid.shape()[a] || !is_cell[base + grid.strides()[a]];
                if (!open) continue;
                std::vector<int> others;
                for (int b = 0; b < n; ++b)
                    if (b != a) others.push_back(b);
                const std::size_t start = base + side * grid.strides()[a];
                do {
                    std::size_t v = start;
                    out.push_back(v);
                    for (int b : others) {
                        v += grid.strides()[b];
                        out.push_back(v);
                    }
                } while (std::next_permutation(others.begin(), others.end()));
            }
        }
    }
    return out;
}

double dot(const double* a, const double* b, int d) {
    double s = 0.0;
    for (int i = 0; i < d; ++i) s += a[i] * b[i];
    return s;
}

// Euclidean distance from the origin to the convex hull of m points in R^dim.
double hull_distance(const double* P, int m, int dim) {
    if (m == 1) return std::sqrt(dot(P, P, dim));
    double G[kMaxDim][kMaxDim + 1];
    double scale = 0.0;
    for (int j = 1; j < m; ++j) {
        for (int k = 1; k < m; ++k) {
            double s = 0.0;
            for (int d = 0; d < dim; ++d) s += (P[j * dim + d] - P[d]) * (P[k * dim + d] - P[d]);
            G[j - 1][k - 1] = s;
        }
        double r = 0.0;
        for (int d = 0; d < dim; ++d) r -= (P[j * dim + d] - P[d]) * P[d];
        G[j - 1][m - 1] = r;
        scale = std::max(scale, G[j - 1][j - 1]);
    }
    const int q = m - 1;
    bool singular = scale == 0.0;
    for (int c = 0; c < q && !singular; ++c) {
        int piv = c;
        for (int r = c + 1; r < q; ++r)
            if (std::abs(G[r][c]) > std::abs(G[piv][c])) piv = r;
        if (std::abs(G[piv][c]) <= 1e-13 * scale) {
            singular = true;
            break;
        }
        if (piv != c)
            for (int k = 0; k <= q; ++k) std::swap(G[c][k], G[piv][k]);
        for (int r = c + 1; r < q; ++r) {
            double f = G[r][c] / G[c][c];
            for (int k = c; k <= q; ++k) G[r][k] -= f * G[c][k];
        }
    }
    double mu[kMaxDim];
    bool inside = !singular;
    if (!singular) {
        for (int c = q - 1; c >= 0; --c) {
            double s = G[c][q];
            for (int k = c + 1; k < q; ++k) s -= G[c][k] * mu[k];
            mu[c] = s / G[c][c];
        }
        double l0 = 1.0;
        for (int c = 0; c < q; ++c) {
            l0 -= mu[c];
            inside = inside && mu[c] >= 0.0;
        }
        inside = inside && l0 >= 0.0;
    }
    if (inside) {
        double x2 = 0.0;
        for (int d = 0; d < dim; ++d) {
            double x = P[d];
            for (int c = 0; c < q; ++c) x += mu[c] * (P[(c + 1) * dim + d] - P[d]);
            x2 += x * x;
        }
        return std::sqrt(x2);
    }
    double best = std::numeric_limits<double>::infinity();
    double sub[kMaxDim * (kMaxDim + 1)];
    for (int drop = 0; drop < m; ++drop) {
        int w = 0;
        for (int j = 0; j < m; ++j)
            if (j != drop)
                for (int d = 0; d < dim; ++d) sub[w++] = P[j * dim + d];
        best = std::min(best, hull_distance(sub, m - 1, dim));
    }
    return best;
}

double max_pairwise_angle(const double* const* V, int m, int dim) {
    double a = 0.0;
    for (int i = 0; i < m; ++i)
        for (int j = i + 1; j < m; ++j) a = std::max(a, angle_between(V[i], V[j], dim));
    return a;
}

// Geodesic distance from unit z to the geodesic simplex spanned by m unit
// vectors: atan of the distance to the origin in the gnomonic chart at z.
double geodesic_distance(const double* z, const double* const* V, int m, int dim) {
    double P[kMaxDim * (kMaxDim + 1)];
    for (int i = 0; i < m; ++i) {
        double d = dot(V[i], z, dim);
        if (d <= 0.0) return std::max(0.0, 0.5 * std::numbers::pi - max_pairwise_angle(V, m, dim));
        for (int c = 0; c < dim; ++c) P[i * dim + c] = V[i][c] / d - z[c];
    }
    return std::atan(hull_distance(P, m, dim));
}

double det_columns(const double* const* cols, int dim) {
    if (dim == 3) {
        const double *a = cols[0], *b = cols[1], *c = cols[2];
        return a[0] * (b[1] * c[2] - b[2] * c[1]) - a[1] * (b[0] * c[2] - b[2] * c[0]) +
               a[2] * (b[0] * c[1] - b[1] * c[0]);
    }
    if (dim == 2) return cols[0][0] * cols[1][1] - cols[0][1] * cols[1][0];
    std::vector<double> m(dim * dim);
    for (int r = 0; r < dim; ++r)
        for (int c = 0; c < dim; ++c) m[r * dim + c] = cols[c][r];
    return small_det(m, dim);
}

struct Count {
    int degree = 0;
    int hits = 0;
    bool irregular = false;
};

// Signed containment of z in the cone over one image simplex. Facet
// determinants use vertex ids in ascending order so that neighbouring
// simplices see bitwise identical values on shared facets.
void count_simplex(const double* const* V, const std::size_t* ids, int orient, const double* z, int n, int depth,
                   int max_depth, Count& out) {
    const int dim = n + 1;
    bool far_side = false;
    for (int i = 0; i <= n; ++i) far_side = far_side || dot(V[i], z, dim) <= 0.0;
    if (far_side) {
        if (max_pairwise_angle(V, n + 1, dim) < 0.5 * std::numbers::pi) return;
        if (depth >= max_depth) {
            out.irregular = true;
            return;
        }
        int a = 0, b = 1;
        double best = -1.0;
        for (int i = 0; i <= n; ++i)
            for (int j = i + 1; j <= n; ++j) {
                double t = angle_between(V[i], V[j], dim);
                if (t > best) best = t, a = i, b = j;
            }
        double mid[kMaxDim + 1];
        double s = 0.0;
        for (int c = 0; c < dim; ++c) mid[c] = V[a][c] + V[b][c], s += mid[c] * mid[c];
        if (s == 0.0) {
            out.irregular = true;
            return;
        }
        for (int c = 0; c < dim; ++c) mid[c] /= std::sqrt(s);
        const std::size_t mid_id = std::numeric_limits<std::size_t>::max();
        for (int child = 0; child < 2; ++child) {
            const double* W[kMaxDim + 1];
            std::size_t wid[kMaxDim + 1];
            for (int i = 0; i <= n; ++i) W[i] = V[i], wid[i] = ids[i];
            const int r = child == 0 ? a : b;
            W[r] = mid;
            wid[r] = mid_id;
            count_simplex(W, wid, orient, z, n, depth + 1, max_depth, out);
        }
        return;
    }

    int pos = 0, neg = 0, zero = 0;
    for (int i = 0; i <= n; ++i) {
        int order[kMaxDim + 1];
        int m = 0;
        for (int j = 0; j <= n; ++j)
            if (j != i) order[m++] = j;
        // insertion sort by id, tracking parity
        int parity = 0;
        for (int p = 1; p < n; ++p)
            for (int q = p; q > 0 && ids[order[q - 1]] > ids[order[q]]; --q) {
                std::swap(order[q - 1], order[q]);
                parity ^= 1;
            }
        const double* cols[kMaxDim + 1];
        for (int j = 0; j < n; ++j) cols[j] = V[order[j]];
        cols[n] = z;
        double g = det_columns(cols, dim);
        if (parity) g = -g;
        if ((n - i) % 2) g = -g;
        if (g > 0.0) ++pos;
        else if (g < 0.0) ++neg;
        else ++zero;
    }
    if (pos > 0 && neg > 0) return;
    if (zero == 0) {
        int s = pos > 0 ? 1 : -1;
        out.degree += ((n % 2) ? -s : s) * orient;
        out.hits += 1;
        return;
    }
    if (zero == n + 1) {
        // degenerate image simplex: only a problem if z lies on it
        if (geodesic_distance(z, V, n + 1, dim) > 1e-14) return;
    }
    out.irregular = true;
}

struct Accum {
    std::vector<int> degree, hits;
    std::vector<char> irregular;
    std::size_t irregular_simplices = 0;
};

Accum degree_pass(const MapField& u, const std::vector<std::size_t>& cells, const Kuhn& kuhn,
                  const std::vector<double>& targets, int max_subdiv) {
    const int n = kuhn.n, dim = n + 1;
    const std::size_t T = targets.size() / dim;
    double bucket = 0.0;
    for (std::size_t i = 0; i < std::min<std::size_t>(cells.size(), 4096); ++i) {
        const double* a = &u.values[cells[i] * dim];
        const double* b = &u.values[(cells[i] + kuhn.corner_offset.back()) * dim];
        bucket = std::max(bucket, angle_between(a, b, dim));
    }
    PointIndex index(targets, dim, std::max(bucket, 2.0 / 1024.0));

    Accum acc;
    acc.degree.assign(T, 0);
    acc.hits.assign(T, 0);
    acc.irregular.assign(T, 0);
    std::mutex mu;
    parallel_for(cells.size(), [&](std::size_t lo, std::size_t hi) {
        Accum local;
        local.degree.assign(T, 0);
        local.hits.assign(T, 0);
        local.irregular.assign(T, 0);
        std::vector<const double*> corner(kuhn.corner_offset.size());
        std::vector<std::size_t> corner_id(kuhn.corner_offset.size());
        double center[kMaxDim + 1];
        for (std::size_t ci = lo; ci < hi; ++ci) {
            const std::size_t base = cells[ci];
            for (std::size_t m = 0; m < corner.size(); ++m) {
                corner_id[m] = base + kuhn.corner_offset[m];
                corner[m] = &u.values[corner_id[m] * dim];
            }
            double s2 = 0.0;
            for (int c = 0; c < dim; ++c) {
                center[c] = 0.0;
                for (auto* p : corner) center[c] += p[c];
                s2 += center[c] * center[c];
            }
            double radius = 0.0;
            bool big = s2 == 0.0;
            if (!big) {
                for (int c = 0; c < dim; ++c) center[c] /= std::sqrt(s2);
                for (auto* p : corner) radius = std::max(radius, angle_between(center, p, dim));
                big = radius >= 0.25 * std::numbers::pi;
            }
            auto visit = [&](std::uint32_t t) {
                const double* z = &targets[std::size_t(t) * dim];
                for (std::size_t s = 0; s < kuhn.vmask.size(); ++s) {
                    const double* V[kMaxDim + 1];
                    std::size_t ids[kMaxDim + 1];
                    for (int k = 0; k <= n; ++k) {
                        V[k] = corner[kuhn.vmask[s][k]];
                        ids[k] = corner_id[kuhn.vmask[s][k]];
                    }
                    Count cnt;
                    count_simplex(V, ids, kuhn.sign[s], z, n, 0, max_subdiv, cnt);
                    local.degree[t] += cnt.degree;
                    local.hits[t] += cnt.hits;
                    if (cnt.irregular) {
                        local.irregular[t] = 1;
                        ++local.irregular_simplices;
                    }
                }
            };
            if (big) {
                for (std::uint32_t t = 0; t < T; ++t) visit(t);
            } else {
                // chord of the cap angle plus a margin for rounding
                index.query(center, 2.0 * std::sin(0.5 * radius) + 1e-12, visit);
            }
        }
        std::lock_guard<std::mutex> lock(mu);
        for (std::size_t t = 0; t < T; ++t) {
            acc.degree[t] += local.degree[t];
            acc.hits[t] += local.hits[t];
            acc.irregular[t] |= local.irregular[t];
        }
        acc.irregular_simplices += local.irregular_simplices;
    });
    return acc;
}

std::vector<double> clearance_pass(const MapField& u, const std::vector<std::size_t>& facets, int n,
                                   const std::vector<double>& targets, double cutoff) {
    const int dim = n + 1;
    const std::size_t T = targets.size() / dim;
    std::vector<double> out(T, cutoff);
    if (T == 0 || facets.empty()) return out;
    PointIndex index(targets, dim, std::max(cutoff, 2.0 / 1024.0));
    const std::size_t F = facets.size() / n;
    std::mutex mu;
    parallel_for(F, [&](std::size_t lo, std::size_t hi) {
        std::vector<double> local(T, cutoff);
        double center[kMaxDim + 1];
        for (std::size_t f = lo; f < hi; ++f) {
            const double* V[kMaxDim + 1];
            for (int k = 0; k < n; ++k) V[k] = &u.values[facets[f * n + k] * dim];
            double s2 = 0.0;
            for (int c = 0; c < dim; ++c) {
                center[c] = 0.0;
                for (int k = 0; k < n; ++k) center[c] += V[k][c];
                s2 += center[c] * center[c];
            }
            auto visit = [&](std::uint32_t t) {
                const double* z = &targets[std::size_t(t) * dim];
                local[t] = std::min(local[t], geodesic_distance(z, V, n, dim));
            };
            double radius = std::numbers::pi;
            if (s2 > 0.0) {
                for (int c = 0; c < dim; ++c) center[c] /= std::sqrt(s2);
                radius = 0.0;
                for (int k = 0; k < n; ++k) radius = std::max(radius, angle_between(center, V[k], dim));
            }
            const double reach = radius + cutoff;
            if (reach >= 0.5 * std::numbers::pi) {
                for (std::uint32_t t = 0; t < T; ++t) visit(t);
            } else {
                index.query(center, 2.0 * std::sin(0.5 * reach) + 1e-12, visit);
            }
        }
        std::lock_guard<std::mutex> lock(mu);
        for (std::size_t t = 0; t < T; ++t) out[t] = std::min(out[t], local[t]);
    });
    return out;
}

DegreeReport assemble(const MapField& u, const std::vector<std::size_t>& cells, const Kuhn& kuhn,
                      std::vector<double> targets, std::vector<double> areas, std::vector<std::size_t> owner,
                      std::vector<char> sub, std::vector<double> clearance, double floor, int max_subdiv) {
    DegreeReport r;
    r.n = kuhn.n;
    auto acc = degree_pass(u, cells, kuhn, targets, max_subdiv);
    r.targets = std::move(targets);
    r.area = std::move(areas);
    r.cell = std::move(owner);
    r.subtarget = std::move(sub);
    r.degrees = std::move(acc.degree);
    r.hits = std::move(acc.hits);
    r.clearance = std::move(clearance);
    r.clearance_floor = floor;
    r.irregular_simplices = acc.irregular_simplices;
    r.regular.assign(r.degrees.size(), 1);
    for (std::size_t t = 0; t < r.degrees.size(); ++t) {
        if (acc.irregular[t] || r.clearance[t] < floor) r.regular[t] = 0;
        if (r.regular[t]) r.integral += r.degrees[t] * r.area[t];
        else r.excluded_area += r.area[t];
    }
    return r;
}

}  // namespace

double DegreeReport::pairing(const std::function<double(const double*)>& phi) const {
    double s = 0.0;
    for (std::size_t t = 0; t < size(); ++t)
        if (regular[t] && degrees[t] != 0) s += phi(target(t)) * degrees[t] * area[t];
    return s;
}

double max_image_diameter(const MapField& u, const NodeMask& region) {
    check_sphere_map(u, region);
    Kuhn kuhn(*u.grid);
    auto cells = region_cells(*u.grid, region, kuhn);
    const int dim = kuhn.n + 1;
    std::vector<double> per(cells.size(), 0.0);
    parallel_for(cells.size(), [&](std::size_t lo, std::size_t hi) {
        for (std::size_t ci = lo; ci < hi; ++ci)
            for (const auto& vm : kuhn.vmask) {
                const double* V[kMaxDim + 1];
                for (int k = 0; k <= kuhn.n; ++k) V[k] = &u.values[(cells[ci] + kuhn.corner_offset[vm[k]]) * dim];
                per[ci] = std::max(per[ci], max_pairwise_angle(V, kuhn.n + 1, dim));
            }
    });
    double d = 0.0;
    for (double v : per) d = std::max(d, v);
    return d;
}

SimplicialPairing simplicial_pairing(const MapField& u, const NodeMask& region,
                                     const std::function<double(const double*)>& phi, int order) {
    check_sphere_map(u, region);
    Kuhn kuhn(*u.grid);
    const int n = kuhn.n, dim = n + 1;
    auto cells = region_cells(*u.grid, region, kuhn);
    // conical product rule on the standard simplex
    auto gl = gauss_legendre(order);
    const int q = static_cast<int>(gl.nodes.size());
    std::size_t npts = 1;
    for (int a = 0; a < n; ++a) npts *= q;
    std::vector<double> lam(npts * (n + 1)), wts(npts);
    for (std::size_t p = 0; p < npts; ++p) {
        std::size_t r = p;
        double rest = 1.0, w = 1.0;
        for (int a = 0; a < n; ++a) {
            const int j = static_cast<int>(r % q);
            r /= q;
            const double t = 0.5 * (gl.nodes[j] + 1.0);
            lam[p * (n + 1) + a + 1] = rest * t;
            w *= 0.5 * gl.weights[j] * rest;
            rest *= 1.0 - t;
        }
        lam[p * (n + 1)] = rest;
        wts[p] = w;
    }
    const double sgn_n = (n % 2) ? -1.0 : 1.0;
    std::vector<double> per(cells.size(), 0.0);
    std::vector<std::size_t> skipped(cells.size(), 0);
    parallel_for(cells.size(), [&](std::size_t lo, std::size_t hi) {
        double L[kMaxDim + 1];
        for (std::size_t ci = lo; ci < hi; ++ci)
            for (std::size_t s = 0; s < kuhn.vmask.size(); ++s) {
                const double* V[kMaxDim + 1];
                for (int k = 0; k <= n; ++k)
                    V[k] = &u.values[(cells[ci] + kuhn.corner_offset[kuhn.vmask[s][k]]) * dim];
                if (max_pairwise_angle(V, n + 1, dim) >= 0.5 * std::numbers::pi) {
                    ++skipped[ci];
                    continue;
                }
                const double det = det_columns(V, dim);
                if (det == 0.0) continue;
                double acc = 0.0;
                for (std::size_t p = 0; p < npts; ++p) {
                    double r2 = 0.0;
                    for (int c = 0; c < dim; ++c) {
                        L[c] = 0.0;
                        for (int k = 0; k <= n; ++k) L[c] += lam[p * (n + 1) + k] * V[k][c];
                        r2 += L[c] * L[c];
                    }
                    const double r = std::sqrt(r2);
                    for (int c = 0; c < dim; ++c) L[c] /= r;
                    acc += wts[p] * phi(L) / std::pow(r, dim);
                }
                per[ci] += sgn_n * kuhn.sign[s] * det * acc;
            }
    });
    SimplicialPairing out;
    for (std::size_t ci = 0; ci < cells.size(); ++ci) {
        out.value += per[ci];
        out.skipped_simplices += skipped[ci];
    }
    return out;
}

double clearance_floor_for(const MapField& u, const NodeMask& region, const DegreeOptions& opt) {
    if (opt.clearance_floor >= 0.0) return opt.clearance_floor;
    const double d = max_image_diameter(u, region);
    if (opt.policy == ClearancePolicy::SimplexDiameter) return 2.0 * d;
    return 2.0 * d * d / 8.0;
}

std::vector<double> boundary_clearance(const MapField& u, const NodeMask& region,
                                       const std::vector<double>& targets, double cutoff) {
    check_sphere_map(u, region);
    Kuhn kuhn(*u.grid);
    auto cells = region_cells(*u.grid, region, kuhn);
    auto facets = boundary_facets(*u.grid, cells);
    return clearance_pass(u, facets, kuhn.n, targets, cutoff);
}

DegreeReport degree_at_targets(const MapField& u, const NodeMask& region, const std::vector<double>& targets,
                               const std::vector<double>& areas, const DegreeOptions& opt) {
    check_sphere_map(u, region);
    Kuhn kuhn(*u.grid);
    const int dim = kuhn.n + 1;
    if (targets.size() % dim != 0 || areas.size() != targets.size() / dim)
        throw Error("target and area arrays disagree");
    auto cells = region_cells(*u.grid, region, kuhn);
    auto facets = boundary_facets(*u.grid, cells);
    const double floor = clearance_floor_for(u, region, opt);
    const double cutoff = std::max(opt.clearance_cutoff, 2.0 * floor);
    auto clear = clearance_pass(u, facets, kuhn.n, targets, cutoff);
    const std::size_t T = areas.size();
    std::vector<std::size_t> owner(T);
    std::iota(owner.begin(), owner.end(), std::size_t(0));
    return assemble(u, cells, kuhn, targets, areas, owner, std::vector<char>(T, 0), clear, floor,
                    opt.max_subdivisions);
}

DegreeResult brouwer_degree(const MapField& u, const NodeMask& region, const double* z, const DegreeOptions& opt) {
    const int dim = u.grid->dim() + 1;
    std::vector<double> t(z, z + dim);
    double s = std::sqrt(dot(z, z, dim));
    if (std::abs(s - 1.0) > 1e-9) throw Error("target is not a unit vector");
    auto r = degree_at_targets(u, region, t, {0.0}, opt);
    if (r.clearance[0] < r.clearance_floor) throw Error("target not admissible");
    DegreeResult out;
    out.degree = r.degrees[0];
    out.hits = r.hits[0];
    out.regular = r.regular[0] != 0;
    out.clearance = r.clearance[0];
    return out;
}

DegreeReport degree_field(const MapField& u, const NodeMask& region, const SphereCellGrid& cells,
                          const DegreeOptions& opt) {
    check_sphere_map(u, region);
    Kuhn kuhn(*u.grid);
    const int n = kuhn.n, dim = n + 1;
    if (cells.n() != n) throw Error("sphere cells have the wrong dimension");
    auto rc = region_cells(*u.grid, region, kuhn);
    auto facets = boundary_facets(*u.grid, rc);
    const double floor = clearance_floor_for(u, region, opt);
    const double cutoff = std::max({opt.clearance_cutoff, 2.0 * floor, 2.0 * cells.max_circumradius()});

    std::vector<double> centers(cells.size() * dim);
    for (std::size_t c = 0; c < cells.size(); ++c) std::copy(cells.center(c), cells.center(c) + dim, &centers[c * dim]);
    auto center_clear = clearance_pass(u, facets, n, centers, cutoff);

    std::vector<double> targets, areas, clear;
    std::vector<std::size_t> owner;
    std::vector<char> sub;
    std::vector<double> sc, sa;
    std::vector<std::size_t> sub_start;
    for (std::size_t c = 0; c < cells.size(); ++c) {
        if (opt.refine > 1 && center_clear[c] <= cells.circumradius(c) + floor) {
            sc.clear();
            sa.clear();
            cells.subcells(c, opt.refine, sc, sa);
            sub_start.push_back(areas.size());
            targets.insert(targets.end(), sc.begin(), sc.end());
            areas.insert(areas.end(), sa.begin(), sa.end());
            owner.insert(owner.end(), sa.size(), c);
            sub.insert(sub.end(), sa.size(), 1);
            clear.insert(clear.end(), sa.size(), 0.0);
        } else {
            targets.insert(targets.end(), cells.center(c), cells.center(c) + dim);
            areas.push_back(cells.area(c));
            owner.push_back(c);
            sub.push_back(0);
            clear.push_back(center_clear[c]);
        }
    }
    // clearances of the sub-targets
    std::vector<double> st;
    std::vector<std::size_t> sidx;
    for (std::size_t t = 0; t < sub.size(); ++t)
        if (sub[t]) {
            sidx.push_back(t);
            st.insert(st.end(), &targets[t * dim], &targets[t * dim] + dim);
        }
    auto sclear = clearance_pass(u, facets, n, st, cutoff);
    for (std::size_t j = 0; j < sidx.size(); ++j) clear[sidx[j]] = sclear[j];

    return assemble(u, rc, kuhn, std::move(targets), std::move(areas), std::move(owner), std::move(sub),
                    std::move(clear), floor, opt.max_subdivisions);
}

std::vector<char> image_cells(const MapField& u, const NodeMask& E, const SphereCellGrid& cells) {
    check_sphere_map(u, E);
    Kuhn kuhn(*u.grid);
    const int n = kuhn.n, dim = n + 1;
    if (cells.n() != n) throw Error("sphere cells have the wrong dimension");
    auto rc = region_cells(*u.grid, E, kuhn);
    const int k = cells.k();
    const double w = 2.0 / k;
    std::size_t per_face = 1;
    for (int a = 0; a < n; ++a) per_face *= k;
    // a simplex narrower than this meets a face region only if every vertex
    // lies strictly on that face's side
    const double safe = std::asin(1.0 / std::sqrt(double(dim)));

    std::vector<char> hit(cells.size(), 0);
    std::mutex mu;
    parallel_for(rc.size(), [&](std::size_t lo, std::size_t hi) {
        std::vector<char> local(cells.size(), 0);
        double P[kMaxDim + 1][kMaxDim];
        for (std::size_t ci = lo; ci < hi; ++ci) {
            for (const auto& vm : kuhn.vmask) {
                const double* V[kMaxDim + 1];
                for (int j = 0; j <= n; ++j) V[j] = &u.values[(rc[ci] + kuhn.corner_offset[vm[j]]) * dim];
                const double diam = max_pairwise_angle(V, n + 1, dim);
                if (diam >= safe) {
                    // conservative fallback for wide simplices
                    for (std::size_t c = 0; c < cells.size(); ++c) {
                        if (local[c]) continue;
                        if (geodesic_distance(cells.center(c), V, n + 1, dim) <= cells.circumradius(c)) local[c] = 1;
                    }
                    continue;
                }
                for (int face = 0; face < cells.faces(); ++face) {
                    const int axis = face / 2;
                    const double sg = face % 2 == 0 ? 1.0 : -1.0;
                    bool ok = true;
                    for (int j = 0; j <= n && ok; ++j) ok = sg * V[j][axis] > 0.0;
                    if (!ok) continue;
                    double blo[kMaxDim], bhi[kMaxDim];
                    for (int a = 0; a < n; ++a) blo[a] = 1e300, bhi[a] = -1e300;
                    for (int j = 0; j <= n; ++j) {
                        const double inv = 1.0 / std::abs(V[j][axis]);
                        for (int b = 0, a = 0; b < dim; ++b) {
                            if (b == axis) continue;
                            P[j][a] = V[j][b] * inv;
                            blo[a] = std::min(blo[a], P[j][a]);
                            bhi[a] = std::max(bhi[a], P[j][a]);
                            ++a;
                        }
                    }
                    int jlo[kMaxDim], jhi[kMaxDim];
                    bool empty = false;
                    for (int a = 0; a < n; ++a) {
                        if (bhi[a] < -1.0 || blo[a] > 1.0) empty = true;
                        jlo[a] = std::clamp(static_cast<int>(std::floor((blo[a] + 1.0) / w)), 0, k - 1);
                        jhi[a] = std::clamp(static_cast<int>(std::floor((bhi[a] + 1.0) / w)), 0, k - 1);
                    }
                    if (empty) continue;
                    int j[kMaxDim];
                    for (int a = 0; a < n; ++a) j[a] = jlo[a];
                    while (true) {
                        std::size_t cell = 0;
                        for (int a = 0; a < n; ++a) cell = cell * k + j[a];
                        cell += face * per_face;
                        bool meets = true;
                        if (n == 2 && !local[cell]) {
                            // separating axes: triangle edge normals (box axes
                            // are covered by the index range)
                            const double x0 = -1.0 + w * j[0], x1 = x0 + w;
                            const double y0 = -1.0 + w * j[1], y1 = y0 + w;
                            for (int e = 0; e < 3 && meets; ++e) {
                                const double* p = P[e];
                                const double* q = P[(e + 1) % 3];
                                const double nx = q[1] - p[1], ny = p[0] - q[0];
                                if (nx == 0.0 && ny == 0.0) continue;
                                double tmin = 1e300, tmax = -1e300;
                                for (int v = 0; v < 3; ++v) {
                                    double s = nx * P[v][0] + ny * P[v][1];
                                    tmin = std::min(tmin, s);
                                    tmax = std::max(tmax, s);
                                }
                                double bmin = 1e300, bmax = -1e300;
                                for (double bx : {x0, x1})
                                    for (double by : {y0, y1}) {
                                        double s = nx * bx + ny * by;
                                        bmin = std::min(bmin, s);
                                        bmax = std::max(bmax, s);
                                    }
                                if (bmax < tmin || bmin > tmax) meets = false;
                            }
                        }
                        if (meets) local[cell] = 1;
                        int a = n - 1;
                        while (a >= 0 && ++j[a] > jhi[a]) j[a] = jlo[a], --a;
                        if (a < 0) break;
                    }
                }
            }
        }
        std::lock_guard<std::mutex> lock(mu);
        for (std::size_t c = 0; c < cells.size(); ++c) hit[c] |= local[c];
    });
    return hit;
}

double spherical_image_measure(const MapField& u, const NodeMask& E, const SphereCellGrid& cells) {
    auto hit = image_cells(u, E, cells);
    double s = 0.0;
    for (std::size_t c = 0; c < cells.size(); ++c)
        if (hit[c]) s += cells.area(c);
    return s;
}

double extrinsic_curvature_bound(const MapField& u, const std::vector<NodeMask>& parts, const SphereCellGrid& cells) {
    std::vector<char> used(u.grid->node_count(), 0);
    for (const auto& p : parts) {
        if (p.size() != used.size()) throw Error("region mask does not match the grid");
        for (std::size_t k = 0; k < p.size(); ++k) {
            if (!p[k]) continue;
            if (used[k]) throw Error("overlapping parts");
            used[k] = 1;
        }
    }
    double s = 0.0;
    for (const auto& p : parts) s += spherical_image_measure(u, p, cells);
    return s;
}

double boundary_layer_area(const MapField& u, const NodeMask& E, const SphereCellGrid& cells) {
    const int dim = cells.n() + 1;
    std::vector<double> centers(cells.size() * dim);
    for (std::size_t c = 0; c < cells.size(); ++c) std::copy(cells.center(c), cells.center(c) + dim, &centers[c * dim]);
    auto clear = boundary_clearance(u, E, centers, 2.0 * cells.max_circumradius() + 1e-9);
    double s = 0.0;
    for (std::size_t c = 0; c < cells.size(); ++c)
        if (clear[c] <= 2.0 * cells.circumradius(c)) s += cells.area(c);
    return s;
}

void write_degree_csv(const DegreeReport& r, const std::string& path) {
    FILE* f = std::fopen(path.c_str(), "w");
    if (!f) throw Error("cannot write " + path);
    std::fprintf(f, "target,cell,subtarget");
    for (int c = 0; c <= r.n; ++c) std::fprintf(f, ",z%d", c);
    std::fprintf(f, ",area,degree,hits,regular,clearance\n");
    for (std::size_t t = 0; t < r.size(); ++t) {
        std::fprintf(f, "%zu,%zu,%d", t, r.cell[t], int(r.subtarget[t]));
        for (int c = 0; c <= r.n; ++c) std::fprintf(f, ",%.17g", r.target(t)[c]);
        std::fprintf(f, ",%.17g,%d,%d,%d,%.17g\n", r.area[t], r.degrees[t], r.hits[t], int(r.regular[t]),
                     r.clearance[t]);
    }
    std::fclose(f);
}

std::string degree_summary_json(const DegreeReport& r) {
    std::size_t reg = 0;
    for (char c : r.regular) reg += c ? 1 : 0;
    nlohmann::ordered_json j;
    j["n"] = r.n;
    j["targets"] = r.size();
    j["regular_targets"] = reg;
    j["integral"] = r.integral;
    j["excluded_area"] = r.excluded_area;
    j["clearance_floor"] = r.clearance_floor;
    j["irregular_simplices"] = r.irregular_simplices;
    return j.dump(2);
}

namespace {

// Copy of f restricted to the node box lo..hi (inclusive) per axis.
MapField crop_box(const MapField& f, const std::vector<int>& lo, const std::vector<int>& hi, GridPtr& sub) {
    const auto& grid = *f.grid;
    const int n = grid.dim();
    std::vector<int> shape(n);
    std::vector<double> origin(n);
    for (int a = 0; a < n; ++a) {
        shape[a] = hi[a] - lo[a] + 1;
        origin[a] = grid.origin()[a] + lo[a] * grid.spacing();
    }
    if (!sub) sub = make_grid(shape, grid.spacing(), origin);
    MapField out;
    out.grid = sub;
    out.target_dim = f.target_dim;
    out.values.resize(sub->node_count() * f.target_dim);
    std::vector<int> idx(n, 0);
    for (std::size_t k = 0; k < sub->node_count(); ++k) {
        std::size_t src = 0;
        for (int a = 0; a < n; ++a) src = src * grid.shape()[a] + (idx[a] + lo[a]);
        for (int c = 0; c < f.target_dim; ++c) out.values[k * f.target_dim + c] = f.values[src * f.target_dim + c];
        for (int a = n - 1; a >= 0; --a) {
            if (++idx[a] < shape[a]) break;
            idx[a] = 0;
        }
    }
    return out;
}

}  // namespace

WeakConvergenceTable weak_convergence_experiment(const MapField& y, std::vector<double> eps_list,
                                                 const std::function<double(const double*)>& phi,
                                                 const SphereCellGrid& cells, const MollifierKernel& kernel,
                                                 const DegreeOptions& opt) {
    const auto& grid = *y.grid;
    const int n = grid.dim();
    if (y.target_dim != n + 1) throw Error("weak convergence needs a hypersurface chart");
    if (cells.n() != n) throw Error("target grid dimension mismatch");
    if (eps_list.empty()) throw Error("empty mollification schedule");
    std::sort(eps_list.begin(), eps_list.end(), std::greater<>());

    // kernel support R nodes; the valid set is R nodes in from every face
    int R = 0;
    kernel_weights(grid, kernel, eps_list.front(), R);
    std::vector<int> lo(n), hi(n);
    for (int a = 0; a < n; ++a) {
        lo[a] = R;
        hi[a] = grid.shape()[a] - 1 - R;
        if (hi[a] - lo[a] < 4) throw Error("chart too small for the largest mollification scale");
    }

    GridPtr sub;
    auto y0 = crop_box(y, lo, hi, sub);
    NodeMask all(sub->node_count(), 1);
    // one exclusion band for every scale, sized for the roughest map, so the
    // differences do not pick up changes in the band width
    DegreeOptions common = opt;
    auto nu0 = gauss_map(y0);
    common.clearance_floor = clearance_floor_for(nu0, all, opt);
    auto sampled = [&](const MapField& nu, double& excluded) {
        auto rep = degree_field(nu, all, cells, common);
        excluded = rep.excluded_area;
        return rep.pairing(phi);
    };
    auto simplicial = [&](const MapField& nu) {
        auto sp = simplicial_pairing(nu, all, phi);
        if (sp.skipped_simplices) throw Error("image simplex spans a hemisphere");
        return sp.value;
    };

    WeakConvergenceTable t;
    t.clearance_floor = common.clearance_floor;
    double ignored = 0.0;
    t.reference = simplicial(nu0);
    t.reference_sampled = sampled(nu0, ignored);
    t.max_route_gap = std::abs(t.reference - t.reference_sampled);
    t.region_nodes = sub->node_count();
    t.monotone = t.sampled_monotone = true;
    for (std::size_t i = 0; i < eps_list.size(); ++i) {
        WeakConvergenceRow row;
        row.eps = eps_list[i];
        auto m = mollify_field(y, kernel, row.eps);
        auto nu = gauss_map(crop_box(m.field, lo, hi, sub));
        row.pairing = simplicial(nu);
        row.sampled = sampled(nu, row.excluded_area);
        t.max_route_gap = std::max(t.max_route_gap, std::abs(row.pairing - row.sampled));
        if (i > 0) {
            const auto& prev = t.rows.back();
            row.difference = std::abs(row.pairing - prev.pairing);
            row.sampled_difference = std::abs(row.sampled - prev.sampled);
            if (i > 1 && !(row.difference < prev.difference)) t.monotone = false;
            if (i > 1 && !(row.sampled_difference < prev.sampled_difference)) t.sampled_monotone = false;
        }
        t.rows.push_back(row);
    }
    if (t.rows.size() < 3) t.monotone = t.sampled_monotone = false;
    return t;
}

}  // namespace curvlab
