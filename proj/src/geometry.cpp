#include "curvlab/geometry.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace curvlab {

namespace {

using SmallMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, 0, 5, 5>;

SmallMat metric_at(const MetricField& g, std::size_t node) {
    SmallMat m(g.n, g.n);
    for (int i = 0; i < g.n; ++i)
        for (int j = 0; j < g.n; ++j) m(i, j) = g.at(node, i, j);
    return m;
}

std::vector<std::vector<double>> derivatives(const ChartGrid& grid, const std::vector<double>& data, int ncomp,
                                             EdgeClosure closure) {
    std::vector<std::vector<double>> d(grid.dim());
    for (int a = 0; a < grid.dim(); ++a) d[a] = partial_derivative(grid, data, ncomp, a, closure);
    return d;
}

std::string node_label(const ChartGrid& g, std::size_t node) {
    std::string s = "(";
    std::vector<int> m(g.dim());
    g.unravel(node, m.data());
    for (int a = 0; a < g.dim(); ++a) s += (a ? "," : "") + std::to_string(m[a]);
    return s + ")";
}

// Christoffel symbols Gamma^m_{kl} at one node, stored gam[(m*n + k)*n + l].
void christoffel(const MetricField& g, const std::vector<std::vector<double>>& dg, std::size_t node,
                 const SmallMat& ginv, double* gam) {
    const int n = g.n, nc = g.ncomp();
    auto dgv = [&](int k, int i, int j) { return dg[k][node * nc + MetricField::slot(n, i, j)]; };
    for (int m = 0; m < n; ++m)
        for (int k = 0; k < n; ++k)
            for (int l = 0; l < n; ++l) {
                double s = 0;
                for (int r = 0; r < n; ++r) s += ginv(m, r) * (dgv(k, r, l) + dgv(l, r, k) - dgv(r, k, l));
                gam[(m * n + k) * n + l] = 0.5 * s;
            }
}

std::vector<double> christoffel_field(const MetricField& g, const GeometryOptions& opt) {
    const int n = g.n;
    const auto dg = derivatives(*g.grid, g.entries, g.ncomp(), opt.closure);
    std::vector<double> gam(g.grid->node_count() * n * n * n);
    parallel_for(g.grid->node_count(), [&](std::size_t lo, std::size_t hi) {
        for (std::size_t node = lo; node < hi; ++node) {
            SmallMat ginv = metric_at(g, node).inverse();
            christoffel(g, dg, node, ginv, &gam[node * n * n * n]);
        }
    });
    return gam;
}

void antisymmetrize(std::vector<FormField>& forms, int n) {
    for (int i = 0; i < n; ++i) {
        for (auto& c : forms[i * n + i].coeffs) c = 0.0;
        for (int j = i + 1; j < n; ++j) {
            auto& up = forms[i * n + j];
            auto& lo = forms[j * n + i];
            for (std::size_t t = 0; t < up.coeffs.size(); ++t) {
                const double a = 0.5 * (up.coeffs[t] - lo.coeffs[t]);
                up.coeffs[t] = a;
                lo.coeffs[t] = -a;
            }
        }
    }
}

}  // namespace

int MetricField::slot(int n, int i, int j) {
    if (i > j) std::swap(i, j);
    return i * n - i * (i - 1) / 2 + (j - i);
}

MetricField MetricField::from_function(GridPtr grid, const std::function<void(const double*, double*)>& fn) {
    MetricField g;
    g.grid = std::move(grid);
    g.n = g.grid->dim();
    const int n = g.n, nc = g.ncomp();
    g.entries.assign(g.grid->node_count() * nc, 0.0);
    parallel_for(g.grid->node_count(), [&](std::size_t lo, std::size_t hi) {
        std::vector<double> full(n * n);
        for (std::size_t node = lo; node < hi; ++node) {
            auto x = g.grid->point(node);
            fn(x.data(), full.data());
            for (int i = 0; i < n; ++i)
                for (int j = i; j < n; ++j) g.entries[node * nc + slot(n, i, j)] = full[i * n + j];
        }
    });
    return g;
}

double small_det(std::vector<double> m, int n) {
    double det = 1;
    for (int c = 0; c < n; ++c) {
        int p = c;
        for (int r = c + 1; r < n; ++r)
            if (std::abs(m[r * n + c]) > std::abs(m[p * n + c])) p = r;
        if (m[p * n + c] == 0) return 0;
        if (p != c) {
            for (int k = 0; k < n; ++k) std::swap(m[p * n + k], m[c * n + k]);
            det = -det;
        }
        det *= m[c * n + c];
        for (int r = c + 1; r < n; ++r) {
            const double f = m[r * n + c] / m[c * n + c];
            for (int k = c; k < n; ++k) m[r * n + k] -= f * m[c * n + k];
        }
    }
    return det;
}

MetricField metric_from_immersion(const MapField& y, const GeometryOptions& opt) {
    const auto& grid = *y.grid;
    const int n = grid.dim(), m = y.target_dim;
    const auto dy = derivatives(grid, y.values, m, opt.closure);
    MetricField g;
    g.grid = y.grid;
    g.n = n;
    const int nc = g.ncomp();
    g.entries.assign(grid.node_count() * nc, 0.0);
    std::vector<std::uint8_t> bad(grid.node_count(), 0);
    parallel_for(grid.node_count(), [&](std::size_t lo, std::size_t hi) {
        SmallMat gm(n, n);
        for (std::size_t node = lo; node < hi; ++node) {
            for (int i = 0; i < n; ++i)
                for (int j = i; j < n; ++j) {
                    double s = 0;
                    for (int c = 0; c < m; ++c) s += dy[i][node * m + c] * dy[j][node * m + c];
                    g.entries[node * nc + MetricField::slot(n, i, j)] = s;
                    gm(i, j) = gm(j, i) = s;
                }
            if (grid.interior(node)) {
                Eigen::SelfAdjointEigenSolver<SmallMat> es(gm, Eigen::EigenvaluesOnly);
                const double smin = std::sqrt(std::max(0.0, es.eigenvalues()(0)));
                if (!(smin >= opt.definiteness_floor)) bad[node] = 1;
            }
        }
    });
    for (std::size_t node = 0; node < grid.node_count(); ++node)
        if (bad[node]) throw Error("not an immersion at node " + node_label(grid, node));
    return g;
}

FrameBundle gram_schmidt_frame(const MetricField& g, const std::vector<int>& axis_order,
                               const GeometryOptions& opt) {
    const int n = g.n;
    FrameBundle fb;
    fb.grid = g.grid;
    fb.n = n;
    fb.axis_order = axis_order;
    if (fb.axis_order.empty()) {
        fb.axis_order.resize(n);
        std::iota(fb.axis_order.begin(), fb.axis_order.end(), 0);
    }
    {
        auto check = fb.axis_order;
        std::sort(check.begin(), check.end());
        for (int i = 0; i < n; ++i)
            if (static_cast<int>(check.size()) != n || check[i] != i) throw Error("axis order is not a permutation");
    }
    const std::size_t N = g.grid->node_count();
    fb.frame.assign(N * n * n, 0.0);
    fb.coframe.assign(n, FormField::zeros(g.grid, 1));
    std::vector<std::uint8_t> bad(N, 0);
    parallel_for(N, [&](std::size_t lo, std::size_t hi) {
        for (std::size_t node = lo; node < hi; ++node) {
            SmallMat G = metric_at(g, node);
            SmallMat F = SmallMat::Zero(n, n);
            for (int i = 0; i < n; ++i) {
                Eigen::Matrix<double, Eigen::Dynamic, 1, 0, 5, 1> v = Eigen::VectorXd::Zero(n);
                v(fb.axis_order[i]) = 1.0;
                for (int j = 0; j < i; ++j) {
                    const double proj = F.col(j).dot(G * v);
                    v -= proj * F.col(j);
                }
                const double nrm2 = v.dot(G * v);
                if (!(nrm2 > opt.definiteness_floor)) {
                    bad[node] = 1;
                    break;
                }
                F.col(i) = v / std::sqrt(nrm2);
            }
            if (bad[node]) continue;
            SmallMat C = F.inverse();
            for (int a = 0; a < n; ++a)
                for (int i = 0; i < n; ++i) fb.frame[node * n * n + a * n + i] = F(a, i);
            for (int i = 0; i < n; ++i)
                for (int a = 0; a < n; ++a) fb.coframe[i].coeffs[node * n + a] = C(i, a);
        }
    });
    for (std::size_t node = 0; node < N; ++node)
        if (bad[node]) throw Error("metric not positive definite at node " + node_label(*g.grid, node));
    return fb;
}

FrameBundle connection_forms(const MetricField& g, FrameBundle fb, const GeometryOptions& opt) {
    const int n = fb.n;
    const auto& grid = *fb.grid;
    const std::size_t N = grid.node_count();
    const auto dg = derivatives(grid, g.entries, g.ncomp(), opt.closure);
    const auto dF = derivatives(grid, fb.frame, n * n, opt.closure);
    fb.connection.assign(n * n, FormField::zeros(fb.grid, 1));
    fb.curvature.clear();
    parallel_for(N, [&](std::size_t lo, std::size_t hi) {
        std::vector<double> gam(n * n * n);
        for (std::size_t node = lo; node < hi; ++node) {
            SmallMat ginv = metric_at(g, node).inverse();
            christoffel(g, dg, node, ginv, gam.data());
            const double* F = &fb.frame[node * n * n];
            for (int k = 0; k < n; ++k) {
                for (int j = 0; j < n; ++j) {
                    // components of nabla_{d_k} X_j
                    double v[5];
                    for (int a = 0; a < n; ++a) {
                        double s = dF[k][node * n * n + a * n + j];
                        for (int l = 0; l < n; ++l) s += gam[(a * n + k) * n + l] * F[l * n + j];
                        v[a] = s;
                    }
                    for (int i = 0; i < n; ++i) {
                        double s = 0;
                        for (int a = 0; a < n; ++a) s += fb.coframe[i].coeffs[node * n + a] * v[a];
                        fb.connection[i * n + j].coeffs[node * n + k] = s;
                    }
                }
            }
        }
    });
    antisymmetrize(fb.connection, n);
    return fb;
}

double structural_residual(const FrameBundle& fb, const GeometryOptions& opt) {
    if (!fb.has_connection()) throw Error("structural_residual needs connection forms");
    const int n = fb.n;
    if (n < 2) return 0.0;
    double worst = 0;
    for (int i = 0; i < n; ++i) {
        FormField r = exterior_derivative(fb.coframe[i], opt.closure);
        for (int j = 0; j < n; ++j) r = axpy(r, 1.0, wedge(fb.omega(i, j), fb.coframe[j]));
        worst = std::max(worst, max_abs(r.coeffs, &fb.grid->interior_mask(), r.ncoef()));
    }
    return worst;
}

FrameBundle curvature_forms(FrameBundle fb, const GeometryOptions& opt) {
    if (!fb.has_connection()) throw Error("curvature_forms needs connection forms");
    const int n = fb.n;
    fb.curvature.assign(n * n, FormField::zeros(fb.grid, std::min(2, n)));
    if (n < 2) return fb;
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
            if (i == j) continue;
            FormField om = exterior_derivative(fb.omega(i, j), opt.closure);
            for (int k = 0; k < n; ++k) {
                if (k == i || k == j) continue;
                om = axpy(om, 1.0, wedge(fb.omega(i, k), fb.omega(k, j)));
            }
            fb.curvature[i * n + j] = std::move(om);
        }
    antisymmetrize(fb.curvature, n);
    return fb;
}

FrameBundle curvature_from_riemann(const MetricField& g, FrameBundle fb, const GeometryOptions& opt) {
    const int n = fb.n;
    const auto& grid = *fb.grid;
    const std::size_t N = grid.node_count();
    fb.curvature.assign(n * n, FormField::zeros(fb.grid, std::min(2, n)));
    if (n < 2) return fb;
    const auto gam = christoffel_field(g, opt);
    const int n3 = n * n * n;
    const auto dgam = derivatives(grid, gam, n3, opt.closure);
    const auto& pairs = multi_indices(n, 2);
    const int np = static_cast<int>(pairs.size());
    parallel_for(N, [&](std::size_t lo, std::size_t hi) {
        std::vector<double> R(n * n);  // R^a_b for one (k,l)
        for (std::size_t node = lo; node < hi; ++node) {
            const double* G = &gam[node * n3];
            const double* F = &fb.frame[node * n * n];
            auto Gm = [&](int m, int k, int l) { return G[(m * n + k) * n + l]; };
            for (int p = 0; p < np; ++p) {
                const int k = pairs[p][0], l = pairs[p][1];
                for (int a = 0; a < n; ++a)
                    for (int b = 0; b < n; ++b) {
                        double s = dgam[k][node * n3 + (a * n + l) * n + b] - dgam[l][node * n3 + (a * n + k) * n + b];
                        for (int m = 0; m < n; ++m) s += Gm(a, k, m) * Gm(m, l, b) - Gm(a, l, m) * Gm(m, k, b);
                        R[a * n + b] = s;
                    }
                for (int i = 0; i < n; ++i)
                    for (int j = 0; j < n; ++j) {
                        if (i == j) continue;
                        double s = 0;
                        for (int a = 0; a < n; ++a) {
                            const double c = fb.coframe[i].coeffs[node * n + a];
                            for (int b = 0; b < n; ++b) s += c * R[a * n + b] * F[b * n + j];
                        }
                        fb.curvature[i * n + j].coeffs[node * np + p] = s;
                    }
            }
        }
    });
    antisymmetrize(fb.curvature, n);
    return fb;
}

FormField pfaffian(const FrameBundle& fb) {
    const int n = fb.n;
    if (n % 2 != 0) throw Error("Pfaffian requires even dimension");
    if (!fb.has_curvature()) throw Error("pfaffian needs curvature forms");
    std::vector<int> zeta(n);
    std::iota(zeta.begin(), zeta.end(), 0);
    FormField sum = FormField::zeros(fb.grid, n);
    double fact = 1;
    for (int i = 2; i <= n / 2; ++i) fact *= i;
    const double prefactor = 1.0 / (n * fact);
    do {
        const int sgn = permutation_sign(zeta);
        FormField term = fb.Omega(zeta[0], zeta[1]);
        for (int p = 2; p < n; p += 2) term = wedge(term, fb.Omega(zeta[p], zeta[p + 1]));
        sum = axpy(sum, sgn * prefactor, term);
    } while (std::next_permutation(zeta.begin(), zeta.end()));
    return sum;
}

FrameBundle frame_pipeline(const MetricField& g, const std::vector<int>& axis_order, const GeometryOptions& opt) {
    auto fb = gram_schmidt_frame(g, axis_order, opt);
    fb = connection_forms(g, std::move(fb), opt);
    return curvature_forms(std::move(fb), opt);
}

MapField gauss_map(const MapField& y, const GeometryOptions& opt) {
    const auto& grid = *y.grid;
    const int n = grid.dim();
    if (y.target_dim != n + 1) throw Error("gauss_map needs a map into R^{n+1}");
    const auto dy = derivatives(grid, y.values, n + 1, opt.closure);
    MapField nu;
    nu.grid = y.grid;
    nu.target_dim = n + 1;
    nu.values.assign(grid.node_count() * (n + 1), 0.0);
    std::vector<std::uint8_t> bad(grid.node_count(), 0);
    parallel_for(grid.node_count(), [&](std::size_t lo, std::size_t hi) {
        std::vector<double> minor(n * n);
        std::vector<double> v(n + 1);
        for (std::size_t node = lo; node < hi; ++node) {
            double nrm2 = 0;
            for (int k = 0; k <= n; ++k) {
                int r = 0;
                for (int row = 0; row <= n; ++row) {
                    if (row == k) continue;
                    for (int c = 0; c < n; ++c) minor[r * n + c] = dy[c][node * (n + 1) + row];
                    ++r;
                }
                const double sign = ((k + n) % 2) ? -1.0 : 1.0;
                v[k] = sign * small_det(minor, n);
                nrm2 += v[k] * v[k];
            }
            const double nrm = std::sqrt(nrm2);
            if (!(nrm > opt.definiteness_floor)) {
                bad[node] = 1;
                continue;
            }
            for (int k = 0; k <= n; ++k) nu.values[node * (n + 1) + k] = v[k] / nrm;
        }
    });
    for (std::size_t node = 0; node < grid.node_count(); ++node)
        if (bad[node]) throw Error("not an immersion at node " + node_label(grid, node));
    return nu;
}

FormField sphere_pullback(const MapField& nu, const GeometryOptions& opt) {
    const auto& grid = *nu.grid;
    const int n = grid.dim();
    if (nu.target_dim != n + 1) throw Error("sphere_pullback needs a map into S^n");
    for (std::size_t node = 0; node < grid.node_count(); ++node) {
        double s = 0;
        for (int k = 0; k <= n; ++k) s += nu.at(node, k) * nu.at(node, k);
        if (std::abs(std::sqrt(s) - 1.0) > 1e-6) throw Error("sphere_pullback: map is not unit length");
    }
    const auto dnu = derivatives(grid, nu.values, n + 1, opt.closure);
    FormField out = FormField::zeros(nu.grid, n);
    parallel_for(grid.node_count(), [&](std::size_t lo, std::size_t hi) {
        std::vector<double> m((n + 1) * (n + 1));
        for (std::size_t node = lo; node < hi; ++node) {
            for (int row = 0; row <= n; ++row) {
                for (int c = 0; c < n; ++c) m[row * (n + 1) + c] = dnu[c][node * (n + 1) + row];
                m[row * (n + 1) + n] = nu.values[node * (n + 1) + row];
            }
            out.coeffs[node] = small_det(m, n + 1);
        }
    });
    return out;
}

}  // namespace curvlab
