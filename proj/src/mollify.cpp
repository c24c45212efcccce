#include "curvlab/mollify.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <mutex>
#include <numbers>
#include <random>

#include <Eigen/Dense>
#include <fftw3.h>
#include <json.hpp>

namespace curvlab {

double MollifierKernel::profile(double r) const {
    if (r >= 1.0) return 0.0;
    if (kind == KernelKind::Polynomial) {
        double t = 1.0 - r * r;
        return t * t * t * t;
    }
    double t = 0.5 * (1.0 + std::cos(std::numbers::pi * r));
    return t * t;
}

std::string MollifierKernel::name() const { return kind == KernelKind::Polynomial ? "polynomial" : "cosine"; }

MollifierKernel MollifierKernel::from_name(const std::string& name) {
    if (name == "polynomial") return {KernelKind::Polynomial};
    if (name == "cosine") return {KernelKind::Cosine};
    throw Error("unknown mollifier kernel '" + name + "'");
}

double kernel_fourier_factor(const MollifierKernel& kernel, int n, double s) {
    if (n < 1) throw Error("dimension must be positive");
    if (s == 0.0) return 1.0;
    // normalized spherical mean of a plane wave: Gamma(n/2) (2/x)^(n/2-1) J_(n/2-1)(x)
    auto mean = [n](double x) {
        if (x == 0.0) return 1.0;
        if (n == 1) return std::cos(x);
        if (n == 3) return std::sin(x) / x;
        const double nu = 0.5 * n - 1.0;
        return std::tgamma(0.5 * n) * std::pow(2.0 / x, nu) * std::cyl_bessel_j(nu, x);
    };
    static const GaussLegendre gl = gauss_legendre(200);
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < gl.nodes.size(); ++i) {
        const double r = 0.5 * (gl.nodes[i] + 1.0);
        const double w = 0.5 * gl.weights[i] * kernel.profile(r) * std::pow(r, n - 1);
        num += w * mean(s * r);
        den += w;
    }
    return num / den;
}

std::vector<double> kernel_weights(const ChartGrid& grid, const MollifierKernel& kernel, double eps, int& radius) {
    const double h = grid.spacing();
    if (eps < 2.0 * h * (1.0 - 1e-12)) throw Error("kernel under-resolved");
    const int n = grid.dim();
    radius = static_cast<int>(std::floor(eps / h));
    const int w = 2 * radius + 1;
    std::size_t total = 1;
    for (int a = 0; a < n; ++a) total *= w;
    std::vector<double> out(total);
    std::vector<int> j(n, -radius);
    for (std::size_t i = 0; i < total; ++i) {
        long q = 0;
        for (int a = 0; a < n; ++a) q += long(j[a]) * j[a];
        out[i] = kernel.profile(h * std::sqrt(double(q)) / eps);
        for (int a = n - 1; a >= 0; --a) {
            if (++j[a] <= radius) break;
            j[a] = -radius;
        }
    }
    double s = 0.0;
    for (double v : out) s += v;
    for (double& v : out) v /= s;
    return out;
}

namespace {

std::mutex& fftw_mutex() {
    static std::mutex m;
    return m;
}

NodeMask valid_mask(const ChartGrid& grid, double eps) {
    NodeMask m(grid.node_count(), 1);
    const auto up = grid.upper();
    const double tol = 1e-12 * std::max(1.0, eps);
    for (std::size_t k = 0; k < grid.node_count(); ++k)
        for (int a = 0; a < grid.dim(); ++a) {
            double x = grid.coord(k, a);
            if (x - grid.origin()[a] < eps - tol || up[a] - x < eps - tol) m[k] = 0;
        }
    return m;
}

void convolve_direct(const ChartGrid& grid, const std::vector<double>& w, int R, const double* in, double* out) {
    const int n = grid.dim();
    // nonzero taps as (node offset, per-axis offsets, weight)
    std::vector<std::vector<int>> off;
    std::vector<double> wt;
    std::vector<int> j(n, -R);
    for (std::size_t i = 0; i < w.size(); ++i) {
        if (w[i] != 0.0) {
            off.push_back(j);
            wt.push_back(w[i]);
        }
        for (int a = n - 1; a >= 0; --a) {
            if (++j[a] <= R) break;
            j[a] = -R;
        }
    }
    parallel_for(grid.node_count(), [&](std::size_t lo, std::size_t hi) {
        std::vector<int> m(n);
        for (std::size_t k = lo; k < hi; ++k) {
            grid.unravel(k, m.data());
            double s = 0.0;
            for (std::size_t t = 0; t < wt.size(); ++t) {
                long idx = 0;
                bool inside = true;
                for (int a = 0; a < n && inside; ++a) {
                    int q = m[a] - off[t][a];
                    inside = q >= 0 && q < grid.shape()[a];
                    idx += long(q) * long(grid.strides()[a]);
                }
                if (inside) s += wt[t] * in[idx];
            }
            out[k] = s;
        }
    });
}

void convolve_fft(const ChartGrid& grid, const std::vector<double>& w, int R, const double* in, double* out) {
    const int n = grid.dim();
    std::vector<int> P(n);
    std::size_t total = 1;
    for (int a = 0; a < n; ++a) {
        P[a] = grid.shape()[a] + R;
        total *= P[a];
    }
    const std::size_t half = total / P[n - 1] * (P[n - 1] / 2 + 1);
    double* fa = fftw_alloc_real(total);
    double* ka = fftw_alloc_real(total);
    fftw_complex* fc = fftw_alloc_complex(half);
    fftw_complex* kc = fftw_alloc_complex(half);
    fftw_plan pf, pk, pb;
    {
        std::lock_guard<std::mutex> lock(fftw_mutex());
        pf = fftw_plan_dft_r2c(n, P.data(), fa, fc, FFTW_ESTIMATE);
        pk = fftw_plan_dft_r2c(n, P.data(), ka, kc, FFTW_ESTIMATE);
        pb = fftw_plan_dft_c2r(n, P.data(), fc, fa, FFTW_ESTIMATE);
    }
    std::fill(fa, fa + total, 0.0);
    std::fill(ka, ka + total, 0.0);
    std::vector<int> m(n);
    for (std::size_t k = 0; k < grid.node_count(); ++k) {
        grid.unravel(k, m.data());
        std::size_t idx = 0;
        for (int a = 0; a < n; ++a) idx = idx * P[a] + m[a];
        fa[idx] = in[k];
    }
    std::vector<int> j(n, -R);
    for (std::size_t i = 0; i < w.size(); ++i) {
        std::size_t idx = 0;
        for (int a = 0; a < n; ++a) idx = idx * P[a] + (j[a] < 0 ? j[a] + P[a] : j[a]);
        ka[idx] = w[i];
        for (int a = n - 1; a >= 0; --a) {
            if (++j[a] <= R) break;
            j[a] = -R;
        }
    }
    fftw_execute(pf);
    fftw_execute(pk);
    const double scale = 1.0 / double(total);
    for (std::size_t i = 0; i < half; ++i) {
        double re = fc[i][0] * kc[i][0] - fc[i][1] * kc[i][1];
        double im = fc[i][0] * kc[i][1] + fc[i][1] * kc[i][0];
        fc[i][0] = re * scale;
        fc[i][1] = im * scale;
    }
    fftw_execute(pb);
    for (std::size_t k = 0; k < grid.node_count(); ++k) {
        grid.unravel(k, m.data());
        std::size_t idx = 0;
        for (int a = 0; a < n; ++a) idx = idx * P[a] + m[a];
        out[k] = fa[idx];
    }
    {
        std::lock_guard<std::mutex> lock(fftw_mutex());
        fftw_destroy_plan(pf);
        fftw_destroy_plan(pk);
        fftw_destroy_plan(pb);
    }
    fftw_free(fa);
    fftw_free(ka);
    fftw_free(fc);
    fftw_free(kc);
}

// Induced metric entries (upper triangle) per node.
std::vector<double> induced_metric(const MapField& y) {
    const auto& g = *y.grid;
    const int n = g.dim(), m = y.target_dim, nc = n * (n + 1) / 2;
    std::vector<std::vector<double>> d(n);
    for (int a = 0; a < n; ++a) d[a] = partial_derivative(g, y.values, m, a);
    std::vector<double> out(g.node_count() * nc);
    for (std::size_t k = 0; k < g.node_count(); ++k)
        for (int i = 0; i < n; ++i)
            for (int j = i; j < n; ++j) {
                double s = 0.0;
                for (int c = 0; c < m; ++c) s += d[i][k * m + c] * d[j][k * m + c];
                out[k * nc + MetricField::slot(n, i, j)] = s;
            }
    return out;
}

bool positive_definite_on(const std::vector<double>& g, int n, const NodeMask& mask) {
    const int nc = n * (n + 1) / 2;
    std::vector<double> L(n * n);
    for (std::size_t k = 0; k < mask.size(); ++k) {
        if (!mask[k]) continue;
        for (int i = 0; i < n; ++i) {
            for (int j = 0; j <= i; ++j) {
                double s = g[k * nc + MetricField::slot(n, j, i)];
                for (int p = 0; p < j; ++p) s -= L[i * n + p] * L[j * n + p];
                if (i == j) {
                    if (s <= 1e-10) return false;
                    L[i * n + i] = std::sqrt(s);
                } else {
                    L[i * n + j] = s / L[j * n + j];
                }
            }
        }
    }
    return true;
}

NodeMask erode(const ChartGrid& grid, const NodeMask& mask, int layers) {
    NodeMask cur = mask;
    const int n = grid.dim();
    std::vector<int> m(n);
    for (int l = 0; l < layers; ++l) {
        NodeMask next = cur;
        for (std::size_t k = 0; k < cur.size(); ++k) {
            if (!cur[k]) continue;
            grid.unravel(k, m.data());
            for (int a = 0; a < n && next[k]; ++a) {
                bool lo = m[a] > 0 && cur[k - grid.strides()[a]];
                bool hi = m[a] + 1 < grid.shape()[a] && cur[k + grid.strides()[a]];
                if (!lo || !hi) next[k] = 0;
            }
        }
        cur.swap(next);
    }
    return cur;
}

// Max over mask of |v| and, when with_gradient, of forward differences
// between mask nodes.
double cr_norm(const ChartGrid& grid, const std::vector<double>& v, int nc, const NodeMask& mask,
               bool with_gradient) {
    double best = 0.0;
    const int n = grid.dim();
    std::vector<int> m(n);
    for (std::size_t k = 0; k < mask.size(); ++k) {
        if (!mask[k]) continue;
        for (int c = 0; c < nc; ++c) best = std::max(best, std::abs(v[k * nc + c]));
        if (!with_gradient) continue;
        grid.unravel(k, m.data());
        for (int a = 0; a < n; ++a) {
            if (m[a] + 1 >= grid.shape()[a]) continue;
            std::size_t q = k + grid.strides()[a];
            if (!mask[q]) continue;
            for (int c = 0; c < nc; ++c)
                best = std::max(best, std::abs(v[q * nc + c] - v[k * nc + c]) / grid.spacing());
        }
    }
    return best;
}

std::vector<double> unit_direction(std::mt19937_64& rng, int n) {
    std::normal_distribution<double> nd;
    std::vector<double> w(n);
    double s = 0.0;
    do {
        s = 0.0;
        for (double& x : w) x = nd(rng), s += x * x;
    } while (s == 0.0);
    for (double& x : w) x /= std::sqrt(s);
    return w;
}

}  // namespace

Mollified mollify_field(const MapField& f, const MollifierKernel& kernel, double eps) {
    const auto& grid = *f.grid;
    int R = 0;
    auto w = kernel_weights(grid, kernel, eps, R);
    Mollified out;
    out.field.grid = f.grid;
    out.field.target_dim = f.target_dim;
    out.field.values.assign(f.values.size(), 0.0);
    out.valid = valid_mask(grid, eps);
    const std::size_t N = grid.node_count();
    const bool use_fft = w.size() > 200;
    std::vector<double> comp(N), res(N);
    for (int c = 0; c < f.target_dim; ++c) {
        for (std::size_t k = 0; k < N; ++k) comp[k] = f.values[k * f.target_dim + c];
        if (use_fft) convolve_fft(grid, w, R, comp.data(), res.data());
        else convolve_direct(grid, w, R, comp.data(), res.data());
        for (std::size_t k = 0; k < N; ++k) out.field.values[k * f.target_dim + c] = res[k];
    }
    return out;
}

DefectScan metric_defect_scan(const MapField& y, const MollifierKernel& kernel, int r,
                              const std::vector<double>& eps_list) {
    if (r != 0 && r != 1) throw Error("defect norm order must be 0 or 1");
    const auto& grid = *y.grid;
    const int n = grid.dim(), nc = n * (n + 1) / 2;
    const auto g = induced_metric(y);
    DefectScan scan;
    scan.r = r;
    std::vector<double> lx, ly;
    for (double eps : eps_list) {
        auto m = mollify_field(y, kernel, eps);
        // stencils of the metric reach two nodes; forward differences one more
        auto mask = erode(grid, m.valid, 3);
        auto ge = induced_metric(m.field);
        scan.eps.push_back(eps);
        if (!positive_definite_on(ge, n, mask)) {
            scan.defect.push_back(std::numeric_limits<double>::quiet_NaN());
            scan.dropped.push_back(1);
            continue;
        }
        std::vector<double> diff(ge.size());
        for (std::size_t i = 0; i < ge.size(); ++i) diff[i] = ge[i] - g[i];
        double d = cr_norm(grid, diff, nc, mask, r == 1);
        scan.defect.push_back(d);
        scan.dropped.push_back(0);
        lx.push_back(std::log(eps));
        ly.push_back(std::log(d));
    }
    if (lx.size() >= 2) scan.fit = fit_line(lx, ly);
    return scan;
}

C1BetaTable metric_c1beta_convergence(const MapField& y, const MollifierKernel& kernel, double beta,
                                      const std::vector<double>& eps_list, double alpha) {
    const auto& grid = *y.grid;
    const int n = grid.dim(), nc = n * (n + 1) / 2;
    C1BetaTable t;
    t.beta = beta;
    t.out_of_range = !std::isnan(alpha) && beta >= 2.0 * alpha - 1.0;
    if (t.out_of_range)
        std::fprintf(stderr, "warning: beta = %g is outside the admissible range (2 alpha - 1 = %g)\n", beta,
                     2.0 * alpha - 1.0);
    const auto g = induced_metric(y);
    for (double eps : eps_list) {
        auto m = mollify_field(y, kernel, eps);
        auto mask = erode(grid, m.valid, 3);
        auto ge = induced_metric(m.field);
        std::vector<double> diff(ge.size());
        for (std::size_t i = 0; i < ge.size(); ++i) diff[i] = ge[i] - g[i];
        C1BetaRow row;
        row.eps = eps;
        row.c0 = cr_norm(grid, diff, nc, mask, false);
        MapField grad;
        grad.grid = y.grid;
        grad.target_dim = nc * n;
        grad.values.assign(grid.node_count() * nc * n, 0.0);
        for (int a = 0; a < n; ++a) {
            auto da = partial_derivative(grid, diff, nc, a);
            for (std::size_t k = 0; k < grid.node_count(); ++k)
                for (int c = 0; c < nc; ++c) grad.values[k * nc * n + a * nc + c] = da[k * nc + c];
        }
        auto inner = erode(grid, mask, 2);
        row.c1 = cr_norm(grid, grad.values, nc * n, inner, false);
        row.holder = holder_seminorm_estimate(grad, beta, 20000, &inner);
        row.total = row.c0 + row.c1 + row.holder;
        t.rows.push_back(row);
    }
    t.decreasing = true;
    std::vector<C1BetaRow> sorted = t.rows;
    std::sort(sorted.begin(), sorted.end(), [](const C1BetaRow& a, const C1BetaRow& b) { return a.eps > b.eps; });
    for (std::size_t i = 1; i < sorted.size(); ++i)
        if (!(sorted[i].total < sorted[i - 1].total)) t.decreasing = false;
    return t;
}

MapField lacunary_immersion(const MapField& base, const RoughnessSpec& spec) {
    if (!(spec.alpha > 0.0 && spec.alpha <= 1.0)) throw Error("alpha must lie in (0, 1]");
    if (spec.depth < 1) throw Error("depth must be at least 1");
    if (spec.amplitude < 0.0) throw Error("amplitude must be nonnegative");
    const auto& grid = *base.grid;
    const int n = grid.dim();
    if (base.target_dim != n + 1) throw Error("lacunary immersion needs a hypersurface base");
    if (spec.amplitude == 0.0) return base;
    auto nu = gauss_map(base);
    std::mt19937_64 rng(spec.seed);
    std::uniform_real_distribution<double> ph(0.0, 2.0 * std::numbers::pi);
    std::vector<std::vector<double>> dirs;
    std::vector<double> phases;
    for (int k = 1; k <= spec.depth; ++k) {
        dirs.push_back(unit_direction(rng, n));
        phases.push_back(ph(rng));
    }
    MapField out = base;
    for (std::size_t node = 0; node < grid.node_count(); ++node) {
        auto x = grid.point(node);
        double s = 0.0;
        for (int k = 1; k <= spec.depth; ++k) {
            const double freq = std::pow(double(spec.lacunarity), k);
            double dotp = 0.0;
            for (int a = 0; a < n; ++a) dotp += dirs[k - 1][a] * x[a];
            s += spec.amplitude * std::pow(freq, -(1.0 + spec.alpha)) * std::sin(freq * dotp + phases[k - 1]);
        }
        for (int c = 0; c <= n; ++c) out.at(node, c) += s * nu.at(node, c);
    }
    // Sampled nodes cannot see an exact rank drop between them, so the check
    // is relative: orientation of (Dy, nu_base) kept and the smallest
    // singular value of Dy at least a tenth of the base value.
    std::vector<std::vector<double>> db(n), dp(n);
    for (int a = 0; a < n; ++a) {
        db[a] = partial_derivative(grid, base.values, n + 1, a);
        dp[a] = partial_derivative(grid, out.values, n + 1, a);
    }
    const auto& interior = grid.interior_mask();
    std::vector<double> mb((n + 1) * (n + 1)), mp((n + 1) * (n + 1));
    Eigen::MatrixXd gb(n, n), gp(n, n);
    for (std::size_t k = 0; k < grid.node_count(); ++k) {
        if (!interior[k]) continue;
        for (int r = 0; r <= n; ++r) {
            for (int a = 0; a < n; ++a) {
                mb[r * (n + 1) + a] = db[a][k * (n + 1) + r];
                mp[r * (n + 1) + a] = dp[a][k * (n + 1) + r];
            }
            mb[r * (n + 1) + n] = mp[r * (n + 1) + n] = nu.at(k, r);
        }
        for (int a = 0; a < n; ++a)
            for (int b = 0; b < n; ++b) {
                double sb = 0.0, sp = 0.0;
                for (int r = 0; r <= n; ++r) {
                    sb += db[a][k * (n + 1) + r] * db[b][k * (n + 1) + r];
                    sp += dp[a][k * (n + 1) + r] * dp[b][k * (n + 1) + r];
                }
                gb(a, b) = sb;
                gp(a, b) = sp;
            }
        const double lb = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(gb, Eigen::EigenvaluesOnly).eigenvalues()(0);
        const double lp = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(gp, Eigen::EigenvaluesOnly).eigenvalues()(0);
        const bool flipped = small_det(mb, n + 1) * small_det(mp, n + 1) <= 0.0;
        if (flipped || lp < 0.01 * lb) throw Error("amplitude too large");
    }
    return out;
}

MapField lacunary_field(GridPtr grid, const RoughnessSpec& spec) {
    if (!(spec.alpha > 0.0 && spec.alpha <= 1.0)) throw Error("alpha must lie in (0, 1]");
    if (spec.depth < 1) throw Error("depth must be at least 1");
    const int n = grid->dim();
    std::mt19937_64 rng(spec.seed);
    std::uniform_real_distribution<double> ph(0.0, 2.0 * std::numbers::pi);
    std::vector<std::vector<double>> dirs;
    std::vector<double> phases;
    for (int k = 1; k <= spec.depth; ++k) {
        dirs.push_back(unit_direction(rng, n));
        phases.push_back(ph(rng));
    }
    return MapField::from_function(grid, 1, [&](const double* x, double* o) {
        double s = 0.0;
        for (int k = 1; k <= spec.depth; ++k) {
            const double freq = std::pow(double(spec.lacunarity), k);
            double dotp = 0.0;
            for (int a = 0; a < n; ++a) dotp += dirs[k - 1][a] * x[a];
            s += spec.amplitude * std::pow(freq, -spec.alpha) * std::sin(freq * dotp + phases[k - 1]);
        }
        o[0] = s;
    });
}

MapField corrugated_curve(const CorrugationSpec& spec) {
    if (spec.nodes < 5) throw Error("corrugated curve needs at least 5 nodes");
    const double h = 1.0 / (spec.nodes - 1);
    const int sub = std::max(1, spec.oversample);
    const double hs = h / sub;
    const std::size_t fine = std::size_t(spec.nodes - 1) * sub + 1;
    std::vector<double> c(fine), s(fine);
    for (std::size_t i = 0; i < fine; ++i) {
        const double x = -0.5 + double(i) * hs;
        double th = 0.0;
        for (int k = spec.k_min; k <= spec.k_max; ++k) {
            const double f = std::pow(spec.base, k);
            th += spec.amplitude * std::pow(f, -spec.alpha) * std::sin(f * x);
        }
        c[i] = std::cos(th);
        s[i] = std::sin(th);
    }
    auto grid = make_grid({spec.nodes}, h, {-0.5});
    MapField out;
    out.grid = grid;
    out.target_dim = 2;
    out.values.assign(std::size_t(spec.nodes) * 2, 0.0);
    // trapezoidal arclength integration on the oversampled mesh
    double X = 0.0, Y = 0.0;
    for (std::size_t i = 1; i < fine; ++i) {
        X += 0.5 * (c[i] + c[i - 1]) * hs;
        Y += 0.5 * (s[i] + s[i - 1]) * hs;
        if (i % sub == 0) {
            out.values[(i / sub) * 2] = X;
            out.values[(i / sub) * 2 + 1] = Y;
        }
    }
    return out;
}

double holder_seminorm_estimate(const MapField& f, double alpha, std::size_t pair_budget, const NodeMask* mask) {
    const auto& grid = *f.grid;
    const int n = grid.dim(), m = f.target_dim;
    const double h = grid.spacing();
    auto in = [&](std::size_t k) { return mask == nullptr || (*mask)[k] != 0; };
    auto quotient = [&](std::size_t a, std::size_t b, double dist) {
        double s = 0.0;
        for (int c = 0; c < m; ++c) {
            double d = f.values[a * m + c] - f.values[b * m + c];
            s += d * d;
        }
        return std::sqrt(s) / std::pow(dist, alpha);
    };
    double best = 0.0;
    std::vector<int> mi(n);
    std::vector<std::size_t> nodes;
    for (std::size_t k = 0; k < grid.node_count(); ++k) {
        if (!in(k)) continue;
        nodes.push_back(k);
        grid.unravel(k, mi.data());
        for (int a = 0; a < n; ++a) {
            if (mi[a] + 1 >= grid.shape()[a]) continue;
            std::size_t q = k + grid.strides()[a];
            if (in(q)) best = std::max(best, quotient(k, q, h));
        }
    }
    if (nodes.empty()) return 0.0;
    // Kronecker sequence with the generalized golden ratio in n + 2 dims
    const int d = n + 2;
    double phi = 2.0;
    for (int it = 0; it < 64; ++it) phi = std::pow(1.0 + phi, 1.0 / (d + 1));
    std::vector<double> g(d);
    for (int i = 0; i < d; ++i) g[i] = std::fmod(std::pow(1.0 / phi, i + 1), 1.0);
    int longest = 1;
    for (int a = 0; a < n; ++a) longest = std::max(longest, grid.shape()[a] - 1);
    std::vector<int> mb(n);
    std::vector<double> dir(n);
    for (std::size_t p = 1; p <= pair_budget; ++p) {
        std::vector<double> u(d);
        for (int i = 0; i < d; ++i) u[i] = std::fmod(0.5 + g[i] * double(p), 1.0);
        const std::size_t a = nodes[std::min(nodes.size() - 1, std::size_t(u[0] * nodes.size()))];
        const double len = std::pow(double(longest), u[1]);  // 1 .. longest node steps
        double s = 0.0;
        for (int i = 0; i < n; ++i) {
            dir[i] = n == 1 ? 1.0 : 2.0 * u[2 + i] - 1.0;
            s += dir[i] * dir[i];
        }
        if (s == 0.0) continue;
        grid.unravel(a, mi.data());
        bool ok = true;
        double dist2 = 0.0;
        for (int i = 0; i < n && ok; ++i) {
            int step = static_cast<int>(std::lround(len * dir[i] / std::sqrt(s)));
            mb[i] = mi[i] + step;
            ok = mb[i] >= 0 && mb[i] < grid.shape()[i];
            dist2 += double(step) * step;
        }
        if (!ok || dist2 == 0.0) continue;
        const std::size_t b = grid.index(mb.data());
        if (!in(b)) continue;
        best = std::max(best, quotient(a, b, h * std::sqrt(dist2)));
    }
    return best;
}

void write_scan_csv(const DefectScan& s, const std::string& path) {
    FILE* f = std::fopen(path.c_str(), "w");
    if (!f) throw Error("cannot write " + path);
    std::fprintf(f, "eps,defect,dropped\n");
    for (std::size_t i = 0; i < s.eps.size(); ++i)
        std::fprintf(f, "%.17g,%.17g,%d\n", s.eps[i], s.defect[i], int(s.dropped[i]));
    std::fclose(f);
}

std::string scan_summary_json(const DefectScan& s) {
    nlohmann::ordered_json j;
    j["r"] = s.r;
    j["slope"] = s.fit.slope;
    j["slope_stderr"] = s.fit.slope_stderr;
    j["points"] = s.fit.points;
    j["eps_min"] = s.eps.empty() ? 0.0 : *std::min_element(s.eps.begin(), s.eps.end());
    j["eps_max"] = s.eps.empty() ? 0.0 : *std::max_element(s.eps.begin(), s.eps.end());
    return j.dump(2);
}

}  // namespace curvlab
