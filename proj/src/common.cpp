#include "curvlab/common.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numbers>
#include <thread>

namespace curvlab {

namespace {
std::atomic<int> g_threads{1};
}

void set_thread_count(int n) { g_threads = std::max(1, n); }

int thread_count() { return g_threads; }

namespace {
thread_local bool t_in_worker = false;
}

void parallel_for(std::size_t count, const std::function<void(std::size_t, std::size_t)>& body) {
    if (count == 0) return;
    const std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(g_threads.load()), count);
    // nested loops run inline on the calling worker
    if (workers <= 1 || t_in_worker) {
        body(0, count);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(workers);
    const std::size_t chunk = (count + workers - 1) / workers;
    for (std::size_t w = 0; w < workers; ++w) {
        const std::size_t lo = w * chunk;
        const std::size_t hi = std::min(count, lo + chunk);
        if (lo >= hi) break;
        pool.emplace_back([&body, lo, hi] {
            t_in_worker = true;
            body(lo, hi);
        });
    }
    for (auto& t : pool) t.join();
}

LinearFit fit_line(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size() || x.size() < 2) throw Error("fit_line needs at least two points");
    const double n = static_cast<double>(x.size());
    double sx = 0, sy = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sx += x[i];
        sy += y[i];
    }
    const double mx = sx / n, my = sy / n;
    double sxx = 0, sxy = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxx += (x[i] - mx) * (x[i] - mx);
        sxy += (x[i] - mx) * (y[i] - my);
    }
    if (sxx == 0) throw Error("fit_line: degenerate abscissae");
    LinearFit fit;
    fit.slope = sxy / sxx;
    fit.intercept = my - fit.slope * mx;
    fit.points = x.size();
    if (x.size() > 2) {
        double rss = 0;
        for (std::size_t i = 0; i < x.size(); ++i) {
            const double r = y[i] - fit.intercept - fit.slope * x[i];
            rss += r * r;
        }
        fit.slope_stderr = std::sqrt(rss / (n - 2) / sxx);
    }
    return fit;
}

std::int64_t binomial(int n, int k) {
    if (k < 0 || k > n) return 0;
    std::int64_t r = 1;
    for (int i = 1; i <= k; ++i) r = r * (n - k + i) / i;
    return r;
}

int permutation_sign(const std::vector<int>& p) {
    int inversions = 0;
    for (std::size_t i = 0; i < p.size(); ++i)
        for (std::size_t j = i + 1; j < p.size(); ++j)
            if (p[i] > p[j]) ++inversions;
    return (inversions % 2) ? -1 : 1;
}

GaussLegendre gauss_legendre(int order) {
    if (order < 1) throw Error("gauss_legendre: order must be positive");
    GaussLegendre gl;
    gl.nodes.resize(order);
    gl.weights.resize(order);
    for (int i = 0; i < order; ++i) {
        double x = std::cos(std::numbers::pi * (i + 0.75) / (order + 0.5));
        double dp = 0;
        for (int it = 0; it < 100; ++it) {
            double p0 = 1, p1 = x;
            for (int k = 2; k <= order; ++k) {
                const double p2 = ((2 * k - 1) * x * p1 - (k - 1) * p0) / k;
                p0 = p1;
                p1 = p2;
            }
            if (order == 1) {
                p1 = x;
                p0 = 1;
            }
            dp = order * (x * p1 - p0) / (x * x - 1);
            const double dx = p1 / dp;
            x -= dx;
            if (std::abs(dx) < 1e-16) break;
        }
        double p0 = 1, p1 = x;
        for (int k = 2; k <= order; ++k) {
            const double p2 = ((2 * k - 1) * x * p1 - (k - 1) * p0) / k;
            p0 = p1;
            p1 = p2;
        }
        if (order == 1) p0 = 1;
        dp = order * (x * p1 - p0) / (x * x - 1);
        gl.nodes[order - 1 - i] = x;
        gl.weights[order - 1 - i] = 2.0 / ((1 - x * x) * dp * dp);
    }
    return gl;
}

}  // namespace curvlab
