#include "curvlab/sphere_cells.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace curvlab {

double sphere_volume(int n) {
    return 2.0 * std::pow(std::numbers::pi, 0.5 * (n + 1)) / std::tgamma(0.5 * (n + 1));
}

double angle_between(const double* a, const double* b, int dim) {
    // atan2 form stays accurate for tiny and near-antipodal angles
    double dot = 0.0, cross2 = 0.0;
    for (int i = 0; i < dim; ++i) dot += a[i] * b[i];
    for (int i = 0; i < dim; ++i)
        for (int j = i + 1; j < dim; ++j) {
            double c = a[i] * b[j] - a[j] * b[i];
            cross2 += c * c;
        }
    return std::atan2(std::sqrt(cross2), dot);
}

SphereCellGrid::SphereCellGrid(int n, int k) : n_(n), k_(k) {
    if (n < 1) throw Error("sphere dimension must be positive");
    if (k < 1) throw Error("cells per face axis must be positive");
    std::size_t per_face = 1;
    for (int a = 0; a < n; ++a) per_face *= static_cast<std::size_t>(k);
    count_ = per_face * faces();
    centers_.assign(count_ * (n + 1), 0.0);
    areas_.assign(count_, 0.0);
    radii_.assign(count_, 0.0);
    const double w = 2.0 / k;
    const int order = n <= 2 ? 8 : 5;

    parallel_for(count_, [&](std::size_t lo, std::size_t hi) {
        std::vector<double> u(n), ulo(n), corner(n + 1);
        for (std::size_t cell = lo; cell < hi; ++cell) {
            int face = static_cast<int>(cell / per_face);
            std::size_t r = cell % per_face;
            for (int a = n - 1; a >= 0; --a) {
                ulo[a] = -1.0 + w * static_cast<double>(r % k);
                r /= k;
            }
            for (int a = 0; a < n; ++a) u[a] = ulo[a] + 0.5 * w;
            double* c = &centers_[cell * (n + 1)];
            face_point(face, u.data(), c);
            areas_[cell] = face_area(ulo.data(), w, order);
            double rad = 0.0;
            for (int m = 0; m < (1 << n); ++m) {
                for (int a = 0; a < n; ++a) u[a] = ulo[a] + ((m >> a) & 1) * w;
                face_point(face, u.data(), corner.data());
                rad = std::max(rad, angle_between(c, corner.data(), n + 1));
            }
            radii_[cell] = rad;
        }
    });
    max_radius_ = *std::max_element(radii_.begin(), radii_.end());
}

void SphereCellGrid::face_point(int face, const double* u, double* x) const {
    const int axis = face / 2;
    const double sign = (face % 2 == 0) ? 1.0 : -1.0;
    double norm2 = 1.0;
    for (int b = 0, a = 0; b <= n_; ++b) {
        if (b == axis) {
            x[b] = sign;
        } else {
            x[b] = u[a++];
            norm2 += x[b] * x[b];
        }
    }
    const double inv = 1.0 / std::sqrt(norm2);
    for (int b = 0; b <= n_; ++b) x[b] *= inv;
}

// Integral of the radial-projection Jacobian (1 + |u|^2)^{-(n+1)/2} over the
// face box [lo, lo + width]^n.
double SphereCellGrid::face_area(const double* lo, double width, int order) const {
    const auto gl = gauss_legendre(order);
    std::vector<int> idx(n_, 0);
    double total = 0.0;
    while (true) {
        double wprod = 1.0, r2 = 0.0;
        for (int a = 0; a < n_; ++a) {
            double u = lo[a] + 0.5 * width * (gl.nodes[idx[a]] + 1.0);
            r2 += u * u;
            wprod *= 0.5 * width * gl.weights[idx[a]];
        }
        total += wprod * std::pow(1.0 + r2, -0.5 * (n_ + 1));
        int a = n_ - 1;
        while (a >= 0 && ++idx[a] == order) idx[a--] = 0;
        if (a < 0) break;
    }
    return total;
}

double SphereCellGrid::total_area() const {
    double s = 0.0;
    for (double a : areas_) s += a;
    return s;
}

std::size_t SphereCellGrid::locate(const double* x) const {
    int axis = 0;
    for (int b = 1; b <= n_; ++b)
        if (std::abs(x[b]) > std::abs(x[axis])) axis = b;
    if (x[axis] == 0.0) throw Error("cannot locate the zero vector");
    const int face = 2 * axis + (x[axis] < 0.0 ? 1 : 0);
    const double inv = 1.0 / std::abs(x[axis]);
    std::size_t per_face = 1, r = 0;
    for (int b = 0; b <= n_; ++b) {
        if (b == axis) continue;
        double u = x[b] * inv;
        int j = static_cast<int>(std::floor((u + 1.0) * 0.5 * k_));
        j = std::clamp(j, 0, k_ - 1);
        r = r * k_ + j;
        per_face *= k_;
    }
    return static_cast<std::size_t>(face) * per_face + r;
}

void SphereCellGrid::subcells(std::size_t cell, int s, std::vector<double>& centers,
                              std::vector<double>& areas) const {
    std::size_t per_face = 1;
    for (int a = 0; a < n_; ++a) per_face *= k_;
    const int face = static_cast<int>(cell / per_face);
    std::size_t r = cell % per_face;
    const double w = 2.0 / k_, sw = w / s;
    std::vector<double> base(n_), lo(n_), u(n_), x(n_ + 1);
    for (int a = n_ - 1; a >= 0; --a) {
        base[a] = -1.0 + w * static_cast<double>(r % k_);
        r /= k_;
    }
    std::vector<int> idx(n_, 0);
    while (true) {
        for (int a = 0; a < n_; ++a) {
            lo[a] = base[a] + sw * idx[a];
            u[a] = lo[a] + 0.5 * sw;
        }
        face_point(face, u.data(), x.data());
        centers.insert(centers.end(), x.begin(), x.end());
        areas.push_back(face_area(lo.data(), sw, 4));
        int a = n_ - 1;
        while (a >= 0 && ++idx[a] == s) idx[a--] = 0;
        if (a < 0) break;
    }
}

PointIndex::PointIndex(const std::vector<double>& points, int dim, double bucket)
    : pts_(points), dim_(dim), bucket_(std::max(bucket, 2.0 / 4000.0)), count_(points.size() / dim) {
    std::vector<std::pair<std::uint64_t, std::uint32_t>> tagged(count_);
    std::vector<long> b(dim);
    for (std::size_t i = 0; i < count_; ++i) {
        for (int d = 0; d < dim; ++d) b[d] = static_cast<long>(std::floor(pts_[i * dim + d] / bucket_));
        tagged[i] = {key(b.data()), static_cast<std::uint32_t>(i)};
    }
    std::sort(tagged.begin(), tagged.end());
    order_.resize(count_);
    for (std::size_t i = 0; i < count_; ++i) {
        order_[i] = tagged[i].second;
        if (i == 0 || tagged[i].first != tagged[i - 1].first) {
            keys_.push_back(tagged[i].first);
            offsets_.push_back(static_cast<std::uint32_t>(i));
        }
    }
    offsets_.push_back(static_cast<std::uint32_t>(count_));
}

std::uint64_t PointIndex::key(const long* b) const {
    std::uint64_t k = 0;
    for (int d = 0; d < dim_; ++d) k = (k << 12) | static_cast<std::uint64_t>((b[d] + 2048) & 0xfff);
    return k;
}

void PointIndex::query(const double* c, double r, const std::function<void(std::uint32_t)>& f) const {
    const double r2 = r * r;
    auto test = [&](std::uint32_t i) {
        double d2 = 0.0;
        for (int d = 0; d < dim_; ++d) {
            double t = pts_[i * dim_ + d] - c[d];
            d2 += t * t;
        }
        if (d2 <= r2) f(i);
    };
    std::vector<long> lo(dim_), hi(dim_), b(dim_);
    std::size_t boxes = 1;
    for (int d = 0; d < dim_; ++d) {
        lo[d] = static_cast<long>(std::floor((c[d] - r) / bucket_));
        hi[d] = static_cast<long>(std::floor((c[d] + r) / bucket_));
        boxes *= static_cast<std::size_t>(hi[d] - lo[d] + 1);
    }
    if (boxes > keys_.size()) {
        for (std::uint32_t i = 0; i < count_; ++i) test(i);
        return;
    }
    b = lo;
    while (true) {
        auto it = std::lower_bound(keys_.begin(), keys_.end(), key(b.data()));
        if (it != keys_.end() && *it == key(b.data())) {
            std::size_t slot = it - keys_.begin();
            for (std::uint32_t p = offsets_[slot]; p < offsets_[slot + 1]; ++p) test(order_[p]);
        }
        int d = dim_ - 1;
        while (d >= 0 && ++b[d] > hi[d]) b[d] = lo[d], --d;
        if (d < 0) break;
    }
}

}  // namespace curvlab
