#include "curvlab/chern.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include <Eigen/Dense>

namespace curvlab {

std::string to_string(Convention c) { return c == Convention::Paper ? "paper" : "calibrated"; }

Convention convention_from_string(const std::string& s) {
    if (s == "paper") return Convention::Paper;
    if (s == "calibrated") return Convention::Calibrated;
    throw Error("unknown transgression convention '" + s + "'");
}

namespace {

bool identically_zero(const FormField& f) {
    return std::all_of(f.coeffs.begin(), f.coeffs.end(), [](double v) { return v == 0.0; });
}

void check_bundle(const FrameBundle& fb) {
    if (!fb.has_connection() || !fb.has_curvature())
        throw Error("transgression requires connection and curvature forms");
    if (fb.n % 2 != 0) throw Error("transgression requires even dimension");
    if (fb.n > 4) throw Error("transgression is only evaluated for n <= 4");
}

double double_factorial(int k) {
    double r = 1.0;
    for (int j = k; j > 1; j -= 2) r *= j;
    return r;
}

FormField combine(const std::vector<FormField>& phis, const std::vector<double>& c, double scale) {
    FormField out = FormField::zeros(phis.front().grid, phis.front().degree);
    for (std::size_t i = 0; i < phis.size(); ++i) out = axpy(out, scale * c[i], phis[i]);
    return out;
}

}  // namespace

FormField phi_form(const FrameBundle& fb, int i) {
    check_bundle(fb);
    const int n = fb.n;
    if (i < 0 || i > n / 2 - 1) throw Error("Phi index out of range");

    std::vector<std::vector<int>> perms;
    std::vector<int> p(n);
    for (int k = 0; k < n; ++k) p[k] = k;
    do perms.push_back(p);
    while (std::next_permutation(p.begin() + 1, p.end()));

    const int n_omega = n - 2 * i - 1;
    std::vector<FormField> terms(perms.size());
    std::vector<char> present(perms.size(), 0);
    parallel_for(perms.size(), [&](std::size_t lo, std::size_t hi) {
        for (std::size_t t = lo; t < hi; ++t) {
            const auto& z = perms[t];
            std::vector<const FormField*> factors;
            for (int k = 1; k <= n_omega; ++k) factors.push_back(&fb.omega(0, z[k]));
            for (int m = 0; m < i; ++m) factors.push_back(&fb.Omega(z[n_omega + 1 + 2 * m], z[n_omega + 2 + 2 * m]));
            bool zero = false;
            for (auto* f : factors) zero = zero || identically_zero(*f);
            if (zero) continue;
            FormField acc = *factors[0];
            for (std::size_t k = 1; k < factors.size(); ++k) acc = wedge(acc, *factors[k]);
            terms[t] = scaled(acc, permutation_sign(z));
            present[t] = 1;
        }
    });

    FormField sum = FormField::zeros(fb.grid, n - 1);
    for (std::size_t t = 0; t < perms.size(); ++t)
        if (present[t]) sum = axpy(sum, 1.0, terms[t]);
    return sum;
}

std::vector<double> transgression_coefficients(int n) {
    if (n % 2 != 0) throw Error("transgression requires even dimension");
    std::vector<double> c;
    double ifact = 1.0;
    for (int i = 0; i <= n / 2 - 1; ++i) {
        if (i > 0) ifact *= i;
        double denom = std::pow(std::numbers::pi, n) * double_factorial(2 * n - 2 * i - 1) * ifact *
                       std::ldexp(1.0, n + i);
        c.push_back((i % 2 == 0 ? 1.0 : -1.0) / denom);
    }
    return c;
}

Calibration calibrate_transgression(const FrameBundle& fb, const FormField& pf_target,
                                    const GeometryOptions& opt) {
    check_bundle(fb);
    const auto c = transgression_coefficients(fb.n);
    std::vector<FormField> phis;
    for (int i = 0; i < fb.n / 2; ++i) phis.push_back(phi_form(fb, i));
    FormField dpi = exterior_derivative(combine(phis, c, 1.0), opt.closure);

    const auto& mask = fb.grid->interior_mask();
    double pp = 0.0, dp = 0.0, dd = 0.0, pmax = 0.0;
    for (std::size_t k = 0; k < mask.size(); ++k) {
        if (!mask[k]) continue;
        double a = dpi.coeffs[k], b = pf_target.coeffs[k];
        pp += b * b;
        dp += a * b;
        dd += a * a;
        pmax = std::max(pmax, std::abs(b));
    }
    if (pmax < 1e-10 || dd == 0.0) throw Error("degenerate calibration fixture");

    Calibration out;
    out.c_star = dp / dd;
    double rr = 0.0;
    for (std::size_t k = 0; k < mask.size(); ++k) {
        if (!mask[k]) continue;
        double e = out.c_star * dpi.coeffs[k] - pf_target.coeffs[k];
        rr += e * e;
    }
    out.relative_residual = std::sqrt(rr / pp);
    return out;
}

Calibration calibrate_transgression(const FrameBundle& fb, const GeometryOptions& opt) {
    check_bundle(fb);
    return calibrate_transgression(fb, pfaffian(fb), opt);
}

CoefficientFit fit_transgression_coefficients(const FrameBundle& fb, const FormField& pf_target,
                                              const GeometryOptions& opt) {
    check_bundle(fb);
    const int m = fb.n / 2;
    std::vector<FormField> dphi;
    for (int i = 0; i < m; ++i) dphi.push_back(exterior_derivative(phi_form(fb, i), opt.closure));
    const auto& mask = fb.grid->interior_mask();
    Eigen::MatrixXd ata = Eigen::MatrixXd::Zero(m, m);
    Eigen::VectorXd atb = Eigen::VectorXd::Zero(m);
    double pp = 0.0;
    for (std::size_t k = 0; k < mask.size(); ++k) {
        if (!mask[k]) continue;
        double b = pf_target.coeffs[k];
        pp += b * b;
        for (int i = 0; i < m; ++i) {
            atb(i) += dphi[i].coeffs[k] * b;
            for (int j = 0; j < m; ++j) ata(i, j) += dphi[i].coeffs[k] * dphi[j].coeffs[k];
        }
    }
    if (pp == 0.0) throw Error("degenerate calibration fixture");
    // Minimum-norm solution: some Phi_i vanish on product fixtures.
    Eigen::VectorXd a = ata.completeOrthogonalDecomposition().solve(atb);
    CoefficientFit out;
    out.coefficients.assign(a.data(), a.data() + m);
    double rr = 0.0;
    for (std::size_t k = 0; k < mask.size(); ++k) {
        if (!mask[k]) continue;
        double e = -pf_target.coeffs[k];
        for (int i = 0; i < m; ++i) e += a(i) * dphi[i].coeffs[k];
        rr += e * e;
    }
    out.relative_residual = std::sqrt(rr / pp);
    return out;
}

TransgressionSet gbc_primitive(const FrameBundle& fb, Convention convention, const GeometryOptions& opt) {
    check_bundle(fb);
    TransgressionSet ts;
    ts.convention = convention;
    ts.coefficients = transgression_coefficients(fb.n);
    for (int i = 0; i < fb.n / 2; ++i) ts.phis.push_back(phi_form(fb, i));
    if (convention == Convention::Calibrated) {
        auto cal = calibrate_transgression(fb, opt);
        ts.scale = cal.c_star;
        ts.calibration_residual = cal.relative_residual;
    }
    ts.pi_form = combine(ts.phis, ts.coefficients, ts.scale);
    return ts;
}

}  // namespace curvlab
