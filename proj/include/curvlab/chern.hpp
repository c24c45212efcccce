#pragma once

#include <string>
#include <vector>

#include "curvlab/geometry.hpp"

namespace curvlab {

enum class Convention { Paper, Calibrated };

std::string to_string(Convention c);
Convention convention_from_string(const std::string& s);

struct TransgressionSet {
    std::vector<FormField> phis;      // Phi_i, i = 0..n/2-1
    FormField pi_form;                // degree n-1
    std::vector<double> coefficients; // raw coefficients c_i of the Phi_i
    Convention convention = Convention::Paper;
    double scale = 1.0;               // c* for the calibrated convention, else 1
    double calibration_residual = 0.0;
};

struct Calibration {
    double c_star = 0.0;
    double relative_residual = 0.0;
};

// Sum over permutations zeta of {0..n-1} with zeta(0) = 0 of
// sgn(zeta) omega^0_{z1} ^ ... ^ omega^0_{z(n-2i-1)} ^ Omega^{..}_{..} ^ ...
FormField phi_form(const FrameBundle& fb, int i);

// c_i = (-1)^i / (pi^n (2n-2i-1)!! i! 2^(n+i)), i = 0..n/2-1
std::vector<double> transgression_coefficients(int n);

// Least-squares c minimizing |c dPi - pf|_2 over interior nodes, where Pi is
// built with the raw coefficients. The target defaults to pfaffian(fb).
Calibration calibrate_transgression(const FrameBundle& fb, const GeometryOptions& opt = {});
Calibration calibrate_transgression(const FrameBundle& fb, const FormField& pf_target,
                                    const GeometryOptions& opt = {});

// Diagnostic: independent least-squares coefficients a_i with
// sum_i a_i dPhi_i ~ pf_target over interior nodes, plus the relative residual.
struct CoefficientFit {
    std::vector<double> coefficients;
    double relative_residual = 0.0;
};
CoefficientFit fit_transgression_coefficients(const FrameBundle& fb, const FormField& pf_target,
                                              const GeometryOptions& opt = {});

TransgressionSet gbc_primitive(const FrameBundle& fb, Convention convention,
                               const GeometryOptions& opt = {});

}  // namespace curvlab
