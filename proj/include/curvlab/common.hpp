#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

namespace curvlab {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

using NodeMask = std::vector<std::uint8_t>;

// Worker count used by parallel_for. Results never depend on it: every
// parallel loop writes disjoint slots and reductions run serially afterwards.
void set_thread_count(int n);
int thread_count();

void parallel_for(std::size_t count, const std::function<void(std::size_t, std::size_t)>& body);

struct LinearFit {
    double slope = 0.0;
    double intercept = 0.0;
    double slope_stderr = 0.0;
    std::size_t points = 0;
};

LinearFit fit_line(const std::vector<double>& x, const std::vector<double>& y);

std::int64_t binomial(int n, int k);

// Sign of the permutation p of {0..n-1} by inversion count.
int permutation_sign(const std::vector<int>& p);

struct GaussLegendre {
    std::vector<double> nodes;    // on [-1, 1]
    std::vector<double> weights;
};

GaussLegendre gauss_legendre(int order);

}  // namespace curvlab
