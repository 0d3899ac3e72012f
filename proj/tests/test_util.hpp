#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <vector>

#include "dmqn/autodiff.hpp"
#include "dmqn/rng.hpp"

namespace dmqn::testing {

template <class T = double>
BasicTensor<T> random_tensor(Shape shape, std::uint64_t seed, double lo = -2.0, double hi = 2.0) {
    BasicTensor<T> t(std::move(shape));
    Rng rng(seed);
    for (auto& v : t.values()) v = static_cast<T>(lo + (hi - lo) * uniform01(rng));
    return t;
}

/// Relative error |a - n| / max(|a|, |n|); coordinates where both vanish
/// (below 1e-10) count as agreeing.
inline double relative_error(double analytic, double numeric) {
    const double scale = std::max(std::abs(analytic), std::abs(numeric));
    if (scale < 1e-10) return 0.0;
    return std::abs(analytic - numeric) / scale;
}

/// Central finite difference of f with respect to x[i], step h.
inline double central_difference(std::vector<double>& x, std::size_t i, double h,
                                 const std::function<double()>& f) {
    const double saved = x[i];
    x[i] = saved + h;
    const double up = f();
    x[i] = saved - h;
    const double down = f();
    x[i] = saved;
    return (up - down) / (2.0 * h);
}

/// Reference product in double with a triple loop.
template <class T>
std::vector<double> matmul_oracle(const BasicTensor<T>& a, const BasicTensor<T>& b) {
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    std::vector<double> out(m * n, 0.0);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            double s = 0.0;
            for (std::size_t p = 0; p < k; ++p) s += static_cast<double>(a.at(i, p)) * b.at(p, j);
            out[i * n + j] = s;
        }
    return out;
}

}  // namespace dmqn::testing
