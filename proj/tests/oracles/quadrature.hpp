#pragma once

// Composite Simpson integration against the standard normal density.

#include <cmath>
#include <functional>

namespace oracle {

inline double gaussian_expectation(const std::function<double(double)>& f, double sigma = 1.0, double half_width = 12.0,
                                   int intervals = 20000)
{
    const double a = -half_width * sigma, b = half_width * sigma;
    const double h = (b - a) / intervals;
    const double norm = 1.0 / (sigma * std::sqrt(2.0 * M_PI));
    auto g = [&](double x) { return f(x) * norm * std::exp(-0.5 * x * x / (sigma * sigma)); };
    double s = g(a) + g(b);
    for (int i = 1; i < intervals; ++i) s += (i % 2 ? 4.0 : 2.0) * g(a + i * h);
    return s * h / 3.0;
}

}  // namespace oracle
