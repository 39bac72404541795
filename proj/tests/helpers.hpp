#pragma once

#include <netspc/policy.hpp>

#include <random>

namespace testing_support {

/// Random policy with exact zeros in every structural-zero position.
inline netspc::PolicyParams random_policy(int N, int m, int d, std::mt19937_64& gen, double scale = 1.0)
{
    std::normal_distribution<double> n01;
    netspc::PolicyParams p = netspc::PolicyParams::zero(N, m, d);
    const netspc::PolicyLayout lay = p.layout();
    for (int i = 0; i < lay.rows(); ++i) {
        p.eta(i) = scale * n01(gen);
        for (int j = 0; j < lay.noise_cols(); ++j)
            if (lay.theta_free(i, j)) p.Theta(i, j) = scale * n01(gen);
        for (int c = 0; c < lay.dropout_cols(); ++c)
            if (lay.lambda_free(i, c)) p.Lambda(i, c) = scale * n01(gen);
    }
    return p;
}

inline Eigen::VectorXd random_vector(int n, std::mt19937_64& gen, double lo = -1.0, double hi = 1.0)
{
    std::uniform_real_distribution<double> u(lo, hi);
    Eigen::VectorXd v(n);
    for (int i = 0; i < n; ++i) v(i) = u(gen);
    return v;
}

inline Eigen::VectorXd random_bits(int n, std::mt19937_64& gen)
{
    std::bernoulli_distribution b(0.5);
    Eigen::VectorXd v(n);
    for (int i = 0; i < n; ++i) v(i) = b(gen) ? 1.0 : 0.0;
    return v;
}

}  // namespace testing_support
