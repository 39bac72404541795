#pragma once

// Reference solver for strictly convex QPs
//   min 1/2 x'Px + q'x  s.t.  C x <= d
// by the textbook primal active-set method started from a feasible point.
// Deliberately shares no code with the ADMM solver under test.

#include <Eigen/Dense>

#include <algorithm>
#include <limits>
#include <stdexcept>
#include <vector>

namespace oracle {

struct ActiveSetResult
{
    Eigen::VectorXd x;
    double objective = 0.0;
    int iterations = 0;
};

inline ActiveSetResult active_set_qp(const Eigen::MatrixXd& P, const Eigen::VectorXd& q, const Eigen::MatrixXd& C,
                                     const Eigen::VectorXd& d, Eigen::VectorXd x, int max_iter = 10000)
{
    const Eigen::Index n = P.rows(), m = C.rows();
    if ((C * x - d).maxCoeff() > 1e-9) throw std::invalid_argument("active_set_qp: start point infeasible");
    std::vector<int> work;
    ActiveSetResult out;
    for (int it = 0; it < max_iter; ++it) {
        out.iterations = it + 1;
        const auto k = static_cast<Eigen::Index>(work.size());
        Eigen::MatrixXd K = Eigen::MatrixXd::Zero(n + k, n + k);
        Eigen::VectorXd rhs = Eigen::VectorXd::Zero(n + k);
        K.topLeftCorner(n, n) = P;
        for (Eigen::Index a = 0; a < k; ++a) {
            K.block(n + a, 0, 1, n) = C.row(work[a]);
            K.block(0, n + a, n, 1) = C.row(work[a]).transpose();
        }
        rhs.head(n) = -(P * x + q);
        const Eigen::VectorXd sol = K.fullPivLu().solve(rhs);
        const Eigen::VectorXd step = sol.head(n);
        if (step.lpNorm<Eigen::Infinity>() <= 1e-12 * (1.0 + x.lpNorm<Eigen::Infinity>())) {
            // Multipliers of the working set; a negative one means the bound should be released.
            Eigen::Index worst = -1;
            double most_negative = -1e-12;
            for (Eigen::Index a = 0; a < k; ++a)
                if (sol(n + a) < most_negative) {
                    most_negative = sol(n + a);
                    worst = a;
                }
            if (worst < 0) {
                out.x = x;
                out.objective = 0.5 * x.dot(P * x) + q.dot(x);
                return out;
            }
            work.erase(work.begin() + worst);
            continue;
        }
        double alpha = 1.0;
        int blocking = -1;
        for (Eigen::Index i = 0; i < m; ++i) {
            if (std::find(work.begin(), work.end(), static_cast<int>(i)) != work.end()) continue;
            const double cs = C.row(i).dot(step);
            if (cs <= 1e-14) continue;
            const double room = std::max(0.0, d(i) - C.row(i).dot(x));
            if (room / cs < alpha) {
                alpha = room / cs;
                blocking = static_cast<int>(i);
            }
        }
        x += alpha * step;
        if (blocking >= 0) work.push_back(blocking);
    }
    throw std::runtime_error("active_set_qp: iteration limit");
}

}  // namespace oracle
