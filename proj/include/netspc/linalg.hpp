#pragma once

#include <Eigen/Dense>

#include <cmath>

namespace netspc {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

inline Matrix symmetrize(const Matrix& M) { return 0.5 * (M + M.transpose()); }

inline double max_abs(const Matrix& M) { return M.size() == 0 ? 0.0 : M.cwiseAbs().maxCoeff(); }

inline double min_eigenvalue(const Matrix& M)
{
    if (M.size() == 0) return 0.0;
    Eigen::SelfAdjointEigenSolver<Matrix> es(symmetrize(M), Eigen::EigenvaluesOnly);
    return es.eigenvalues().minCoeff();
}

inline double spectral_norm(const Matrix& M)
{
    if (M.size() == 0) return 0.0;
    Eigen::JacobiSVD<Matrix> svd(M);
    return svd.singularValues()(0);
}

/// Numerical rank from singular values: sigma_i > tol * max(1, sigma_0).
inline int numerical_rank(const Matrix& M, double tol = 1e-9)
{
    if (M.size() == 0) return 0;
    Eigen::JacobiSVD<Matrix> svd(M);
    const auto& s = svd.singularValues();
    const double thresh = tol * std::max(1.0, s(0));
    int r = 0;
    for (Eigen::Index i = 0; i < s.size(); ++i)
        if (s(i) > thresh) ++r;
    return r;
}

inline bool is_psd(const Matrix& M, double tol = 1e-10)
{
    if (M.rows() != M.cols()) return false;
    if (max_abs(M - M.transpose()) > tol * std::max(1.0, max_abs(M))) return false;
    return min_eigenvalue(M) >= -tol * std::max(1.0, max_abs(M));
}

inline bool is_pd(const Matrix& M)
{
    if (M.rows() != M.cols() || M.rows() == 0) return false;
    Eigen::LLT<Matrix> llt(symmetrize(M));
    return llt.info() == Eigen::Success;
}

/// Symmetric square root factor L with L * L^T = S for a PSD matrix S.
/// Cholesky when possible, eigen-decomposition otherwise (singular S).
inline Matrix psd_factor(const Matrix& S)
{
    Eigen::LLT<Matrix> llt(S);
    if (llt.info() == Eigen::Success) return llt.matrixL();
    Eigen::SelfAdjointEigenSolver<Matrix> es(symmetrize(S));
    Vector root = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    return es.eigenvectors() * root.asDiagonal();
}

inline Matrix block_diag_repeat(const Matrix& B, int count)
{
    Matrix out = Matrix::Zero(B.rows() * count, B.cols() * count);
    for (int i = 0; i < count; ++i) out.block(i * B.rows(), i * B.cols(), B.rows(), B.cols()) = B;
    return out;
}

}  // namespace netspc
