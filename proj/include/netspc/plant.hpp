#pragma once

// LTI plant x+ = A x + B u + w, its splitting into an orthogonal part and a
// Schur-stable part, and reachability data of the orthogonal part.

#include <netspc/errors.hpp>
#include <netspc/linalg.hpp>
#include <netspc/stochastics.hpp>

#include <Eigen/Eigenvalues>
#include <lapacke.h>

#include <algorithm>
#include <cmath>
#include <complex>
#include <sstream>
#include <vector>

namespace netspc {

struct PlantModel
{
    Matrix A;
    Matrix B;
    double u_max = 1.0;
    NoiseSpec noise;

    int d() const { return static_cast<int>(A.rows()); }
    int m() const { return static_cast<int>(B.cols()); }

    void validate() const
    {
        if (A.rows() < 1 || A.rows() != A.cols()) throw DimensionMismatch("plant: A must be square with d >= 1");
        if (B.rows() != A.rows() || B.cols() < 1) throw DimensionMismatch("plant: B must have d rows and m >= 1 columns");
        if (!(u_max > 0.0)) throw ConfigError("plant: u_max must be positive");
        if (noise.covariance.size() != 0) {
            if (noise.covariance.rows() != A.rows()) throw DimensionMismatch("plant: noise covariance must be d x d");
            noise.validate();
        }
    }
};

/// A = T * blkdiag(A_o, A_s) * T^{-1} with A_o orthogonal and A_s Schur stable.
struct OrthoSchurDecomposition
{
    Matrix T;  ///< columns: basis of the orthogonal part, then of the stable part
    Matrix T_inv;
    Matrix A_o, A_s;
    Matrix B_o, B_s;
    int d_o = 0;
    int d_s = 0;
    bool orthonormal_basis = true;  ///< T^T T = I (always the case when A is normal)

    Vector orthogonal_coordinates(const Vector& x) const { return (T_inv * x).head(d_o); }
    Vector stable_coordinates(const Vector& x) const { return (T_inv * x).tail(d_s); }

    Matrix reconstruct() const
    {
        Matrix blk = Matrix::Zero(d_o + d_s, d_o + d_s);
        blk.topLeftCorner(d_o, d_o) = A_o;
        blk.bottomRightCorner(d_s, d_s) = A_s;
        return T * blk * T_inv;
    }
};

struct ReachabilityData
{
    bool empty_orthogonal_part = false;
    int kappa = 1;
    Matrix R_kappa;       ///< d_o x (kappa m): [A_o^{kappa-1} B_o, ..., B_o]
    Matrix R_kappa_pinv;  ///< (kappa m) x d_o
    double sigma1_pinv = 0.0;
};

struct RescaledPlant
{
    PlantModel model;
    Vector scale;  ///< physical input = scale .* solved input
};

namespace detail {

inline thread_local double schur_select_radius = 1.0;

inline lapack_logical select_outer(const double* wr, const double* wi)
{
    return std::hypot(*wr, *wi) >= schur_select_radius ? 1 : 0;
}

/// Y with T11 Y - Y T22 = C (spectra of T11 and T22 disjoint).
inline Matrix solve_sylvester(const Matrix& T11, const Matrix& T22, const Matrix& C)
{
    const auto p = T11.rows(), q = T22.rows();
    Matrix K = Matrix::Zero(p * q, p * q);
    for (Eigen::Index j = 0; j < q; ++j) {
        K.block(j * p, j * p, p, p) += T11;
        for (Eigen::Index i = 0; i < q; ++i) K.block(j * p, i * p, p, p) -= T22(i, j) * Matrix::Identity(p, p);
    }
    Vector rhs = Eigen::Map<const Vector>(C.data(), p * q);
    Vector y = K.fullPivLu().solve(rhs);
    return Eigen::Map<Matrix>(y.data(), p, q);
}

/// Ordered real Schur form: Z^T A Z quasi upper triangular, eigenvalues with
/// modulus >= radius first. Returns the number of leading eigenvalues.
inline int ordered_schur(const Matrix& A, double radius, Matrix& Tq, Matrix& Z)
{
    const lapack_int n = static_cast<lapack_int>(A.rows());
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> a = A;
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> vs(n, n);
    std::vector<double> wr(n), wi(n);
    lapack_int sdim = 0;
    schur_select_radius = radius;
    const lapack_int info = LAPACKE_dgees(LAPACK_ROW_MAJOR, 'V', 'S', &select_outer, n, a.data(), n, &sdim, wr.data(),
                                          wi.data(), vs.data(), n);
    if (info != 0) {
        std::ostringstream os;
        os << "real Schur decomposition failed (dgees info " << info << ")";
        throw NotLyapunovStable(os.str());
    }
    Tq = a;
    Z = vs;
    return static_cast<int>(sdim);
}

}  // namespace detail

/// Splits the spectrum of A at the unit circle. Eigenvalues within
/// unit_circle_tol of the circle count as lying on it and must be semisimple.
inline OrthoSchurDecomposition decompose(const PlantModel& model, double unit_circle_tol = 1e-8)
{
    model.validate();
    const Matrix& A = model.A;
    const int d = model.d();

    Eigen::EigenSolver<Matrix> es(A, false);
    const Eigen::VectorXcd lambda = es.eigenvalues();
    std::vector<std::complex<double>> on_circle;
    for (Eigen::Index i = 0; i < lambda.size(); ++i) {
        const double r = std::abs(lambda(i));
        if (r > 1.0 + unit_circle_tol) {
            std::ostringstream os;
            os << "A has eigenvalue " << lambda(i) << " with modulus " << r << " > 1";
            throw NotLyapunovStable(os.str());
        }
        if (r >= 1.0 - unit_circle_tol) on_circle.push_back(lambda(i));
    }

    // Semisimplicity of unit-circle eigenvalues: geometric == algebraic multiplicity.
    std::vector<bool> used(on_circle.size(), false);
    const double cluster_tol = 1e-6;
    for (std::size_t i = 0; i < on_circle.size(); ++i) {
        if (used[i]) continue;
        std::complex<double> centre = 0.0;
        int algebraic = 0;
        for (std::size_t j = i; j < on_circle.size(); ++j) {
            if (!used[j] && std::abs(on_circle[j] - on_circle[i]) < cluster_tol) {
                used[j] = true;
                centre += on_circle[j];
                ++algebraic;
            }
        }
        centre /= static_cast<double>(algebraic);
        Eigen::MatrixXcd shifted = A.cast<std::complex<double>>();
        shifted.diagonal().array() -= centre;
        Eigen::JacobiSVD<Eigen::MatrixXcd> svd(shifted);
        int rank = 0;
        for (Eigen::Index k = 0; k < svd.singularValues().size(); ++k)
            if (svd.singularValues()(k) > 1e-8 * std::max(1.0, max_abs(A))) ++rank;
        const int geometric = d - rank;
        if (geometric < algebraic) {
            std::ostringstream os;
            os << "unit-circle eigenvalue " << centre << " is defective (algebraic " << algebraic << ", geometric "
               << geometric << ")";
            throw NotLyapunovStable(os.str());
        }
    }

    Matrix Tq, Z;
    const int d_o = detail::ordered_schur(A, 1.0 - unit_circle_tol, Tq, Z);
    const int d_s = d - d_o;

    Matrix T = Z;
    if (d_o > 0 && d_s > 0) {
        // Remove the coupling block so the two invariant subspaces decouple.
        const Matrix Y = detail::solve_sylvester(Tq.topLeftCorner(d_o, d_o), Tq.bottomRightCorner(d_s, d_s),
                                                 -Tq.topRightCorner(d_o, d_s));
        Matrix U = Matrix::Identity(d, d);
        U.topRightCorner(d_o, d_s) = Y;
        T = Z * U;
    }

    OrthoSchurDecomposition out;
    out.d_o = d_o;
    out.d_s = d_s;
    Matrix A_o = Tq.topLeftCorner(d_o, d_o);

    // Change basis inside the orthogonal part when the Schur block is only
    // similar to an orthogonal matrix: X = (V V^H)^{-1} is an invariant inner
    // product (A_o^T X A_o = X), and its Cholesky factor maps A_o to O(d_o).
    if (d_o > 0 && max_abs(A_o.transpose() * A_o - Matrix::Identity(d_o, d_o)) > 1e-12) {
        Eigen::EigenSolver<Matrix> eo(A_o, true);
        const Eigen::MatrixXcd V = eo.eigenvectors();
        const Eigen::MatrixXcd G = V * V.adjoint();
        Matrix X = symmetrize(G.real().inverse());
        X /= X.diagonal().mean();
        Eigen::LLT<Matrix> llt(X);
        if (llt.info() != Eigen::Success) throw NotLyapunovStable("orthogonal part is not diagonalizable");
        const Matrix L = llt.matrixL();
        const Matrix P = L.transpose().triangularView<Eigen::Upper>().solve(Matrix::Identity(d_o, d_o));  // L^{-T}
        A_o = L.transpose() * A_o * P;
        T.leftCols(d_o) = T.leftCols(d_o) * P;
    }

    out.T = T;
    out.T_inv = T.inverse();
    out.A_o = A_o;
    out.A_s = Tq.bottomRightCorner(d_s, d_s);
    const Matrix Bt = out.T_inv * model.B;
    out.B_o = Bt.topRows(d_o);
    out.B_s = Bt.bottomRows(d_s);
    out.orthonormal_basis = max_abs(T.transpose() * T - Matrix::Identity(d, d)) <= 1e-9;
    return out;
}

/// Smallest kappa <= kappa_max with rank [A_o^{kappa-1} B_o, ..., B_o] == d_o.
/// kappa_max <= 0 selects the state dimension as ceiling.
inline ReachabilityData reachability(const OrthoSchurDecomposition& dec, int kappa_max = 0)
{
    ReachabilityData out;
    if (dec.d_o == 0) {
        out.empty_orthogonal_part = true;
        out.kappa = 1;
        return out;
    }
    const int d = dec.d_o + dec.d_s;
    if (kappa_max <= 0) kappa_max = d;
    const auto m = dec.B_o.cols();
    Matrix powered = dec.B_o;  // A_o^{l-1} B_o
    Matrix R = dec.B_o;
    for (int l = 1; l <= kappa_max; ++l) {
        if (l > 1) {
            powered = dec.A_o * powered;
            Matrix next(dec.d_o, l * m);
            next << powered, R;
            R = next;
        }
        if (numerical_rank(R, 1e-9) == dec.d_o) {
            out.kappa = l;
            out.R_kappa = R;
            Eigen::JacobiSVD<Matrix> svd(R, Eigen::ComputeThinU | Eigen::ComputeThinV);
            const Vector& s = svd.singularValues();
            Vector s_inv = Vector::Zero(s.size());
            for (Eigen::Index i = 0; i < s.size(); ++i)
                if (s(i) > 1e-9 * std::max(1.0, s(0))) s_inv(i) = 1.0 / s(i);
            out.R_kappa_pinv = svd.matrixV() * s_inv.asDiagonal() * svd.matrixU().transpose();
            out.sigma1_pinv = s_inv.maxCoeff();
            return out;
        }
    }
    std::ostringstream os;
    os << "orthogonal part is not reachable within " << kappa_max << " steps";
    throw NotReachable(os.str());
}

/// Maps per-axis bounds |u_i| <= U_i to a uniform box of radius max_i U_i by
/// scaling the columns of B.
inline RescaledPlant rescale_inputs(const Matrix& A, const Matrix& B, const Vector& per_axis_bounds)
{
    require_dims(per_axis_bounds.size() == B.cols(), "rescale_inputs: one bound per input");
    if ((per_axis_bounds.array() <= 0.0).any()) throw ConfigError("rescale_inputs: bounds must be positive");
    RescaledPlant out;
    const double u_max = per_axis_bounds.maxCoeff();
    out.scale = per_axis_bounds / u_max;
    out.model.A = A;
    out.model.B = B * out.scale.asDiagonal();
    out.model.u_max = u_max;
    return out;
}

}  // namespace netspc
