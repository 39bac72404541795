#pragma once

// Affine policy u = eta + Theta * sat(w) + Lambda * nu over an N-stage horizon
// with strictly lower block triangular gains, its packed decision vector and
// the row-wise l1/l-infinity sparsity regularizer.

#include <netspc/errors.hpp>
#include <netspc/linalg.hpp>

#include <cmath>
#include <iomanip>
#include <set>
#include <sstream>
#include <string>

namespace netspc {

/// Index bookkeeping for the free (structurally non-zero) policy entries.
struct PolicyLayout
{
    int N = 1, m = 1, d = 1;

    PolicyLayout() = default;
    PolicyLayout(int N_, int m_, int d_) : N(N_), m(m_), d(d_)
    {
        if (N < 1 || m < 1 || d < 1) throw DimensionMismatch("policy layout: N, m, d must be positive");
    }

    int rows() const { return m * N; }
    int noise_cols() const { return d * (N - 1); }
    int dropout_cols() const { return N - 1; }

    int n_eta() const { return m * N; }
    int n_lambda() const { return m * N * (N - 1) / 2; }
    int n_xi() const { return n_eta() + n_lambda(); }
    int n_theta() const { return m * d * N * (N - 1) / 2; }
    int n_total() const { return n_xi() + n_theta(); }

    int stage_of_row(int i) const { return i / m; }

    bool lambda_free(int i, int c) const { return c < stage_of_row(i); }
    bool theta_free(int i, int j) const { return j / d < stage_of_row(i); }

    /// Position inside the Lambda-tilde part of xi: column c keeps rows (c+1)m .. mN-1.
    int lambda_index(int i, int c) const
    {
        int base = 0;
        for (int cc = 0; cc < c; ++cc) base += m * (N - 1 - cc);
        return base + i - (c + 1) * m;
    }

    /// Position inside theta_free: row-major over the free entries.
    int theta_index(int i, int j) const
    {
        int base = 0;
        for (int ii = 0; ii < i; ++ii) base += stage_of_row(ii) * d;
        return base + j;
    }
};

struct PolicyParams
{
    int N = 1, m = 1, d = 1;
    Vector eta;    ///< mN
    Matrix Theta;  ///< mN x d(N-1)
    Matrix Lambda; ///< mN x (N-1)

    static PolicyParams zero(int N, int m, int d)
    {
        PolicyLayout lay(N, m, d);
        PolicyParams p;
        p.N = N;
        p.m = m;
        p.d = d;
        p.eta = Vector::Zero(lay.rows());
        p.Theta = Matrix::Zero(lay.rows(), lay.noise_cols());
        p.Lambda = Matrix::Zero(lay.rows(), lay.dropout_cols());
        return p;
    }

    PolicyLayout layout() const { return PolicyLayout(N, m, d); }

    void check_dims() const
    {
        const PolicyLayout lay = layout();
        require_dims(eta.size() == lay.rows(), "policy: eta must have length mN");
        require_dims(Theta.rows() == lay.rows() && Theta.cols() == lay.noise_cols(), "policy: Theta must be mN x d(N-1)");
        require_dims(Lambda.rows() == lay.rows() && Lambda.cols() == lay.dropout_cols(), "policy: Lambda must be mN x (N-1)");
    }

    /// Largest magnitude found in a structural-zero position.
    double structure_residual() const
    {
        const PolicyLayout lay = layout();
        double worst = 0.0;
        for (int i = 0; i < lay.rows(); ++i) {
            for (int j = 0; j < lay.noise_cols(); ++j)
                if (!lay.theta_free(i, j)) worst = std::max(worst, std::fabs(Theta(i, j)));
            for (int c = 0; c < lay.dropout_cols(); ++c)
                if (!lay.lambda_free(i, c)) worst = std::max(worst, std::fabs(Lambda(i, c)));
        }
        return worst;
    }

    PolicyParams operator*(double s) const
    {
        PolicyParams out = *this;
        out.eta *= s;
        out.Theta *= s;
        out.Lambda *= s;
        return out;
    }

    PolicyParams operator+(const PolicyParams& o) const
    {
        PolicyParams out = *this;
        out.eta += o.eta;
        out.Theta += o.Theta;
        out.Lambda += o.Lambda;
        return out;
    }
};

struct PackedDecision
{
    Vector xi;          ///< [eta; Lambda-tilde]
    Vector theta_free;  ///< free Theta entries, row-major
};

inline PackedDecision pack(const PolicyParams& params)
{
    params.check_dims();
    if (params.structure_residual() > 1e-14) throw StructureViolation("pack: non-zero entry in a structural-zero position");
    const PolicyLayout lay = params.layout();
    PackedDecision out;
    out.xi = Vector::Zero(lay.n_xi());
    out.theta_free = Vector::Zero(lay.n_theta());
    out.xi.head(lay.n_eta()) = params.eta;
    for (int c = 0; c < lay.dropout_cols(); ++c)
        for (int i = (c + 1) * lay.m; i < lay.rows(); ++i) out.xi(lay.n_eta() + lay.lambda_index(i, c)) = params.Lambda(i, c);
    for (int i = 0; i < lay.rows(); ++i)
        for (int j = 0; j < lay.stage_of_row(i) * lay.d; ++j) out.theta_free(lay.theta_index(i, j)) = params.Theta(i, j);
    return out;
}

inline PolicyParams unpack(const PackedDecision& packed, int N, int m, int d)
{
    const PolicyLayout lay(N, m, d);
    require_dims(packed.xi.size() == lay.n_xi(), "unpack: xi has wrong length");
    require_dims(packed.theta_free.size() == lay.n_theta(), "unpack: theta_free has wrong length");
    PolicyParams p = PolicyParams::zero(N, m, d);
    p.eta = packed.xi.head(lay.n_eta());
    for (int c = 0; c < lay.dropout_cols(); ++c)
        for (int i = (c + 1) * m; i < lay.rows(); ++i) p.Lambda(i, c) = packed.xi(lay.n_eta() + lay.lambda_index(i, c));
    for (int i = 0; i < lay.rows(); ++i)
        for (int j = 0; j < lay.stage_of_row(i) * d; ++j) p.Theta(i, j) = packed.theta_free(lay.theta_index(i, j));
    return p;
}

/// u_{t:N} = eta + Theta * sat_noise + Lambda * dropouts.
inline Vector evaluate_controls(const PolicyParams& params, const Vector& sat_noise, const Vector& dropouts)
{
    params.check_dims();
    require_dims(sat_noise.size() == params.Theta.cols(), "evaluate_controls: saturated noise must have length d(N-1)");
    require_dims(dropouts.size() == params.Lambda.cols(), "evaluate_controls: dropouts must have length N-1");
    return params.eta + params.Theta * sat_noise + params.Lambda * dropouts;
}

/// Infinity norm of every parameter that enters stage k's control.
inline double stage_norm(const PolicyParams& params, int k)
{
    const int m = params.m;
    double v = params.eta.segment(k * m, m).cwiseAbs().maxCoeff();
    if (params.Theta.cols() > 0) v = std::max(v, params.Theta.middleRows(k * m, m).cwiseAbs().maxCoeff());
    if (params.Lambda.cols() > 0) v = std::max(v, params.Lambda.middleRows(k * m, m).cwiseAbs().maxCoeff());
    return v;
}

/// Sum over stages of the row infinity norms of F-hat.
inline double regularizer(const PolicyParams& params)
{
    params.check_dims();
    double total = 0.0;
    for (int k = 0; k < params.N; ++k) total += stage_norm(params, k);
    return total;
}

/// Builds F-hat explicitly: row k lists every parameter feeding stage k
/// (eta block, Theta block row, Lambda block row), block by block transposed.
inline Matrix f_hat(const PolicyParams& params)
{
    params.check_dims();
    const int m = params.m;
    const auto width = m * (1 + params.Theta.cols() + params.Lambda.cols());
    Matrix F(params.N, width);
    for (int k = 0; k < params.N; ++k) {
        Eigen::Index col = 0;
        Matrix block(m, 1 + params.Theta.cols() + params.Lambda.cols());
        block << params.eta.segment(k * m, m), params.Theta.middleRows(k * m, m), params.Lambda.middleRows(k * m, m);
        for (Eigen::Index j = 0; j < block.cols(); ++j)
            for (int r = 0; r < m; ++r) F(k, col++) = block(r, j);
    }
    return F;
}

/// Receding-horizon shift: stage k of the result is stage k + s of the input,
/// trailing stages are zero. Strict lower triangularity is preserved.
inline PolicyParams shift_stages(const PolicyParams& params, int s)
{
    params.check_dims();
    const int N = params.N, m = params.m, d = params.d;
    PolicyParams out = PolicyParams::zero(N, m, d);
    for (int k = 0; k + s < N; ++k) {
        out.eta.segment(k * m, m) = params.eta.segment((k + s) * m, m);
        for (int l = 0; l < k; ++l) {
            out.Theta.block(k * m, l * d, m, d) = params.Theta.block((k + s) * m, (l + s) * d, m, d);
            out.Lambda.block(k * m, l, m, 1) = params.Lambda.block((k + s) * m, l + s, m, 1);
        }
    }
    return out;
}

inline std::set<int> null_control_instants(const PolicyParams& params, double tol_sparse = 1e-6)
{
    std::set<int> out;
    for (int k = 0; k < params.N; ++k)
        if (stage_norm(params, k) <= tol_sparse) out.insert(k);
    return out;
}

/// Flat CSV row in packed order: xi entries, then theta_free entries.
inline std::string to_csv_row(const PolicyParams& params)
{
    const PackedDecision p = pack(params);
    std::ostringstream os;
    os << std::setprecision(17);
    bool first = true;
    for (Eigen::Index i = 0; i < p.xi.size(); ++i, first = false) os << (first ? "" : ",") << p.xi(i);
    for (Eigen::Index i = 0; i < p.theta_free.size(); ++i, first = false) os << (first ? "" : ",") << p.theta_free(i);
    return os.str();
}

}  // namespace netspc
