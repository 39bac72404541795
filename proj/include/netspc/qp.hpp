#pragma once

// Dense convex QP solver
//
//     minimize    0.5 x^T P x + q^T x
//     subject to  l <= A x <= u
//
// using the operator-splitting (ADMM) iteration with Ruiz equilibration,
// adaptive step size, and an active-set polish step that recovers an accurate
// KKT point once the active set has settled. Problems in this library are
// small (tens to a few hundred variables), so everything is dense.

#include <netspc/errors.hpp>
#include <netspc/linalg.hpp>

#include <Eigen/LU>
#include <Eigen/SparseCore>

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

namespace netspc {

inline constexpr double qp_infinity = 1e20;

struct QpData
{
    Matrix P;
    Vector q;
    Matrix A;
    Vector l;
    Vector u;
    double constant = 0.0;

    int n() const { return static_cast<int>(q.size()); }
    int m() const { return static_cast<int>(l.size()); }

    double objective(const Vector& x) const { return 0.5 * x.dot(P * x) + q.dot(x) + constant; }
};

struct QpSettings
{
    double eps_abs = 1e-7;
    double eps_rel = 1e-7;
    int max_iter = 20000;
    double sigma = 1e-9;  ///< proximal regularization on x
    double alpha = 1.6;   ///< over-relaxation
    double rho = 0.1;
    bool adaptive_rho = true;
    int adaptive_interval = 25;
    int scaling_iter = 15;
    bool polish = true;
    int polish_interval = 10;
    double polish_trigger = 1e-3;  ///< relative residual level at which polishing starts
    double polish_delta = 1e-9;
    int polish_refine = 5;
    double polish_tol = 1e-9;  ///< accept a polished point when its KKT residuals are below this
};

enum class QpStatus
{
    Solved,
    SolvedPolished,
    MaxIterations,
};

inline std::string to_string(QpStatus s)
{
    switch (s) {
        case QpStatus::Solved: return "solved";
        case QpStatus::SolvedPolished: return "solved_polished";
        case QpStatus::MaxIterations: return "max_iterations";
    }
    return "?";
}

struct QpResult
{
    Vector x;
    Vector y;  ///< multipliers: positive on active upper bounds, negative on active lower bounds
    double objective = 0.0;
    QpStatus status = QpStatus::MaxIterations;
    int iterations = 0;
    double primal_residual = 0.0;
    double dual_residual = 0.0;
    double duality_gap = 0.0;
    double rho = 0.0;
    double proximal_term = 0.0;
    int polish_attempts = 0;

    bool certified() const { return status != QpStatus::MaxIterations; }
};

/// Unscaled KKT residuals of a candidate (x, y).
struct KktResiduals
{
    double primal = 0.0;
    double dual = 0.0;
    double gap = 0.0;
    double sign = 0.0;  ///< dual sign violation
};

inline KktResiduals kkt_residuals(const QpData& qp, const Vector& x, const Vector& y)
{
    KktResiduals r;
    const Vector Ax = qp.A * x;
    for (int i = 0; i < qp.m(); ++i) {
        r.primal = std::max(r.primal, Ax(i) - qp.u(i));
        r.primal = std::max(r.primal, qp.l(i) - Ax(i));
    }
    const Vector Px = qp.P * x;
    r.dual = qp.m() > 0 ? (Px + qp.q + qp.A.transpose() * y).cwiseAbs().maxCoeff() : (Px + qp.q).cwiseAbs().maxCoeff();
    // Support-function form of the gap: x^T P x + q^T x + u^T y+ - l^T y-.
    double support = 0.0;
    for (int i = 0; i < qp.m(); ++i) {
        if (y(i) > 0.0) {
            if (qp.u(i) >= qp_infinity) r.sign = std::max(r.sign, y(i));
            else support += qp.u(i) * y(i);
        } else if (y(i) < 0.0) {
            if (qp.l(i) <= -qp_infinity) r.sign = std::max(r.sign, -y(i));
            else support += qp.l(i) * y(i);
        }
    }
    r.gap = std::fabs(x.dot(Px) + qp.q.dot(x) + support);
    return r;
}

class QpSolver
{
 public:
    explicit QpSolver(QpSettings settings = {}) : settings_(settings) {}

    QpResult solve(const QpData& qp, const Vector* x_warm = nullptr, const Vector* y_warm = nullptr) const
    {
        const int n = qp.n(), m = qp.m();
        require_dims(qp.P.rows() == n && qp.P.cols() == n, "qp: P must be n x n");
        require_dims(qp.A.rows() == m && (m == 0 || qp.A.cols() == n), "qp: A must be m x n");
        require_dims(qp.u.size() == m, "qp: bounds must have length m");

        Scaled s = scale(qp);
        const QpSettings& st = settings_;
        Vector rho = Vector::Constant(m, st.rho);
        for (int i = 0; i < m; ++i)
            if (qp.u(i) - qp.l(i) < 1e-12) rho(i) = 1e3 * st.rho;

        Vector x = Vector::Zero(n), z = Vector::Zero(m), y = Vector::Zero(m);
        if (x_warm && x_warm->size() == n) x = s.D.cwiseInverse().asDiagonal() * (*x_warm);
        if (y_warm && y_warm->size() == m) y = s.c * (s.E.cwiseInverse().asDiagonal() * (*y_warm));
        z = project(s.A * x, s.l, s.u);

        // Constraint rows are short, so the per-iteration products use a sparse
        // copy; the reduced KKT matrix is small enough to keep as an explicit inverse.
        const Eigen::SparseMatrix<double> As = s.A.sparseView();
        const Eigen::SparseMatrix<double> AsT = As.transpose();
        Matrix kkt_inv = factor(s, rho);
        QpResult best;
        best.status = QpStatus::MaxIterations;
        bool have_best = false;
        double best_score = std::numeric_limits<double>::infinity();
        std::vector<signed char> last_active;
        int polish_attempts = 0;

        for (int it = 1; it <= st.max_iter; ++it) {
            const Vector rhs = st.sigma * x - s.q + AsT * (rho.cwiseProduct(z) - y);
            const Vector x_tilde = kkt_inv * rhs;
            const Vector z_tilde = As * x_tilde;
            const Vector x_next = st.alpha * x_tilde + (1.0 - st.alpha) * x;
            const Vector z_relax = st.alpha * z_tilde + (1.0 - st.alpha) * z;
            const Vector z_next = project(z_relax + y.cwiseQuotient(rho), s.l, s.u);
            y += rho.cwiseProduct(z_relax - z_next);
            x = x_next;
            z = z_next;

            const bool check = it % st.polish_interval == 0 || it == st.max_iter || it == 1;
            if (!check) continue;

            const Vector xu = s.D.asDiagonal() * x;
            const Vector yu = (s.E.asDiagonal() * y) / s.c;
            const Vector zu = s.E.cwiseInverse().asDiagonal() * z;
            const Vector Ax = qp.A * xu;
            const double r_prim = m > 0 ? (Ax - zu).cwiseAbs().maxCoeff() : 0.0;
            const Vector Px = qp.P * xu;
            const Vector Aty = qp.A.transpose() * yu;
            const double r_dual = (Px + qp.q + Aty).cwiseAbs().maxCoeff();
            const double eps_p = st.eps_abs + st.eps_rel * std::max(inf_norm(Ax), inf_norm(zu));
            const double eps_d = st.eps_abs + st.eps_rel * std::max({inf_norm(Px), inf_norm(Aty), inf_norm(qp.q)});

            // Polishing costs a dense factorization, so it is only tried once the
            // iterate is moderately accurate and its active set has changed.
            const bool loose = r_prim <= st.polish_trigger * (1.0 + std::max(inf_norm(Ax), inf_norm(zu))) &&
                               r_dual <= st.polish_trigger * (1.0 + std::max({inf_norm(Px), inf_norm(Aty), inf_norm(qp.q)}));
            if (st.polish && m > 0 && loose && active_set_changed(qp, zu, yu, last_active)) {
                QpResult pol;
                ++polish_attempts;
                if (polish(qp, xu, zu, yu, pol)) {
                    pol.iterations = it;
                    pol.rho = rho.size() ? rho(0) : 0.0;
                    pol.proximal_term = st.sigma;
                    pol.polish_attempts = polish_attempts;
                    return pol;
                }
            }
            const double score = std::max(r_prim / eps_p, r_dual / eps_d);
            if (score < best_score) {
                best_score = score;
                have_best = true;
                best.x = xu;
                best.y = yu;
                best.primal_residual = r_prim;
                best.dual_residual = r_dual;
            }
            if (r_prim <= eps_p && r_dual <= eps_d) {
                // One last polish at the converged active set, even if unchanged.
                if (st.polish && m > 0) {
                    QpResult pol;
                    ++polish_attempts;
                    if (polish(qp, xu, zu, yu, pol)) {
                        pol.iterations = it;
                        pol.rho = rho.size() ? rho(0) : 0.0;
                        pol.proximal_term = st.sigma;
                        pol.polish_attempts = polish_attempts;
                        return pol;
                    }
                }
                QpResult out;
                out.x = xu;
                out.y = yu;
                out.status = QpStatus::Solved;
                out.iterations = it;
                finish(qp, out);
                out.rho = rho.size() ? rho(0) : 0.0;
                out.proximal_term = st.sigma;
                return out;
            }

            if (st.adaptive_rho && m > 0 && it % st.adaptive_interval == 0) {
                const Vector sAx = As * x;
                const Vector sAty = AsT * y;
                const Vector sPx = s.P * x;
                const double pn = std::max(inf_norm(sAx), inf_norm(z));
                const double dn = std::max({inf_norm(sPx), inf_norm(sAty), inf_norm(s.q)});
                const double sp = (sAx - z).cwiseAbs().maxCoeff() / (pn + 1e-30);
                const double sd = (sPx + s.q + sAty).cwiseAbs().maxCoeff() / (dn + 1e-30);
                double factor_ = std::sqrt(sp / (sd + 1e-30));
                factor_ = std::clamp(factor_, 1e-3, 1e3);
                if (factor_ > 5.0 || factor_ < 0.2) {
                    rho *= factor_;
                    rho = rho.cwiseMax(1e-6).cwiseMin(1e6);
                    kkt_inv = factor(s, rho);
                }
            }
        }
        QpResult out = best;
        if (!have_best) {
            out.x = s.D.asDiagonal() * x;
            out.y = (s.E.asDiagonal() * y) / s.c;
        }
        out.status = QpStatus::MaxIterations;
        out.iterations = st.max_iter;
        finish(qp, out);
        out.rho = rho.size() ? rho(0) : 0.0;
        out.proximal_term = st.sigma;
        return out;
    }

    const QpSettings& settings() const { return settings_; }

 private:
    struct Scaled
    {
        Matrix P, A;
        Vector q, l, u;
        Vector D, E;
        double c = 1.0;
    };

    static double inf_norm(const Vector& v) { return v.size() ? v.cwiseAbs().maxCoeff() : 0.0; }

    static Vector project(const Vector& v, const Vector& l, const Vector& u) { return v.cwiseMax(l).cwiseMin(u); }

    Scaled scale(const QpData& qp) const
    {
        const int n = qp.n(), m = qp.m();
        Scaled s;
        s.P = qp.P;
        s.q = qp.q;
        s.A = qp.A;
        s.D = Vector::Ones(n);
        s.E = Vector::Ones(m);
        for (int k = 0; k < settings_.scaling_iter; ++k) {
            Vector dD(n), dE(m);
            for (int j = 0; j < n; ++j) {
                double v = s.P.col(j).cwiseAbs().maxCoeff();
                if (m > 0) v = std::max(v, s.A.col(j).cwiseAbs().maxCoeff());
                dD(j) = v < 1e-4 ? 1.0 : 1.0 / std::sqrt(std::min(v, 1e4));
            }
            for (int i = 0; i < m; ++i) {
                const double v = s.A.row(i).cwiseAbs().maxCoeff();
                dE(i) = v < 1e-4 ? 1.0 : 1.0 / std::sqrt(std::min(v, 1e4));
            }
            s.P = dD.asDiagonal() * s.P * dD.asDiagonal();
            s.q = dD.cwiseProduct(s.q);
            s.A = dE.asDiagonal() * s.A * dD.asDiagonal();
            s.D = s.D.cwiseProduct(dD);
            s.E = s.E.cwiseProduct(dE);
            // Cost scaling keeps the objective gradient O(1).
            const double pn = n > 0 ? s.P.cwiseAbs().colwise().maxCoeff().mean() : 0.0;
            const double qn = inf_norm(s.q);
            double gamma = std::max(pn, qn);
            gamma = gamma < 1e-4 ? 1.0 : 1.0 / std::min(gamma, 1e4);
            s.P *= gamma;
            s.q *= gamma;
            s.c *= gamma;
        }
        s.l = qp.l;
        s.u = qp.u;
        for (int i = 0; i < m; ++i) {
            if (s.l(i) > -qp_infinity) s.l(i) *= s.E(i);
            if (s.u(i) < qp_infinity) s.u(i) *= s.E(i);
        }
        return s;
    }

    Matrix factor(const Scaled& s, const Vector& rho) const
    {
        Matrix K = s.P;
        K.diagonal().array() += settings_.sigma;
        if (s.A.rows() > 0) K.noalias() += s.A.transpose() * rho.asDiagonal() * s.A;
        Eigen::LLT<Matrix> llt(symmetrize(K));
        if (llt.info() != Eigen::Success) throw SolverError("qp: KKT matrix factorization failed (P not PSD?)");
        return llt.solve(Matrix::Identity(K.rows(), K.cols()));
    }

    void finish(const QpData& qp, QpResult& out) const
    {
        const KktResiduals r = kkt_residuals(qp, out.x, out.y);
        out.primal_residual = r.primal;
        out.dual_residual = r.dual;
        out.duality_gap = r.gap;
        out.objective = qp.objective(out.x);
    }

    static std::vector<signed char> guess_active(const QpData& qp, const Vector& z, const Vector& y)
    {
        std::vector<signed char> act(qp.m(), 0);
        for (int i = 0; i < qp.m(); ++i) {
            if (qp.u(i) < qp_infinity && qp.u(i) - z(i) < y(i)) act[i] = 1;
            else if (qp.l(i) > -qp_infinity && z(i) - qp.l(i) < -y(i)) act[i] = -1;
        }
        return act;
    }

    static bool active_set_changed(const QpData& qp, const Vector& z, const Vector& y, std::vector<signed char>& last)
    {
        std::vector<signed char> now = guess_active(qp, z, y);
        if (now == last) return false;
        last = std::move(now);
        return true;
    }

    /// Solves the equality-constrained problem on the guessed active set and
    /// accepts it when it is an accurate KKT point of the full problem.
    bool polish(const QpData& qp, const Vector& x, const Vector& z, const Vector& y, QpResult& out) const
    {
        const int n = qp.n(), m = qp.m();
        std::vector<int> act;
        std::vector<double> rhs_b;
        std::vector<int> side;  // +1 upper, -1 lower
        const std::vector<signed char> guess = guess_active(qp, z, y);
        for (int i = 0; i < m; ++i) {
            if (guess[i] == 0) continue;
            act.push_back(i);
            rhs_b.push_back(guess[i] > 0 ? qp.u(i) : qp.l(i));
            side.push_back(guess[i]);
        }
        const int na = static_cast<int>(act.size());
        Matrix Aa(na, n);
        Vector ba(na);
        for (int k = 0; k < na; ++k) {
            Aa.row(k) = qp.A.row(act[k]);
            ba(k) = rhs_b[k];
        }
        const double delta = settings_.polish_delta;
        Matrix K = Matrix::Zero(n + na, n + na);
        K.topLeftCorner(n, n) = qp.P;
        K.topLeftCorner(n, n).diagonal().array() += delta;
        K.topRightCorner(n, na) = Aa.transpose();
        K.bottomLeftCorner(na, n) = Aa;
        K.bottomRightCorner(na, na).diagonal().array() -= delta;
        Matrix K0 = K;
        K0.topLeftCorner(n, n).diagonal().array() -= delta;
        K0.bottomRightCorner(na, na).diagonal().array() += delta;
        Eigen::PartialPivLU<Matrix> lu(K);
        Vector rhs(n + na);
        rhs << -qp.q, ba;
        Vector sol = lu.solve(rhs);
        for (int k = 0; k < settings_.polish_refine; ++k) sol += lu.solve(rhs - K0 * sol);
        if (!sol.allFinite()) return false;

        Vector yp = Vector::Zero(m);
        for (int k = 0; k < na; ++k) {
            double v = sol(n + k);
            // Wrong-signed multipliers mean the active-set guess is wrong.
            if (side[k] * v < -settings_.polish_tol * std::max(1.0, std::fabs(v))) return false;
            yp(act[k]) = side[k] > 0 ? std::max(v, 0.0) : std::min(v, 0.0);
        }
        const Vector xp = sol.head(n);
        const KktResiduals r = kkt_residuals(qp, xp, yp);
        const double scale_p = 1.0 + std::max(inf_norm(qp.A * xp), std::max(inf_norm(ba), 0.0));
        const double scale_d = 1.0 + std::max(inf_norm(qp.q), inf_norm(qp.P * xp));
        if (r.primal > settings_.polish_tol * scale_p || r.dual > settings_.polish_tol * scale_d || r.sign > 0.0) return false;
        (void)x;
        out.x = xp;
        out.y = yp;
        out.status = QpStatus::SolvedPolished;
        finish(qp, out);
        return true;
    }

    QpSettings settings_;
};

}  // namespace netspc
