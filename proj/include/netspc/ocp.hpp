#pragma once

// The finite-horizon optimal control problem as a convex QP over
//   z = [xi = (eta, Lambda~) | theta_free | |Lambda| aux | |Theta| aux | stage-norm aux]
// with objective 0.5 z^T H z + g^T z + c0 and inequalities Aineq z <= bineq.

#include <netspc/errors.hpp>
#include <netspc/linalg.hpp>
#include <netspc/moments.hpp>
#include <netspc/plant.hpp>
#include <netspc/policy.hpp>
#include <netspc/qp.hpp>

#include <cmath>
#include <fstream>
#include <iomanip>
#include <optional>
#include <string>
#include <vector>

namespace netspc {

/// Which policy blocks are decision variables. Removing a block fixes it at zero.
struct PolicyRestriction
{
    bool lambda = true;
    bool theta = true;
};

/// Positions of every variable in the full (unrestricted) z, plus the
/// mapping to the columns that survive restriction.
struct VarMap
{
    PolicyLayout lay;
    int off_theta = 0, off_abs_lambda = 0, off_abs_theta = 0, off_reg = 0, n_full = 0;
    std::vector<int> column;  ///< full index -> z index, -1 when removed
    int n = 0;                ///< number of surviving columns

    VarMap() = default;
    explicit VarMap(PolicyLayout l) : lay(l)
    {
        off_theta = lay.n_xi();
        off_abs_lambda = off_theta + lay.n_theta();
        off_abs_theta = off_abs_lambda + lay.n_lambda();
        off_reg = off_abs_theta + lay.n_theta();
        n_full = off_reg + lay.N;
        column.resize(n_full);
        for (int k = 0; k < n_full; ++k) column[k] = k;
        n = n_full;
    }

    int eta(int i) const { return i; }
    int lambda(int i, int c) const { return lay.n_eta() + lay.lambda_index(i, c); }
    int theta(int i, int j) const { return off_theta + lay.theta_index(i, j); }
    int abs_lambda(int i, int c) const { return off_abs_lambda + lay.lambda_index(i, c); }
    int abs_theta(int i, int j) const { return off_abs_theta + lay.theta_index(i, j); }
    int reg(int k) const { return off_reg + k; }

    bool kept(int full) const { return column[full] >= 0; }
};

struct QpProblem
{
    Matrix H;
    Vector g;
    double c0 = 0.0;
    Matrix Aineq;
    Vector bineq;
    VarMap var_map;
    int n_stability_rows = 0;

    int n() const { return static_cast<int>(g.size()); }

    double objective(const Vector& z) const { return 0.5 * z.dot(H * z) + g.dot(z) + c0; }

    QpData as_qp_data() const
    {
        QpData d;
        d.P = H;
        d.q = g;
        d.A = Aineq;
        d.u = bineq;
        d.l = Vector::Constant(bineq.size(), -qp_infinity);
        d.constant = c0;
        return d;
    }
};

struct StabilityConstraintSpec
{
    double r = 1.0;
    double epsilon = 0.1;
    double zeta = 0.0;

    void validate(double zeta_bound) const
    {
        if (!(r > 0.0) || !(epsilon > 0.0)) throw ConfigError("stability: r and epsilon must be positive");
        if (!(zeta > 0.0) || !(zeta < zeta_bound)) throw ConfigError("stability: zeta must lie in (0, U_max / (sqrt(d_o) sigma1))");
    }
};

/// Strict upper bound on zeta keeping the fallback offset within the input box.
inline double zeta_upper_bound(const OrthoSchurDecomposition& dec, const ReachabilityData& reach, double u_max)
{
    if (dec.d_o == 0) return 0.0;
    return u_max / (std::sqrt(static_cast<double>(dec.d_o)) * reach.sigma1_pinv);
}

inline StabilityConstraintSpec default_stability_spec(const OrthoSchurDecomposition& dec, const ReachabilityData& reach,
                                                      double u_max)
{
    StabilityConstraintSpec s;
    s.zeta = 0.9 * zeta_upper_bound(dec, reach, u_max);
    return s;
}

/// sat_inf_{r,zeta}: z zeta / r inside [-r, r], +-zeta outside.
inline Vector sat_inf(const Vector& z, double r, double zeta)
{
    Vector out(z.size());
    for (Eigen::Index i = 0; i < z.size(); ++i)
        out(i) = std::fabs(z(i)) <= r ? z(i) * zeta / r : std::copysign(zeta, z(i));
    return out;
}

/// Offset blocks 1..kappa of the stabilizing fallback policy: -R+ A_o^kappa sat_inf(x^o).
inline Vector fallback_offset(const OrthoSchurDecomposition& dec, const ReachabilityData& reach,
                              const StabilityConstraintSpec& spec, const Vector& x)
{
    const Vector xo = dec.orthogonal_coordinates(x);
    Matrix Ak = Matrix::Identity(dec.d_o, dec.d_o);
    for (int k = 0; k < reach.kappa; ++k) Ak = dec.A_o * Ak;
    return -reach.R_kappa_pinv * Ak * sat_inf(xo, spec.r, spec.zeta);
}

struct LinearRows
{
    Matrix A;  ///< over the full z
    Vector b;
};

inline void append_rows(Matrix& A, Vector& b, const LinearRows& rows)
{
    const auto r0 = A.rows();
    A.conservativeResize(r0 + rows.A.rows(), Eigen::NoChange);
    b.conservativeResize(r0 + rows.b.size());
    A.bottomRows(rows.A.rows()) = rows.A;
    b.tail(rows.b.size()) = rows.b;
}

/// Quadratic, linear and constant parts of the expected horizon cost; the
/// stage-norm auxiliaries get the linear weight mu.
inline void build_objective(const MomentSet& ms, const LiftedDynamics& lifted, const Vector& x, double mu, const VarMap& vm,
                            Matrix& H, Vector& g, double& c0)
{
    if (mu < 0.0) throw ConfigError("objective: mu must be non-negative");
    const PolicyLayout& lay = vm.lay;
    require_dims(x.size() == lifted.d, "objective: state has wrong dimension");
    require_dims(ms.calL.rows() == lay.n_xi(), "objective: moment set does not match the policy layout");
    H = Matrix::Zero(vm.n_full, vm.n_full);
    g = Vector::Zero(vm.n_full);

    const int nx = lay.n_xi();
    H.topLeftCorner(nx, nx) = 2.0 * ms.calL;
    const Vector Ax = lifted.calA * x;
    g.head(nx) = ms.calM * Ax;

    // trace(Theta^T Sigma_S Theta Sigma_e) and 2 trace(Theta^T mu_S^T B^T Q D Sigma_e').
    const int d = lay.d;
    std::vector<std::pair<int, int>> free;
    for (int i = 0; i < lay.rows(); ++i)
        for (int j = 0; j < lay.stage_of_row(i) * d; ++j) free.emplace_back(i, j);
    const Matrix lin = 2.0 * ms.mu_S.transpose() * lifted.calB.transpose() * lifted.calQ * lifted.calD * ms.Sigma_e_prime;
    for (const auto& [i, a] : free) {
        const int p = vm.theta(i, a);
        g(p) = lin(i, a);
        for (const auto& [k, b] : free) H(p, vm.theta(k, b)) = 2.0 * ms.Sigma_S(i, k) * ms.Sigma_e(a, b);
    }
    for (int k = 0; k < lay.N; ++k) g(vm.reg(k)) = mu;
    H = symmetrize(H);

    c0 = Ax.dot(lifted.calQ * Ax) + (lifted.calD.transpose() * lifted.calQ * lifted.calD * ms.Sigma_W).trace();
}

/// Left-hand side of the hard input bound, one entry per control row:
/// |eta_i + 0.5 sum Lambda_i| + 0.5 ||Lambda_i||_1 + phi_max ||Theta_i||_1.
inline Vector input_bound_lhs(const PolicyParams& p, double phi_max)
{
    p.check_dims();
    Vector out(p.eta.size());
    for (Eigen::Index i = 0; i < p.eta.size(); ++i) {
        const double lam_sum = p.Lambda.cols() ? p.Lambda.row(i).sum() : 0.0;
        const double lam_l1 = p.Lambda.cols() ? p.Lambda.row(i).cwiseAbs().sum() : 0.0;
        const double th_l1 = p.Theta.cols() ? p.Theta.row(i).cwiseAbs().sum() : 0.0;
        out(i) = std::fabs(p.eta(i) + 0.5 * lam_sum) + 0.5 * lam_l1 + phi_max * th_l1;
    }
    return out;
}

/// Linear form of the input bound with absolute-value auxiliaries a >= |Lambda|, b >= |Theta|.
inline LinearRows build_input_bounds(const VarMap& vm, double u_max, double phi_max)
{
    if (!(u_max > 0.0) || !(phi_max > 0.0)) throw ConfigError("input bounds: U_max and phi_max must be positive");
    const PolicyLayout& lay = vm.lay;
    const int rows = 2 * lay.rows() + 2 * (lay.n_lambda() + lay.n_theta());
    LinearRows out{Matrix::Zero(rows, vm.n_full), Vector::Zero(rows)};
    int r = 0;
    for (int i = 0; i < lay.rows(); ++i) {
        const int k = lay.stage_of_row(i);
        for (int sign : {1, -1}) {
            out.A(r, vm.eta(i)) = sign;
            for (int c = 0; c < k; ++c) {
                out.A(r, vm.lambda(i, c)) = 0.5 * sign;
                out.A(r, vm.abs_lambda(i, c)) = 0.5;
            }
            for (int j = 0; j < k * lay.d; ++j) out.A(r, vm.abs_theta(i, j)) = phi_max;
            out.b(r++) = u_max;
        }
    }
    for (int i = 0; i < lay.rows(); ++i) {
        const int k = lay.stage_of_row(i);
        for (int c = 0; c < k; ++c)
            for (int sign : {1, -1}) {
                out.A(r, vm.lambda(i, c)) = sign;
                out.A(r, vm.abs_lambda(i, c)) = -1.0;
                ++r;
            }
        for (int j = 0; j < k * lay.d; ++j)
            for (int sign : {1, -1}) {
                out.A(r, vm.theta(i, j)) = sign;
                out.A(r, vm.abs_theta(i, j)) = -1.0;
                ++r;
            }
    }
    return out;
}

/// s_k >= |eta entries of stage k| and s_k >= the |Lambda|, |Theta| auxiliaries
/// of stage k, so s_k bounds row k of F-hat in the infinity norm.
inline LinearRows build_regularizer_rows(const VarMap& vm)
{
    const PolicyLayout& lay = vm.lay;
    const int rows = 2 * lay.rows() + lay.n_lambda() + lay.n_theta();
    LinearRows out{Matrix::Zero(rows, vm.n_full), Vector::Zero(rows)};
    int r = 0;
    for (int i = 0; i < lay.rows(); ++i) {
        const int k = lay.stage_of_row(i);
        for (int sign : {1, -1}) {
            out.A(r, vm.eta(i)) = sign;
            out.A(r++, vm.reg(k)) = -1.0;
        }
        for (int c = 0; c < k; ++c) {
            out.A(r, vm.abs_lambda(i, c)) = 1.0;
            out.A(r++, vm.reg(k)) = -1.0;
        }
        for (int j = 0; j < k * lay.d; ++j) {
            out.A(r, vm.abs_theta(i, j)) = 1.0;
            out.A(r++, vm.reg(k)) = -1.0;
        }
    }
    return out;
}

/// Drift rows on the orthogonal coordinates that lie outside the ball of radius r + epsilon.
inline LinearRows build_stability_constraints(const OrthoSchurDecomposition& dec, const ReachabilityData& reach,
                                              const StabilityConstraintSpec& spec, const Vector& x, double p_design,
                                              const VarMap& vm)
{
    const PolicyLayout& lay = vm.lay;
    LinearRows out{Matrix::Zero(0, vm.n_full), Vector::Zero(0)};
    if (dec.d_o == 0) return out;
    const int kappa = reach.kappa;
    require_dims(lay.N >= kappa, "stability: horizon shorter than the reachability index");
    const Vector xo = dec.orthogonal_coordinates(x);
    Matrix Ak = Matrix::Identity(dec.d_o, dec.d_o);
    for (int k = 0; k < kappa; ++k) Ak = dec.A_o * Ak;
    const Matrix V = Ak.transpose() * reach.R_kappa;  // d_o x kappa m

    std::vector<std::pair<int, int>> active;  // (coordinate, sign of x^o)
    for (int j = 0; j < dec.d_o; ++j) {
        if (xo(j) >= spec.r + spec.epsilon) active.emplace_back(j, 1);
        else if (xo(j) <= -(spec.r + spec.epsilon)) active.emplace_back(j, -1);
    }
    out.A = Matrix::Zero(static_cast<Eigen::Index>(active.size()), vm.n_full);
    out.b = Vector::Constant(static_cast<Eigen::Index>(active.size()), -spec.zeta);
    for (std::size_t r = 0; r < active.size(); ++r) {
        const auto [j, sign] = active[r];
        for (int i = 0; i < kappa * lay.m; ++i) {
            out.A(r, vm.eta(i)) = sign * V(j, i);
            for (int c = 0; c < lay.stage_of_row(i); ++c) out.A(r, vm.lambda(i, c)) = sign * p_design * V(j, i);
        }
    }
    return out;
}

/// Packs a policy into the full z and sets every auxiliary to its tightest value.
inline Vector policy_to_full(const PolicyParams& p, const VarMap& vm)
{
    const PolicyLayout& lay = vm.lay;
    const PackedDecision pd = pack(p);
    Vector z = Vector::Zero(vm.n_full);
    z.head(lay.n_xi()) = pd.xi;
    z.segment(vm.off_theta, lay.n_theta()) = pd.theta_free;
    z.segment(vm.off_abs_lambda, lay.n_lambda()) = pd.xi.tail(lay.n_lambda()).cwiseAbs();
    z.segment(vm.off_abs_theta, lay.n_theta()) = pd.theta_free.cwiseAbs();
    for (int k = 0; k < lay.N; ++k) z(vm.reg(k)) = stage_norm(p, k);
    return z;
}

inline PolicyParams full_to_policy(const Vector& z_full, const VarMap& vm)
{
    const PolicyLayout& lay = vm.lay;
    PackedDecision pd;
    pd.xi = z_full.head(lay.n_xi());
    pd.theta_free = z_full.segment(vm.off_theta, lay.n_theta());
    return unpack(pd, lay.N, lay.m, lay.d);
}

struct OcpOptions
{
    double mu = 0.0;
    double u_max = 1.0;
    double phi_max = 1.0;
    PolicyRestriction restriction;
    bool stability = false;
    StabilityConstraintSpec stability_spec;
};

/// Everything the builder needs besides the state.
struct OcpContext
{
    const MomentSet* moments = nullptr;
    const LiftedDynamics* lifted = nullptr;
    const OrthoSchurDecomposition* dec = nullptr;  ///< required when stability rows are on
    const ReachabilityData* reach = nullptr;
};

/// Assembles the QP at state x. Removed blocks (restriction, mu == 0) are
/// dropped as columns; rows left without coefficients are dropped as well.
inline QpProblem build_problem(const OcpContext& ctx, const Vector& x, const OcpOptions& opt)
{
    if (!ctx.moments || !ctx.lifted) throw ConfigError("ocp: moments and lifted dynamics are required");
    const MomentSet& ms = *ctx.moments;
    VarMap vm(PolicyLayout(ms.N, ms.m, ms.d));
    const PolicyLayout& lay = vm.lay;

    Matrix H;
    Vector g;
    double c0 = 0.0;
    build_objective(ms, *ctx.lifted, x, opt.mu, vm, H, g, c0);

    Matrix A(0, vm.n_full);
    Vector b(0);
    append_rows(A, b, build_input_bounds(vm, opt.u_max, opt.phi_max));
    if (opt.mu > 0.0) append_rows(A, b, build_regularizer_rows(vm));
    int n_stab = 0;
    if (opt.stability) {
        if (!ctx.dec || !ctx.reach) throw ConfigError("ocp: stability rows need the plant decomposition");
        const LinearRows st = build_stability_constraints(*ctx.dec, *ctx.reach, opt.stability_spec, x, ms.p_design, vm);
        n_stab = static_cast<int>(st.b.size());
        append_rows(A, b, st);
    }

    std::vector<bool> keep(vm.n_full, true);
    if (!opt.restriction.lambda)
        for (int k = 0; k < lay.n_lambda(); ++k) keep[lay.n_eta() + k] = keep[vm.off_abs_lambda + k] = false;
    if (!opt.restriction.theta)
        for (int k = 0; k < lay.n_theta(); ++k) keep[vm.off_theta + k] = keep[vm.off_abs_theta + k] = false;
    if (opt.mu == 0.0)
        for (int k = 0; k < lay.N; ++k) keep[vm.reg(k)] = false;

    std::vector<int> cols;
    for (int k = 0; k < vm.n_full; ++k) {
        vm.column[k] = keep[k] ? static_cast<int>(cols.size()) : -1;
        if (keep[k]) cols.push_back(k);
    }
    vm.n = static_cast<int>(cols.size());

    QpProblem qp;
    qp.c0 = c0;
    qp.H.resize(vm.n, vm.n);
    qp.g.resize(vm.n);
    for (int a = 0; a < vm.n; ++a) {
        qp.g(a) = g(cols[a]);
        for (int c = 0; c < vm.n; ++c) qp.H(a, c) = H(cols[a], cols[c]);
    }
    std::vector<int> rows;
    for (Eigen::Index r = 0; r < A.rows(); ++r) {
        bool any = false;
        for (int c : cols) any = any || A(r, c) != 0.0;
        if (any) rows.push_back(static_cast<int>(r));
        else if (b(r) < 0.0) throw SolverError("ocp: restriction leaves an unsatisfiable constraint row");
    }
    qp.Aineq.resize(static_cast<Eigen::Index>(rows.size()), vm.n);
    qp.bineq.resize(static_cast<Eigen::Index>(rows.size()));
    for (std::size_t r = 0; r < rows.size(); ++r) {
        qp.bineq(r) = b(rows[r]);
        for (int a = 0; a < vm.n; ++a) qp.Aineq(r, a) = A(rows[r], cols[a]);
    }
    qp.n_stability_rows = n_stab;
    qp.var_map = vm;
    return qp;
}

inline Vector restrict_full(const Vector& z_full, const VarMap& vm)
{
    Vector z(vm.n);
    for (int k = 0; k < vm.n_full; ++k)
        if (vm.column[k] >= 0) z(vm.column[k]) = z_full(k);
    return z;
}

inline Vector expand_restricted(const Vector& z, const VarMap& vm)
{
    Vector full = Vector::Zero(vm.n_full);
    for (int k = 0; k < vm.n_full; ++k)
        if (vm.column[k] >= 0) full(k) = z(vm.column[k]);
    return full;
}

/// Fallback policy: stabilizing offsets in the first kappa blocks, everything else zero.
inline PolicyParams fallback_policy(const OcpContext& ctx, const Vector& x, const OcpOptions& opt)
{
    const MomentSet& ms = *ctx.moments;
    PolicyParams p = PolicyParams::zero(ms.N, ms.m, ms.d);
    if (opt.stability && ctx.dec && ctx.dec->d_o > 0)
        p.eta.head(ctx.reach->kappa * ms.m) = fallback_offset(*ctx.dec, *ctx.reach, opt.stability_spec, x);
    return p;
}

struct OcpSolution
{
    PolicyParams params;
    double objective = 0.0;  ///< full objective incl. mu * regularizer
    QpResult stats;
    Vector z;
    int stability_rows = 0;
};

inline double max_violation(const QpProblem& qp, const Vector& z)
{
    if (qp.bineq.size() == 0) return 0.0;
    return (qp.Aineq * z - qp.bineq).maxCoeff();
}

/// Solves the QP. The warm start defaults to the fallback point, which also
/// certifies feasibility whenever stability rows are present.
inline OcpSolution solve(const QpProblem& qp, const QpSolver& solver, const Vector* z_warm = nullptr,
                         const Vector* z_certificate = nullptr)
{
    if (z_certificate) {
        const double viol = max_violation(qp, *z_certificate);
        if (viol > 1e-9 * std::max(1.0, qp.bineq.cwiseAbs().maxCoeff()))
            throw SolverError("ocp: fallback point violates the constraints (zeta misconfigured?), violation " +
                              std::to_string(viol));
    }
    const QpData data = qp.as_qp_data();
    const Vector* warm = z_warm ? z_warm : z_certificate;
    OcpSolution out;
    out.stats = solver.solve(data, warm);
    out.z = out.stats.x;
    out.objective = qp.objective(out.z);
    out.params = full_to_policy(expand_restricted(out.z, qp.var_map), qp.var_map);
    out.stability_rows = qp.n_stability_rows;
    return out;
}

/// Row violation of a policy with tight auxiliaries.
inline double policy_violation(const QpProblem& qp, const PolicyParams& p)
{
    return max_violation(qp, restrict_full(policy_to_full(p, qp.var_map), qp.var_map));
}

/// Pulls an approximately feasible policy toward a strictly feasible interior
/// point (the fallback with drift halfway to the zeta bound, or zero) along the
/// segment, so that the input bound and drift rows hold to rounding.
inline bool restore_feasibility(const OcpContext& ctx, const Vector& x, const OcpOptions& opt, const QpProblem& qp,
                                PolicyParams& p)
{
    if (policy_violation(qp, p) <= 0.0) return true;
    OcpOptions inner = opt;
    if (opt.stability && ctx.dec && ctx.reach && ctx.dec->d_o > 0)
        inner.stability_spec.zeta = 0.5 * (opt.stability_spec.zeta + zeta_upper_bound(*ctx.dec, *ctx.reach, opt.u_max));
    const PolicyParams interior = fallback_policy(ctx, x, inner);
    if (policy_violation(qp, interior) > 0.0) return false;
    double lo = 0.0, hi = 1.0;
    for (int k = 0; k < 60; ++k) {
        const double mid = 0.5 * (lo + hi);
        (policy_violation(qp, interior + (p + interior * -1.0) * mid) <= 0.0 ? lo : hi) = mid;
    }
    p = interior + (p + interior * -1.0) * lo;
    return true;
}

/// Builds, certifies and solves in one call; the returned policy satisfies the
/// hard input bound and drift rows exactly, not only to solver tolerance.
inline OcpSolution solve_at(const OcpContext& ctx, const Vector& x, const OcpOptions& opt, const QpSolver& solver,
                            const std::optional<PolicyParams>& warm = std::nullopt)
{
    const QpProblem qp = build_problem(ctx, x, opt);
    const Vector cert = restrict_full(policy_to_full(fallback_policy(ctx, x, opt), qp.var_map), qp.var_map);
    std::optional<Vector> zw;
    if (warm) zw = restrict_full(policy_to_full(*warm, qp.var_map), qp.var_map);
    OcpSolution sol = solve(qp, solver, zw ? &*zw : nullptr, &cert);
    if (policy_violation(qp, sol.params) > 0.0 && restore_feasibility(ctx, x, opt, qp, sol.params)) {
        sol.z = restrict_full(policy_to_full(sol.params, qp.var_map), qp.var_map);
        sol.objective = qp.objective(sol.z);
    }
    return sol;
}

/// Plain-text sparse triplets: "n m", then "H i j v", "g i v", "c0 v", "A i j v", "b i v".
inline void export_triplets(const QpProblem& qp, std::ostream& os)
{
    os << std::setprecision(17);
    os << qp.n() << ' ' << qp.bineq.size() << '\n';
    for (int i = 0; i < qp.n(); ++i)
        for (int j = 0; j < qp.n(); ++j)
            if (qp.H(i, j) != 0.0) os << "H " << i << ' ' << j << ' ' << qp.H(i, j) << '\n';
    for (int i = 0; i < qp.n(); ++i)
        if (qp.g(i) != 0.0) os << "g " << i << ' ' << qp.g(i) << '\n';
    os << "c0 " << qp.c0 << '\n';
    for (Eigen::Index i = 0; i < qp.Aineq.rows(); ++i)
        for (Eigen::Index j = 0; j < qp.Aineq.cols(); ++j)
            if (qp.Aineq(i, j) != 0.0) os << "A " << i << ' ' << j << ' ' << qp.Aineq(i, j) << '\n';
    for (Eigen::Index i = 0; i < qp.bineq.size(); ++i) os << "b " << i << ' ' << qp.bineq(i) << '\n';
}

}  // namespace netspc
