#pragma once

// Lifted horizon matrices and the Monte Carlo moments that turn the expected
// finite-horizon cost into a deterministic quadratic program.

#include <netspc/errors.hpp>
#include <netspc/linalg.hpp>
#include <netspc/plant.hpp>
#include <netspc/policy.hpp>
#include <netspc/protocol.hpp>
#include <netspc/stochastics.hpp>

#include <cstdint>
#include <vector>

namespace netspc {

/// x_{t:N+1} = calA x_t + calB u_{t:N} + calD w_{t:N}.
struct LiftedDynamics
{
    int N = 1, d = 1, m = 1;
    Matrix calA;   ///< d(N+1) x d
    Matrix calB;   ///< d(N+1) x mN
    Matrix calD;   ///< d(N+1) x dN
    Matrix calQ;   ///< blkdiag(Q, ..., Q, Q_f)
    Matrix calR;   ///< blkdiag(R, ..., R)
    Matrix alpha;  ///< calB^T calQ calB + calR
};

inline LiftedDynamics build_lifted(const PlantModel& model, const Matrix& Q, const Matrix& Q_f, const Matrix& R, int N)
{
    model.validate();
    const int d = model.d(), m = model.m();
    require_dims(N >= 1, "build_lifted: N must be >= 1");
    require_dims(Q.rows() == d && Q.cols() == d, "build_lifted: Q must be d x d");
    require_dims(Q_f.rows() == d && Q_f.cols() == d, "build_lifted: Q_f must be d x d");
    require_dims(R.rows() == m && R.cols() == m, "build_lifted: R must be m x m");
    if (!is_psd(Q, 1e-10)) throw NotPositiveDefinite("build_lifted: Q must be symmetric PSD");
    if (!is_psd(Q_f, 1e-10)) throw NotPositiveDefinite("build_lifted: Q_f must be symmetric PSD");
    if (max_abs(R - R.transpose()) > 1e-12 || !is_pd(R)) throw NotPositiveDefinite("build_lifted: R must be symmetric PD");

    LiftedDynamics L;
    L.N = N;
    L.d = d;
    L.m = m;
    std::vector<Matrix> powers(N + 1);
    powers[0] = Matrix::Identity(d, d);
    for (int k = 1; k <= N; ++k) powers[k] = model.A * powers[k - 1];

    L.calA = Matrix::Zero(d * (N + 1), d);
    L.calB = Matrix::Zero(d * (N + 1), m * N);
    L.calD = Matrix::Zero(d * (N + 1), d * N);
    for (int i = 0; i <= N; ++i) {
        L.calA.middleRows(i * d, d) = powers[i];
        for (int j = 0; j < i; ++j) {
            L.calB.block(i * d, j * m, d, m) = powers[i - 1 - j] * model.B;
            L.calD.block(i * d, j * d, d, d) = powers[i - 1 - j];
        }
    }
    L.calQ = Matrix::Zero(d * (N + 1), d * (N + 1));
    for (int i = 0; i < N; ++i) L.calQ.block(i * d, i * d, d, d) = Q;
    L.calQ.block(N * d, N * d, d, d) = Q_f;
    L.calR = block_diag_repeat(R, N);
    L.alpha = symmetrize(L.calB.transpose() * L.calQ * L.calB + L.calR);
    return L;
}

/// Expectations of the channel-dependent scalars. With c = [g; nu_0 s; ...;
/// nu_{N-2} s] (g = s under TP1) every channel moment is a block of E[c c^T].
struct ChannelMoments
{
    int N = 1, N_r = 1;
    ProtocolKind protocol = ProtocolKind::TP1;
    double p_design = 1.0;
    long samples = 0;
    bool deterministic = false;
    Matrix second;    ///< E[c c^T], N^2 x N^2
    Vector first;     ///< E[c], N^2
    Matrix s_second;  ///< E[s s^T], N x N
    Vector s_first;   ///< E[s], N
};

struct NoiseMoments
{
    Matrix Sigma_e;        ///< E[e e^T], d(N-1) square
    Matrix Sigma_e_prime;  ///< E[w e^T], dN x d(N-1)
    Matrix Sigma_W;        ///< E[w w^T], dN square
    long samples = 0;
};

struct MomentSet
{
    int N = 1, m = 1, d = 1;
    Matrix Sigma_G, Sigma_SG_tilde, Sigma_Snl_tilde;
    Matrix mu_G, mu_S_tilde, mu_S, Sigma_S;
    Matrix Sigma_e, Sigma_e_prime, Sigma_W;
    Matrix calL;  ///< [[Sigma_G, Sigma_SG~], [Sigma_SG~^T, Sigma_Snl~]]
    Matrix calM;  ///< 2 [calQ calB mu_G, calQ calB mu_S~]^T
    long sample_count = 0;
    double p_design = 1.0;
    bool deterministic_channel = false;
    double calL_min_eig = 0.0;  ///< before projection
};

namespace detail {

struct ChannelDraw
{
    Vector c;  // N^2
    Vector s;  // N
};

inline ChannelDraw channel_features(const std::vector<int>& nu, int N, int N_r, ProtocolKind kind)
{
    ChannelDraw out;
    out.s = s_diagonal(nu, N, N_r);
    const Vector g = kind == ProtocolKind::TP2 ? g_diagonal(nu, N, N_r) : out.s;
    out.c.resize(N * N);
    out.c.head(N) = g;
    for (int c = 0; c < N - 1; ++c) out.c.segment(N * (c + 1), N) = nu[c] * out.s;
    return out;
}

struct ChannelAccumulator
{
    Matrix second;
    Vector first;
    Matrix s_second;
    Vector s_first;
    long count = 0;

    explicit ChannelAccumulator(int N)
        : second(Matrix::Zero(N * N, N * N)), first(Vector::Zero(N * N)), s_second(Matrix::Zero(N, N)), s_first(Vector::Zero(N))
    {
    }

    void add(const ChannelDraw& dr)
    {
        second.selfadjointView<Eigen::Lower>().rankUpdate(dr.c);
        first += dr.c;
        s_second.selfadjointView<Eigen::Lower>().rankUpdate(dr.s);
        s_first += dr.s;
        ++count;
    }

    void merge(const ChannelAccumulator& o)
    {
        second += o.second;
        first += o.first;
        s_second += o.s_second;
        s_first += o.s_first;
        count += o.count;
    }
};

inline constexpr long moment_chunk = 8192;

}  // namespace detail

/// Monte Carlo estimate of the channel moments from i.i.d. Bernoulli(p_design)
/// dropout vectors. p_design == 1 short-circuits to the single deterministic draw.
inline ChannelMoments estimate_channel_moments(const ProtocolSpec& protocol, double p_design, long samples, std::uint64_t seed)
{
    protocol.validate();
    if (!(p_design > 0.0 && p_design <= 1.0)) throw ConfigError("channel moments: p_design must lie in (0, 1]");
    const int N = protocol.N, N_r = protocol.N_r;
    const int K = std::max(1, protocol.dropout_count());

    ChannelMoments out;
    out.N = N;
    out.N_r = N_r;
    out.protocol = protocol.kind;
    out.p_design = p_design;

    detail::ChannelAccumulator total(N);
    if (p_design == 1.0) {
        total.add(detail::channel_features(std::vector<int>(K, 1), N, N_r, protocol.kind));
        out.deterministic = true;
    } else {
        if (samples < 1) throw ConfigError("channel moments: samples must be positive");
        std::vector<int> nu(K);
        for (long chunk = 0; chunk * detail::moment_chunk < samples; ++chunk) {
            detail::ChannelAccumulator acc(N);
            Philox rng = make_stream(seed, static_cast<std::uint32_t>(chunk), StreamSource::ChannelMoments);
            const long n = std::min(detail::moment_chunk, samples - chunk * detail::moment_chunk);
            for (long k = 0; k < n; ++k) {
                for (int l = 0; l < K; ++l) nu[l] = rng.uniform() < p_design ? 1 : 0;
                acc.add(detail::channel_features(nu, N, N_r, protocol.kind));
            }
            total.merge(acc);
        }
    }
    const double inv = 1.0 / static_cast<double>(total.count);
    out.samples = total.count;
    out.second = total.second.selfadjointView<Eigen::Lower>();
    out.second *= inv;
    out.first = total.first * inv;
    out.s_second = total.s_second.selfadjointView<Eigen::Lower>();
    out.s_second *= inv;
    out.s_first = total.s_first * inv;
    return out;
}

/// Monte Carlo estimate of E[e e^T] and E[w e^T] over stacked horizons; the
/// Gaussian E[w w^T] is returned exactly.
inline NoiseMoments estimate_noise_moments(const NoiseSpec& noise, const SaturationSpec& sat, int N, long samples,
                                           std::uint64_t seed)
{
    noise.validate();
    require_dims(N >= 1, "noise moments: N must be >= 1");
    const int d = noise.dim();
    const int ne = d * (N - 1);
    NoiseMoments out;
    out.Sigma_W = block_diag_repeat(noise.covariance, N);
    out.Sigma_e = Matrix::Zero(ne, ne);
    out.Sigma_e_prime = Matrix::Zero(d * N, ne);
    if (max_abs(noise.covariance) == 0.0 || ne == 0) {
        out.samples = 0;
        return out;
    }
    if (samples < 1) throw ConfigError("noise moments: samples must be positive");
    const GaussianSampler sampler(noise);
    Matrix ee = Matrix::Zero(ne, ne);
    Matrix we = Matrix::Zero(d * N, ne);
    for (long chunk = 0; chunk * detail::moment_chunk < samples; ++chunk) {
        Matrix ee_c = Matrix::Zero(ne, ne);
        Matrix we_c = Matrix::Zero(d * N, ne);
        Philox rng = make_stream(seed, static_cast<std::uint32_t>(chunk), StreamSource::NoiseMoments);
        const long n = std::min(detail::moment_chunk, samples - chunk * detail::moment_chunk);
        for (long k = 0; k < n; ++k) {
            const Vector w = sampler.draw_stacked(rng, N);
            const Vector e = saturate(sat, w.head(ne));
            ee_c.selfadjointView<Eigen::Lower>().rankUpdate(e);
            we_c.noalias() += w * e.transpose();
        }
        ee += ee_c;
        we += we_c;
    }
    out.samples = samples;
    out.Sigma_e = Matrix(ee.selfadjointView<Eigen::Lower>()) / static_cast<double>(samples);
    out.Sigma_e_prime = we / static_cast<double>(samples);
    return out;
}

namespace detail {

/// alpha (mN x mN) weighted by per-stage scalars: alpha(i,j) * C(stage(i), stage(j)).
inline Matrix weighted_alpha(const Matrix& alpha, const Matrix& C, int m)
{
    Matrix out = alpha;
    for (Eigen::Index i = 0; i < alpha.rows(); ++i)
        for (Eigen::Index j = 0; j < alpha.cols(); ++j) out(i, j) *= C(i / m, j / m);
    return out;
}

inline Matrix stage_diag(const Vector& per_stage, int m) { return expand_stages(per_stage, m); }

}  // namespace detail

/// Assembles calL and calM. Throws IndefiniteL when the estimate has an
/// eigenvalue below -1e-8 ||calL||; otherwise clips small negative ones.
inline MomentSet assemble(const ChannelMoments& ch, const NoiseMoments& nm, const LiftedDynamics& lifted)
{
    const int N = lifted.N, m = lifted.m, d = lifted.d;
    require_dims(ch.N == N, "assemble: channel moments horizon mismatch");
    require_dims(nm.Sigma_W.rows() == d * N, "assemble: noise moments dimension mismatch");
    const PolicyLayout lay(N, m, d);
    const int mN = m * N;

    MomentSet ms;
    ms.N = N;
    ms.m = m;
    ms.d = d;
    ms.p_design = ch.p_design;
    ms.sample_count = ch.samples;
    ms.deterministic_channel = ch.deterministic;
    ms.Sigma_e = nm.Sigma_e;
    ms.Sigma_e_prime = nm.Sigma_e_prime;
    ms.Sigma_W = nm.Sigma_W;

    auto block = [&](int I, int J) { return ch.second.block(I * N, J * N, N, N); };

    ms.Sigma_G = detail::weighted_alpha(lifted.alpha, block(0, 0), m);
    ms.mu_G = detail::stage_diag(ch.first.head(N), m);
    ms.mu_S = detail::stage_diag(ch.s_first, m);
    ms.Sigma_S = detail::weighted_alpha(lifted.alpha, ch.s_second, m);

    const int nl = lay.n_lambda();
    ms.Sigma_SG_tilde = Matrix::Zero(mN, nl);
    ms.Sigma_Snl_tilde = Matrix::Zero(nl, nl);
    ms.mu_S_tilde = Matrix::Zero(mN, nl);
    // Column c of Lambda keeps its rows from (c+1)m on.
    std::vector<int> offset(N, 0), len(N, 0);
    for (int c = 0; c + 1 < N; ++c) {
        len[c] = m * (N - 1 - c);
        offset[c] = c == 0 ? 0 : offset[c - 1] + len[c - 1];
    }
    for (int c = 0; c + 1 < N; ++c) {
        const Matrix sg = detail::weighted_alpha(lifted.alpha, block(0, c + 1), m);
        ms.Sigma_SG_tilde.middleCols(offset[c], len[c]) = sg.rightCols(len[c]);
        const Matrix mus = detail::stage_diag(ch.first.segment(N * (c + 1), N), m);
        ms.mu_S_tilde.middleCols(offset[c], len[c]) = mus.rightCols(len[c]);
        for (int a = 0; a + 1 < N; ++a) {
            const Matrix snl = detail::weighted_alpha(lifted.alpha, block(a + 1, c + 1), m);
            ms.Sigma_Snl_tilde.block(offset[a], offset[c], len[a], len[c]) = snl.bottomRightCorner(len[a], len[c]);
        }
    }

    const int nx = lay.n_xi();
    ms.calL = Matrix::Zero(nx, nx);
    ms.calL.topLeftCorner(mN, mN) = ms.Sigma_G;
    ms.calL.topRightCorner(mN, nl) = ms.Sigma_SG_tilde;
    ms.calL.bottomLeftCorner(nl, mN) = ms.Sigma_SG_tilde.transpose();
    ms.calL.bottomRightCorner(nl, nl) = ms.Sigma_Snl_tilde;
    ms.calL = symmetrize(ms.calL);

    Eigen::SelfAdjointEigenSolver<Matrix> es(ms.calL);
    ms.calL_min_eig = es.eigenvalues().minCoeff();
    const double scale = std::max(es.eigenvalues().cwiseAbs().maxCoeff(), 1e-300);
    if (ms.calL_min_eig < -1e-8 * scale) throw IndefiniteL("calL has eigenvalue " + std::to_string(ms.calL_min_eig));
    if (ms.calL_min_eig < 0.0)
        ms.calL = symmetrize(es.eigenvectors() * es.eigenvalues().cwiseMax(0.0).asDiagonal() * es.eigenvectors().transpose());

    Matrix QB = lifted.calQ * lifted.calB;
    Matrix Mt(d * (N + 1), nx);
    Mt << QB * ms.mu_G, QB * ms.mu_S_tilde;
    ms.calM = 2.0 * Mt.transpose();
    return ms;
}

}  // namespace netspc
