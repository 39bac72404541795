#pragma once

// Transmission protocols over the erasure channel.
//   TP1: only u_{t+l} is sent at instant t+l; a drop means zero input.
//   TP2: u_{t+l} plus the not yet used offset blocks of eta are sent until the
//        first acknowledged delivery; the actuator buffers them and falls back
//        to the stored offset block on later drops.

#include <netspc/errors.hpp>
#include <netspc/linalg.hpp>
#include <netspc/policy.hpp>

#include <optional>
#include <string>
#include <vector>

namespace netspc {

enum class ProtocolKind
{
    TP1,
    TP2,
};

inline std::string to_string(ProtocolKind k) { return k == ProtocolKind::TP1 ? "TP1" : "TP2"; }

struct ProtocolSpec
{
    ProtocolKind kind = ProtocolKind::TP1;
    int N = 1;
    int N_r = 1;

    void validate() const
    {
        if (N < 1) throw ConfigError("protocol: N must be >= 1");
        if (N_r < 1 || N_r > N) throw ConfigError("protocol: N_r must satisfy 1 <= N_r <= N");
    }

    /// Number of dropout variables a horizon touches: S needs N_r, Lambda needs N-1.
    int dropout_count() const { return std::max(N_r, N - 1); }
};

/// rho_l = 1 iff some nu_s = 1 with s <= l.
inline std::vector<int> rho_sequence(const std::vector<int>& nu)
{
    std::vector<int> rho(nu.size(), 0);
    int none_yet = 1;  // prod_{s<l} (1 - nu_s)
    for (std::size_t l = 0; l < nu.size(); ++l) {
        const int prev = l == 0 ? 0 : rho[l - 1];
        rho[l] = prev + none_yet * nu[l];
        none_yet *= 1 - nu[l];
    }
    return rho;
}

/// Per-stage scalars of S (length N): nu_l for l < N_r, then 1.
inline Vector s_diagonal(const std::vector<int>& nu, int N, int N_r)
{
    require_dims(static_cast<int>(nu.size()) >= N_r, "S: need N_r dropout values");
    Vector s = Vector::Ones(N);
    for (int l = 0; l < N_r; ++l) s(l) = nu[l];
    return s;
}

/// Per-stage scalars of G (length N): rho_l for l < N_r, then 1.
inline Vector g_diagonal(const std::vector<int>& nu, int N, int N_r)
{
    require_dims(static_cast<int>(nu.size()) >= N_r, "G: need N_r dropout values");
    const std::vector<int> rho = rho_sequence(std::vector<int>(nu.begin(), nu.begin() + N_r));
    Vector g = Vector::Ones(N);
    for (int l = 0; l < N_r; ++l) g(l) = rho[l];
    return g;
}

inline Matrix expand_stages(const Vector& per_stage, int m)
{
    Vector diag(per_stage.size() * m);
    for (Eigen::Index k = 0; k < per_stage.size(); ++k) diag.segment(k * m, m).setConstant(per_stage(k));
    return diag.asDiagonal();
}

/// blkdiag(I_m nu_0, ..., I_m nu_{N_r-1}, I_{m(N-N_r)}).
inline Matrix build_S(const std::vector<int>& nu, int N, int N_r, int m)
{
    return expand_stages(s_diagonal(nu, N, N_r), m);
}

/// Square mN x mN form of G: diagonal blocks rho_l I_m for l < N_r and I_m after.
inline Matrix build_G(const std::vector<int>& nu, int N, int N_r, int m)
{
    return expand_stages(g_diagonal(nu, N, N_r), m);
}

/// Applied input over the horizon. nu must hold at least max(N_r, N-1) values.
inline Vector applied_controls(const ProtocolSpec& protocol, const PolicyParams& params, const Vector& sat_noise,
                               const std::vector<int>& nu)
{
    protocol.validate();
    params.check_dims();
    require_dims(params.N == protocol.N, "applied_controls: horizon mismatch");
    require_dims(static_cast<int>(nu.size()) >= protocol.dropout_count(), "applied_controls: too few dropout values");
    Vector nu_vec(protocol.N - 1);
    for (int l = 0; l < protocol.N - 1; ++l) nu_vec(l) = nu[l];
    const Vector feedback = params.Theta * sat_noise + params.Lambda * nu_vec;
    const Matrix S = build_S(nu, protocol.N, protocol.N_r, params.m);
    if (protocol.kind == ProtocolKind::TP1) return S * (params.eta + feedback);
    const Matrix G = build_G(nu, protocol.N, protocol.N_r, params.m);
    return G * params.eta + S * feedback;
}

// ---------------------------------------------------------------------------
// Event-level emulation

struct Packet
{
    int instant = 0;                       ///< l within the current cycle
    Vector control;                        ///< u_{t+l}
    std::vector<std::pair<int, Vector>> offsets;  ///< (instant, eta block) for later instants

    int payload_size() const
    {
        int n = static_cast<int>(control.size());
        for (const auto& o : offsets) n += static_cast<int>(o.second.size());
        return n;
    }
};

struct ActuatorState
{
    std::vector<std::optional<Vector>> buffer;  ///< offset blocks by instant (TP2 only)
    bool burst_received = false;
    int last_rho = 0;

    void new_cycle(int N_r)
    {
        buffer.assign(N_r, std::nullopt);
        burst_received = false;
        last_rho = 0;
    }
};

struct ActuatorOutput
{
    Vector applied;
    int ack = 0;
};

/// What the controller sends at instant l. TP2 attaches eta blocks l+1 .. N_r-1
/// until the first acknowledgement.
inline Packet make_packet(ProtocolKind kind, int instant, const Vector& control, const PolicyParams& params, int N_r,
                          bool acknowledged)
{
    Packet p;
    p.instant = instant;
    p.control = control;
    if (kind == ProtocolKind::TP2 && !acknowledged)
        for (int k = instant + 1; k < N_r; ++k) p.offsets.emplace_back(k, params.eta.segment(k * params.m, params.m));
    return p;
}

/// One actuator instant. `packet` is empty when the channel dropped it.
inline ActuatorOutput actuator_step(ActuatorState& state, ProtocolKind kind, const std::optional<Packet>& packet, int instant,
                                    int m)
{
    ActuatorOutput out;
    if (packet) {
        if (packet->control.size() != m) throw DimensionMismatch("actuator: control block has wrong size");
        out.applied = packet->control;
        out.ack = 1;
        if (kind == ProtocolKind::TP2 && !state.burst_received) {
            for (const auto& [k, block] : packet->offsets) {
                if (k < 0 || k >= static_cast<int>(state.buffer.size())) throw BufferUnderrun("actuator: offset outside cycle");
                state.buffer[k] = block;
            }
            state.burst_received = true;
        }
        state.last_rho = 1;
        return out;
    }
    out.ack = 0;
    if (kind == ProtocolKind::TP2 && state.burst_received) {
        if (instant >= static_cast<int>(state.buffer.size()) || !state.buffer[instant])
            throw BufferUnderrun("actuator: no buffered offset for this instant");
        out.applied = *state.buffer[instant];
        return out;
    }
    out.applied = Vector::Zero(m);
    return out;
}

}  // namespace netspc
