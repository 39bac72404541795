#pragma once

// Receding-horizon closed loop over the erasure channel, its metrics and the
// comparison baselines.

#include <netspc/errors.hpp>
#include <netspc/linalg.hpp>
#include <netspc/moment_cache.hpp>
#include <netspc/moments.hpp>
#include <netspc/ocp.hpp>
#include <netspc/plant.hpp>
#include <netspc/policy.hpp>
#include <netspc/protocol.hpp>
#include <netspc/qp.hpp>
#include <netspc/stochastics.hpp>

#include <algorithm>
#include <atomic>
#include <exception>
#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

namespace netspc {

enum class BaselineKind
{
    Proposed,
    CeMpc,
    PacketizedMpc,
    SpcDisturbanceOnly,
    DropoutOnly,
};

inline std::string to_string(BaselineKind k)
{
    switch (k) {
        case BaselineKind::Proposed: return "proposed";
        case BaselineKind::CeMpc: return "ce_mpc";
        case BaselineKind::PacketizedMpc: return "packetized_mpc";
        case BaselineKind::SpcDisturbanceOnly: return "spc_disturbance_only";
        case BaselineKind::DropoutOnly: return "dropout_only";
    }
    return "?";
}

inline BaselineKind parse_baseline(const std::string& s)
{
    for (auto k : {BaselineKind::Proposed, BaselineKind::CeMpc, BaselineKind::PacketizedMpc, BaselineKind::SpcDisturbanceOnly,
                   BaselineKind::DropoutOnly})
        if (to_string(k) == s) return k;
    throw ConfigError("unknown baseline '" + s + "'");
}

struct StabilitySettings
{
    bool enabled = false;
    double r = 1.0;
    double epsilon = 0.1;
    double zeta = 0.0;  ///< 0 selects 0.9 of the admissible upper bound
};

struct ScenarioConfig
{
    PlantModel model;
    Matrix Q, Q_f, R;
    int N = 4;
    int N_r = 3;
    ProtocolKind protocol = ProtocolKind::TP1;
    ChannelSpec channel;
    SaturationSpec sat;
    double mu = 0.0;
    StabilitySettings stability;
    Vector x0;
    int T = 150;
    int paths = 100;
    std::uint64_t moment_seed = 3;
    long moment_samples = 100000;
    double tol_sparse = 1e-6;
    QpSettings qp;

    double p_design() const { return channel.stationary_success(); }

    ProtocolSpec protocol_spec() const { return ProtocolSpec{protocol, N, N_r}; }

    /// Simulation length padded to whole recalculation cycles.
    int padded_steps() const { return (T + N_r - 1) / N_r * N_r; }

    void validate() const
    {
        model.validate();
        const int d = model.d(), m = model.m();
        if (model.noise.covariance.rows() != d) throw ConfigError("scenario: noise covariance must be d x d");
        if (Q.rows() != d || Q.cols() != d || Q_f.rows() != d || Q_f.cols() != d) throw ConfigError("scenario: Q and Q_f must be d x d");
        if (R.rows() != m || R.cols() != m) throw ConfigError("scenario: R must be m x m");
        protocol_spec().validate();
        channel.validate();
        if (!(sat.phi_max > 0.0)) throw ConfigError("scenario: phi_max must be positive");
        if (mu < 0.0) throw ConfigError("scenario: mu must be non-negative");
        if (x0.size() != d) throw ConfigError("scenario: x0 must have length d");
        if (T < 1) throw ConfigError("scenario: T must be >= 1");
        if (paths < 1) throw ConfigError("scenario: paths must be >= 1");
        if (moment_samples < 1) throw ConfigError("scenario: moment samples must be positive");
    }
};

/// The scenario of the experiments section: orthogonal A (so d_o = 3, kappa = 3),
/// N = 4, N_r = 3, U_max = 15 and sigmoid saturation.
inline ScenarioConfig paper_scenario(double p = 0.9, double noise_scale = 1.0, ProtocolKind protocol = ProtocolKind::TP1)
{
    ScenarioConfig c;
    c.model.A.resize(3, 3);
    c.model.A << 0.0, -0.8, -0.6, 0.8, -0.36, 0.48, 0.6, 0.48, -0.64;
    c.model.B.resize(3, 1);
    c.model.B << 0.16, 0.14, 1.0;
    c.model.u_max = 15.0;
    c.model.noise.covariance = noise_scale * Matrix::Identity(3, 3);
    c.model.noise.seed = 1;
    c.Q = Matrix::Identity(3, 3);
    c.Q_f.resize(3, 3);
    c.Q_f << 12, 1, 4, 1, 19, 2, 4, 2, 2;
    c.R = Matrix::Constant(1, 1, 2.0);
    c.N = 4;
    c.N_r = 3;
    c.protocol = protocol;
    c.channel = ChannelSpec::bernoulli(p, 2);
    c.sat = SaturationSpec{SaturationKind::Sigmoid, 1.0};
    c.mu = 1000.0;
    c.stability.enabled = true;
    c.x0 = Vector(3);
    c.x0 << 10.0, 10.0, -10.0;
    return c;
}

/// Design-time data shared read-only by all sample paths.
struct ControllerDesign
{
    BaselineKind kind = BaselineKind::Proposed;
    ProtocolKind transmit = ProtocolKind::TP1;
    LiftedDynamics lifted;
    std::optional<OrthoSchurDecomposition> dec;
    std::optional<ReachabilityData> reach;
    std::shared_ptr<const MomentSet> moments;
    OcpOptions options;
    std::string moment_key;

    OcpContext context() const
    {
        return OcpContext{moments.get(), &lifted, dec ? &*dec : nullptr, reach ? &*reach : nullptr};
    }
};

/// Moments for one (protocol, design p, noise) triple, read from or written to
/// cache_dir when given.
inline std::shared_ptr<const MomentSet> compute_moments(const ScenarioConfig& cfg, const LiftedDynamics& lifted,
                                                        ProtocolKind protocol, double p_design, const NoiseSpec& noise,
                                                        const std::optional<std::filesystem::path>& cache_dir,
                                                        std::string* key_out = nullptr)
{
    PlantModel keyed = cfg.model;
    keyed.noise = noise;
    MomentKeyInputs in{&keyed, cfg.Q, cfg.Q_f, cfg.R, cfg.N, cfg.N_r, protocol, p_design, cfg.sat, cfg.moment_seed,
                       cfg.moment_samples};
    const std::uint64_t key = moment_cache_key(in);
    if (key_out) *key_out = key_hex(key);
    const std::filesystem::path file = cache_dir ? *cache_dir / ("moments-" + key_hex(key) + ".bin") : std::filesystem::path{};
    if (cache_dir)
        if (auto hit = read_moment_cache(file, key)) return std::make_shared<const MomentSet>(std::move(*hit));

    const ProtocolSpec ps{protocol, cfg.N, cfg.N_r};
    // Channel and noise draws come from different stream sources of the same seed.
    const ChannelMoments ch = estimate_channel_moments(ps, p_design, cfg.moment_samples, cfg.moment_seed);
    const NoiseMoments nm = estimate_noise_moments(noise, cfg.sat, cfg.N, cfg.moment_samples, cfg.moment_seed);
    auto ms = std::make_shared<const MomentSet>(assemble(ch, nm, lifted));
    if (cache_dir) write_moment_cache(file, key, *ms);
    return ms;
}

inline ControllerDesign make_design(const ScenarioConfig& cfg, BaselineKind kind,
                                    const std::optional<std::filesystem::path>& cache_dir = std::nullopt)
{
    cfg.validate();
    ControllerDesign des;
    des.kind = kind;
    des.lifted = build_lifted(cfg.model, cfg.Q, cfg.Q_f, cfg.R, cfg.N);
    des.options.u_max = cfg.model.u_max;
    des.options.phi_max = cfg.sat.phi_max;
    des.options.mu = cfg.mu;
    des.transmit = cfg.protocol;

    const bool certainty_equivalent = kind == BaselineKind::CeMpc || kind == BaselineKind::PacketizedMpc;
    if (certainty_equivalent) {
        // Nominal prediction: no noise, every packet delivered.
        NoiseSpec quiet;
        quiet.covariance = Matrix::Zero(cfg.model.d(), cfg.model.d());
        des.moments = compute_moments(cfg, des.lifted, ProtocolKind::TP1, 1.0, quiet, cache_dir, &des.moment_key);
        des.options.restriction = PolicyRestriction{false, false};
        des.options.mu = 0.0;
        des.options.stability = false;
        des.transmit = kind == BaselineKind::CeMpc ? ProtocolKind::TP1 : ProtocolKind::TP2;
        return des;
    }

    des.moments = compute_moments(cfg, des.lifted, cfg.protocol, cfg.p_design(), cfg.model.noise, cache_dir, &des.moment_key);
    if (kind == BaselineKind::SpcDisturbanceOnly) {
        des.options.restriction.lambda = false;
        des.options.mu = 0.0;
    } else if (kind == BaselineKind::DropoutOnly) {
        des.options.restriction.theta = false;
        des.options.mu = 0.0;
    }
    if (cfg.stability.enabled) {
        des.dec = decompose(cfg.model);
        des.reach = reachability(*des.dec);
        if (!des.reach->empty_orthogonal_part) {
            if (cfg.N_r != des.reach->kappa)
                throw ConfigError("scenario: stability constraints need N_r equal to the reachability index (" +
                                  std::to_string(des.reach->kappa) + ")");
            if (cfg.N < des.reach->kappa) throw ConfigError("scenario: horizon shorter than the reachability index");
            StabilityConstraintSpec spec{cfg.stability.r, cfg.stability.epsilon, cfg.stability.zeta};
            const double bound = zeta_upper_bound(*des.dec, *des.reach, cfg.model.u_max);
            if (spec.zeta == 0.0) spec.zeta = 0.9 * bound;
            spec.validate(bound);
            des.options.stability = true;
            des.options.stability_spec = spec;
        }
    }
    return des;
}

struct StepRecord
{
    int t = 0;
    int instant = 0;  ///< position inside the recalculation cycle
    Vector x;         ///< state before the step
    Vector u;         ///< control computed by the controller
    int payload = 0;  ///< scalars transmitted
    int nu = 0;
    Vector u_applied;
    double stage_cost = 0.0;
    bool null_control = false;
    Vector w;              ///< sampled disturbance
    Vector w_reconstructed;
};

struct SolveRecord
{
    int t = 0;
    QpStatus status = QpStatus::Solved;
    int iterations = 0;
    double objective = 0.0;
    double regularizer = 0.0;
    int stability_rows = 0;
};

struct PathTrace
{
    int path = 0;
    std::vector<StepRecord> steps;
    Vector x_final;
    std::vector<SolveRecord> solves;
};

struct SimTrace
{
    std::vector<PathTrace> paths;
};

/// A solver failure with its coordinates.
class SimulationError : public SolverError
{
 public:
    SimulationError(int path, int t, const std::string& what)
        : SolverError("path " + std::to_string(path) + ", t = " + std::to_string(t) + ": " + what), path_(path), t_(t)
    {
    }
    int path() const { return path_; }
    int t() const { return t_; }

 private:
    int path_, t_;
};

inline PathTrace simulate_path(const ScenarioConfig& cfg, const ControllerDesign& des, int path)
{
    const int d = cfg.model.d(), m = cfg.model.m(), N = cfg.N, N_r = cfg.N_r;
    const int T = cfg.padded_steps();
    const Matrix& A = cfg.model.A;
    const Matrix& B = cfg.model.B;
    const QpSolver solver(cfg.qp);
    const OcpContext ctx = des.context();
    const GaussianSampler sampler(cfg.model.noise);
    Philox noise_rng = make_stream(cfg.model.noise.seed, static_cast<std::uint32_t>(path), StreamSource::ProcessNoise);
    ChannelSampler channel(cfg.channel, make_stream(cfg.channel.seed, static_cast<std::uint32_t>(path), StreamSource::Dropouts));

    PathTrace trace;
    trace.path = path;
    trace.steps.reserve(T);
    Vector x = cfg.x0;
    std::optional<PolicyParams> previous;

    for (int t0 = 0; t0 < T; t0 += N_r) {
        OcpSolution sol;
        try {
            std::optional<PolicyParams> warm;
            if (previous) warm = shift_stages(*previous, N_r);
            sol = solve_at(ctx, x, des.options, solver, warm);
        } catch (const Error& e) {
            throw SimulationError(path, t0, e.what());
        }
        const PolicyParams& params = sol.params;
        trace.solves.push_back(SolveRecord{t0, sol.stats.status, sol.stats.iterations, sol.objective, regularizer(params),
                                           sol.stability_rows});

        ActuatorState actuator;
        actuator.new_cycle(N_r);
        bool acknowledged = false;
        Vector e_hist = Vector::Zero(d * (N - 1));
        Vector nu_hist = Vector::Zero(N - 1);
        for (int l = 0; l < N_r; ++l) {
            const int t = t0 + l;
            StepRecord rec;
            rec.t = t;
            rec.instant = l;
            rec.x = x;
            // Entries of e_hist / nu_hist at positions >= l are still zero; causality
            // of the gains makes them irrelevant for block l.
            rec.u = evaluate_controls(params, e_hist, nu_hist).segment(l * m, m);
            rec.null_control = stage_norm(params, l) <= cfg.tol_sparse;
            const Packet packet = make_packet(des.transmit, l, rec.u, params, N_r, acknowledged);
            rec.payload = packet.payload_size();
            rec.nu = channel.next();
            ActuatorOutput out;
            try {
                out = actuator_step(actuator, des.transmit, rec.nu ? std::optional<Packet>(packet) : std::nullopt, l, m);
            } catch (const Error& e) {
                throw SimulationError(path, t, e.what());
            }
            rec.u_applied = out.applied;
            rec.w = sampler.draw(noise_rng);
            const Vector drift = A * x + B * rec.u_applied;
            const Vector x_next = drift + rec.w;
            rec.w_reconstructed = x_next - drift;
            rec.stage_cost = x.dot(cfg.Q * x) + rec.u_applied.dot(cfg.R * rec.u_applied);
            if (l < N - 1) {
                e_hist.segment(l * d, d) = saturate(cfg.sat, rec.w_reconstructed);
                nu_hist(l) = out.ack;
            }
            acknowledged = acknowledged || out.ack == 1;
            trace.steps.push_back(std::move(rec));
            x = x_next;
        }
        previous = params;
    }
    trace.x_final = x;
    return trace;
}

/// Runs cfg.paths independent sample paths on up to `jobs` threads; results are
/// ordered by path index regardless of scheduling.
inline SimTrace run_closed_loop(const ScenarioConfig& cfg, const ControllerDesign& des, int jobs = 1)
{
    SimTrace out;
    out.paths.resize(cfg.paths);
    std::atomic<int> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    auto worker = [&] {
        for (int p = next++; p < cfg.paths; p = next++) {
            try {
                out.paths[p] = simulate_path(cfg, des, p);
            } catch (...) {
                std::lock_guard<std::mutex> lock(failure_mutex);
                if (!failure) failure = std::current_exception();
                next = cfg.paths;
            }
        }
    };
    jobs = std::clamp(jobs, 1, cfg.paths);
    if (jobs == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int j = 0; j < jobs; ++j) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
    }
    if (failure) std::rethrow_exception(failure);
    return out;
}

inline SimTrace run_closed_loop(const ScenarioConfig& cfg, int jobs = 1)
{
    return run_closed_loop(cfg, make_design(cfg, BaselineKind::Proposed), jobs);
}

inline SimTrace run_baseline(const ScenarioConfig& cfg, BaselineKind kind, int jobs = 1,
                             const std::optional<std::filesystem::path>& cache_dir = std::nullopt)
{
    return run_closed_loop(cfg, make_design(cfg, kind, cache_dir), jobs);
}

struct Metrics
{
    double msb = 0.0;               ///< max over t >= 1 of the path mean of |x_t|^2
    double msb_time_average = 0.0;  ///< time average over t >= 1 of the same series
    double actuator_energy = 0.0;
    double sparsity_pct = 0.0;
    double avg_cost = 0.0;
    long solves = 0;
    long uncertified_solves = 0;
    double max_applied = 0.0;  ///< largest |u^a| entry seen
    std::vector<double> mean_square;  ///< path mean of |x_t|^2 for t = 0..T
};

/// States x_0 .. x_T of one path.
inline std::vector<Vector> path_states(const PathTrace& p)
{
    std::vector<Vector> xs;
    xs.reserve(p.steps.size() + 1);
    for (const auto& s : p.steps) xs.push_back(s.x);
    if (p.x_final.size()) xs.push_back(p.x_final);
    return xs;
}

/// Metrics over a trace collection. The initial state is excluded from the
/// MSB: it is the same deterministic point for every configuration.
inline Metrics metrics(const SimTrace& trace)
{
    Metrics out;
    if (trace.paths.empty()) return out;
    std::size_t horizon = 0;
    for (const auto& p : trace.paths) horizon = std::max(horizon, path_states(p).size());
    std::vector<double> sum(horizon, 0.0);
    std::vector<int> count(horizon, 0);
    double energy = 0.0, cost = 0.0;
    long steps = 0, null_steps = 0;
    for (const auto& p : trace.paths) {
        const auto xs = path_states(p);
        for (std::size_t t = 0; t < xs.size(); ++t) {
            sum[t] += xs[t].squaredNorm();
            ++count[t];
        }
        for (const auto& s : p.steps) {
            energy += s.u_applied.squaredNorm();
            cost += s.stage_cost;
            null_steps += s.null_control ? 1 : 0;
            out.max_applied = std::max(out.max_applied, s.u_applied.size() ? s.u_applied.cwiseAbs().maxCoeff() : 0.0);
            ++steps;
        }
        for (const auto& sv : p.solves) {
            ++out.solves;
            if (sv.status == QpStatus::MaxIterations) ++out.uncertified_solves;
        }
    }
    out.mean_square.resize(horizon);
    for (std::size_t t = 0; t < horizon; ++t) out.mean_square[t] = count[t] ? sum[t] / count[t] : 0.0;
    if (horizon == 1) {
        out.msb = out.msb_time_average = out.mean_square[0];
    } else if (horizon > 1) {
        double total = 0.0;
        for (std::size_t t = 1; t < horizon; ++t) {
            out.msb = std::max(out.msb, out.mean_square[t]);
            total += out.mean_square[t];
        }
        out.msb_time_average = total / static_cast<double>(horizon - 1);
    }
    if (steps > 0) {
        out.actuator_energy = energy / static_cast<double>(steps);
        out.avg_cost = cost / static_cast<double>(steps);
        out.sparsity_pct = 100.0 * static_cast<double>(null_steps) / static_cast<double>(steps);
    }
    return out;
}

}  // namespace netspc
