#pragma once

// Process noise, saturation functions and dropout channels, all driven by a
// counter-based generator so every (seed, path, source) triple owns an
// independent, replayable stream.

#include <netspc/errors.hpp>
#include <netspc/linalg.hpp>

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <vector>

namespace netspc {

/// Philox4x32-10 keyed by a 64-bit seed. The 128-bit counter is split into a
/// 64-bit draw index and two 32-bit stream identifiers (path, source).
class Philox
{
 public:
    Philox(std::uint64_t seed, std::uint32_t path, std::uint32_t source)
        : key_{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)}, path_(path), source_(source)
    {
    }

    std::uint64_t next_u64()
    {
        if (cached_ == 0) refill();
        --cached_;
        return block_[cached_];
    }

    /// Uniform in [0, 1) with 53 bits.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    /// Standard normal via Box-Muller; both outputs of each pair are used.
    double gaussian()
    {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        const double radius = std::sqrt(-2.0 * std::log(u1));
        const double angle = 2.0 * std::numbers::pi * u2;
        spare_ = radius * std::sin(angle);
        has_spare_ = true;
        return radius * std::cos(angle);
    }

    std::uint64_t counter() const { return counter_; }

 private:
    static void round(std::array<std::uint32_t, 4>& c, const std::array<std::uint32_t, 2>& k)
    {
        constexpr std::uint64_t M0 = 0xD2511F53u;
        constexpr std::uint64_t M1 = 0xCD9E8D57u;
        const std::uint64_t p0 = M0 * c[0];
        const std::uint64_t p1 = M1 * c[2];
        const auto hi0 = static_cast<std::uint32_t>(p0 >> 32), lo0 = static_cast<std::uint32_t>(p0);
        const auto hi1 = static_cast<std::uint32_t>(p1 >> 32), lo1 = static_cast<std::uint32_t>(p1);
        c = {hi1 ^ c[1] ^ k[0], lo1, hi0 ^ c[3] ^ k[1], lo0};
    }

    void refill()
    {
        std::array<std::uint32_t, 4> c{static_cast<std::uint32_t>(counter_), static_cast<std::uint32_t>(counter_ >> 32), path_,
                                       source_};
        auto k = key_;
        for (int r = 0; r < 10; ++r) {
            round(c, k);
            k[0] += 0x9E3779B9u;
            k[1] += 0xBB67AE85u;
        }
        block_[0] = (static_cast<std::uint64_t>(c[1]) << 32) | c[0];
        block_[1] = (static_cast<std::uint64_t>(c[3]) << 32) | c[2];
        cached_ = 2;
        ++counter_;
    }

    std::array<std::uint32_t, 2> key_;
    std::uint32_t path_;
    std::uint32_t source_;
    std::uint64_t counter_ = 0;
    std::array<std::uint64_t, 2> block_{};
    int cached_ = 0;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

/// Stream identifiers inside one seed.
enum class StreamSource : std::uint32_t
{
    ProcessNoise = 1,
    Dropouts = 2,
    ChannelMoments = 3,
    NoiseMoments = 4,
};

inline Philox make_stream(std::uint64_t seed, std::uint32_t path, StreamSource source)
{
    return Philox(seed, path, static_cast<std::uint32_t>(source));
}

// ---------------------------------------------------------------------------
// Process noise

struct NoiseSpec
{
    Matrix covariance;  ///< d x d, symmetric PSD
    std::uint64_t seed = 0;

    int dim() const { return static_cast<int>(covariance.rows()); }

    void validate() const
    {
        if (covariance.rows() != covariance.cols() || covariance.rows() == 0)
            throw DimensionMismatch("noise covariance must be square and non-empty");
        if (!is_psd(covariance, 1e-10)) throw NotPositiveDefinite("noise covariance must be symmetric PSD");
    }
};

/// Draws i.i.d. zero-mean Gaussian vectors with a fixed covariance.
class GaussianSampler
{
 public:
    explicit GaussianSampler(const NoiseSpec& spec) : factor_(psd_factor(spec.covariance)), zero_(max_abs(spec.covariance) == 0.0)
    {
    }

    Vector draw(Philox& rng) const
    {
        const auto d = factor_.rows();
        Vector z(d);
        for (Eigen::Index i = 0; i < d; ++i) z(i) = rng.gaussian();
        if (zero_) return Vector::Zero(d);
        return factor_ * z;
    }

    /// Stacked vector w_{t:horizon} of length d * horizon.
    Vector draw_stacked(Philox& rng, int horizon) const
    {
        const auto d = factor_.rows();
        Vector w(d * horizon);
        for (int k = 0; k < horizon; ++k) w.segment(k * d, d) = draw(rng);
        return w;
    }

    const Matrix& factor() const { return factor_; }

 private:
    Matrix factor_;
    bool zero_;
};

inline Vector sample_noise(const NoiseSpec& spec, int horizon, Philox& rng)
{
    if (horizon < 1) throw DimensionMismatch("sample_noise: horizon must be >= 1");
    return GaussianSampler(spec).draw_stacked(rng, horizon);
}

// ---------------------------------------------------------------------------
// Saturation

enum class SaturationKind
{
    Sigmoid,
    HardSat,
    PiecewiseLinear,
};

struct SaturationSpec
{
    SaturationKind kind = SaturationKind::Sigmoid;
    double phi_max = 1.0;

    double apply(double xi) const
    {
        // Evaluated on |xi| and re-signed so that oddness holds bit for bit.
        const double a = std::fabs(xi);
        double v = 0.0;
        switch (kind) {
            case SaturationKind::Sigmoid:
                // (1 - e^{-a}) / (1 + e^{-a}) == tanh(a / 2)
                v = phi_max * std::tanh(0.5 * a);
                break;
            case SaturationKind::HardSat:
            case SaturationKind::PiecewiseLinear:
                v = std::min(a, phi_max);
                break;
        }
        return std::signbit(xi) ? -v : v;
    }
};

inline Vector saturate(const SaturationSpec& spec, const Vector& w)
{
    Vector out(w.size());
    for (Eigen::Index i = 0; i < w.size(); ++i) out(i) = spec.apply(w(i));
    return out;
}

inline std::string to_string(SaturationKind k)
{
    switch (k) {
        case SaturationKind::Sigmoid: return "sigmoid";
        case SaturationKind::HardSat: return "hard_sat";
        case SaturationKind::PiecewiseLinear: return "piecewise_linear";
    }
    return "?";
}

// ---------------------------------------------------------------------------
// Dropout channels

enum class ChannelKind
{
    BernoulliIid,
    GilbertElliott,
};

struct ChannelSpec
{
    ChannelKind kind = ChannelKind::BernoulliIid;
    double p = 1.0;  ///< success probability (i.i.d. channel)
    // Gilbert-Elliott: state 1 "good", state 2 "bad".
    double p1 = 1.0, p2 = 0.0, p12 = 0.0, p21 = 1.0;
    bool start_good = false;  ///< otherwise the initial state is drawn from the stationary law
    std::uint64_t seed = 0;

    static ChannelSpec bernoulli(double p, std::uint64_t seed = 0)
    {
        ChannelSpec c;
        c.kind = ChannelKind::BernoulliIid;
        c.p = p;
        c.seed = seed;
        return c;
    }

    static ChannelSpec gilbert_elliott(double p1, double p2, double p12, double p21, std::uint64_t seed = 0)
    {
        ChannelSpec c;
        c.kind = ChannelKind::GilbertElliott;
        c.p1 = p1;
        c.p2 = p2;
        c.p12 = p12;
        c.p21 = p21;
        c.seed = seed;
        return c;
    }

    double stationary_good() const
    {
        const double s = p12 + p21;
        return s > 0.0 ? p21 / s : 1.0;
    }

    /// Long-run success probability; used as the design p for correlated channels.
    double stationary_success() const
    {
        if (kind == ChannelKind::BernoulliIid) return p;
        const double g = stationary_good();
        return g * p1 + (1.0 - g) * p2;
    }

    void validate() const
    {
        auto prob = [](double v) { return v >= 0.0 && v <= 1.0; };
        if (kind == ChannelKind::BernoulliIid) {
            if (!prob(p) || p <= 0.0) throw ConfigError("channel: bernoulli p must lie in (0, 1]");
        } else {
            if (!prob(p1) || !prob(p2) || !prob(p12) || !prob(p21))
                throw ConfigError("channel: Gilbert-Elliott probabilities must lie in [0, 1]");
            if (stationary_success() <= 0.0) throw ConfigError("channel: stationary success probability is zero");
        }
    }
};

struct DropoutTrace
{
    std::vector<int> nu;     ///< 1 = delivered
    std::vector<int> state;  ///< Gilbert-Elliott hidden state (1 good, 2 bad); empty for i.i.d.
};

/// Incremental channel: one draw per transmission instant.
class ChannelSampler
{
 public:
    ChannelSampler(const ChannelSpec& spec, Philox rng) : spec_(spec), rng_(rng)
    {
        if (spec_.kind == ChannelKind::GilbertElliott) {
            good_ = spec_.start_good || rng_.uniform() < spec_.stationary_good();
        }
    }

    int next()
    {
        if (spec_.kind == ChannelKind::BernoulliIid) return rng_.uniform() < spec_.p ? 1 : 0;
        last_state_ = good_ ? 1 : 2;
        const double ps = good_ ? spec_.p1 : spec_.p2;
        const int nu = rng_.uniform() < ps ? 1 : 0;
        const double u = rng_.uniform();
        good_ = good_ ? (u >= spec_.p12) : (u < spec_.p21);
        return nu;
    }

    int last_state() const { return last_state_; }

 private:
    ChannelSpec spec_;
    Philox rng_;
    bool good_ = true;
    int last_state_ = 0;
};

inline DropoutTrace sample_dropouts(const ChannelSpec& spec, int horizon, Philox rng)
{
    if (horizon < 1) throw DimensionMismatch("sample_dropouts: horizon must be >= 1");
    ChannelSampler ch(spec, rng);
    DropoutTrace out;
    out.nu.reserve(horizon);
    for (int k = 0; k < horizon; ++k) {
        out.nu.push_back(ch.next());
        if (spec.kind == ChannelKind::GilbertElliott) out.state.push_back(ch.last_state());
    }
    return out;
}

}  // namespace netspc
