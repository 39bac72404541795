#pragma once

// Binary sidecar for assembled moment sets, keyed by a content hash of every
// input that influences the estimate.
//
// Layout (little endian): "NSPCMOM\0", u32 version, u64 key, i32 N, m, d,
// i64 sample_count, f64 p_design, u8 deterministic, f64 calL_min_eig,
// u32 matrix count, then per matrix i64 rows, i64 cols, row-major f64 data.

#include <netspc/errors.hpp>
#include <netspc/moments.hpp>

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <sstream>
#include <string>

namespace netspc {

inline constexpr std::uint32_t moment_cache_version = 1;

class Fnv1a
{
 public:
    void bytes(const void* data, std::size_t n)
    {
        const auto* p = static_cast<const unsigned char*>(data);
        for (std::size_t i = 0; i < n; ++i) {
            h_ ^= p[i];
            h_ *= 0x100000001b3ULL;
        }
    }
    template <class T>
    void value(const T& v)
    {
        static_assert(std::is_trivially_copyable_v<T>);
        bytes(&v, sizeof(T));
    }
    void matrix(const Matrix& M)
    {
        value<std::int64_t>(M.rows());
        value<std::int64_t>(M.cols());
        for (Eigen::Index i = 0; i < M.rows(); ++i)
            for (Eigen::Index j = 0; j < M.cols(); ++j) value(M(i, j));
    }
    void text(const std::string& s)
    {
        value<std::uint64_t>(s.size());
        bytes(s.data(), s.size());
    }
    std::uint64_t digest() const { return h_; }

 private:
    std::uint64_t h_ = 0xcbf29ce484222325ULL;
};

struct MomentKeyInputs
{
    const PlantModel* model = nullptr;
    Matrix Q, Q_f, R;
    int N = 1, N_r = 1;
    ProtocolKind protocol = ProtocolKind::TP1;
    double p_design = 1.0;
    SaturationSpec sat;
    std::uint64_t seed = 0;
    long samples = 0;
};

inline std::uint64_t moment_cache_key(const MomentKeyInputs& in)
{
    Fnv1a h;
    h.value(moment_cache_version);
    h.matrix(in.model->A);
    h.matrix(in.model->B);
    h.matrix(in.Q);
    h.matrix(in.Q_f);
    h.matrix(in.R);
    h.value<std::int32_t>(in.N);
    h.value<std::int32_t>(in.N_r);
    h.text(to_string(in.protocol));
    h.value(in.p_design);
    h.matrix(in.model->noise.covariance);
    h.text(to_string(in.sat.kind));
    h.value(in.sat.phi_max);
    h.value(in.seed);
    h.value<std::int64_t>(in.samples);
    return h.digest();
}

inline std::string key_hex(std::uint64_t key)
{
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0') << key;
    return os.str();
}

namespace detail {

inline std::array<Matrix*, 12> moment_fields(MomentSet& ms)
{
    return {&ms.Sigma_G, &ms.Sigma_SG_tilde, &ms.Sigma_Snl_tilde, &ms.mu_G, &ms.mu_S_tilde, &ms.mu_S,
            &ms.Sigma_S, &ms.Sigma_e,        &ms.Sigma_e_prime,   &ms.Sigma_W, &ms.calL,    &ms.calM};
}

template <class T>
void put(std::ostream& os, const T& v)
{
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T get(std::istream& is)
{
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw Error("moment cache: truncated file");
    return v;
}

}  // namespace detail

inline void write_moment_cache(const std::filesystem::path& file, std::uint64_t key, const MomentSet& ms)
{
    static_assert(std::endian::native == std::endian::little, "cache format is little endian");
    std::filesystem::create_directories(file.parent_path());
    const auto tmp = file.string() + ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
        if (!os) throw Error("moment cache: cannot write " + tmp);
        os.write("NSPCMOM", 8);
        detail::put(os, moment_cache_version);
        detail::put(os, key);
        detail::put<std::int32_t>(os, ms.N);
        detail::put<std::int32_t>(os, ms.m);
        detail::put<std::int32_t>(os, ms.d);
        detail::put<std::int64_t>(os, ms.sample_count);
        detail::put(os, ms.p_design);
        detail::put<std::uint8_t>(os, ms.deterministic_channel ? 1 : 0);
        detail::put(os, ms.calL_min_eig);
        const auto fields = detail::moment_fields(const_cast<MomentSet&>(ms));
        detail::put<std::uint32_t>(os, fields.size());
        for (std::size_t f = 0; f < fields.size(); ++f) {
            const Matrix& M = *fields[f];
            detail::put<std::int64_t>(os, M.rows());
            detail::put<std::int64_t>(os, M.cols());
            for (Eigen::Index i = 0; i < M.rows(); ++i)
                for (Eigen::Index j = 0; j < M.cols(); ++j) detail::put(os, M(i, j));
        }
    }
    std::filesystem::rename(tmp, file);
}

/// Returns nothing when the file is absent or was written for another key/version.
inline std::optional<MomentSet> read_moment_cache(const std::filesystem::path& file, std::uint64_t key)
{
    std::ifstream is(file, std::ios::binary);
    if (!is) return std::nullopt;
    char magic[8];
    is.read(magic, 8);
    if (!is || std::memcmp(magic, "NSPCMOM", 8) != 0) return std::nullopt;
    if (detail::get<std::uint32_t>(is) != moment_cache_version) return std::nullopt;
    if (detail::get<std::uint64_t>(is) != key) return std::nullopt;
    MomentSet ms;
    ms.N = detail::get<std::int32_t>(is);
    ms.m = detail::get<std::int32_t>(is);
    ms.d = detail::get<std::int32_t>(is);
    ms.sample_count = detail::get<std::int64_t>(is);
    ms.p_design = detail::get<double>(is);
    ms.deterministic_channel = detail::get<std::uint8_t>(is) != 0;
    ms.calL_min_eig = detail::get<double>(is);
    auto fields = detail::moment_fields(ms);
    const auto count = detail::get<std::uint32_t>(is);
    if (count != fields.size()) return std::nullopt;
    for (std::size_t f = 0; f < count; ++f) {
        Matrix& M = *fields[f];
        const auto r = detail::get<std::int64_t>(is), c = detail::get<std::int64_t>(is);
        M.resize(r, c);
        for (Eigen::Index i = 0; i < r; ++i)
            for (Eigen::Index j = 0; j < c; ++j) M(i, j) = detail::get<double>(is);
    }
    return ms;
}

}  // namespace netspc
