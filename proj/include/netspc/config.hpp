#pragma once

// JSON scenario files. Matrices are nested row-major arrays; every optional
// field has a default that is written back out by to_json, so a resolved
// config documents every value a run actually used.

#include <netspc/errors.hpp>
#include <netspc/sim.hpp>

#include <json.hpp>

#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace netspc {

using Json = nlohmann::json;  // std::map backed: keys serialize in sorted order

/// Sweep over the experiment axes; each empty axis keeps the base value.
struct GridSpec
{
    std::vector<double> p;
    std::vector<double> noise_scale;
    std::vector<ProtocolKind> protocol;

    bool empty() const { return p.empty() && noise_scale.empty() && protocol.empty(); }
};

struct GridPoint
{
    ProtocolKind protocol = ProtocolKind::TP1;
    double p = 1.0;
    double noise_scale = 1.0;
    ScenarioConfig cfg;

    /// Stable directory-friendly label, e.g. "TP1_p0.5_s10".
    std::string label() const
    {
        std::ostringstream os;
        os << to_string(protocol) << "_p" << p << "_s" << noise_scale;
        return os.str();
    }
};

struct ScenarioFile
{
    ScenarioConfig cfg;
    GridSpec grid;
};

namespace detail {

class Reader
{
 public:
    Reader(const Json& j, std::string path) : j_(j), path_(std::move(path)) {}

    [[noreturn]] void fail(const std::string& what) const { throw ConfigError(path_ + ": " + what); }

    bool has(const std::string& key) const { return j_.is_object() && j_.contains(key); }

    Reader at(const std::string& key) const
    {
        if (!j_.is_object()) fail("expected an object");
        if (!j_.contains(key)) throw ConfigError(join(key) + ": missing required field");
        return Reader(j_.at(key), join(key));
    }

    double number() const
    {
        if (!j_.is_number()) fail("expected a number");
        return j_.get<double>();
    }
    double number(const std::string& key, double fallback) const { return has(key) ? at(key).number() : fallback; }

    long integer() const
    {
        if (!j_.is_number_integer()) fail("expected an integer");
        return j_.get<long>();
    }
    long integer(const std::string& key, long fallback) const { return has(key) ? at(key).integer() : fallback; }

    std::uint64_t seed(const std::string& key, std::uint64_t fallback) const
    {
        if (!has(key)) return fallback;
        const Reader r = at(key);
        if (!r.j_.is_number_unsigned() && !(r.j_.is_number_integer() && r.j_.get<long>() >= 0))
            r.fail("expected a non-negative integer");
        return r.j_.get<std::uint64_t>();
    }

    bool boolean(const std::string& key, bool fallback) const
    {
        if (!has(key)) return fallback;
        const Reader r = at(key);
        if (!r.j_.is_boolean()) r.fail("expected true or false");
        return r.j_.get<bool>();
    }

    std::string text() const
    {
        if (!j_.is_string()) fail("expected a string");
        return j_.get<std::string>();
    }
    std::string text(const std::string& key, const std::string& fallback) const { return has(key) ? at(key).text() : fallback; }

    std::vector<Reader> items() const
    {
        if (!j_.is_array()) fail("expected an array");
        std::vector<Reader> out;
        for (std::size_t i = 0; i < j_.size(); ++i) out.emplace_back(j_[i], path_ + "[" + std::to_string(i) + "]");
        return out;
    }

    Vector vector() const
    {
        const auto xs = items();
        Vector v(xs.size());
        for (std::size_t i = 0; i < xs.size(); ++i) v(i) = xs[i].number();
        return v;
    }

    Matrix matrix() const
    {
        const auto rows = items();
        if (rows.empty()) fail("matrix must have at least one row");
        const auto cols = rows.front().items().size();
        Matrix M(rows.size(), cols);
        for (std::size_t i = 0; i < rows.size(); ++i) {
            const Vector r = rows[i].vector();
            if (static_cast<std::size_t>(r.size()) != cols) rows[i].fail("ragged matrix row");
            M.row(i) = r.transpose();
        }
        return M;
    }

    const std::string& path() const { return path_; }

 private:
    std::string join(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

    const Json& j_;
    std::string path_;
};

inline Json matrix_json(const Matrix& M)
{
    Json rows = Json::array();
    for (Eigen::Index i = 0; i < M.rows(); ++i) {
        Json r = Json::array();
        for (Eigen::Index j = 0; j < M.cols(); ++j) r.push_back(M(i, j));
        rows.push_back(std::move(r));
    }
    return rows;
}

inline Json vector_json(const Vector& v)
{
    Json out = Json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v(i));
    return out;
}

inline ProtocolKind parse_protocol(const Reader& r)
{
    const std::string s = r.text();
    if (s == "TP1") return ProtocolKind::TP1;
    if (s == "TP2") return ProtocolKind::TP2;
    r.fail("expected \"TP1\" or \"TP2\"");
}

inline SaturationKind parse_saturation(const Reader& r)
{
    const std::string s = r.text();
    for (auto k : {SaturationKind::Sigmoid, SaturationKind::HardSat, SaturationKind::PiecewiseLinear})
        if (to_string(k) == s) return k;
    r.fail("unknown saturation kind '" + s + "'");
}

}  // namespace detail

inline ScenarioFile parse_scenario(const Json& j)
{
    using detail::Reader;
    const Reader root(j, "");
    if (!j.is_object()) throw ConfigError("config: top level must be an object");
    ScenarioFile out;
    ScenarioConfig& c = out.cfg;

    const Reader model = root.at("model");
    c.model.A = model.at("A").matrix();
    c.model.B = model.at("B").matrix();
    c.model.u_max = model.at("u_max").number();

    const Reader weights = root.at("weights");
    c.Q = weights.at("Q").matrix();
    c.Q_f = weights.at("Q_f").matrix();
    c.R = weights.at("R").matrix();

    const Reader horizon = root.at("horizon");
    c.N = static_cast<int>(horizon.at("N").integer());
    c.N_r = static_cast<int>(horizon.integer("N_r", c.N));

    c.x0 = root.at("x0").vector();
    if (root.has("protocol")) c.protocol = detail::parse_protocol(root.at("protocol"));

    const std::uint64_t noise_seed = root.has("seeds") ? root.at("seeds").seed("noise", 1) : 1;
    const std::uint64_t channel_seed = root.has("seeds") ? root.at("seeds").seed("channel", 2) : 2;
    c.moment_seed = root.has("seeds") ? root.at("seeds").seed("moments", 3) : 3;

    const Reader noise = root.at("noise");
    c.model.noise.covariance = noise.at("covariance").matrix();
    c.model.noise.seed = noise_seed;

    if (root.has("channel")) {
        const Reader ch = root.at("channel");
        const std::string kind = ch.text("kind", "bernoulli");
        if (kind == "bernoulli") {
            c.channel = ChannelSpec::bernoulli(ch.number("p", 1.0), channel_seed);
        } else if (kind == "gilbert_elliott") {
            c.channel = ChannelSpec::gilbert_elliott(ch.at("p1").number(), ch.at("p2").number(), ch.at("p12").number(),
                                                     ch.at("p21").number(), channel_seed);
            c.channel.start_good = ch.boolean("start_good", false);
        } else {
            ch.at("kind").fail("expected \"bernoulli\" or \"gilbert_elliott\"");
        }
    } else {
        c.channel = ChannelSpec::bernoulli(1.0, channel_seed);
    }

    if (root.has("saturation")) {
        const Reader s = root.at("saturation");
        if (s.has("kind")) c.sat.kind = detail::parse_saturation(s.at("kind"));
        c.sat.phi_max = s.number("phi_max", c.sat.phi_max);
    }

    c.mu = root.number("mu", 0.0);

    if (root.has("stability")) {
        const Reader s = root.at("stability");
        c.stability.enabled = s.boolean("enabled", false);
        c.stability.r = s.number("r", c.stability.r);
        c.stability.epsilon = s.number("epsilon", c.stability.epsilon);
        c.stability.zeta = s.number("zeta", c.stability.zeta);
    }

    if (root.has("simulation")) {
        const Reader s = root.at("simulation");
        c.T = static_cast<int>(s.integer("T", c.T));
        c.paths = static_cast<int>(s.integer("paths", c.paths));
        c.tol_sparse = s.number("tol_sparse", c.tol_sparse);
    }
    if (root.has("moments")) c.moment_samples = root.at("moments").integer("samples", c.moment_samples);

    if (root.has("solver")) {
        const Reader s = root.at("solver");
        QpSettings& q = c.qp;
        q.eps_abs = s.number("eps_abs", q.eps_abs);
        q.eps_rel = s.number("eps_rel", q.eps_rel);
        q.max_iter = static_cast<int>(s.integer("max_iter", q.max_iter));
        q.rho = s.number("rho", q.rho);
        q.alpha = s.number("alpha", q.alpha);
        q.sigma = s.number("sigma", q.sigma);
        q.adaptive_rho = s.boolean("adaptive_rho", q.adaptive_rho);
        q.polish = s.boolean("polish", q.polish);
    }

    if (root.has("grid")) {
        const Reader g = root.at("grid");
        if (g.has("p"))
            for (const auto& r : g.at("p").items()) out.grid.p.push_back(r.number());
        if (g.has("noise_scale"))
            for (const auto& r : g.at("noise_scale").items()) out.grid.noise_scale.push_back(r.number());
        if (g.has("protocol"))
            for (const auto& r : g.at("protocol").items()) out.grid.protocol.push_back(detail::parse_protocol(r));
        if (!out.grid.p.empty() && c.channel.kind != ChannelKind::BernoulliIid)
            g.at("p").fail("a p sweep needs the bernoulli channel");
    }

    c.validate();
    return out;
}

inline ScenarioFile parse_scenario_text(const std::string& text)
{
    Json j;
    try {
        j = Json::parse(text);
    } catch (const Json::parse_error& e) {
        throw ConfigError(std::string("config: invalid JSON: ") + e.what());
    }
    return parse_scenario(j);
}

inline ScenarioFile load_scenario(const std::string& file)
{
    std::ifstream is(file);
    if (!is) throw ConfigError("config: cannot open " + file);
    std::stringstream ss;
    ss << is.rdbuf();
    return parse_scenario_text(ss.str());
}

inline Json to_json(const ScenarioConfig& c, const GridSpec& grid = {})
{
    Json j;
    j["model"] = {{"A", detail::matrix_json(c.model.A)}, {"B", detail::matrix_json(c.model.B)}, {"u_max", c.model.u_max}};
    j["weights"] = {{"Q", detail::matrix_json(c.Q)}, {"Q_f", detail::matrix_json(c.Q_f)}, {"R", detail::matrix_json(c.R)}};
    j["horizon"] = {{"N", c.N}, {"N_r", c.N_r}};
    j["x0"] = detail::vector_json(c.x0);
    j["protocol"] = to_string(c.protocol);
    j["noise"] = {{"covariance", detail::matrix_json(c.model.noise.covariance)}};
    if (c.channel.kind == ChannelKind::BernoulliIid) {
        j["channel"] = {{"kind", "bernoulli"}, {"p", c.channel.p}};
    } else {
        j["channel"] = {{"kind", "gilbert_elliott"}, {"p1", c.channel.p1},   {"p2", c.channel.p2},
                        {"p12", c.channel.p12},      {"p21", c.channel.p21}, {"start_good", c.channel.start_good}};
    }
    j["seeds"] = {{"noise", c.model.noise.seed}, {"channel", c.channel.seed}, {"moments", c.moment_seed}};
    j["saturation"] = {{"kind", to_string(c.sat.kind)}, {"phi_max", c.sat.phi_max}};
    j["mu"] = c.mu;
    j["stability"] = {{"enabled", c.stability.enabled},
                      {"r", c.stability.r},
                      {"epsilon", c.stability.epsilon},
                      {"zeta", c.stability.zeta}};
    j["simulation"] = {{"T", c.T}, {"paths", c.paths}, {"tol_sparse", c.tol_sparse}};
    j["moments"] = {{"samples", c.moment_samples}};
    j["solver"] = {{"eps_abs", c.qp.eps_abs}, {"eps_rel", c.qp.eps_rel},         {"max_iter", c.qp.max_iter},
                   {"rho", c.qp.rho},         {"alpha", c.qp.alpha},             {"sigma", c.qp.sigma},
                   {"adaptive_rho", c.qp.adaptive_rho}, {"polish", c.qp.polish}};
    if (!grid.empty()) {
        Json g = Json::object();
        if (!grid.p.empty()) g["p"] = grid.p;
        if (!grid.noise_scale.empty()) g["noise_scale"] = grid.noise_scale;
        if (!grid.protocol.empty()) {
            Json ps = Json::array();
            for (auto k : grid.protocol) ps.push_back(to_string(k));
            g["protocol"] = ps;
        }
        j["grid"] = g;
    }
    return j;
}

/// Canonical text form: sorted keys, two-space indent, trailing newline.
inline std::string canonical(const Json& j) { return j.dump(2) + "\n"; }

/// Expands the grid in the fixed order protocol, noise scale, p. Noise scales
/// multiply the base covariance.
inline std::vector<GridPoint> expand_grid(const ScenarioConfig& base, const GridSpec& grid)
{
    const std::vector<ProtocolKind> protocols = grid.protocol.empty() ? std::vector<ProtocolKind>{base.protocol} : grid.protocol;
    const std::vector<double> scales = grid.noise_scale.empty() ? std::vector<double>{1.0} : grid.noise_scale;
    const std::vector<double> ps = grid.p.empty() ? std::vector<double>{base.p_design()} : grid.p;
    std::vector<GridPoint> out;
    for (auto proto : protocols)
        for (double s : scales)
            for (double p : ps) {
                GridPoint g;
                g.protocol = proto;
                g.noise_scale = s;
                g.p = p;
                g.cfg = base;
                g.cfg.protocol = proto;
                g.cfg.model.noise.covariance = s * base.model.noise.covariance;
                if (!grid.p.empty()) g.cfg.channel.p = p;
                g.cfg.validate();
                out.push_back(std::move(g));
            }
    return out;
}

}  // namespace netspc
