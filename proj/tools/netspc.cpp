// netspc: scenario runner. Verbs: moments, run, report.
// Exit codes: 0 ok, 1 usage/config, 2 moment failure, 3 solver failure.

#include <netspc/config.hpp>
#include <netspc/sim.hpp>

#include <CLI11.hpp>

#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace netspc;

namespace {

constexpr int exit_ok = 0, exit_config = 1, exit_moments = 2, exit_solver = 3;

std::string num(double v)
{
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

void write_atomic(const fs::path& file, const std::string& content)
{
    if (file.has_parent_path()) fs::create_directories(file.parent_path());
    const fs::path tmp = file.string() + ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
        if (!os) throw Error("cannot write " + tmp.string());
        os << content;
        if (!os) throw Error("write failed for " + tmp.string());
    }
    fs::rename(tmp, file);
}

Json read_json(const fs::path& file)
{
    std::ifstream is(file);
    if (!is) throw ConfigError("cannot open " + file.string());
    try {
        return Json::parse(is);
    } catch (const Json::parse_error& e) {
        throw ConfigError(file.string() + ": " + e.what());
    }
}

std::string config_hash(const std::string& canonical_text)
{
    Fnv1a h;
    h.text(canonical_text);
    return key_hex(h.digest());
}

struct Overrides
{
    std::optional<int> paths, steps, jobs;
    std::optional<std::string> protocol;
    std::optional<double> mu, p, noise_scale;
    std::optional<std::uint64_t> seed;
};

void apply(const Overrides& o, ScenarioFile& f)
{
    ScenarioConfig& c = f.cfg;
    if (o.paths) c.paths = *o.paths;
    if (o.steps) c.T = *o.steps;
    if (o.mu) c.mu = *o.mu;
    if (o.seed) {
        c.model.noise.seed = *o.seed;
        c.channel.seed = *o.seed + 1;
    }
    if (o.protocol) {
        const Json j = *o.protocol;
        const ProtocolKind k = detail::parse_protocol(detail::Reader(j, "--protocol"));
        c.protocol = k;
        f.grid.protocol = {k};
    }
    if (o.p) {
        if (c.channel.kind != ChannelKind::BernoulliIid) throw ConfigError("--p: needs the bernoulli channel");
        c.channel.p = *o.p;
        f.grid.p = {*o.p};
    }
    if (o.noise_scale) f.grid.noise_scale = {*o.noise_scale};
    c.validate();
}

// ---------------------------------------------------------------------------
// moments

int cmd_moments(const std::string& config, const Overrides& o, const fs::path& cache_dir)
{
    ScenarioFile f = load_scenario(config);
    apply(o, f);
    for (const GridPoint& g : expand_grid(f.cfg, f.grid)) {
        const LiftedDynamics lifted = build_lifted(g.cfg.model, g.cfg.Q, g.cfg.Q_f, g.cfg.R, g.cfg.N);
        std::string key;
        const auto ms = compute_moments(g.cfg, lifted, g.cfg.protocol, g.cfg.p_design(), g.cfg.model.noise, cache_dir, &key);
        std::cout << g.label() << ": key " << key << ", samples " << ms->sample_count << ", min eig(calL) "
                  << num(ms->calL_min_eig) << (ms->deterministic_channel ? ", deterministic channel shortcut" : "") << "\n";
    }
    return exit_ok;
}

// ---------------------------------------------------------------------------
// run

std::string trace_csv(const SimTrace& trace, int d, int m)
{
    std::string out = "path,t,instant";
    auto cols = [&](const char* name, int n) {
        for (int i = 0; i < n; ++i) out += std::string(",") + name + std::to_string(i);
    };
    cols("x", d);
    cols("u", m);
    out += ",payload,nu";
    cols("ua", m);
    out += ",stage_cost,null_control";
    cols("w", d);
    out += "\n";
    for (const auto& p : trace.paths) {
        for (const auto& s : p.steps) {
            out += std::to_string(p.path) + "," + std::to_string(s.t) + "," + std::to_string(s.instant);
            for (int i = 0; i < d; ++i) out += "," + num(s.x(i));
            for (int i = 0; i < m; ++i) out += "," + num(s.u(i));
            out += "," + std::to_string(s.payload) + "," + std::to_string(s.nu);
            for (int i = 0; i < m; ++i) out += "," + num(s.u_applied(i));
            out += "," + num(s.stage_cost) + "," + (s.null_control ? "1" : "0");
            for (int i = 0; i < d; ++i) out += "," + num(s.w(i));
            out += "\n";
        }
    }
    return out;
}

/// Per-time path mean of |x_t|^2 with both running MSB readings.
std::string mean_square_csv(const Metrics& mt)
{
    std::string out = "t,mean_square,running_max,running_time_average\n";
    double run_max = 0.0, total = 0.0;
    for (std::size_t t = 0; t < mt.mean_square.size(); ++t) {
        if (t >= 1) {
            run_max = std::max(run_max, mt.mean_square[t]);
            total += mt.mean_square[t];
        }
        const double avg = t >= 1 ? total / static_cast<double>(t) : 0.0;
        out += std::to_string(t) + "," + num(mt.mean_square[t]) + "," + num(run_max) + "," + num(avg) + "\n";
    }
    return out;
}

Json metrics_json(const Metrics& mt, const ControllerDesign& des)
{
    Json j;
    j["msb"] = mt.msb;
    j["msb_time_average"] = mt.msb_time_average;
    j["actuator_energy"] = mt.actuator_energy;
    j["sparsity_pct"] = mt.sparsity_pct;
    j["avg_cost"] = mt.avg_cost;
    j["solves"] = mt.solves;
    j["uncertified_solves"] = mt.uncertified_solves;
    j["max_applied"] = mt.max_applied;
    j["moment_key"] = des.moment_key;
    j["mu"] = des.options.mu;
    j["stability"] = des.options.stability;
    if (des.options.stability) j["zeta"] = des.options.stability_spec.zeta;
    j["transmit"] = to_string(des.transmit);
    return j;
}

int cmd_run(const std::string& config, const Overrides& o, const std::vector<std::string>& baselines, const fs::path& cache_dir,
            const fs::path& out_dir, bool traces)
{
    ScenarioFile f = load_scenario(config);
    apply(o, f);
    std::vector<BaselineKind> kinds{BaselineKind::Proposed};
    for (const auto& b : baselines) {
        const BaselineKind k = parse_baseline(b);
        if (std::find(kinds.begin(), kinds.end(), k) == kinds.end()) kinds.push_back(k);
    }
    const int jobs = o.jobs.value_or(1);
    const std::vector<GridPoint> grid = expand_grid(f.cfg, f.grid);

    const Json resolved = to_json(f.cfg, f.grid);
    const std::string resolved_text = canonical(resolved);
    const std::string hash = config_hash(resolved_text);
    write_atomic(out_dir / "resolved_config.json", resolved_text);

    Json manifest;
    manifest["scenario"] = config;
    manifest["config_hash"] = hash;
    manifest["seeds"] = {{"noise", f.cfg.model.noise.seed}, {"channel", f.cfg.channel.seed}, {"moments", f.cfg.moment_seed}};
    manifest["output"] = out_dir.string();
    Json kinds_json = Json::array();
    for (auto k : kinds) kinds_json.push_back(to_string(k));
    manifest["runs"] = kinds_json;
    Json cells = Json::array();
    Json keys = Json::object();

    std::string summary = "protocol,p,noise_scale,kind,msb,msb_time_average,actuator_energy,sparsity_pct,avg_cost\n";
    for (const GridPoint& g : grid) {
        Json cell;
        cell["grid_point"] = {{"protocol", to_string(g.protocol)}, {"p", g.p}, {"noise_scale", g.noise_scale}};
        cell["config_hash"] = hash;
        const fs::path dir = out_dir / g.label();
        for (BaselineKind k : kinds) {
            const ControllerDesign des = make_design(g.cfg, k, cache_dir);
            const SimTrace trace = run_closed_loop(g.cfg, des, jobs);
            const Metrics mt = metrics(trace);
            cell["runs"][to_string(k)] = metrics_json(mt, des);
            keys[g.label() + "/" + to_string(k)] = des.moment_key;
            if (traces) write_atomic(dir / ("trace_" + to_string(k) + ".csv"), trace_csv(trace, g.cfg.model.d(), g.cfg.model.m()));
            write_atomic(dir / ("mean_square_" + to_string(k) + ".csv"), mean_square_csv(mt));
            summary += to_string(g.protocol) + "," + num(g.p) + "," + num(g.noise_scale) + "," + to_string(k) + "," + num(mt.msb) + "," +
                       num(mt.msb_time_average) + "," + num(mt.actuator_energy) + "," + num(mt.sparsity_pct) + "," +
                       num(mt.avg_cost) + "\n";
            std::cout << g.label() << " " << to_string(k) << ": msb " << mt.msb << ", energy " << mt.actuator_energy
                      << ", sparsity " << mt.sparsity_pct << "%, cost " << mt.avg_cost << "\n";
        }
        write_atomic(dir / "metrics.json", canonical(cell));
        cells.push_back(g.label());
    }
    manifest["cells"] = cells;
    manifest["moment_keys"] = keys;
    write_atomic(out_dir / "metrics.csv", summary);
    write_atomic(out_dir / "manifest.json", canonical(manifest));
    return exit_ok;
}

// ---------------------------------------------------------------------------
// report

struct Cell
{
    std::string protocol;
    double p = 0.0, noise_scale = 0.0;
    Json runs;
};

std::string metric_table(const std::vector<Cell>& cells, const std::string& metric)
{
    std::string out = "protocol,p,noise_scale," + metric + "\n";
    for (const auto& c : cells)
        out += c.protocol + "," + num(c.p) + "," + num(c.noise_scale) + "," + num(c.runs.at("proposed").at(metric).get<double>()) + "\n";
    return out;
}

int cmd_report(const fs::path& dir)
{
    if (!fs::is_directory(dir) || !fs::exists(dir / "manifest.json")) {
        std::cerr << "usage: netspc report <results-dir>; " << dir << " holds no completed run (manifest.json missing)\n";
        return exit_config;
    }
    const Json manifest = read_json(dir / "manifest.json");
    std::vector<Cell> cells;
    std::vector<std::string> missing;
    for (const auto& label : manifest.at("cells")) {
        const fs::path file = dir / label.get<std::string>() / "metrics.json";
        if (!fs::exists(file)) {
            missing.push_back(label.get<std::string>());
            continue;
        }
        const Json j = read_json(file);
        const Json& gp = j.at("grid_point");
        cells.push_back(Cell{gp.at("protocol").get<std::string>(), gp.at("p").get<double>(), gp.at("noise_scale").get<double>(),
                             j.at("runs")});
    }
    if (!missing.empty()) {
        std::string msg = "missing grid cells:";
        for (const auto& m : missing) msg += " " + m;
        throw ConfigError(msg);
    }

    const std::vector<std::pair<std::string, std::string>> figures{
        {"fig4_msb.csv", "msb"}, {"fig5_actuator_energy.csv", "actuator_energy"}, {"fig6_sparsity.csv", "sparsity_pct"}};
    for (const auto& [file, metric] : figures) {
        const std::string table = metric_table(cells, metric);
        write_atomic(dir / file, table);
        std::cout << "# " << file << "\n" << table;
    }

    // Cost gap of the matching certainty-equivalent baseline over the proposed
    // controller, in percent of the proposed cost.
    std::string fig7 = "protocol,p,noise_scale,baseline,proposed_cost,baseline_cost,pct_difference\n";
    bool any = false;
    for (const auto& c : cells) {
        for (const std::string b : {"ce_mpc", "packetized_mpc", "spc_disturbance_only", "dropout_only"}) {
            if (!c.runs.contains(b)) continue;
            any = true;
            const double prop = c.runs.at("proposed").at("avg_cost").get<double>();
            const double base = c.runs.at(b).at("avg_cost").get<double>();
            fig7 += c.protocol + "," + num(c.p) + "," + num(c.noise_scale) + "," + b + "," + num(prop) + "," + num(base) + "," +
                    num(100.0 * (base - prop) / prop) + "\n";
        }
    }
    if (any) {
        write_atomic(dir / "fig7_cost_difference.csv", fig7);
        std::cout << "# fig7_cost_difference.csv\n" << fig7;
    }
    return exit_ok;
}

}  // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Sparse stochastic predictive control over erasure channels"};
    app.require_subcommand(1);

    Overrides o;
    std::string config;
    std::string cache_dir = ".netspc-cache";
    std::string out_dir = "results";
    std::vector<std::string> baselines;
    bool no_trace = false;

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("config", config, "scenario JSON")->required();
        sub->add_option("--protocol", o.protocol, "restrict to TP1 or TP2");
        sub->add_option("--p", o.p, "single success probability instead of the grid axis");
        sub->add_option("--noise-scale", o.noise_scale, "single covariance multiplier instead of the grid axis");
        sub->add_option("--seed", o.seed, "noise seed; the channel uses seed + 1");
        sub->add_option("--cache-dir", cache_dir, "moment cache directory");
    };

    CLI::App* moments = app.add_subcommand("moments", "estimate and cache the moment matrices");
    add_common(moments);

    CLI::App* run = app.add_subcommand("run", "closed-loop simulation over the scenario grid");
    add_common(run);
    run->add_option("--paths", o.paths, "sample paths per grid point")->check(CLI::PositiveNumber);
    run->add_option("--steps", o.steps, "simulation length T")->check(CLI::PositiveNumber);
    run->add_option("--mu", o.mu, "sparsity weight")->check(CLI::NonNegativeNumber);
    run->add_option("--baseline", baselines, "also run ce_mpc, packetized_mpc, spc_disturbance_only or dropout_only");
    run->add_option("--out", out_dir, "output directory");
    run->add_option("--jobs", o.jobs, "worker threads")->check(CLI::PositiveNumber);
    run->add_flag("--no-trace", no_trace, "skip per-step trace CSVs");

    std::string report_dir;
    CLI::App* report = app.add_subcommand("report", "tables mirroring the figure data of a completed run");
    report->add_option("dir", report_dir, "results directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? exit_ok : exit_config;
    }

    try {
        if (moments->parsed()) return cmd_moments(config, o, cache_dir);
        if (run->parsed()) return cmd_run(config, o, baselines, cache_dir, out_dir, !no_trace);
        if (report->parsed()) return cmd_report(report_dir);
    } catch (const IndefiniteL& e) {
        std::cerr << "moment failure: " << e.what() << "\n";
        return exit_moments;
    } catch (const SolverError& e) {
        std::cerr << "solver failure: " << e.what() << "\n";
        return exit_solver;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return exit_config;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return exit_config;
    }
    return exit_config;
}
