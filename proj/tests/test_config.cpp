#include <netspc/config.hpp>

#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

using namespace netspc;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p)
{
    std::ifstream in(p, std::ios::binary);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

/// Runs the CLI with output captured to a file; returns the exit status.
int cli(const std::string& args, std::string* output = nullptr)
{
    const fs::path log = fs::temp_directory_path() / "netspc_cli_test.log";
    const std::string cmd = std::string(NETSPC_CLI) + " " + args + " > " + log.string() + " 2>&1";
    const int raw = std::system(cmd.c_str());
    if (output) *output = slurp(log);
    return WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
}

fs::path scratch(const std::string& name)
{
    const fs::path dir = fs::temp_directory_path() / ("netspc_test_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

}  // namespace

TEST(Config, PaperFileParsesToThePaperScenario)
{
    const ScenarioFile f = load_scenario(NETSPC_PAPER_CONFIG);
    const ScenarioConfig ref = paper_scenario(0.9, 1.0);
    EXPECT_EQ(f.cfg.model.A, ref.model.A);
    EXPECT_EQ(f.cfg.model.B, ref.model.B);
    EXPECT_EQ(f.cfg.Q_f, ref.Q_f);
    EXPECT_EQ(f.cfg.x0, ref.x0);
    EXPECT_EQ(f.cfg.N, 4);
    EXPECT_EQ(f.cfg.N_r, 3);
    EXPECT_EQ(f.cfg.mu, 1000.0);
    EXPECT_TRUE(f.cfg.stability.enabled);
    EXPECT_EQ(expand_grid(f.cfg, f.grid).size(), 18u);
}

TEST(Config, CanonicalFormRoundTrips)
{
    const ScenarioFile f = load_scenario(NETSPC_PAPER_CONFIG);
    const std::string once = canonical(to_json(f.cfg, f.grid));
    const ScenarioFile again = parse_scenario_text(once);
    EXPECT_EQ(canonical(to_json(again.cfg, again.grid)), once);
}

TEST(Config, MissingFieldNamesItsPath)
{
    Json j = to_json(paper_scenario());
    j["weights"].erase("Q_f");
    try {
        parse_scenario(j);
        FAIL() << "expected ConfigError";
    } catch (const ConfigError& e) {
        EXPECT_NE(std::string(e.what()).find("weights.Q_f"), std::string::npos) << e.what();
    }
}

TEST(Config, RejectsInconsistentValues)
{
    Json j = to_json(paper_scenario());
    j["horizon"]["N_r"] = 7;
    EXPECT_THROW(parse_scenario(j), ConfigError);
    Json k = to_json(paper_scenario());
    k["x0"] = Json::array({1.0, 2.0});
    EXPECT_THROW(parse_scenario(k), ConfigError);
    EXPECT_THROW(parse_scenario_text("{not json"), ConfigError);
}

TEST(Config, GridOrderAndScaledCovariance)
{
    GridSpec g;
    g.protocol = {ProtocolKind::TP1, ProtocolKind::TP2};
    g.noise_scale = {0.1, 10.0};
    g.p = {0.5, 0.9};
    const auto cells = expand_grid(paper_scenario(), g);
    ASSERT_EQ(cells.size(), 8u);
    EXPECT_EQ(cells[0].label(), "TP1_p0.5_s0.1");
    EXPECT_EQ(cells[1].label(), "TP1_p0.9_s0.1");
    EXPECT_EQ(cells[7].label(), "TP2_p0.9_s10");
    EXPECT_EQ(cells[7].cfg.model.noise.covariance, Matrix(10.0 * Matrix::Identity(3, 3)));
    EXPECT_EQ(cells[7].cfg.channel.p, 0.9);
}

TEST(Cli, SmokeRunAndReport)
{
    const fs::path out = scratch("smoke");
    const std::string common = std::string(NETSPC_PAPER_CONFIG) + " --protocol TP2 --p 0.5 --noise-scale 1 --cache-dir " +
                               (out / "cache").string();
    ASSERT_EQ(cli("run " + common + " --paths 1 --steps 3 --baseline ce_mpc --out " + (out / "r").string()), 0);
    EXPECT_TRUE(fs::exists(out / "r" / "TP2_p0.5_s1" / "metrics.json"));
    EXPECT_TRUE(fs::exists(out / "r" / "resolved_config.json"));
    std::string text;
    EXPECT_EQ(cli("report " + (out / "r").string(), &text), 0) << text;
    EXPECT_TRUE(fs::exists(out / "r" / "fig4_msb.csv"));
    EXPECT_TRUE(fs::exists(out / "r" / "fig7_cost_difference.csv"));
}

TEST(Cli, MetricsAreByteIdenticalOnRerun)
{
    const fs::path out = scratch("rerun");
    const std::string args = "run " + std::string(NETSPC_PAPER_CONFIG) +
                             " --protocol TP1 --p 0.9 --noise-scale 0.1 --paths 2 --steps 6 --no-trace --cache-dir " +
                             (out / "cache").string() + " --out ";
    ASSERT_EQ(cli(args + (out / "a").string()), 0);
    ASSERT_EQ(cli(args + (out / "b").string()), 0);
    EXPECT_EQ(slurp(out / "a" / "TP1_p0.9_s0.1" / "metrics.json"), slurp(out / "b" / "TP1_p0.9_s0.1" / "metrics.json"));
    EXPECT_EQ(slurp(out / "a" / "metrics.csv"), slurp(out / "b" / "metrics.csv"));
}

TEST(Cli, BadConfigExitsWithOne)
{
    const fs::path dir = scratch("bad");
    std::ofstream(dir / "bad.json") << "{\"model\": {}}";
    std::string text;
    EXPECT_EQ(cli("run " + (dir / "bad.json").string() + " --out " + (dir / "r").string(), &text), 1);
    EXPECT_NE(text.find("model.A"), std::string::npos) << text;
    EXPECT_EQ(cli("run " + (dir / "absent.json").string()), 1);
    EXPECT_EQ(cli("frobnicate"), 1);
}

TEST(Cli, ReportOnEmptyDirectoryIsAUsageError)
{
    const fs::path dir = scratch("empty");
    std::string text;
    EXPECT_EQ(cli("report " + dir.string(), &text), 1);
    EXPECT_NE(text.find("usage"), std::string::npos) << text;
}

TEST(Cli, ReportNamesMissingCells)
{
    const fs::path out = scratch("partial");
    ASSERT_EQ(cli("run " + std::string(NETSPC_PAPER_CONFIG) + " --protocol TP1 --p 0.9 --noise-scale 1 --paths 1 --steps 3 --cache-dir " +
                  (out / "cache").string() + " --out " + (out / "r").string()),
              0);
    fs::remove(out / "r" / "TP1_p0.9_s1" / "metrics.json");
    std::string text;
    EXPECT_EQ(cli("report " + (out / "r").string(), &text), 1);
    EXPECT_NE(text.find("TP1_p0.9_s1"), std::string::npos) << text;
}

TEST(Cli, MomentsReportTheDeterministicShortcut)
{
    const fs::path out = scratch("moments");
    std::string text;
    EXPECT_EQ(cli("moments " + std::string(NETSPC_PAPER_CONFIG) + " --protocol TP1 --p 1 --noise-scale 1 --cache-dir " +
                      (out / "cache").string(),
                  &text),
              0);
    EXPECT_NE(text.find("deterministic channel shortcut"), std::string::npos) << text;
}
