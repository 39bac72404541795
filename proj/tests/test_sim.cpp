#include <netspc/sim.hpp>

#include <gtest/gtest.h>

using namespace netspc;

namespace {

ScenarioConfig short_run(double p, double noise, int T = 24, int paths = 3)
{
    ScenarioConfig c = paper_scenario(p, noise);
    c.T = T;
    c.paths = paths;
    c.moment_samples = 20000;
    return c;
}

double max_applied_gap(const SimTrace& a, const SimTrace& b)
{
    double gap = 0.0;
    for (std::size_t p = 0; p < a.paths.size(); ++p)
        for (std::size_t t = 0; t < a.paths[p].steps.size(); ++t)
            gap = std::max(gap, (a.paths[p].steps[t].u_applied - b.paths[p].steps[t].u_applied).cwiseAbs().maxCoeff());
    return gap;
}

PathTrace constant_path(const Vector& x, int steps)
{
    PathTrace p;
    for (int t = 0; t < steps; ++t) {
        StepRecord s;
        s.t = t;
        s.x = x;
        s.u_applied = Vector::Zero(1);
        p.steps.push_back(s);
    }
    p.x_final = x;
    return p;
}

}  // namespace

TEST(ClosedLoop, RestingPlantStaysAtRest)
{
    ScenarioConfig c = short_run(1.0, 0.0);
    c.x0 = Vector::Zero(3);
    const SimTrace tr = run_closed_loop(c);
    for (const auto& p : tr.paths) {
        for (const auto& s : p.steps) {
            EXPECT_LE(s.x.cwiseAbs().maxCoeff(), 1e-9);
            EXPECT_LE(s.u_applied.cwiseAbs().maxCoeff(), 1e-9);
        }
    }
}

TEST(ClosedLoop, ReliableNoiselessChannelMatchesCertaintyEquivalence)
{
    ScenarioConfig c = short_run(1.0, 0.0);
    c.stability.enabled = false;
    c.mu = 0.0;
    const SimTrace prop = run_closed_loop(c);
    const SimTrace ce = run_baseline(c, BaselineKind::CeMpc);
    EXPECT_LE(max_applied_gap(prop, ce), 1e-4 * c.model.u_max);
}

TEST(ClosedLoop, PacketizedEqualsCertaintyEquivalenceWithoutDrops)
{
    ScenarioConfig c = short_run(1.0, 1.0);
    const SimTrace ce = run_baseline(c, BaselineKind::CeMpc);
    const SimTrace pk = run_baseline(c, BaselineKind::PacketizedMpc);
    EXPECT_LE(max_applied_gap(ce, pk), 1e-12);
}

TEST(ClosedLoop, DisturbanceOnlyVariantMatchesUnregularizedProposalWithoutDrops)
{
    ScenarioConfig c = short_run(1.0, 1.0);
    c.stability.enabled = false;
    c.mu = 0.0;
    const SimTrace prop = run_closed_loop(c);
    const SimTrace dist = run_baseline(c, BaselineKind::SpcDisturbanceOnly);
    EXPECT_LE(max_applied_gap(prop, dist), 1e-4 * c.model.u_max);
}

TEST(ClosedLoop, ReconstructsDisturbancesAndRespectsTheInputBound)
{
    for (auto kind : {ProtocolKind::TP1, ProtocolKind::TP2}) {
        ScenarioConfig c = short_run(0.5, 10.0, 30, 2);
        c.protocol = kind;
        const SimTrace tr = run_closed_loop(c);
        for (const auto& p : tr.paths) {
            for (const auto& s : p.steps) {
                EXPECT_LE((s.w - s.w_reconstructed).cwiseAbs().maxCoeff(), 1e-12 * std::max(1.0, s.x.cwiseAbs().maxCoeff()));
                EXPECT_LE(s.u_applied.cwiseAbs().maxCoeff(), c.model.u_max + 1e-7);
                if (!s.nu && kind == ProtocolKind::TP1) EXPECT_EQ(s.u_applied.cwiseAbs().maxCoeff(), 0.0);
            }
        }
    }
}

TEST(ClosedLoop, ThreadCountDoesNotChangeResults)
{
    ScenarioConfig c = short_run(0.5, 1.0, 12, 4);
    const ControllerDesign des = make_design(c, BaselineKind::Proposed);
    const SimTrace a = run_closed_loop(c, des, 1);
    const SimTrace b = run_closed_loop(c, des, 3);
    for (std::size_t p = 0; p < a.paths.size(); ++p) {
        ASSERT_EQ(a.paths[p].steps.size(), b.paths[p].steps.size());
        for (std::size_t t = 0; t < a.paths[p].steps.size(); ++t) {
            EXPECT_EQ(a.paths[p].steps[t].x, b.paths[p].steps[t].x);
            EXPECT_EQ(a.paths[p].steps[t].nu, b.paths[p].steps[t].nu);
        }
    }
}

TEST(ClosedLoop, LengthIsPaddedToWholeCycles)
{
    ScenarioConfig c = short_run(0.9, 1.0, 10, 1);
    const SimTrace tr = run_closed_loop(c);
    EXPECT_EQ(tr.paths[0].steps.size(), 12u);
    EXPECT_EQ(tr.paths[0].solves.size(), 4u);
    EXPECT_EQ(metrics(tr).mean_square.size(), 13u);
}

TEST(ClosedLoop, StabilityNeedsCycleLengthEqualToReachabilityIndex)
{
    ScenarioConfig c = short_run(0.9, 1.0);
    c.N_r = 2;
    EXPECT_THROW(make_design(c, BaselineKind::Proposed), ConfigError);
    c.stability.enabled = false;
    EXPECT_NO_THROW(make_design(c, BaselineKind::Proposed));
}

TEST(ClosedLoop, PaperScenarioRunsCertified)
{
    ScenarioConfig c = short_run(0.1, 10.0, 60, 3);
    const Metrics m = metrics(run_closed_loop(c));
    EXPECT_EQ(m.uncertified_solves, 0);
    EXPECT_EQ(m.solves, 60);
    EXPECT_GT(m.msb, 0.0);
    EXPECT_LE(m.max_applied, 15.0 + 1e-7);
    EXPECT_GE(m.sparsity_pct, 0.0);
    EXPECT_LE(m.sparsity_pct, 100.0);
}

TEST(Metrics, EmptyAndZeroTraces)
{
    EXPECT_EQ(metrics(SimTrace{}).msb, 0.0);
    SimTrace tr;
    tr.paths.push_back(constant_path(Vector::Zero(3), 5));
    const Metrics m = metrics(tr);
    EXPECT_EQ(m.msb, 0.0);
    EXPECT_EQ(m.actuator_energy, 0.0);
    EXPECT_EQ(m.sparsity_pct, 0.0);
}

TEST(Metrics, ConstantUnitState)
{
    SimTrace tr;
    tr.paths.push_back(constant_path(Vector::Unit(3, 0), 6));
    const Metrics m = metrics(tr);
    EXPECT_DOUBLE_EQ(m.msb, 1.0);
    EXPECT_DOUBLE_EQ(m.msb_time_average, 1.0);
}

TEST(Metrics, PathMeanBeforeMaximum)
{
    SimTrace tr;
    tr.paths.push_back(constant_path(Vector::Constant(1, std::sqrt(2.0)), 4));
    tr.paths.push_back(constant_path(Vector::Constant(1, 2.0), 4));
    EXPECT_DOUBLE_EQ(metrics(tr).msb, 3.0);
}

TEST(Metrics, EnergySparsityAndCost)
{
    PathTrace p = constant_path(Vector::Zero(1), 4);
    p.steps[0].u_applied(0) = 2.0;
    p.steps[1].u_applied(0) = -1.0;
    p.steps[2].null_control = p.steps[3].null_control = true;
    p.steps[0].stage_cost = 8.0;
    SimTrace tr;
    tr.paths.push_back(p);
    const Metrics m = metrics(tr);
    EXPECT_DOUBLE_EQ(m.actuator_energy, 5.0 / 4.0);
    EXPECT_DOUBLE_EQ(m.sparsity_pct, 50.0);
    EXPECT_DOUBLE_EQ(m.avg_cost, 2.0);
    EXPECT_DOUBLE_EQ(m.max_applied, 2.0);
}

TEST(Baselines, NamesRoundTrip)
{
    for (auto k : {BaselineKind::Proposed, BaselineKind::CeMpc, BaselineKind::PacketizedMpc, BaselineKind::SpcDisturbanceOnly,
                   BaselineKind::DropoutOnly})
        EXPECT_EQ(parse_baseline(to_string(k)), k);
    EXPECT_THROW(parse_baseline("oracle"), ConfigError);
}
