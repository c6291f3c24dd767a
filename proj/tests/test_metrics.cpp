#include "squad/metrics.hpp"

#include "support.hpp"

#include <gtest/gtest.h>

#include <numeric>

using namespace squad;

namespace {

ExitCriterion crit(CriterionKind kind, double tau) {
    ExitCriterion c;
    c.kind = kind;
    c.tau_conf = tau;
    return c;
}

InferenceTrace trace_at(std::size_t exit, std::size_t pivot) {
    InferenceTrace t;
    t.decided_exit = exit;
    for (std::size_t e = 0; e <= exit; ++e) {
        StageRecord s;
        s.exit_index = e;
        s.outcome.pivot_rank = pivot;
        t.stages.push_back(s);
    }
    return t;
}

// Brute-force ECE straight from the definition.
double reference_ece(const std::vector<double>& conf, const std::vector<bool>& ok, std::size_t M) {
    double total = 0.0;
    for (std::size_t b = 0; b < M; ++b) {
        const double lo = static_cast<double>(b) / M, hi = static_cast<double>(b + 1) / M;
        double cs = 0.0, as = 0.0;
        std::size_t n = 0;
        for (std::size_t i = 0; i < conf.size(); ++i) {
            const bool in = (conf[i] > lo && conf[i] <= hi) || (b == 0 && conf[i] == 0.0);
            if (!in) continue;
            cs += conf[i];
            as += ok[i] ? 1.0 : 0.0;
            ++n;
        }
        if (n) total += static_cast<double>(n) / conf.size() * std::abs(as / n - cs / n);
    }
    return total;
}

}  // namespace

TEST(Ece, HandCaseTwoBins) {
    const std::vector<double> c{0.9, 0.8, 0.3, 0.2};
    const auto r = ece(c, {true, false, false, true}, 2);
    EXPECT_NEAR(r.ece, 0.30, 1e-12);
    ASSERT_EQ(r.bins.size(), 2u);
    EXPECT_EQ(r.bins[0].count, 2u);
    EXPECT_NEAR(r.bins[0].mean_confidence, 0.25, 1e-12);
    EXPECT_NEAR(r.bins[1].mean_confidence, 0.85, 1e-12);
    EXPECT_NEAR(r.bins[1].mean_accuracy, 0.5, 1e-12);
}

TEST(Ece, PerfectCalibration) {
    const std::vector<double> c(10, 1.0);
    EXPECT_EQ(ece(c, std::vector<bool>(10, true)).ece, 0.0);
}

TEST(Ece, SingleWrongSample) {
    const std::vector<double> c{0.6};
    EXPECT_NEAR(ece(c, {false}, 1).ece, 0.6, 1e-15);
}

TEST(Ece, BinEdges) {
    EXPECT_EQ(calibration_bin(0.0, 15), 0u);
    EXPECT_EQ(calibration_bin(1.0, 15), 14u);
    EXPECT_EQ(calibration_bin(0.5, 2), 0u);
    EXPECT_EQ(calibration_bin(0.5000001, 2), 1u);
    EXPECT_EQ(calibration_bin(1.0 / 15.0, 15), 0u);
}

TEST(Ece, MatchesReferenceOnRandomInputs) {
    std::mt19937_64 rng(29);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t n = 1 + trial % 40, M = 1 + trial % 20;
        std::vector<double> c(n);
        std::vector<bool> ok(n);
        for (std::size_t i = 0; i < n; ++i) {
            c[i] = trial % 3 == 0 ? std::round(u(rng) * 10) / 10 : u(rng);
            ok[i] = u(rng) < c[i];
        }
        const auto r = ece(c, ok, M);
        ASSERT_NEAR(r.ece, reference_ece(c, ok, M), 1e-12);
        std::size_t total = 0;
        for (const auto& b : r.bins) total += b.count;
        ASSERT_EQ(total, n);
        ASSERT_GE(r.ece, 0.0);
        ASSERT_LE(r.ece, 1.0);
    }
}

TEST(Ece, RejectsBadInput) {
    const std::vector<double> c{0.5, 1.5};
    EXPECT_THROW(ece(c, {true, true}), std::invalid_argument);
    const std::vector<double> d{0.5};
    EXPECT_THROW(ece(d, {true, false}), std::invalid_argument);
    EXPECT_THROW(ece(d, {true}, 0), std::invalid_argument);
}

TEST(Ppd, Fixtures) {
    EXPECT_EQ(ppd({{0, 1, 2}, {0, 1, 2}}), 0.0);
    EXPECT_DOUBLE_EQ(ppd({{0, 1}, {0, 0}}), 0.5);
    EXPECT_DOUBLE_EQ(ppd({{0}, {1}, {2}}), 1.0);
}

TEST(Ppd, InvariantUnderRelabeling) {
    std::mt19937_64 rng(31);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t M = 2 + trial % 4, N = 1 + trial % 12, C = 2 + trial % 4;
        std::vector<std::vector<std::size_t>> p(M, std::vector<std::size_t>(N));
        for (auto& row : p)
            for (auto& v : row) v = std::uniform_int_distribution<std::size_t>(0, C - 1)(rng);
        std::vector<std::size_t> perm(C);
        std::iota(perm.begin(), perm.end(), std::size_t{0});
        std::shuffle(perm.begin(), perm.end(), rng);
        auto q = p;
        for (auto& row : q)
            for (auto& v : row) v = perm[v];
        ASSERT_DOUBLE_EQ(ppd(p), ppd(q));
        std::shuffle(q.begin(), q.end(), rng);
        ASSERT_DOUBLE_EQ(ppd(p), ppd(q));
    }
}

TEST(Ppd, DisagreementMatrixIsSymmetric) {
    const auto d = disagreement_matrix({{0, 1, 1, 0}, {0, 0, 1, 0}, {1, 1, 1, 1}});
    EXPECT_EQ(d[0][0], 0.0);
    EXPECT_DOUBLE_EQ(d[0][1], 0.25);
    EXPECT_DOUBLE_EQ(d[1][0], 0.25);
    EXPECT_DOUBLE_EQ(d[0][2], 0.5);
}

TEST(Ppd, RejectsDegenerateInput) {
    EXPECT_THROW(ppd({{0, 1}}), std::invalid_argument);
    EXPECT_THROW(ppd({{0, 1}, {0}}), std::invalid_argument);
}

TEST(Diversity, PerExitFromTensor) {
    PredictionTensor p(2, 2, 2, 2, {1, 0, 0, 1, 1, 0, 1, 0, 1, 0, 0, 1, 0, 1, 0, 1});
    const auto d = diversity_report(p);
    ASSERT_EQ(d.ppd.size(), 2u);
    EXPECT_DOUBLE_EQ(d.ppd[0], 0.0);
    EXPECT_DOUBLE_EQ(d.ppd[1], 1.0);
}

TEST(Usage, AllAtFirstExit) {
    std::vector<InferenceTrace> t(4, trace_at(0, 1));
    const auto u = usage_report(t, 3, 3);
    EXPECT_EQ(u.exit_ratio, (std::vector<double>{1, 0, 0}));
    ASSERT_TRUE(u.pivot_ratio[0]);
    EXPECT_DOUBLE_EQ((*u.pivot_ratio[0])[1], 1.0);
    EXPECT_FALSE(u.pivot_ratio[1]);
    EXPECT_FALSE(u.pivot_ratio[2]);
}

TEST(Usage, EvenSplit) {
    const std::vector<InferenceTrace> t{trace_at(0, 1), trace_at(1, 2), trace_at(2, 1)};
    const auto u = usage_report(t, 3, 3);
    for (double r : u.exit_ratio) EXPECT_DOUBLE_EQ(r, 1.0 / 3.0);
    EXPECT_DOUBLE_EQ((*u.pivot_ratio[1])[2], 1.0);
    EXPECT_THROW(usage_report(std::vector<InferenceTrace>{}, 3, 3), std::invalid_argument);
}

TEST(Usage, CsvMarksEmptyRows) {
    std::vector<InferenceTrace> t(2, trace_at(0, 0));
    const std::string csv = usage_csv(usage_report(t, 2, 2));
    EXPECT_EQ(csv, "exit,exit_ratio,pivot_ratio\n0,1,1|0\n1,0,-\n");
}

TEST(Sweep, MonotoneAndDominant) {
    std::mt19937_64 rng(37);
    const Bundle b = fx::random_bundle(rng, 4, 3, 50, 3, 0.8);
    std::vector<ExitCriterion> grid;
    for (double tau : {0.3, 0.6, 0.95}) {
        grid.push_back(crit(CriterionKind::TTestLCB, tau));
        grid.push_back(crit(CriterionKind::MeanConfidence, tau));
    }
    const auto rows = sweep(b, grid);
    ASSERT_EQ(rows.size(), 6u);
    for (std::size_t i = 2; i < rows.size(); ++i) EXPECT_GE(rows[i].mean_fm, rows[i - 2].mean_fm);
    for (std::size_t i = 0; i < rows.size(); i += 2) EXPECT_GE(rows[i].mean_fm, rows[i + 1].mean_fm);
    EXPECT_TRUE(sweep(b, std::vector<ExitCriterion>{}).empty());
    const std::string csv = sweep_csv(rows);
    EXPECT_EQ(csv.substr(0, csv.find('\n')), "criterion,tau,alpha,accuracy,mean_fm,mean_fmt");
}

TEST(Calibration, PerExitAndPooled) {
    std::mt19937_64 rng(41);
    const Bundle b = fx::random_bundle(rng, 3, 3, 60, 3, 0.7);
    const auto r = infer_dataset(b, crit(CriterionKind::TTestLCB, 0.6));
    const auto cal = exit_calibration(r.traces, b.labels, 3, 15);
    ASSERT_EQ(cal.per_exit.size(), 3u);
    std::size_t decided = 0;
    for (const auto& c : cal.per_exit) decided += c.total;
    EXPECT_EQ(decided, 60u);
    EXPECT_EQ(cal.all.total, 60u);
    std::vector<double> conf;
    std::vector<bool> ok;
    for (const auto& t : r.traces) {
        conf.push_back(t.confidence);
        ok.push_back(t.predicted_class == b.labels.y[t.sample_index]);
    }
    EXPECT_NEAR(cal.all.ece, reference_ece(conf, ok, 15), 1e-12);
    const std::string csv = calibration_csv(cal);
    EXPECT_EQ(csv.substr(0, csv.find('\n')), "scope,bin,lower,upper,count,mean_confidence,mean_accuracy,ece");
}

TEST(TraceJson, CarriesStages) {
    std::mt19937_64 rng(43);
    const Bundle b = fx::random_bundle(rng, 3, 2, 1, 3);
    const auto t = infer_sample(b.probs, 0, b.costs, crit(CriterionKind::TTestLCB, 0.99));
    const auto j = trace_json(t);
    EXPECT_EQ(j["stages"].size(), t.stages.size());
    EXPECT_EQ(j["f_m"].get<double>(), t.f_m);
    EXPECT_EQ(j["forced"].get<bool>(), t.forced);
}
