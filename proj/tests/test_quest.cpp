#include "squad/quest.hpp"

#include "support.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

using namespace squad;

namespace {

ToySupernet synthetic_net(const std::vector<std::vector<std::pair<double, double>>>& edges) {
    ToySupernet net;
    for (const auto& e : edges) {
        std::vector<SupernetOp> ops;
        for (auto [macs, quality] : e) ops.push_back({0, macs, quality});
        net.edges.push_back(ops);
    }
    return net;
}

std::vector<double> random_vector(std::mt19937_64& rng, std::size_t n, double scale = 1.0) {
    std::normal_distribution<double> g(0.0, scale);
    std::vector<double> v(n);
    for (auto& x : v) x = g(rng);
    return v;
}

LogPosterior standard_normal() {
    return [](std::span<const double> x, std::span<double> grad) {
        double lp = 0.0;
        for (std::size_t i = 0; i < x.size(); ++i) {
            lp -= 0.5 * x[i] * x[i];
            grad[i] = -x[i];
        }
        return lp;
    };
}

}  // namespace

TEST(Concrete, SumsToOneAndPositive) {
    std::mt19937_64 rng(53);
    for (int trial = 0; trial < 200; ++trial) {
        const auto logits = random_vector(rng, 2 + trial % 6, 3.0);
        const double T = 0.05 + (trial % 10) * 0.3;
        const auto z = gumbel_sample(logits, T, trial);
        double sum = 0.0;
        for (double v : z) {
            EXPECT_GT(v, 0.0);
            sum += v;
        }
        EXPECT_NEAR(sum, 1.0, 1e-12);
    }
}

TEST(Concrete, DeterministicGivenSeed) {
    const std::vector<double> a{0.1, -0.4, 0.7};
    EXPECT_EQ(gumbel_sample(a, 0.5, 99), gumbel_sample(a, 0.5, 99));
    EXPECT_NE(gumbel_sample(a, 0.5, 99), gumbel_sample(a, 0.5, 100));
}

TEST(Concrete, LowTemperatureIsNearlyOneHot) {
    std::mt19937_64 rng(59);
    for (int trial = 0; trial < 50; ++trial) {
        const auto logits = random_vector(rng, 4);
        const auto noise = gumbel_noise(4, rng);
        const auto z = concrete_softmax(logits, noise, 1e-3);
        std::size_t best = 0;
        for (std::size_t k = 1; k < 4; ++k)
            if (logits[k] + noise[k] > logits[best] + noise[best]) best = k;
        EXPECT_GE(z[best], 0.999);
    }
}

TEST(Concrete, SymmetricLogitsGiveUniformArgmax) {
    const std::size_t K = 4, draws = 10000;
    const std::vector<double> logits(K, 0.3);
    std::mt19937_64 rng(61);
    std::vector<std::size_t> hits(K, 0);
    for (std::size_t i = 0; i < draws; ++i) {
        const auto z = concrete_softmax(logits, gumbel_noise(K, rng), 1.0);
        ++hits[static_cast<std::size_t>(std::max_element(z.begin(), z.end()) - z.begin())];
    }
    const double p = 1.0 / K, sd = std::sqrt(draws * p * (1 - p));
    for (auto h : hits) EXPECT_NEAR(static_cast<double>(h), draws * p, 3 * sd);
}

TEST(Concrete, RejectsBadInput) {
    const std::vector<double> a{0.0, 1.0}, n{0.0, 0.0};
    EXPECT_THROW(concrete_softmax(a, n, 0.0), std::invalid_argument);
    const std::vector<double> bad{0.0, std::nan("")};
    EXPECT_THROW(concrete_softmax(bad, n, 1.0), std::invalid_argument);
}

TEST(MacsPenalty, ExpectationExamples) {
    const ToySupernet one = synthetic_net({{{40, 0}, {5, 0}}});
    EXPECT_EQ(macs_penalty(one, {{1.0, 0.0}}), 40.0);
    const ToySupernet two = synthetic_net({{{10, 0}, {30, 0}}});
    EXPECT_DOUBLE_EQ(macs_penalty(two, {{0.5, 0.5}}), 20.0);
    EXPECT_THROW(macs_penalty(two, {{1.0, 0.0, 0.0}}), std::invalid_argument);
    EXPECT_THROW(macs_penalty(two, {}), std::invalid_argument);
}

TEST(MacsPenalty, GradientThroughConcreteMatchesFiniteDifferences) {
    std::mt19937_64 rng(67);
    for (int trial = 0; trial < 25; ++trial) {
        const std::size_t ops = 2 + trial % 4;
        std::vector<std::pair<double, double>> edge;
        for (std::size_t k = 0; k < ops; ++k) edge.push_back({10.0 + 90.0 * (k + trial % 3), 0.0});
        const ToySupernet net = synthetic_net({edge});
        const auto logits = random_vector(rng, ops);
        const auto noise = gumbel_noise(ops, rng);
        const double T = 0.3 + 0.2 * (trial % 5);
        const auto z = concrete_softmax(logits, noise, T);
        std::vector<double> macs;
        for (const auto& op : net.edges[0]) macs.push_back(op.macs);
        const auto analytic = concrete_vjp(z, T, macs);
        const auto numeric = fx::numeric_gradient(
            [&](const std::vector<double>& a) { return macs_penalty(net, {concrete_softmax(a, noise, T)}); }, logits,
            1e-4);
        EXPECT_LE(fx::max_relative_error(analytic, numeric), 1e-5) << "trial " << trial;
    }
}

TEST(Kl, UniformIsZeroAndGradientMatches) {
    EXPECT_NEAR(kl_to_uniform({{0.0, 0.0, 0.0}, {2.0, 2.0}}), 0.0, 1e-15);
    std::mt19937_64 rng(71);
    for (int trial = 0; trial < 20; ++trial) {
        const auto a = random_vector(rng, 2 + trial % 4, 2.0);
        EXPECT_GT(kl_to_uniform({a}), 0.0);
        const auto g = kl_to_uniform_gradient({a})[0];
        const auto n = fx::numeric_gradient([](const std::vector<double>& x) { return kl_to_uniform({x}); }, a, 1e-4);
        EXPECT_LE(fx::max_relative_error(g, n), 1e-5);
    }
}

TEST(Elbo, LargeBetaPullsTowardsUniform) {
    const ToySupernet net = synthetic_net({{{10, 0.0}, {20, 1.0}, {30, 2.0}}, {{5, 0.5}, {5, 0.0}}});
    const QualityObjective nll(net);
    ElboConfig cfg;
    cfg.beta_kl = 1000.0;
    cfg.eta = 1e-4;
    cfg.cost_weight = 0.0;
    cfg.steps = 2000;
    const auto fit = fit_elbo(ArchParams{{{3.0, -1.0, 0.0}, {1.0, -2.0}}, 1.0}, net, nll, cfg);
    EXPECT_LT(kl_to_uniform(fit.phi.alpha), 1e-3);
    EXPECT_LT(fit.history.back().kl, fit.history.front().kl);
}

TEST(Elbo, DominantOpCollectsMass) {
    const ToySupernet net = synthetic_net({{{10, 1.0}, {10, 0.0}, {10, 1.0}}});
    const QualityObjective nll(net);
    ElboConfig cfg;
    cfg.beta_kl = 0.0;
    cfg.cost_weight = 0.0;
    cfg.steps = 500;
    const auto fit = fit_elbo(ArchParams{net.uniform_logits(), 1.0}, net, nll, cfg);
    EXPECT_GE(softmax(fit.phi.alpha[0])[1], 0.95);
    ASSERT_EQ(fit.temperatures.size(), 500u);
    EXPECT_DOUBLE_EQ(fit.temperatures.front(), cfg.temp_start);
    EXPECT_DOUBLE_EQ(fit.temperatures.back(), cfg.temp_end);
}

TEST(Elbo, CostWeightFavoursCheapOps) {
    const ToySupernet net = synthetic_net({{{10, 0.0}, {1000, 0.0}}});
    const QualityObjective nll(net);
    ElboConfig cfg;
    cfg.beta_kl = 0.0;
    cfg.cost_weight = 1e-2;
    cfg.steps = 300;
    const auto fit = fit_elbo(ArchParams{net.uniform_logits(), 1.0}, net, nll, cfg);
    EXPECT_GT(softmax(fit.phi.alpha[0])[0], 0.95);
}

TEST(Elbo, NonFiniteLossAborts) {
    const ToySupernet net = synthetic_net({{{10, std::numeric_limits<double>::infinity()}, {10, 0.0}}});
    const QualityObjective nll(net);
    ArchParams phi{net.uniform_logits(), 1.0};
    EXPECT_THROW(elbo_step(phi, net, nll, ElboConfig{}, 1), TrainingError);
}

TEST(Supernet, WidthSupernetMacs) {
    const auto net = width_supernet(8, 3, 2, {4, 16});
    ASSERT_EQ(net.edges.size(), 2u);
    EXPECT_EQ(net.edges[0][0].macs, 8 * 4 + 4 * 3);
    EXPECT_EQ(net.edges[1][1].macs, 16 * 16 + 16 * 3);
    EXPECT_EQ(net.dimension(), 4u);
    EXPECT_EQ(net.learner_spec({1, 0}).widths, (std::vector<std::size_t>{16, 4}));
    EXPECT_THROW(width_supernet(8, 3, 2, {4}), std::invalid_argument);
    const auto flat = ToySupernet::flatten(net.one_hot({1, 0}));
    EXPECT_EQ(flat, (std::vector<double>{0, 1, 1, 0}));
    EXPECT_EQ(net.unflatten(flat), net.one_hot({1, 0}));
}

TEST(Supernet, ArchitectureGradientMatchesFiniteDifferences) {
    SyntheticTask t;
    t.classes = 3;
    t.dim = 4;
    t.train_size = 40;
    const Dataset d = gen_task(t);
    const auto net = width_supernet(4, 3, 3, {2, 3, 5});
    MixedOpSupernet sup(net, 13);
    sup.set_validation(d.x_train, d.y_train);
    std::mt19937_64 rng(73);
    for (int trial = 0; trial < 20; ++trial) {
        ArchSample z;
        for (const auto& e : net.edges) z.push_back(gumbel_sample(random_vector(rng, e.size()), 0.7, trial));
        ArchSample dz;
        sup.evaluate(z, &dz);
        const auto numeric = fx::numeric_gradient(
            [&](const std::vector<double>& flat) { return sup.evaluate(net.unflatten(flat), nullptr); },
            ToySupernet::flatten(z), 1e-4);
        EXPECT_LE(fx::max_relative_error(ToySupernet::flatten(dz), numeric), 1e-5);
    }
}

TEST(Supernet, WeightGradientMatchesFiniteDifferences) {
    SyntheticTask t;
    t.dim = 3;
    t.train_size = 12;
    const Dataset d = gen_task(t);
    const auto net = width_supernet(3, 3, 2, {2, 4});
    MixedOpSupernet sup(net, 17);
    const ArchSample z{{0.3, 0.7}, {0.6, 0.4}};
    MixedOpSupernet::WeightGrads g;
    sup.forward_backward(d.x_train, d.y_train, z, nullptr, &g);
    std::vector<double> analytic;
    auto push = [&](const auto& m) { analytic.insert(analytic.end(), m.data(), m.data() + m.size()); };
    for (std::size_t e = 0; e < 2; ++e) {
        for (std::size_t k = 0; k < 2; ++k) {
            push(g.dW[e][k]);
            push(g.db[e][k]);
        }
        push(g.dH[e]);
        push(g.dc[e]);
    }
    MixedOpSupernet probe = sup;
    const auto numeric = fx::numeric_gradient(
        [&](const std::vector<double>& p) {
            probe.set_parameters(p);
            return probe.forward_backward(d.x_train, d.y_train, z, nullptr, nullptr);
        },
        sup.parameters(), 1e-4);
    EXPECT_LE(fx::max_relative_error(analytic, numeric), 1e-4);
}

TEST(Supernet, WarmupReducesLoss) {
    SyntheticTask t;
    const Dataset d = gen_task(t);
    MixedOpSupernet sup(width_supernet(8, 3, 2, {4, 8}), 3);
    WarmupConfig cfg;
    cfg.epochs = 10;
    const auto curve = sup.warm_up(d.x_train, d.y_train, cfg);
    ASSERT_EQ(curve.size(), 10u);
    EXPECT_LT(curve.back(), 0.5 * curve.front());
}

TEST(Svgd, DeltaMinusOneRemovesRepulsion) {
    std::mt19937_64 rng(79);
    auto swarm = init_swarm(std::vector<double>(3, 0.0), 6, 1.0, 5);
    std::vector<std::vector<double>> grads;
    for (std::size_t i = 0; i < swarm.size(); ++i) grads.push_back(random_vector(rng, 3));
    const double h = median_bandwidth(swarm);
    const auto off = stein_direction(swarm, grads, -1.0, h);
    const auto plain = stein_direction(swarm, grads, 0.0, h);
    for (std::size_t i = 0; i < swarm.size(); ++i) {
        for (std::size_t d = 0; d < 3; ++d) {
            EXPECT_EQ(off.repulsive[i][d], 0.0);
            EXPECT_EQ(off.total[i][d], off.driving[i][d]);
            EXPECT_EQ(off.driving[i][d], plain.driving[i][d]);
        }
    }
    // Hand evaluation of both terms for particle 0.
    for (std::size_t d = 0; d < 3; ++d) {
        double drive = 0.0, repel = 0.0;
        for (std::size_t j = 0; j < swarm.size(); ++j) {
            double sq = 0.0;
            for (std::size_t c = 0; c < 3; ++c)
                sq += std::pow(swarm[0].position[c] - swarm[j].position[c], 2);
            const double k = std::exp(-sq / h);
            drive += k * grads[j][d] / swarm.size();
            repel += 2.0 / h * (swarm[0].position[d] - swarm[j].position[d]) * k / swarm.size();
        }
        EXPECT_NEAR(plain.driving[0][d], drive, 1e-14);
        EXPECT_NEAR(plain.repulsive[0][d], repel, 1e-14);
    }
}

TEST(Svgd, RepulsionSeparatesNearbyPair) {
    std::vector<Particle> swarm{{{0.0, 0.0}, {0.0, 0.0}}, {{1e-6, 0.0}, {0.0, 0.0}}};
    SvgdConfig cfg;
    cfg.delta = 0.0;
    const LogPosterior flat = [](std::span<const double>, std::span<double> g) {
        std::fill(g.begin(), g.end(), 0.0);
        return 0.0;
    };
    svgd_rd_step(swarm, flat, cfg);
    EXPECT_GT(std::abs(swarm[1].position[0] - swarm[0].position[0]), 1e-6);
}

TEST(Svgd, StandardNormalMoments) {
    SvgdConfig cfg;
    cfg.delta = 0.0;
    auto swarm = init_swarm(std::vector<double>{2.0}, 32, 0.5, 83);
    for (int it = 0; it < 2000; ++it) svgd_rd_step(swarm, standard_normal(), cfg);
    double mean = 0.0, var = 0.0;
    for (const auto& p : swarm) mean += p.position[0] / 32.0;
    for (const auto& p : swarm) var += std::pow(p.position[0] - mean, 2) / 32.0;
    EXPECT_LE(std::abs(mean), 0.1);
    EXPECT_LE(std::abs(var - 1.0), 0.15);
}

TEST(Svgd, AmplifiedRepulsionCoversBothModes) {
    const LogPosterior bimodal = [](std::span<const double> x, std::span<double> g) {
        const double a = std::exp(-0.5 * std::pow(x[0] - 3.0, 2)), b = std::exp(-0.5 * std::pow(x[0] + 3.0, 2));
        g[0] = (-(x[0] - 3.0) * a - (x[0] + 3.0) * b) / (a + b);
        return std::log(a + b);
    };
    SvgdConfig cfg;
    cfg.delta = 1.0;
    cfg.step_size = 0.05;
    auto swarm = init_swarm(std::vector<double>{0.5}, 16, 0.5, 89);
    for (int it = 0; it < 1000; ++it) svgd_rd_step(swarm, bimodal, cfg);
    std::size_t right = 0;
    for (const auto& p : swarm) right += p.position[0] > 0.0;
    EXPECT_GT(right, 0u);
    EXPECT_LT(right, swarm.size());
}

TEST(Svgd, Preconditions) {
    auto one = init_swarm(std::vector<double>{0.0}, 1, 1.0, 1);
    EXPECT_THROW(svgd_rd_step(one, standard_normal(), SvgdConfig{}), std::invalid_argument);
    auto two = init_swarm(std::vector<double>{0.0}, 2, 1.0, 1);
    const LogPosterior bad = [](std::span<const double>, std::span<double> g) {
        g[0] = std::nan("");
        return 0.0;
    };
    EXPECT_THROW(svgd_rd_step(two, bad, SvgdConfig{}), TrainingError);
    EXPECT_EQ(median_bandwidth(init_swarm(std::vector<double>{1.0}, 4, 0.0, 1)), 1.0);
}

TEST(Surrogate, GradientMatchesFiniteDifferences) {
    const ToySupernet net = synthetic_net({{{10, 0.3}, {40, -0.2}, {20, 0.1}}, {{5, 1.0}, {50, 0.0}}});
    const QualityObjective nll(net);
    const ArchSample center{{0.5, 0.0, -0.5}, {0.2, 0.1}};
    const auto log_p = surrogate_log_posterior(net, nll, center, 0.7, 1e-2);
    std::mt19937_64 rng(97);
    for (int trial = 0; trial < 20; ++trial) {
        const auto x = random_vector(rng, 5);
        std::vector<double> g(5);
        log_p(x, g);
        std::vector<double> scratch(5);
        const auto n = fx::numeric_gradient([&](const std::vector<double>& v) { return log_p(v, scratch); }, x, 1e-4);
        EXPECT_LE(fx::max_relative_error(g, n), 1e-5);
    }
}

TEST(Select, CollapsedSwarmWarns) {
    const ToySupernet net = synthetic_net({{{1, 0.0}, {1, 1.0}}, {{1, 0.5}, {1, 0.0}}});
    const QualityObjective nll(net);
    std::vector<Particle> swarm(5, Particle{{2.0, 0.0, 0.0, 1.0}, {}});
    const auto s = select_ensemble(swarm, net, nll, 3);
    EXPECT_EQ(s.architectures.size(), 1u);
    EXPECT_FALSE(s.warning.empty());
}

TEST(Select, DistinctArchitecturesSortedByLoss) {
    const ToySupernet net = synthetic_net({{{1, 0.0}, {1, 1.0}}, {{1, 0.5}, {1, 0.0}}});
    const QualityObjective nll(net);
    std::vector<Particle> swarm{{{0, 1, 1, 0}, {}}, {{1, 0, 0, 1}, {}}, {{1, 0, 1, 0}, {}}, {{1, 0, 0, 1}, {}}};
    const auto s = select_ensemble(swarm, net, nll, 3);
    ASSERT_EQ(s.architectures.size(), 3u);
    EXPECT_TRUE(s.warning.empty());
    EXPECT_EQ(s.architectures[0], (Architecture{0, 1}));
    EXPECT_TRUE(std::is_sorted(s.nll.begin(), s.nll.end()));
    EXPECT_EQ(select_ensemble(swarm, net, nll, 2).architectures.size(), 2u);
}

TEST(Search, SmallRunIsDeterministicAndComplete) {
    SyntheticTask t;
    t.train_size = 120;
    t.test_size = 30;
    const Dataset d = gen_task(t);
    SearchConfig cfg;
    cfg.exits = 2;
    cfg.warmup.epochs = 3;
    cfg.elbo.steps = 20;
    cfg.svgd.iterations = 20;
    cfg.train.epochs = 3;
    const auto a = run_search(d, cfg);
    const auto b = run_search(d, cfg);
    ASSERT_EQ(a.learners.size(), 3u);
    EXPECT_EQ(a.members.size(), 3u);
    for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(a.learners[i].parameters(), b.learners[i].parameters());
    EXPECT_EQ(a.selection.architectures, b.selection.architectures);
    EXPECT_EQ(a.trajectory.size(), 2u * cfg.svgd.particles);
    EXPECT_EQ(a.elbo.history.size(), 20u);
}

TEST(Search, ErrorsNameTheStage) {
    SyntheticTask t;
    t.train_size = 60;
    const Dataset d = gen_task(t);
    SearchConfig cfg;
    cfg.op_widths = {4};
    try {
        run_search(d, cfg);
        FAIL() << "expected an error";
    } catch (const std::exception& e) {
        EXPECT_NE(std::string(e.what()).find("supernet"), std::string::npos) << e.what();
    }
}
