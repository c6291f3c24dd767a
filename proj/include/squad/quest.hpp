#pragma once

#include "squad/toytrain.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace squad {

/// Per-edge vectors over the operation set (logits, relaxed one-hots, gradients).
using ArchSample = std::vector<std::vector<double>>;

/// Chosen operation index per edge.
using Architecture = std::vector<std::size_t>;

struct SupernetOp {
    /// Output width of the block this op builds (0 for purely synthetic ops).
    std::size_t width = 0;
    double macs = 0.0;
    /// Synthetic loss contribution, used by QualityObjective.
    double quality = 0.0;
};

/// A chain of decision sites, one per early-exit block, each offering |O| >= 2 ops.
struct ToySupernet {
    std::vector<std::vector<SupernetOp>> edges;
    std::size_t input_dim = 0;
    std::size_t classes = 0;

    std::size_t edge_count() const { return edges.size(); }
    /// Total number of logits (sum of |O| over edges).
    std::size_t dimension() const;
    std::size_t max_width() const;
    void validate() const;

    ArchSample unflatten(std::span<const double> flat) const;
    static std::vector<double> flatten(const ArchSample& a);
    ArchSample uniform_logits() const;
    ArchSample one_hot(const Architecture& arch) const;
    /// Block widths of the discrete early-exit learner an architecture describes.
    LearnerSpec learner_spec(const Architecture& arch) const;
};

/// Each edge e offers one op per candidate width. In the supernet every op
/// reads the zero-padded max-width state, so op k at edge e costs
/// in_e * w_k + w_k * classes MACs (in_0 = input_dim, in_e = max width).
ToySupernet width_supernet(std::size_t input_dim, std::size_t classes, std::size_t exits,
                           const std::vector<std::size_t>& widths);

struct ArchParams {
    ArchSample alpha;
    double temperature = 1.0;
};

// ---------------------------------------------------------------------------
// Concrete (Gumbel-softmax) relaxation
// ---------------------------------------------------------------------------

/// G = -log(-log U), U ~ Uniform(0,1).
std::vector<double> gumbel_noise(std::size_t count, std::mt19937_64& rng);

/// softmax((logits + noise) / temperature). Throws std::invalid_argument on
/// non-finite logits or a non-positive temperature.
std::vector<double> concrete_softmax(std::span<const double> logits, std::span<const double> noise,
                                     double temperature);

/// Vector-Jacobian product of concrete_softmax at fixed noise: maps dL/dZ to dL/dlogits.
std::vector<double> concrete_vjp(std::span<const double> z, double temperature, std::span<const double> upstream);

/// One relaxed sample with noise drawn from `seed`.
std::vector<double> gumbel_sample(std::span<const double> logits, double temperature, std::uint64_t seed);

/// sum over edges and ops of MACs * Z. Throws std::invalid_argument on shape mismatch.
double macs_penalty(const ToySupernet& net, const ArchSample& z);

/// KL(softmax(alpha) || uniform) summed over edges = sum_e (log|O_e| - H_e).
double kl_to_uniform(const ArchSample& logits);
ArchSample kl_to_uniform_gradient(const ArchSample& logits);

std::vector<double> softmax(std::span<const double> logits);

// ---------------------------------------------------------------------------
// Objectives over relaxed architectures
// ---------------------------------------------------------------------------

class ArchObjective {
public:
    virtual ~ArchObjective() = default;
    /// Loss at relaxed architecture z; fills dL/dz when grad is non-null.
    virtual double evaluate(const ArchSample& z, ArchSample* grad) const = 0;
};

/// Linear synthetic loss sum_e sum_k quality_{e,k} z_{e,k}.
class QualityObjective : public ArchObjective {
public:
    explicit QualityObjective(ToySupernet net) : net_(std::move(net)) {}
    double evaluate(const ArchSample& z, ArchSample* grad) const override;

private:
    ToySupernet net_;
};

struct WarmupConfig {
    std::size_t epochs = 30;
    double learning_rate = 0.1;
    double momentum = 0.9;
    std::size_t batch_size = 32;
    double temperature = 1.0;
    std::uint64_t seed = kDefaultSeed;
};

/// Early-exit supernet with one mixed op per edge:
///   h_e = sum_k z_{e,k} pad(tanh(W_{e,k} h_{e-1} + b_{e,k})),  exit e = softmax(H_e h_e + c_e).
/// Weights are trained once (warm_up) and then held fixed; evaluate() returns
/// the joint loss on the attached validation split and dL/dz.
class MixedOpSupernet : public ArchObjective {
public:
    MixedOpSupernet(ToySupernet net, std::uint64_t seed);

    const ToySupernet& supernet() const { return net_; }

    /// Trains the weights on the joint loss, drawing a Concrete sample from
    /// uniform logits for every minibatch. Returns the per-epoch mean batch loss.
    std::vector<double> warm_up(const Eigen::MatrixXd& x, std::span<const std::uint32_t> y, const WarmupConfig& cfg);

    void set_validation(Eigen::MatrixXd x, std::vector<std::uint32_t> y);

    double evaluate(const ArchSample& z, ArchSample* grad) const override;

    /// Loss, dL/dz and (optionally) weight gradients on an explicit batch.
    struct WeightGrads {
        std::vector<std::vector<Eigen::MatrixXd>> dW;
        std::vector<std::vector<Eigen::VectorXd>> db;
        std::vector<Eigen::MatrixXd> dH;
        std::vector<Eigen::VectorXd> dc;
    };
    double forward_backward(const Eigen::MatrixXd& x, std::span<const std::uint32_t> y, const ArchSample& z,
                            ArchSample* dz, WeightGrads* dw) const;

    std::vector<double> parameters() const;
    void set_parameters(std::span<const double> flat);

private:
    ToySupernet net_;
    std::vector<std::size_t> in_dims_;
    std::vector<std::vector<Eigen::MatrixXd>> W_;
    std::vector<std::vector<Eigen::VectorXd>> b_;
    std::vector<Eigen::MatrixXd> H_;
    std::vector<Eigen::VectorXd> c_;
    Eigen::MatrixXd x_val_;
    std::vector<std::uint32_t> y_val_;
};

// ---------------------------------------------------------------------------
// Variational posterior over operation logits
// ---------------------------------------------------------------------------

struct ElboConfig {
    double beta_kl = 0.05;
    double eta = 0.5;
    /// Weight of the expected-MACs penalty.
    double cost_weight = 1e-3;
    /// Monte Carlo architecture samples per step.
    std::size_t samples = 1;
    std::size_t steps = 300;
    /// Concrete temperature decays linearly from temp_start to temp_end across steps.
    double temp_start = 1.0;
    double temp_end = 0.2;
    std::uint64_t seed = kDefaultSeed;
};

struct ElboStepResult {
    double nll = 0.0;
    double kl = 0.0;
    double penalty = 0.0;
    /// nll + cost_weight * penalty + beta_kl * kl
    double elbo = 0.0;
};

/// One descent step on the negative ELBO at phi.temperature. Throws
/// TrainingError on a non-finite loss.
ElboStepResult elbo_step(ArchParams& phi, const ToySupernet& net, const ArchObjective& nll, const ElboConfig& cfg,
                         std::uint64_t seed);

struct ElboFit {
    ArchParams phi;
    std::vector<ElboStepResult> history;
    std::vector<double> temperatures;
};

ElboFit fit_elbo(ArchParams init, const ToySupernet& net, const ArchObjective& nll, const ElboConfig& cfg);

// ---------------------------------------------------------------------------
// SVGD with regularized diversity
// ---------------------------------------------------------------------------

struct Particle {
    std::vector<double> position;
    std::vector<double> velocity;
};

struct SvgdConfig {
    std::size_t particles = 8;
    double step_size = 0.1;
    double momentum = 0.9;
    /// Repulsion coefficient; the kernel-gradient term is scaled by (1 + delta).
    double delta = -1.3;
    /// RBF bandwidth h in k(x, y) = exp(-|x - y|^2 / h). Unset: median
    /// pairwise squared distance / log(N + 1), falling back to 1 when the swarm is collapsed.
    std::optional<double> bandwidth;
    std::size_t iterations = 1000;
};

/// log p(x); writes the gradient into grad (same size as x).
using LogPosterior = std::function<double(std::span<const double> x, std::span<double> grad)>;

double median_bandwidth(const std::vector<Particle>& swarm);

struct SteinDirection {
    double bandwidth = 1.0;
    /// Per particle: (1/N) sum_j k(x_j, x_i) grad log p(x_j).
    std::vector<std::vector<double>> driving;
    /// Per particle: (1/N) sum_j (1 + delta) grad_{x_j} k(x_j, x_i).
    std::vector<std::vector<double>> repulsive;
    std::vector<std::vector<double>> total;
};

SteinDirection stein_direction(const std::vector<Particle>& swarm, const std::vector<std::vector<double>>& grads,
                               double delta, double bandwidth);

/// Synchronous momentum step along the Stein direction; all forces use the
/// pre-step positions. Returns the log-density of each particle before the move.
std::vector<double> svgd_rd_step(std::vector<Particle>& swarm, const LogPosterior& log_p, const SvgdConfig& cfg);

/// Swarm of `count` particles at center + N(0, spread^2) per coordinate.
std::vector<Particle> init_swarm(std::span<const double> center, std::size_t count, double spread,
                                 std::uint64_t seed);

/// log p(x) = -[L(softmax(x)) + cost_weight * penalty(softmax(x))] - |x - center|^2 / (2 s^2),
/// with softmax applied per edge.
LogPosterior surrogate_log_posterior(const ToySupernet& net, const ArchObjective& nll, const ArchSample& center,
                                     double prior_scale, double cost_weight);

// ---------------------------------------------------------------------------
// Ensemble selection and the end-to-end search
// ---------------------------------------------------------------------------

Architecture discretize(const ToySupernet& net, std::span<const double> position);

struct Selection {
    std::vector<Architecture> architectures;
    std::vector<double> nll;
    /// Non-empty when fewer than the requested number of distinct architectures exist.
    std::string warning;
};

/// Per-edge argmax of every particle, deduplicated, ranked by loss at the
/// one-hot architecture (ties by lexicographic order), truncated to `count`.
Selection select_ensemble(const std::vector<Particle>& swarm, const ToySupernet& net, const ArchObjective& nll,
                          std::size_t count);

struct SearchConfig {
    std::size_t exits = 3;
    std::vector<std::size_t> op_widths{4, 8, 16};
    double validation_fraction = 0.3;
    WarmupConfig warmup;
    ElboConfig elbo;
    SvgdConfig svgd;
    double prior_scale = 1.0;
    double init_spread = 1.0;
    std::size_t ensemble_size = 3;
    JointLossConfig train{.beta = {}, .final_weight = 1.0, .epochs = 100};
    std::uint64_t seed = kDefaultSeed;
};

struct EnsembleMember {
    std::size_t architecture = 0;
    std::uint64_t seed = 0;
};

struct TrajectoryRow {
    std::size_t iteration = 0;
    std::size_t particle = 0;
    double log_posterior = 0.0;
    std::vector<double> position;
};

struct SearchResult {
    ToySupernet supernet;
    std::vector<double> warmup_curve;
    ElboFit elbo;
    std::vector<Particle> swarm;
    std::vector<TrajectoryRow> trajectory;
    Selection selection;
    std::vector<EnsembleMember> members;
    std::vector<ToyLearner> learners;
    std::vector<TrainResult> training;
};

/// Supernet warm-up, variational fit, SVGD-RD sampling, selection, and
/// from-scratch joint training of the selected learners. When fewer distinct
/// architectures than ensemble_size survive, members cycle through them with
/// fresh seeds. Exceptions are rethrown with the failing stage prefixed.
SearchResult run_search(const Dataset& data, const SearchConfig& cfg);

}  // namespace squad
