#pragma once

#include "squad/tensor_io.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace squad {

class TrainingError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline constexpr std::uint64_t kDefaultSeed = 20240601;

// ---------------------------------------------------------------------------
// Synthetic task: an isotropic Gaussian mixture with one component per class.
// Class means sit at distance `separation` from the origin along orthonormal
// directions (random unit directions when there are more classes than input
// dimensions). Every component has standard deviation base_sigma + overlap,
// so overlap = 0 gives well separated blobs and large overlap drives the
// Bayes accuracy towards 1/C.
// ---------------------------------------------------------------------------
struct SyntheticTask {
    std::size_t classes = 3;
    std::size_t dim = 8;
    double overlap = 0.0;
    double base_sigma = 0.15;
    double separation = 1.0;
    std::size_t train_size = 600;
    std::size_t test_size = 300;
    std::uint64_t seed = kDefaultSeed;

    /// Throws ConfigError-style std::invalid_argument on a degenerate setup.
    void validate() const;
    double sigma() const { return base_sigma + overlap; }
};

struct Dataset {
    SyntheticTask task;
    /// One sample per row.
    Eigen::MatrixXd x_train;
    std::vector<std::uint32_t> y_train;
    Eigen::MatrixXd x_test;
    std::vector<std::uint32_t> y_test;
    /// One class mean per row.
    Eigen::MatrixXd means;
};

Dataset gen_task(const SyntheticTask& task);

/// Maximum a posteriori class under the generating mixture (nearest mean,
/// since components share an isotropic covariance and equal priors).
std::uint32_t bayes_class(const Eigen::MatrixXd& means, const Eigen::VectorXd& x);

void save_task(const Dataset& data, const std::filesystem::path& dir);
Dataset load_task(const std::filesystem::path& dir);

// ---------------------------------------------------------------------------
// Early-exit MLP: block i is tanh(W_i h_{i-1} + b_i), exit head i is
// softmax(H_i h_i + c_i). Exit i consumes exactly the output of block i.
// ---------------------------------------------------------------------------
struct LearnerSpec {
    std::size_t input_dim = 0;
    std::size_t classes = 0;
    std::vector<std::size_t> widths;

    std::size_t exits() const { return widths.size(); }
    void validate() const;
};

/// MACs added by stage e: block e plus head e. One MAC per weight per sample;
/// biases and activations are free.
std::vector<double> stage_macs(const LearnerSpec& spec);
/// Running sum of stage_macs: total work to produce exit e's prediction.
std::vector<double> cumulative_macs(const LearnerSpec& spec);

struct LearnerGradients {
    std::vector<Eigen::MatrixXd> dW, dH;
    std::vector<Eigen::VectorXd> db, dc;
};

class ToyLearner {
public:
    ToyLearner(LearnerSpec spec, std::uint64_t seed);

    const LearnerSpec& spec() const { return spec_; }
    std::size_t exits() const { return spec_.exits(); }

    /// Per-exit class probabilities, one matrix (samples x classes) per exit.
    std::vector<Eigen::MatrixXd> predict(const Eigen::MatrixXd& x) const;

    /// Mean over samples of sum_i weights[i] * CE(f_i(x), y).
    double joint_loss(const Eigen::MatrixXd& x, std::span<const std::uint32_t> y,
                      std::span<const double> weights) const;

    /// Joint loss and its gradient by backpropagation; head gradients of
    /// every exit accumulate into the shared blocks below it.
    double gradient(const Eigen::MatrixXd& x, std::span<const std::uint32_t> y, std::span<const double> weights,
                    LearnerGradients& grads) const;

    /// Flattened parameter access (W_0, b_0, H_0, c_0, W_1, ...), for checks.
    std::vector<double> parameters() const;
    void set_parameters(std::span<const double> flat);
    static std::vector<double> flatten(const LearnerGradients& grads);

    void apply_update(const LearnerGradients& step, double scale);

    LearnerGradients zeros_like() const;

private:
    LearnerSpec spec_;
    std::vector<Eigen::MatrixXd> W_, H_;
    std::vector<Eigen::VectorXd> b_, c_;
};

struct JointLossConfig {
    /// Weights of the intermediate exits; empty means 1.0 for each.
    std::vector<double> beta;
    double final_weight = 1.0;
    std::size_t epochs = 200;
    double learning_rate = 0.1;
    double momentum = 0.9;
    std::size_t batch_size = 32;
    std::uint64_t seed = kDefaultSeed;

    /// Per-exit loss weights for a learner with `exits` exits.
    std::vector<double> exit_weights(std::size_t exits) const;
};

struct TrainResult {
    /// Full-training-set joint loss after each epoch.
    std::vector<double> loss_curve;
};

/// Minibatch SGD with momentum on the joint loss. Throws TrainingError on a
/// non-finite loss.
TrainResult train_joint(ToyLearner& learner, const Eigen::MatrixXd& x, std::span<const std::uint32_t> y,
                        const JointLossConfig& cfg);

/// In-process prediction tensor over `x` for an ensemble (f32 probabilities).
PredictionTensor predict_tensor(std::span<const ToyLearner> learners, const Eigen::MatrixXd& x);

/// Incremental stage MACs of every learner, as a cost model.
CostModel ensemble_costs(std::span<const ToyLearner> learners);

/// Builds the bundle for the test split and writes it to `dir`.
Bundle export_ensemble(std::span<const ToyLearner> learners, const Eigen::MatrixXd& x_test,
                       std::span<const std::uint32_t> y_test, const std::filesystem::path& dir);

}  // namespace squad
