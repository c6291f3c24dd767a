#include "squad/toytrain.hpp"

#include "squad/kv_config.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

namespace squad {

namespace fs = std::filesystem;

void SyntheticTask::validate() const {
    if (classes < 2) throw std::invalid_argument("task: classes must be >= 2");
    if (dim < 1) throw std::invalid_argument("task: dim must be >= 1");
    if (!(overlap >= 0.0)) throw std::invalid_argument("task: overlap must be >= 0");
    if (!(sigma() > 0.0) || !std::isfinite(sigma()))
        throw std::invalid_argument("task: degenerate covariance (base_sigma + overlap must be > 0)");
    if (!(separation > 0.0)) throw std::invalid_argument("task: separation must be > 0 (means must be distinct)");
    if (train_size == 0 || test_size == 0) throw std::invalid_argument("task: train_size and test_size must be > 0");
}

namespace {

Eigen::MatrixXd class_means(const SyntheticTask& task, std::mt19937_64& rng) {
    std::normal_distribution<double> normal(0.0, 1.0);
    Eigen::MatrixXd raw(task.dim, task.classes);
    for (Eigen::Index j = 0; j < raw.cols(); ++j)
        for (Eigen::Index i = 0; i < raw.rows(); ++i) raw(i, j) = normal(rng);

    Eigen::MatrixXd dirs(task.dim, task.classes);
    if (task.classes <= task.dim) {
        Eigen::HouseholderQR<Eigen::MatrixXd> qr(raw);
        dirs = qr.householderQ() * Eigen::MatrixXd::Identity(task.dim, task.classes);
    } else {
        dirs = raw.colwise().normalized();
    }
    Eigen::MatrixXd means = task.separation * dirs.transpose();
    for (Eigen::Index a = 0; a < means.rows(); ++a)
        for (Eigen::Index b = a + 1; b < means.rows(); ++b)
            if ((means.row(a) - means.row(b)).norm() < 1e-9) throw std::invalid_argument("task: class means collide");
    return means;
}

void sample_split(const Eigen::MatrixXd& means, double sigma, std::size_t count, std::mt19937_64& rng,
                  Eigen::MatrixXd& x, std::vector<std::uint32_t>& y) {
    const auto C = static_cast<std::size_t>(means.rows());
    y.resize(count);
    for (std::size_t n = 0; n < count; ++n) y[n] = static_cast<std::uint32_t>(n % C);
    std::shuffle(y.begin(), y.end(), rng);
    std::normal_distribution<double> normal(0.0, sigma);
    x.resize(static_cast<Eigen::Index>(count), means.cols());
    for (std::size_t n = 0; n < count; ++n)
        for (Eigen::Index j = 0; j < means.cols(); ++j) x(n, j) = means(y[n], j) + normal(rng);
}

}  // namespace

Dataset gen_task(const SyntheticTask& task) {
    task.validate();
    std::mt19937_64 rng(task.seed);
    Dataset d;
    d.task = task;
    d.means = class_means(task, rng);
    sample_split(d.means, task.sigma(), task.train_size, rng, d.x_train, d.y_train);
    sample_split(d.means, task.sigma(), task.test_size, rng, d.x_test, d.y_test);
    return d;
}

std::uint32_t bayes_class(const Eigen::MatrixXd& means, const Eigen::VectorXd& x) {
    Eigen::Index best = 0;
    (means.rowwise() - x.transpose()).rowwise().squaredNorm().minCoeff(&best);
    return static_cast<std::uint32_t>(best);
}

// Task directory: task.txt (key=value), *_x.bin (row-major f64 LE), *_y.bin (u32 LE), means.bin.
namespace {

void write_bytes(const fs::path& p, const std::string& bytes) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + p.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed: " + p.string());
}

std::string read_bytes(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw IoError("missing file: " + p.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void put_le(std::string& out, std::uint64_t v, int bytes) {
    for (int i = 0; i < bytes; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
}

std::uint64_t get_le(const std::string& in, std::size_t at, int bytes) {
    std::uint64_t v = 0;
    for (int i = 0; i < bytes; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[at + i])) << (8 * i);
    return v;
}

void save_matrix(const fs::path& p, const Eigen::MatrixXd& m) {
    std::string out;
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j) put_le(out, std::bit_cast<std::uint64_t>(m(i, j)), 8);
    write_bytes(p, out);
}

Eigen::MatrixXd load_matrix(const fs::path& p, std::size_t rows, std::size_t cols) {
    const std::string in = read_bytes(p);
    if (in.size() != rows * cols * 8) throw ValidationError(p.filename().string() + ": size mismatch");
    Eigen::MatrixXd m(rows, cols);
    for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < cols; ++j) m(i, j) = std::bit_cast<double>(get_le(in, 8 * (i * cols + j), 8));
    return m;
}

void save_labels(const fs::path& p, const std::vector<std::uint32_t>& y) {
    std::string out;
    for (auto v : y) put_le(out, v, 4);
    write_bytes(p, out);
}

std::vector<std::uint32_t> load_labels(const fs::path& p, std::size_t count, std::size_t classes) {
    const std::string in = read_bytes(p);
    if (in.size() != count * 4) throw ValidationError(p.filename().string() + ": size mismatch");
    std::vector<std::uint32_t> y(count);
    for (std::size_t n = 0; n < count; ++n) {
        y[n] = static_cast<std::uint32_t>(get_le(in, 4 * n, 4));
        if (y[n] >= classes) throw ValidationError(p.filename().string() + ": label out of range");
    }
    return y;
}

}  // namespace

void save_task(const Dataset& data, const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
    const auto& t = data.task;
    KeyValueConfig kv;
    kv.set("format-version", 1);
    kv.set("classes", t.classes);
    kv.set("dim", t.dim);
    kv.set("overlap", t.overlap);
    kv.set("base_sigma", t.base_sigma);
    kv.set("separation", t.separation);
    kv.set("train_size", t.train_size);
    kv.set("test_size", t.test_size);
    kv.set("seed", std::to_string(t.seed));
    write_bytes(dir / "task.txt", kv.to_string());
    save_matrix(dir / "means.bin", data.means);
    save_matrix(dir / "train_x.bin", data.x_train);
    save_labels(dir / "train_y.bin", data.y_train);
    save_matrix(dir / "test_x.bin", data.x_test);
    save_labels(dir / "test_y.bin", data.y_test);
}

Dataset load_task(const fs::path& dir) {
    if (!fs::exists(dir / "task.txt")) throw IoError("missing file: " + (dir / "task.txt").string());
    const auto kv = KeyValueConfig::load(dir / "task.txt");
    Dataset d;
    auto& t = d.task;
    t.classes = static_cast<std::size_t>(kv.require_int("classes"));
    t.dim = static_cast<std::size_t>(kv.require_int("dim"));
    t.overlap = kv.get_double("overlap", 0.0);
    t.base_sigma = kv.get_double("base_sigma", t.base_sigma);
    t.separation = kv.get_double("separation", t.separation);
    t.train_size = static_cast<std::size_t>(kv.require_int("train_size"));
    t.test_size = static_cast<std::size_t>(kv.require_int("test_size"));
    t.seed = std::stoull(kv.require_string("seed"));
    t.validate();
    d.means = load_matrix(dir / "means.bin", t.classes, t.dim);
    d.x_train = load_matrix(dir / "train_x.bin", t.train_size, t.dim);
    d.y_train = load_labels(dir / "train_y.bin", t.train_size, t.classes);
    d.x_test = load_matrix(dir / "test_x.bin", t.test_size, t.dim);
    d.y_test = load_labels(dir / "test_y.bin", t.test_size, t.classes);
    return d;
}

void LearnerSpec::validate() const {
    if (input_dim == 0) throw std::invalid_argument("learner: input_dim must be positive");
    if (classes < 2) throw std::invalid_argument("learner: classes must be >= 2");
    if (widths.empty()) throw std::invalid_argument("learner: at least one block required");
    for (auto w : widths)
        if (w == 0) throw std::invalid_argument("learner: block widths must be positive");
}

std::vector<double> stage_macs(const LearnerSpec& spec) {
    std::vector<double> out;
    std::size_t in = spec.input_dim;
    for (std::size_t w : spec.widths) {
        out.push_back(static_cast<double>(in * w + w * spec.classes));
        in = w;
    }
    return out;
}

std::vector<double> cumulative_macs(const LearnerSpec& spec) {
    auto out = stage_macs(spec);
    std::partial_sum(out.begin(), out.end(), out.begin());
    return out;
}

ToyLearner::ToyLearner(LearnerSpec spec, std::uint64_t seed) : spec_(std::move(spec)) {
    spec_.validate();
    std::mt19937_64 rng(seed);
    auto xavier = [&rng](std::size_t rows, std::size_t cols) {
        const double a = std::sqrt(6.0 / static_cast<double>(rows + cols));
        std::uniform_real_distribution<double> u(-a, a);
        Eigen::MatrixXd m(rows, cols);
        for (Eigen::Index j = 0; j < m.cols(); ++j)
            for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = u(rng);
        return m;
    };
    std::size_t in = spec_.input_dim;
    for (std::size_t w : spec_.widths) {
        W_.push_back(xavier(w, in));
        b_.push_back(Eigen::VectorXd::Zero(w));
        H_.push_back(xavier(spec_.classes, w));
        c_.push_back(Eigen::VectorXd::Zero(spec_.classes));
        in = w;
    }
}

namespace {

// Column-wise log-softmax of logits (classes x samples).
Eigen::MatrixXd log_softmax(const Eigen::MatrixXd& z) {
    Eigen::MatrixXd out = z;
    for (Eigen::Index j = 0; j < z.cols(); ++j) {
        const double mx = z.col(j).maxCoeff();
        const double lse = mx + std::log((z.col(j).array() - mx).exp().sum());
        out.col(j).array() -= lse;
    }
    return out;
}

}  // namespace

std::vector<Eigen::MatrixXd> ToyLearner::predict(const Eigen::MatrixXd& x) const {
    if (static_cast<std::size_t>(x.cols()) != spec_.input_dim)
        throw std::invalid_argument("predict: input has wrong dimension");
    std::vector<Eigen::MatrixXd> out;
    Eigen::MatrixXd h = x.transpose();
    for (std::size_t i = 0; i < W_.size(); ++i) {
        h = ((W_[i] * h).colwise() + b_[i]).array().tanh().matrix();
        const Eigen::MatrixXd logits = (H_[i] * h).colwise() + c_[i];
        out.push_back(log_softmax(logits).array().exp().matrix().transpose());
    }
    return out;
}

double ToyLearner::joint_loss(const Eigen::MatrixXd& x, std::span<const std::uint32_t> y,
                              std::span<const double> weights) const {
    LearnerGradients unused;
    return gradient(x, y, weights, unused);
}

double ToyLearner::gradient(const Eigen::MatrixXd& x, std::span<const std::uint32_t> y,
                            std::span<const double> weights, LearnerGradients& grads) const {
    const std::size_t E = W_.size();
    const auto B = x.rows();
    if (static_cast<std::size_t>(y.size()) != static_cast<std::size_t>(B))
        throw std::invalid_argument("gradient: label count mismatch");
    if (weights.size() != E) throw std::invalid_argument("gradient: one loss weight per exit required");
    if (static_cast<std::size_t>(x.cols()) != spec_.input_dim)
        throw std::invalid_argument("gradient: input has wrong dimension");

    std::vector<Eigen::MatrixXd> h(E + 1);
    h[0] = x.transpose();
    std::vector<Eigen::MatrixXd> dz(E);
    double loss = 0.0;
    const double inv_b = 1.0 / static_cast<double>(B);
    for (std::size_t i = 0; i < E; ++i) {
        h[i + 1] = ((W_[i] * h[i]).colwise() + b_[i]).array().tanh().matrix();
        const Eigen::MatrixXd logp = log_softmax((H_[i] * h[i + 1]).colwise() + c_[i]);
        dz[i] = logp.array().exp().matrix();
        for (Eigen::Index n = 0; n < B; ++n) {
            loss -= weights[i] * logp(y[n], n) * inv_b;
            dz[i](y[n], n) -= 1.0;
        }
        dz[i] *= weights[i] * inv_b;
    }

    grads = zeros_like();
    Eigen::MatrixXd from_above;  // gradient w.r.t. the pre-activation of block i+1
    for (std::size_t ii = E; ii-- > 0;) {
        grads.dH[ii] = dz[ii] * h[ii + 1].transpose();
        grads.dc[ii] = dz[ii].rowwise().sum();
        Eigen::MatrixXd gh = H_[ii].transpose() * dz[ii];
        if (ii + 1 < E) gh += W_[ii + 1].transpose() * from_above;
        const Eigen::MatrixXd ga = (gh.array() * (1.0 - h[ii + 1].array().square())).matrix();
        grads.dW[ii] = ga * h[ii].transpose();
        grads.db[ii] = ga.rowwise().sum();
        from_above = ga;
    }
    return loss;
}

LearnerGradients ToyLearner::zeros_like() const {
    LearnerGradients g;
    for (std::size_t i = 0; i < W_.size(); ++i) {
        g.dW.push_back(Eigen::MatrixXd::Zero(W_[i].rows(), W_[i].cols()));
        g.db.push_back(Eigen::VectorXd::Zero(b_[i].size()));
        g.dH.push_back(Eigen::MatrixXd::Zero(H_[i].rows(), H_[i].cols()));
        g.dc.push_back(Eigen::VectorXd::Zero(c_[i].size()));
    }
    return g;
}

namespace {

template <typename M>
void append(std::vector<double>& out, const M& m) {
    for (Eigen::Index j = 0; j < m.cols(); ++j)
        for (Eigen::Index i = 0; i < m.rows(); ++i) out.push_back(m(i, j));
}

template <typename M>
void extract(std::span<const double> flat, std::size_t& at, M& m) {
    for (Eigen::Index j = 0; j < m.cols(); ++j)
        for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = flat[at++];
}

}  // namespace

std::vector<double> ToyLearner::parameters() const {
    std::vector<double> out;
    for (std::size_t i = 0; i < W_.size(); ++i) {
        append(out, W_[i]);
        append(out, b_[i]);
        append(out, H_[i]);
        append(out, c_[i]);
    }
    return out;
}

void ToyLearner::set_parameters(std::span<const double> flat) {
    std::size_t at = 0;
    for (std::size_t i = 0; i < W_.size(); ++i) {
        if (at + W_[i].size() + b_[i].size() + H_[i].size() + c_[i].size() > flat.size())
            throw std::invalid_argument("set_parameters: too few values");
        extract(flat, at, W_[i]);
        extract(flat, at, b_[i]);
        extract(flat, at, H_[i]);
        extract(flat, at, c_[i]);
    }
    if (at != flat.size()) throw std::invalid_argument("set_parameters: too many values");
}

std::vector<double> ToyLearner::flatten(const LearnerGradients& g) {
    std::vector<double> out;
    for (std::size_t i = 0; i < g.dW.size(); ++i) {
        append(out, g.dW[i]);
        append(out, g.db[i]);
        append(out, g.dH[i]);
        append(out, g.dc[i]);
    }
    return out;
}

void ToyLearner::apply_update(const LearnerGradients& step, double scale) {
    for (std::size_t i = 0; i < W_.size(); ++i) {
        W_[i] += scale * step.dW[i];
        b_[i] += scale * step.db[i];
        H_[i] += scale * step.dH[i];
        c_[i] += scale * step.dc[i];
    }
}

std::vector<double> JointLossConfig::exit_weights(std::size_t exits) const {
    std::vector<double> w(exits, 1.0);
    if (!beta.empty() && beta.size() + 1 != exits)
        throw std::invalid_argument("joint loss: beta needs one weight per intermediate exit");
    for (std::size_t i = 0; i + 1 < exits && i < beta.size(); ++i) w[i] = beta[i];
    w[exits - 1] = final_weight;
    for (double v : w)
        if (!(v >= 0.0)) throw std::invalid_argument("joint loss: exit weights must be >= 0");
    return w;
}

TrainResult train_joint(ToyLearner& learner, const Eigen::MatrixXd& x, std::span<const std::uint32_t> y,
                        const JointLossConfig& cfg) {
    if (static_cast<std::size_t>(x.rows()) != y.size()) throw std::invalid_argument("train_joint: label mismatch");
    if (cfg.batch_size == 0) throw std::invalid_argument("train_joint: batch_size must be positive");
    const auto weights = cfg.exit_weights(learner.exits());
    const std::size_t N = y.size();

    std::mt19937_64 rng(cfg.seed);
    std::vector<std::size_t> idx(N);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    LearnerGradients velocity = learner.zeros_like();
    LearnerGradients grads;
    TrainResult result;

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::shuffle(idx.begin(), idx.end(), rng);
        for (std::size_t start = 0; start < N; start += cfg.batch_size) {
            const std::size_t stop = std::min(N, start + cfg.batch_size);
            Eigen::MatrixXd xb(static_cast<Eigen::Index>(stop - start), x.cols());
            std::vector<std::uint32_t> yb(stop - start);
            for (std::size_t r = start; r < stop; ++r) {
                xb.row(static_cast<Eigen::Index>(r - start)) = x.row(static_cast<Eigen::Index>(idx[r]));
                yb[r - start] = y[idx[r]];
            }
            const double loss = learner.gradient(xb, yb, weights, grads);
            if (!std::isfinite(loss))
                throw TrainingError("train_joint: non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                                    std::to_string(start / cfg.batch_size));
            for (std::size_t i = 0; i < grads.dW.size(); ++i) {
                velocity.dW[i] = cfg.momentum * velocity.dW[i] + grads.dW[i];
                velocity.db[i] = cfg.momentum * velocity.db[i] + grads.db[i];
                velocity.dH[i] = cfg.momentum * velocity.dH[i] + grads.dH[i];
                velocity.dc[i] = cfg.momentum * velocity.dc[i] + grads.dc[i];
            }
            learner.apply_update(velocity, -cfg.learning_rate);
        }
        const double epoch_loss = learner.joint_loss(x, y, weights);
        if (!std::isfinite(epoch_loss))
            throw TrainingError("train_joint: non-finite loss after epoch " + std::to_string(epoch));
        result.loss_curve.push_back(epoch_loss);
    }
    return result;
}

PredictionTensor predict_tensor(std::span<const ToyLearner> learners, const Eigen::MatrixXd& x) {
    if (learners.empty()) throw std::invalid_argument("predict_tensor: no learners");
    const std::size_t K = learners.size();
    const std::size_t E = learners.front().exits();
    const std::size_t C = learners.front().spec().classes;
    const auto N = static_cast<std::size_t>(x.rows());
    PredictionTensor t(K, E, N, C);
    for (std::size_t k = 0; k < K; ++k) {
        if (learners[k].exits() != E || learners[k].spec().classes != C)
            throw std::invalid_argument("predict_tensor: learners disagree on exits or classes");
        const auto probs = learners[k].predict(x);
        for (std::size_t e = 0; e < E; ++e) {
            for (std::size_t n = 0; n < N; ++n) {
                auto row = t.row(k, e, n);
                for (std::size_t c = 0; c < C; ++c)
                    row[c] = static_cast<float>(probs[e](static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(c)));
            }
        }
    }
    return t;
}

CostModel ensemble_costs(std::span<const ToyLearner> learners) {
    std::vector<std::vector<double>> rows;
    for (const auto& l : learners) rows.push_back(stage_macs(l.spec()));
    return CostModel(rows);
}

Bundle export_ensemble(std::span<const ToyLearner> learners, const Eigen::MatrixXd& x_test,
                       std::span<const std::uint32_t> y_test, const fs::path& dir) {
    if (learners.size() < 2) throw ValidationError("export_ensemble: K ≥ 2 learners required");
    Bundle b{predict_tensor(learners, x_test), LabelVector{{y_test.begin(), y_test.end()}}, ensemble_costs(learners)};
    write_bundle(b, dir);
    return b;
}

}  // namespace squad
