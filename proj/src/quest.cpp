#include "squad/quest.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <stdexcept>

namespace squad {

// ---------------------------------------------------------------------------
// ToySupernet
// ---------------------------------------------------------------------------

std::size_t ToySupernet::dimension() const {
    std::size_t d = 0;
    for (const auto& e : edges) d += e.size();
    return d;
}

std::size_t ToySupernet::max_width() const {
    std::size_t w = 0;
    for (const auto& e : edges)
        for (const auto& op : e) w = std::max(w, op.width);
    return w;
}

void ToySupernet::validate() const {
    if (edges.empty()) throw std::invalid_argument("supernet: no edges");
    for (std::size_t e = 0; e < edges.size(); ++e) {
        if (edges[e].size() < 2)
            throw std::invalid_argument("supernet: edge " + std::to_string(e) + " needs at least 2 operations");
        for (const auto& op : edges[e])
            if (!(op.macs >= 0.0)) throw std::invalid_argument("supernet: MACs must be >= 0");
    }
}

ArchSample ToySupernet::unflatten(std::span<const double> flat) const {
    if (flat.size() != dimension()) throw std::invalid_argument("supernet: flat vector has wrong length");
    ArchSample out;
    std::size_t at = 0;
    for (const auto& e : edges) {
        out.emplace_back(flat.begin() + static_cast<std::ptrdiff_t>(at),
                         flat.begin() + static_cast<std::ptrdiff_t>(at + e.size()));
        at += e.size();
    }
    return out;
}

std::vector<double> ToySupernet::flatten(const ArchSample& a) {
    std::vector<double> out;
    for (const auto& e : a) out.insert(out.end(), e.begin(), e.end());
    return out;
}

ArchSample ToySupernet::uniform_logits() const {
    ArchSample a;
    for (const auto& e : edges) a.emplace_back(e.size(), 0.0);
    return a;
}

ArchSample ToySupernet::one_hot(const Architecture& arch) const {
    if (arch.size() != edges.size()) throw std::invalid_argument("supernet: architecture has wrong edge count");
    ArchSample z = uniform_logits();
    for (std::size_t e = 0; e < arch.size(); ++e) {
        if (arch[e] >= edges[e].size()) throw std::invalid_argument("supernet: op index out of range");
        z[e][arch[e]] = 1.0;
    }
    return z;
}

LearnerSpec ToySupernet::learner_spec(const Architecture& arch) const {
    if (arch.size() != edges.size()) throw std::invalid_argument("supernet: architecture has wrong edge count");
    LearnerSpec spec{input_dim, classes, {}};
    for (std::size_t e = 0; e < arch.size(); ++e) spec.widths.push_back(edges[e].at(arch[e]).width);
    spec.validate();
    return spec;
}

ToySupernet width_supernet(std::size_t input_dim, std::size_t classes, std::size_t exits,
                           const std::vector<std::size_t>& widths) {
    if (exits == 0) throw std::invalid_argument("supernet: exits must be positive");
    if (widths.size() < 2) throw std::invalid_argument("supernet: at least 2 candidate widths required");
    ToySupernet net;
    net.input_dim = input_dim;
    net.classes = classes;
    const std::size_t wmax = *std::max_element(widths.begin(), widths.end());
    for (std::size_t e = 0; e < exits; ++e) {
        const std::size_t in = e == 0 ? input_dim : wmax;
        std::vector<SupernetOp> ops;
        for (std::size_t w : widths) {
            if (w == 0) throw std::invalid_argument("supernet: widths must be positive");
            ops.push_back({w, static_cast<double>(in * w + w * classes), 0.0});
        }
        net.edges.push_back(std::move(ops));
    }
    net.validate();
    return net;
}

// ---------------------------------------------------------------------------
// Concrete relaxation
// ---------------------------------------------------------------------------

std::vector<double> gumbel_noise(std::size_t count, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> uniform(0.0, 1.0);
    std::vector<double> g(count);
    for (auto& v : g) {
        const double u = std::max(uniform(rng), std::numeric_limits<double>::min());
        v = -std::log(-std::log(u));
    }
    return g;
}

std::vector<double> softmax(std::span<const double> logits) {
    std::vector<double> zero(logits.size(), 0.0);
    return concrete_softmax(logits, zero, 1.0);
}

std::vector<double> concrete_softmax(std::span<const double> logits, std::span<const double> noise,
                                     double temperature) {
    if (!(temperature > 0.0)) throw std::invalid_argument("concrete_softmax: temperature must be > 0");
    if (noise.size() != logits.size()) throw std::invalid_argument("concrete_softmax: noise size mismatch");
    if (logits.empty()) throw std::invalid_argument("concrete_softmax: empty logits");
    std::vector<double> z(logits.size());
    for (std::size_t k = 0; k < z.size(); ++k) {
        if (!std::isfinite(logits[k])) throw std::invalid_argument("concrete_softmax: non-finite logits");
        z[k] = (logits[k] + noise[k]) / temperature;
    }
    const double mx = *std::max_element(z.begin(), z.end());
    double sum = 0.0;
    for (auto& v : z) {
        v = std::exp(v - mx);
        sum += v;
    }
    for (auto& v : z) v /= sum;
    return z;
}

std::vector<double> concrete_vjp(std::span<const double> z, double temperature, std::span<const double> upstream) {
    if (z.size() != upstream.size()) throw std::invalid_argument("concrete_vjp: size mismatch");
    double dot = 0.0;
    for (std::size_t k = 0; k < z.size(); ++k) dot += z[k] * upstream[k];
    std::vector<double> g(z.size());
    for (std::size_t k = 0; k < z.size(); ++k) g[k] = z[k] * (upstream[k] - dot) / temperature;
    return g;
}

std::vector<double> gumbel_sample(std::span<const double> logits, double temperature, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    const auto noise = gumbel_noise(logits.size(), rng);
    return concrete_softmax(logits, noise, temperature);
}

double macs_penalty(const ToySupernet& net, const ArchSample& z) {
    if (z.size() != net.edges.size()) throw std::invalid_argument("macs_penalty: edge count mismatch");
    double total = 0.0;
    for (std::size_t e = 0; e < z.size(); ++e) {
        if (z[e].size() != net.edges[e].size()) throw std::invalid_argument("macs_penalty: op count mismatch");
        for (std::size_t k = 0; k < z[e].size(); ++k) total += net.edges[e][k].macs * z[e][k];
    }
    return total;
}

double kl_to_uniform(const ArchSample& logits) {
    double kl = 0.0;
    for (const auto& a : logits) {
        const auto p = softmax(a);
        kl += std::log(static_cast<double>(p.size()));
        for (double v : p)
            if (v > 0.0) kl += v * std::log(v);
    }
    return std::max(kl, 0.0);
}

ArchSample kl_to_uniform_gradient(const ArchSample& logits) {
    ArchSample g;
    for (const auto& a : logits) {
        const auto p = softmax(a);
        double neg_entropy = 0.0;
        for (double v : p)
            if (v > 0.0) neg_entropy += v * std::log(v);
        std::vector<double> ge(p.size());
        for (std::size_t k = 0; k < p.size(); ++k)
            ge[k] = p[k] > 0.0 ? p[k] * (std::log(p[k]) - neg_entropy) : 0.0;
        g.push_back(std::move(ge));
    }
    return g;
}

// ---------------------------------------------------------------------------
// Objectives
// ---------------------------------------------------------------------------

double QualityObjective::evaluate(const ArchSample& z, ArchSample* grad) const {
    if (z.size() != net_.edges.size()) throw std::invalid_argument("QualityObjective: edge count mismatch");
    double v = 0.0;
    if (grad) grad->clear();
    for (std::size_t e = 0; e < z.size(); ++e) {
        if (z[e].size() != net_.edges[e].size()) throw std::invalid_argument("QualityObjective: op count mismatch");
        std::vector<double> g(z[e].size());
        for (std::size_t k = 0; k < z[e].size(); ++k) {
            v += net_.edges[e][k].quality * z[e][k];
            g[k] = net_.edges[e][k].quality;
        }
        if (grad) grad->push_back(std::move(g));
    }
    return v;
}

namespace {

Eigen::MatrixXd xavier(std::size_t rows, std::size_t cols, std::mt19937_64& rng) {
    const double a = std::sqrt(6.0 / static_cast<double>(rows + cols));
    std::uniform_real_distribution<double> u(-a, a);
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index j = 0; j < m.cols(); ++j)
        for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = u(rng);
    return m;
}

Eigen::MatrixXd column_log_softmax(const Eigen::MatrixXd& z) {
    Eigen::MatrixXd out = z;
    for (Eigen::Index j = 0; j < z.cols(); ++j) {
        const double mx = z.col(j).maxCoeff();
        out.col(j).array() -= mx + std::log((z.col(j).array() - mx).exp().sum());
    }
    return out;
}

}  // namespace

MixedOpSupernet::MixedOpSupernet(ToySupernet net, std::uint64_t seed) : net_(std::move(net)) {
    net_.validate();
    if (net_.input_dim == 0 || net_.classes < 2) throw std::invalid_argument("MixedOpSupernet: bad dimensions");
    const std::size_t wmax = net_.max_width();
    if (wmax == 0) throw std::invalid_argument("MixedOpSupernet: ops need positive widths");
    std::mt19937_64 rng(seed);
    for (std::size_t e = 0; e < net_.edges.size(); ++e) {
        const std::size_t in = e == 0 ? net_.input_dim : wmax;
        in_dims_.push_back(in);
        W_.emplace_back();
        b_.emplace_back();
        for (const auto& op : net_.edges[e]) {
            W_[e].push_back(xavier(op.width, in, rng));
            b_[e].push_back(Eigen::VectorXd::Zero(op.width));
        }
        H_.push_back(xavier(net_.classes, wmax, rng));
        c_.push_back(Eigen::VectorXd::Zero(net_.classes));
    }
}

double MixedOpSupernet::forward_backward(const Eigen::MatrixXd& x, std::span<const std::uint32_t> y,
                                         const ArchSample& z, ArchSample* dz, WeightGrads* dw) const {
    const std::size_t E = net_.edges.size();
    const auto B = x.rows();
    if (z.size() != E) throw std::invalid_argument("MixedOpSupernet: edge count mismatch");
    if (static_cast<std::size_t>(B) != y.size() || B == 0) throw std::invalid_argument("MixedOpSupernet: bad batch");
    if (static_cast<std::size_t>(x.cols()) != net_.input_dim)
        throw std::invalid_argument("MixedOpSupernet: input has wrong dimension");
    const auto wmax = static_cast<Eigen::Index>(net_.max_width());
    const double inv_b = 1.0 / static_cast<double>(B);

    std::vector<Eigen::MatrixXd> h(E + 1);
    std::vector<std::vector<Eigen::MatrixXd>> outs(E);
    std::vector<Eigen::MatrixXd> dlogits(E);
    h[0] = x.transpose();
    double loss = 0.0;
    for (std::size_t e = 0; e < E; ++e) {
        if (z[e].size() != net_.edges[e].size()) throw std::invalid_argument("MixedOpSupernet: op count mismatch");
        h[e + 1] = Eigen::MatrixXd::Zero(wmax, B);
        for (std::size_t k = 0; k < net_.edges[e].size(); ++k) {
            outs[e].push_back(((W_[e][k] * h[e]).colwise() + b_[e][k]).array().tanh().matrix());
            h[e + 1].topRows(outs[e][k].rows()) += z[e][k] * outs[e][k];
        }
        const Eigen::MatrixXd logp = column_log_softmax((H_[e] * h[e + 1]).colwise() + c_[e]);
        dlogits[e] = logp.array().exp().matrix();
        for (Eigen::Index n = 0; n < B; ++n) {
            loss -= logp(y[n], n) * inv_b;
            dlogits[e](y[n], n) -= 1.0;
        }
        dlogits[e] *= inv_b;
    }
    if (!dz && !dw) return loss;

    if (dz) *dz = net_.uniform_logits();
    if (dw) {
        dw->dW.assign(E, {});
        dw->db.assign(E, {});
        dw->dH.assign(E, {});
        dw->dc.assign(E, {});
    }
    Eigen::MatrixXd from_above;  // dL/dh_{e+1} contributed by edge e+1
    for (std::size_t e = E; e-- > 0;) {
        Eigen::MatrixXd gh = H_[e].transpose() * dlogits[e];
        if (e + 1 < E) gh += from_above;
        if (dw) {
            dw->dH[e] = dlogits[e] * h[e + 1].transpose();
            dw->dc[e] = dlogits[e].rowwise().sum();
        }
        Eigen::MatrixXd g_prev = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(in_dims_[e]), B);
        for (std::size_t k = 0; k < net_.edges[e].size(); ++k) {
            const auto& o = outs[e][k];
            const Eigen::MatrixXd g_out = gh.topRows(o.rows());
            if (dz) (*dz)[e][k] = (g_out.array() * o.array()).sum();
            const Eigen::MatrixXd ga = (z[e][k] * g_out.array() * (1.0 - o.array().square())).matrix();
            if (dw) {
                dw->dW[e].push_back(ga * h[e].transpose());
                dw->db[e].push_back(ga.rowwise().sum());
            }
            if (e > 0) g_prev += W_[e][k].transpose() * ga;
        }
        from_above = std::move(g_prev);
    }
    return loss;
}

std::vector<double> MixedOpSupernet::warm_up(const Eigen::MatrixXd& x, std::span<const std::uint32_t> y,
                                             const WarmupConfig& cfg) {
    if (static_cast<std::size_t>(x.rows()) != y.size()) throw std::invalid_argument("warm_up: label mismatch");
    if (cfg.batch_size == 0) throw std::invalid_argument("warm_up: batch_size must be positive");
    std::mt19937_64 rng(cfg.seed);
    const std::size_t N = y.size();
    std::vector<std::size_t> idx(N);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    const ArchSample uniform = net_.uniform_logits();

    WeightGrads velocity;
    bool have_velocity = false;
    std::vector<double> curve;
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::shuffle(idx.begin(), idx.end(), rng);
        double sum = 0.0;
        std::size_t batches = 0;
        for (std::size_t start = 0; start < N; start += cfg.batch_size) {
            const std::size_t stop = std::min(N, start + cfg.batch_size);
            Eigen::MatrixXd xb(static_cast<Eigen::Index>(stop - start), x.cols());
            std::vector<std::uint32_t> yb(stop - start);
            for (std::size_t r = start; r < stop; ++r) {
                xb.row(static_cast<Eigen::Index>(r - start)) = x.row(static_cast<Eigen::Index>(idx[r]));
                yb[r - start] = y[idx[r]];
            }
            ArchSample z;
            for (const auto& a : uniform) z.push_back(concrete_softmax(a, gumbel_noise(a.size(), rng), cfg.temperature));
            WeightGrads g;
            const double loss = forward_backward(xb, yb, z, nullptr, &g);
            if (!std::isfinite(loss)) throw TrainingError("warm_up: non-finite loss at epoch " + std::to_string(epoch));
            sum += loss;
            ++batches;
            if (!have_velocity) {
                velocity = g;
                have_velocity = true;
            } else {
                for (std::size_t e = 0; e < W_.size(); ++e) {
                    for (std::size_t k = 0; k < W_[e].size(); ++k) {
                        velocity.dW[e][k] = cfg.momentum * velocity.dW[e][k] + g.dW[e][k];
                        velocity.db[e][k] = cfg.momentum * velocity.db[e][k] + g.db[e][k];
                    }
                    velocity.dH[e] = cfg.momentum * velocity.dH[e] + g.dH[e];
                    velocity.dc[e] = cfg.momentum * velocity.dc[e] + g.dc[e];
                }
            }
            for (std::size_t e = 0; e < W_.size(); ++e) {
                for (std::size_t k = 0; k < W_[e].size(); ++k) {
                    W_[e][k] -= cfg.learning_rate * velocity.dW[e][k];
                    b_[e][k] -= cfg.learning_rate * velocity.db[e][k];
                }
                H_[e] -= cfg.learning_rate * velocity.dH[e];
                c_[e] -= cfg.learning_rate * velocity.dc[e];
            }
        }
        curve.push_back(batches ? sum / static_cast<double>(batches) : 0.0);
    }
    return curve;
}

void MixedOpSupernet::set_validation(Eigen::MatrixXd x, std::vector<std::uint32_t> y) {
    if (static_cast<std::size_t>(x.rows()) != y.size() || y.empty())
        throw std::invalid_argument("set_validation: bad split");
    x_val_ = std::move(x);
    y_val_ = std::move(y);
}

double MixedOpSupernet::evaluate(const ArchSample& z, ArchSample* grad) const {
    if (y_val_.empty()) throw std::logic_error("MixedOpSupernet: no validation split attached");
    return forward_backward(x_val_, y_val_, z, grad, nullptr);
}

std::vector<double> MixedOpSupernet::parameters() const {
    std::vector<double> out;
    auto push = [&out](const auto& m) { out.insert(out.end(), m.data(), m.data() + m.size()); };
    for (std::size_t e = 0; e < W_.size(); ++e) {
        for (std::size_t k = 0; k < W_[e].size(); ++k) {
            push(W_[e][k]);
            push(b_[e][k]);
        }
        push(H_[e]);
        push(c_[e]);
    }
    return out;
}

void MixedOpSupernet::set_parameters(std::span<const double> flat) {
    std::size_t at = 0;
    auto pull = [&](auto& m) {
        if (at + static_cast<std::size_t>(m.size()) > flat.size())
            throw std::invalid_argument("set_parameters: too few values");
        std::copy(flat.begin() + static_cast<std::ptrdiff_t>(at),
                  flat.begin() + static_cast<std::ptrdiff_t>(at + m.size()), m.data());
        at += static_cast<std::size_t>(m.size());
    };
    for (std::size_t e = 0; e < W_.size(); ++e) {
        for (std::size_t k = 0; k < W_[e].size(); ++k) {
            pull(W_[e][k]);
            pull(b_[e][k]);
        }
        pull(H_[e]);
        pull(c_[e]);
    }
    if (at != flat.size()) throw std::invalid_argument("set_parameters: too many values");
}

// ---------------------------------------------------------------------------
// Variational fit
// ---------------------------------------------------------------------------

ElboStepResult elbo_step(ArchParams& phi, const ToySupernet& net, const ArchObjective& nll, const ElboConfig& cfg,
                         std::uint64_t seed) {
    if (!(cfg.beta_kl >= 0.0)) throw std::invalid_argument("elbo_step: beta_kl must be >= 0");
    if (cfg.samples == 0) throw std::invalid_argument("elbo_step: samples must be positive");
    if (phi.alpha.size() != net.edges.size()) throw std::invalid_argument("elbo_step: logits do not match supernet");

    std::mt19937_64 rng(seed);
    ElboStepResult r;
    ArchSample grad = net.uniform_logits();
    const double inv_s = 1.0 / static_cast<double>(cfg.samples);
    for (std::size_t s = 0; s < cfg.samples; ++s) {
        ArchSample z;
        for (const auto& a : phi.alpha) z.push_back(concrete_softmax(a, gumbel_noise(a.size(), rng), phi.temperature));
        ArchSample dz;
        r.nll += nll.evaluate(z, &dz) * inv_s;
        r.penalty += macs_penalty(net, z) * inv_s;
        for (std::size_t e = 0; e < z.size(); ++e) {
            std::vector<double> upstream(z[e].size());
            for (std::size_t k = 0; k < z[e].size(); ++k) upstream[k] = dz[e][k] + cfg.cost_weight * net.edges[e][k].macs;
            const auto g = concrete_vjp(z[e], phi.temperature, upstream);
            for (std::size_t k = 0; k < g.size(); ++k) grad[e][k] += g[k] * inv_s;
        }
    }
    r.kl = kl_to_uniform(phi.alpha);
    r.elbo = r.nll + cfg.cost_weight * r.penalty + cfg.beta_kl * r.kl;
    if (!std::isfinite(r.elbo)) throw TrainingError("elbo_step: non-finite loss");

    const auto gkl = kl_to_uniform_gradient(phi.alpha);
    for (std::size_t e = 0; e < phi.alpha.size(); ++e)
        for (std::size_t k = 0; k < phi.alpha[e].size(); ++k)
            phi.alpha[e][k] -= cfg.eta * (grad[e][k] + cfg.beta_kl * gkl[e][k]);
    return r;
}

ElboFit fit_elbo(ArchParams init, const ToySupernet& net, const ArchObjective& nll, const ElboConfig& cfg) {
    if (!(cfg.temp_start > 0.0 && cfg.temp_end > 0.0)) throw std::invalid_argument("fit_elbo: temperatures must be > 0");
    ElboFit fit{std::move(init), {}, {}};
    std::vector<std::uint64_t> seeds(cfg.steps);
    {
        std::mt19937_64 seeder(cfg.seed);
        for (auto& s : seeds) s = seeder();
    }
    for (std::size_t t = 0; t < cfg.steps; ++t) {
        const double frac = cfg.steps > 1 ? static_cast<double>(t) / static_cast<double>(cfg.steps - 1) : 0.0;
        fit.phi.temperature = cfg.temp_start + (cfg.temp_end - cfg.temp_start) * frac;
        fit.temperatures.push_back(fit.phi.temperature);
        fit.history.push_back(elbo_step(fit.phi, net, nll, cfg, seeds[t]));
    }
    return fit;
}

// ---------------------------------------------------------------------------
// SVGD-RD
// ---------------------------------------------------------------------------

namespace {

double squared_distance(const std::vector<double>& a, const std::vector<double>& b) {
    double d = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) d += (a[i] - b[i]) * (a[i] - b[i]);
    return d;
}

}  // namespace

double median_bandwidth(const std::vector<Particle>& swarm) {
    std::vector<double> d;
    for (std::size_t i = 0; i < swarm.size(); ++i)
        for (std::size_t j = i + 1; j < swarm.size(); ++j) d.push_back(squared_distance(swarm[i].position, swarm[j].position));
    if (d.empty()) return 1.0;
    const std::size_t mid = d.size() / 2;
    std::nth_element(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(mid), d.end());
    double med = d[mid];
    if (d.size() % 2 == 0) {
        const double lower = *std::max_element(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(mid));
        med = 0.5 * (med + lower);
    }
    const double h = med / std::log(static_cast<double>(swarm.size()) + 1.0);
    return h > 1e-12 ? h : 1.0;
}

SteinDirection stein_direction(const std::vector<Particle>& swarm, const std::vector<std::vector<double>>& grads,
                               double delta, double bandwidth) {
    const std::size_t N = swarm.size();
    if (N == 0) throw std::invalid_argument("stein_direction: empty swarm");
    if (grads.size() != N) throw std::invalid_argument("stein_direction: one gradient per particle required");
    if (!(bandwidth > 0.0)) throw std::invalid_argument("stein_direction: bandwidth must be > 0");
    const std::size_t D = swarm.front().position.size();

    SteinDirection out;
    out.bandwidth = bandwidth;
    out.driving.assign(N, std::vector<double>(D, 0.0));
    out.repulsive.assign(N, std::vector<double>(D, 0.0));
    out.total.assign(N, std::vector<double>(D, 0.0));
    const double inv_n = 1.0 / static_cast<double>(N);
    for (std::size_t i = 0; i < N; ++i) {
        const auto& xi = swarm[i].position;
        for (std::size_t j = 0; j < N; ++j) {
            const auto& xj = swarm[j].position;
            const double k = std::exp(-squared_distance(xi, xj) / bandwidth);
            for (std::size_t d = 0; d < D; ++d) {
                out.driving[i][d] += k * grads[j][d] * inv_n;
                // grad_{x_j} k(x_j, x_i) = (2/h) (x_i - x_j) k
                out.repulsive[i][d] += (1.0 + delta) * (2.0 / bandwidth) * (xi[d] - xj[d]) * k * inv_n;
            }
        }
        for (std::size_t d = 0; d < D; ++d) out.total[i][d] = out.driving[i][d] + out.repulsive[i][d];
    }
    return out;
}

std::vector<double> svgd_rd_step(std::vector<Particle>& swarm, const LogPosterior& log_p, const SvgdConfig& cfg) {
    if (swarm.size() < 2) throw std::invalid_argument("svgd_rd_step: at least 2 particles required");
    if (!(cfg.step_size > 0.0)) throw std::invalid_argument("svgd_rd_step: step size must be > 0");
    const std::size_t D = swarm.front().position.size();
    std::vector<std::vector<double>> grads(swarm.size(), std::vector<double>(D));
    std::vector<double> values(swarm.size());
    for (std::size_t i = 0; i < swarm.size(); ++i) {
        if (swarm[i].position.size() != D) throw std::invalid_argument("svgd_rd_step: ragged swarm");
        values[i] = log_p(swarm[i].position, grads[i]);
        for (double g : grads[i])
            if (!std::isfinite(g)) throw TrainingError("svgd_rd_step: non-finite gradient");
    }
    const double h = cfg.bandwidth ? *cfg.bandwidth : median_bandwidth(swarm);
    const auto dir = stein_direction(swarm, grads, cfg.delta, h);
    for (std::size_t i = 0; i < swarm.size(); ++i) {
        auto& p = swarm[i];
        if (p.velocity.size() != D) p.velocity.assign(D, 0.0);
        for (std::size_t d = 0; d < D; ++d) {
            p.velocity[d] = cfg.momentum * p.velocity[d] + cfg.step_size * dir.total[i][d];
            p.position[d] += p.velocity[d];
        }
    }
    return values;
}

std::vector<Particle> init_swarm(std::span<const double> center, std::size_t count, double spread,
                                 std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<Particle> swarm(count);
    for (auto& p : swarm) {
        p.position.assign(center.begin(), center.end());
        for (auto& v : p.position) v += spread * normal(rng);
        p.velocity.assign(center.size(), 0.0);
    }
    return swarm;
}

LogPosterior surrogate_log_posterior(const ToySupernet& net, const ArchObjective& nll, const ArchSample& center,
                                     double prior_scale, double cost_weight) {
    if (!(prior_scale > 0.0)) throw std::invalid_argument("surrogate_log_posterior: prior scale must be > 0");
    const std::vector<double> c = ToySupernet::flatten(center);
    if (c.size() != net.dimension()) throw std::invalid_argument("surrogate_log_posterior: center has wrong size");
    return [&net, &nll, c, prior_scale, cost_weight](std::span<const double> x, std::span<double> grad) {
        const ArchSample logits = net.unflatten(x);
        ArchSample z;
        for (const auto& a : logits) z.push_back(softmax(a));
        ArchSample dz;
        const double loss = nll.evaluate(z, &dz) + cost_weight * macs_penalty(net, z);
        const double inv_var = 1.0 / (prior_scale * prior_scale);
        double log_p = -loss;
        std::size_t at = 0;
        for (std::size_t e = 0; e < z.size(); ++e) {
            std::vector<double> upstream(z[e].size());
            for (std::size_t k = 0; k < z[e].size(); ++k) upstream[k] = dz[e][k] + cost_weight * net.edges[e][k].macs;
            const auto g = concrete_vjp(z[e], 1.0, upstream);
            for (std::size_t k = 0; k < g.size(); ++k, ++at) {
                const double off = x[at] - c[at];
                log_p -= 0.5 * off * off * inv_var;
                grad[at] = -g[k] - off * inv_var;
            }
        }
        return log_p;
    };
}

// ---------------------------------------------------------------------------
// Selection and pipeline
// ---------------------------------------------------------------------------

Architecture discretize(const ToySupernet& net, std::span<const double> position) {
    const ArchSample a = net.unflatten(position);
    Architecture arch;
    for (const auto& e : a)
        arch.push_back(static_cast<std::size_t>(std::max_element(e.begin(), e.end()) - e.begin()));
    return arch;
}

Selection select_ensemble(const std::vector<Particle>& swarm, const ToySupernet& net, const ArchObjective& nll,
                          std::size_t count) {
    if (count == 0) throw std::invalid_argument("select_ensemble: ensemble size must be positive");
    std::map<Architecture, double> unique;
    for (const auto& p : swarm) {
        Architecture a = discretize(net, p.position);
        if (!unique.count(a)) unique.emplace(a, nll.evaluate(net.one_hot(a), nullptr));
    }
    std::vector<std::pair<Architecture, double>> ranked(unique.begin(), unique.end());
    std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.second < b.second; });

    Selection sel;
    for (std::size_t i = 0; i < ranked.size() && i < count; ++i) {
        sel.architectures.push_back(ranked[i].first);
        sel.nll.push_back(ranked[i].second);
    }
    if (sel.architectures.size() < count)
        sel.warning = "only " + std::to_string(sel.architectures.size()) + " distinct architecture(s) for ensemble size " +
                      std::to_string(count);
    return sel;
}

namespace {

template <typename F>
auto stage(const char* name, F&& f) -> decltype(f()) {
    try {
        return f();
    } catch (const std::exception& e) {
        throw std::runtime_error(std::string("search stage '") + name + "': " + e.what());
    }
}

}  // namespace

SearchResult run_search(const Dataset& data, const SearchConfig& cfg) {
    if (cfg.ensemble_size < 2) throw std::invalid_argument("search: ensemble size must be >= 2");
    if (!(cfg.validation_fraction > 0.0 && cfg.validation_fraction < 1.0))
        throw std::invalid_argument("search: validation_fraction must lie in (0,1)");
    const auto N = static_cast<std::size_t>(data.x_train.rows());
    const auto n_val = static_cast<std::size_t>(std::llround(cfg.validation_fraction * static_cast<double>(N)));
    if (n_val == 0 || n_val >= N) throw std::invalid_argument("search: training split too small");
    const std::size_t n_fit = N - n_val;

    SearchResult out;
    out.supernet = stage("supernet", [&] {
        return width_supernet(data.task.dim, data.task.classes, cfg.exits, cfg.op_widths);
    });

    MixedOpSupernet supernet(out.supernet, cfg.seed + 1);
    out.warmup_curve = stage("warmup", [&] {
        WarmupConfig w = cfg.warmup;
        const std::vector<std::uint32_t> y_fit(data.y_train.begin(), data.y_train.begin() + static_cast<std::ptrdiff_t>(n_fit));
        auto curve = supernet.warm_up(data.x_train.topRows(static_cast<Eigen::Index>(n_fit)), y_fit, w);
        supernet.set_validation(
            data.x_train.bottomRows(static_cast<Eigen::Index>(n_val)),
            std::vector<std::uint32_t>(data.y_train.begin() + static_cast<std::ptrdiff_t>(n_fit), data.y_train.end()));
        return curve;
    });

    out.elbo = stage("elbo", [&] {
        return fit_elbo(ArchParams{out.supernet.uniform_logits(), cfg.elbo.temp_start}, out.supernet, supernet, cfg.elbo);
    });

    stage("svgd", [&] {
        out.swarm = init_swarm(ToySupernet::flatten(out.elbo.phi.alpha), cfg.svgd.particles, cfg.init_spread, cfg.seed + 2);
        const auto log_p =
            surrogate_log_posterior(out.supernet, supernet, out.elbo.phi.alpha, cfg.prior_scale, cfg.elbo.cost_weight);
        for (std::size_t it = 0; it < cfg.svgd.iterations; ++it) {
            const auto values = svgd_rd_step(out.swarm, log_p, cfg.svgd);
            if (it % 10 == 0) {
                // Log densities belong to the pre-step positions.
                for (std::size_t i = 0; i < out.swarm.size(); ++i) {
                    std::vector<double> before = out.swarm[i].position;
                    for (std::size_t d = 0; d < before.size(); ++d) before[d] -= out.swarm[i].velocity[d];
                    out.trajectory.push_back({it, i, values[i], std::move(before)});
                }
            }
        }
        return 0;
    });

    out.selection = stage("select", [&] { return select_ensemble(out.swarm, out.supernet, supernet, cfg.ensemble_size); });

    stage("train", [&] {
        for (std::size_t i = 0; i < cfg.ensemble_size; ++i) {
            EnsembleMember m{i % out.selection.architectures.size(), cfg.seed + 100 + i};
            ToyLearner learner(out.supernet.learner_spec(out.selection.architectures[m.architecture]), m.seed);
            JointLossConfig tc = cfg.train;
            tc.seed = m.seed;
            out.training.push_back(train_joint(learner, data.x_train, data.y_train, tc));
            out.learners.push_back(std::move(learner));
            out.members.push_back(m);
        }
        return 0;
    });
    return out;
}

}  // namespace squad
