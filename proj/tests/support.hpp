#pragma once

// Shared fixtures and independent oracles for the unit and acceptance tests.

#include "squad/engine.hpp"
#include "squad/exit_gate.hpp"
#include "squad/quorum.hpp"
#include "squad/tensor_io.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <limits>
#include <random>
#include <string>
#include <vector>

namespace squad::fx {

inline std::filesystem::path scratch_dir(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / ("squad_test_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

/// Random probability row. With probability `peak` one class gets most of the
/// mass, which yields confident votes and frequent agreement.
inline std::vector<float> random_row(std::mt19937_64& rng, std::size_t C, double peak = 0.5) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<double> w(C);
    for (auto& v : w) v = -std::log(std::max(u(rng), 1e-12));
    if (u(rng) < peak) w[std::uniform_int_distribution<std::size_t>(0, C - 1)(rng)] += 4.0 + 8.0 * u(rng);
    double sum = 0.0;
    for (double v : w) sum += v;
    std::vector<float> row(C);
    for (std::size_t c = 0; c < C; ++c) row[c] = static_cast<float>(w[c] / sum);
    return row;
}

/// Random bundle with integer-valued costs (exact in double arithmetic).
inline Bundle random_bundle(std::mt19937_64& rng, std::size_t K, std::size_t E, std::size_t N, std::size_t C,
                            double peak = 0.5) {
    Bundle b;
    b.probs = PredictionTensor(K, E, N, C);
    for (std::size_t k = 0; k < K; ++k)
        for (std::size_t e = 0; e < E; ++e)
            for (std::size_t n = 0; n < N; ++n) {
                const auto row = random_row(rng, C, peak);
                std::copy(row.begin(), row.end(), b.probs.row(k, e, n).begin());
            }
    std::uniform_int_distribution<std::uint32_t> label(0, static_cast<std::uint32_t>(C - 1));
    for (std::size_t n = 0; n < N; ++n) b.labels.y.push_back(label(rng));
    b.costs = CostModel(K, E);
    std::uniform_int_distribution<int> cost(1, 6);  // small range forces cost ties
    for (std::size_t k = 0; k < K; ++k)
        for (std::size_t e = 0; e < E; ++e) b.costs.at(k, e) = cost(rng) * 10.0;
    return b;
}

inline std::size_t decode_class(std::size_t code, std::size_t C, std::size_t position) {
    for (std::size_t i = 0; i < position; ++i) code /= C;
    return code % C;
}

/// Outcome of a complete vote string: the class holding a strict majority, or C for none.
inline std::size_t final_outcome(const std::vector<std::size_t>& votes, std::size_t C) {
    std::vector<std::size_t> counts(C, 0);
    for (auto v : votes) ++counts[v];
    for (std::size_t c = 0; c < C; ++c)
        if (counts[c] >= votes.size() / 2 + 1) return c;
    return C;
}

struct OracleOutcome {
    bool reached = false;
    std::size_t pivot = 0;
    std::size_t consensus = 0;
};

/// Brute-force prefix decidability: the pivot is the shortest prefix after
/// which every completion of the vote string has the same final outcome.
inline OracleOutcome brute_force_quorum(const std::vector<std::size_t>& votes, std::size_t C) {
    const std::size_t K = votes.size();
    for (std::size_t m = 0; m < K; ++m) {
        const std::size_t free = K - 1 - m;
        std::size_t completions = 1;
        for (std::size_t i = 0; i < free; ++i) completions *= C;
        std::vector<std::size_t> full(votes.begin(), votes.begin() + static_cast<std::ptrdiff_t>(m + 1));
        full.resize(K);
        std::size_t first = std::numeric_limits<std::size_t>::max();
        bool decided = true;
        for (std::size_t code = 0; code < completions && decided; ++code) {
            for (std::size_t i = 0; i < free; ++i) full[m + 1 + i] = decode_class(code, C, i);
            const std::size_t o = final_outcome(full, C);
            if (first == std::numeric_limits<std::size_t>::max()) first = o;
            else if (o != first) decided = false;
        }
        if (!decided) continue;
        OracleOutcome out;
        out.pivot = m;
        out.reached = first != C;
        if (out.reached) {
            out.consensus = first;
        } else {
            std::vector<std::size_t> counts(C, 0);
            for (std::size_t r = 0; r <= m; ++r) ++counts[votes[r]];
            std::size_t best = 0;
            for (std::size_t c = 1; c < C; ++c)
                if (counts[c] > counts[best]) best = c;
            out.consensus = best;
        }
        return out;
    }
    return {};
}

struct NaiveTrace {
    std::size_t decided_exit = 0;
    std::size_t predicted = 0;
    double f_m = 0.0;
    double f_mt = 0.0;
};

/// Straight re-evaluation of the inference loop and both cost formulas:
/// F_M adds C_{pi(m),e} and F_MT adds sum_{r<=m} C_{pi(r),e} + (K-1-m) C_{pi(m),e}
/// for every visited stage.
inline NaiveTrace naive_trace(const Bundle& b, std::size_t n, const ExitCriterion& crit) {
    const std::size_t K = b.probs.learners(), E = b.probs.exits(), C = b.probs.classes();
    NaiveTrace t;
    for (std::size_t e = 0; e < E; ++e) {
        std::vector<std::pair<double, std::size_t>> keyed;
        for (std::size_t k = 0; k < K; ++k) keyed.emplace_back(b.costs.at(k, e), k);
        std::sort(keyed.begin(), keyed.end());
        std::vector<std::size_t> cls(K);
        std::vector<double> conf(K);
        for (std::size_t r = 0; r < K; ++r) {
            const auto row = b.probs.row(keyed[r].second, e, n);
            std::size_t best = 0;
            for (std::size_t c = 1; c < C; ++c)
                if (row[c] > row[best]) best = c;
            cls[r] = best;
            conf[r] = row[best];
        }
        const OracleOutcome q = brute_force_quorum(cls, C);
        const std::size_t m = q.pivot;
        t.f_m += keyed[m].first;
        double done = 0.0;
        for (std::size_t r = 0; r <= m; ++r) done += keyed[r].first;
        t.f_mt += done + static_cast<double>(K - 1 - m) * keyed[m].first;

        bool fire = false;
        if (q.reached) {
            std::vector<double> s;
            for (std::size_t r = 0; r <= m; ++r)
                if (cls[r] == q.consensus) s.push_back(conf[r]);
            double mean = 0.0;
            for (double v : s) mean += v;
            mean /= static_cast<double>(s.size());
            double stat = mean;
            if (crit.kind == CriterionKind::TTestLCB) {
                if (s.size() < 2) {
                    stat = -std::numeric_limits<double>::infinity();
                } else {
                    double ss = 0.0;
                    for (double v : s) ss += (v - mean) * (v - mean);
                    const double sd = std::sqrt(ss / static_cast<double>(s.size() - 1));
                    if (sd > 0.0)
                        stat = mean - t_critical(crit.alpha, static_cast<double>(s.size() - 1)) * sd /
                                          std::sqrt(static_cast<double>(s.size()));
                }
            }
            fire = stat > crit.tau_at(e);
        }
        if (fire || e + 1 == E) {
            t.decided_exit = e;
            if (q.reached) {
                t.predicted = q.consensus;
            } else {
                std::vector<std::size_t> counts(C, 0);
                for (auto c : cls) ++counts[c];
                t.predicted = static_cast<std::size_t>(std::max_element(counts.begin(), counts.end()) - counts.begin());
            }
            break;
        }
    }
    return t;
}

/// Fourth-order central finite differences of f at x.
inline std::vector<double> numeric_gradient(const std::function<double(const std::vector<double>&)>& f,
                                            std::vector<double> x, double h) {
    std::vector<double> g(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double keep = x[i];
        double v[4];
        const double offsets[4] = {2.0 * h, h, -h, -2.0 * h};
        for (int k = 0; k < 4; ++k) {
            x[i] = keep + offsets[k];
            v[k] = f(x);
        }
        x[i] = keep;
        g[i] = (-v[0] + 8.0 * v[1] - 8.0 * v[2] + v[3]) / (12.0 * h);
    }
    return g;
}

/// Largest per-entry relative error |a - n| / max(|a|, |n|, floor).
inline double max_relative_error(const std::vector<double>& a, const std::vector<double>& n, double floor = 1e-3) {
    double worst = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
        worst = std::max(worst, std::abs(a[i] - n[i]) / std::max({std::abs(a[i]), std::abs(n[i]), floor}));
    return worst;
}

}  // namespace squad::fx
