#include "squad/engine.hpp"

#include <algorithm>
#include <stdexcept>
#include <string>

namespace squad {

double stage_fm(const CostModel& costs, std::size_t exit, const std::vector<std::size_t>& order, std::size_t pivot) {
    return costs.at(order[pivot], exit);
}

double stage_fmt(const CostModel& costs, std::size_t exit, const std::vector<std::size_t>& order, std::size_t pivot) {
    double completed = 0.0;
    for (std::size_t r = 0; r <= pivot; ++r) completed += costs.at(order[r], exit);
    const double interrupted = static_cast<double>(order.size() - 1 - pivot) * costs.at(order[pivot], exit);
    return completed + interrupted;
}

namespace {

std::vector<double> stage_costs(const CostModel& costs, std::size_t exit) {
    std::vector<double> c(costs.learners());
    for (std::size_t k = 0; k < c.size(); ++k) c[k] = costs.at(k, exit);
    return c;
}

}  // namespace

InferenceTrace infer_sample(const PredictionTensor& probs, std::size_t n, const CostModel& costs,
                            const ExitCriterion& criterion, const EngineOptions& options) {
    const std::size_t K = probs.learners();
    const std::size_t E = probs.exits();
    const std::size_t C = probs.classes();
    if (costs.learners() != K || costs.exits() != E)
        throw std::invalid_argument("infer_sample: cost model is " + std::to_string(costs.learners()) + "x" +
                                    std::to_string(costs.exits()) + ", predictions need " + std::to_string(K) +
                                    "x" + std::to_string(E));
    if (n >= probs.samples()) throw std::invalid_argument("infer_sample: sample index out of range");
    if (E == 0) throw std::invalid_argument("infer_sample: no exits");

    InferenceTrace trace;
    trace.sample_index = n;

    std::vector<std::size_t> order;
    std::vector<Vote> votes(K);
    for (std::size_t e = 0; e < E; ++e) {
        if (e == 0 || !options.freeze_order) order = vote_order(stage_costs(costs, e));
        for (std::size_t r = 0; r < K; ++r) votes[r] = cast_vote(probs.row(order[r], e, n));

        StageRecord stage;
        stage.exit_index = e;
        stage.order = order;
        stage.outcome = run_quorum(votes, K, C);
        stage.fm_contrib = stage_fm(costs, e, order, stage.outcome.pivot_rank);
        stage.fmt_contrib = stage_fmt(costs, e, order, stage.outcome.pivot_rank);
        trace.f_m += stage.fm_contrib;
        trace.f_mt += stage.fmt_contrib;

        bool fire = false;
        if (stage.outcome.reached()) {
            std::vector<double> conf;
            conf.reserve(stage.outcome.supporters.size());
            for (std::size_t r : stage.outcome.supporters) conf.push_back(votes[r].confidence);
            stage.gate = evaluate_gate(conf, criterion, e);
            fire = stage.gate->exit;
        }
        const bool last = e + 1 == E;
        const QuorumOutcome outcome = stage.outcome;
        const std::optional<GateDecision> gate = stage.gate;
        trace.stages.push_back(std::move(stage));

        if (!fire && !last) continue;

        trace.decided_exit = e;
        trace.forced = !fire;
        if (outcome.reached()) {
            trace.predicted_class = outcome.consensus_class;
            trace.confidence = gate->sample_mean;
        } else {
            // Final stage without consensus: argmax of the full K-vote tally.
            std::vector<std::size_t> tally(C, 0);
            for (const Vote& v : votes) ++tally[v.cls];
            trace.predicted_class =
                static_cast<std::size_t>(std::max_element(tally.begin(), tally.end()) - tally.begin());
            double sum = 0.0;
            for (const Vote& v : votes) {
                if (v.cls == trace.predicted_class) sum += v.confidence;
            }
            trace.confidence = sum / static_cast<double>(tally[trace.predicted_class]);
        }
        break;
    }
    return trace;
}

DatasetResult infer_dataset(const Bundle& bundle, const ExitCriterion& criterion, const EngineOptions& options) {
    criterion.validate();
    const std::size_t N = bundle.probs.samples();
    if (bundle.labels.y.size() != N) throw std::invalid_argument("infer_dataset: label count mismatch");

    DatasetResult result;
    result.traces.reserve(N);
    std::size_t correct = 0;
    // Compensated sums for the cost means.
    double fm = 0.0, fm_c = 0.0, fmt = 0.0, fmt_c = 0.0;
    auto kahan = [](double& sum, double& comp, double x) {
        const double y = x - comp;
        const double t = sum + y;
        comp = (t - sum) - y;
        sum = t;
    };
    for (std::size_t n = 0; n < N; ++n) {
        InferenceTrace t = infer_sample(bundle.probs, n, bundle.costs, criterion, options);
        if (t.predicted_class == bundle.labels.y[n]) ++correct;
        kahan(fm, fm_c, t.f_m);
        kahan(fmt, fmt_c, t.f_mt);
        result.traces.push_back(std::move(t));
    }
    result.summary.samples = N;
    result.summary.accuracy = N ? static_cast<double>(correct) / static_cast<double>(N) : 0.0;
    result.summary.mean_fm = N ? fm / static_cast<double>(N) : 0.0;
    result.summary.mean_fmt = N ? fmt / static_cast<double>(N) : 0.0;
    return result;
}

}  // namespace squad
