#include "squad/quorum.hpp"

#include <algorithm>
#include <numeric>
#include <string>

namespace squad {

namespace {

template <typename T>
Vote argmax_vote(std::span<const T> probs) {
    Vote v;
    if (probs.empty()) return v;
    v.confidence = static_cast<double>(probs[0]);
    for (std::size_t c = 1; c < probs.size(); ++c) {
        if (static_cast<double>(probs[c]) > v.confidence) {
            v.cls = c;
            v.confidence = static_cast<double>(probs[c]);
        }
    }
    return v;
}

std::size_t leading_class(const std::vector<std::size_t>& counts) {
    return static_cast<std::size_t>(std::max_element(counts.begin(), counts.end()) - counts.begin());
}

}  // namespace

Vote cast_vote(std::span<const float> probs) { return argmax_vote(probs); }
Vote cast_vote(std::span<const double> probs) { return argmax_vote(probs); }

std::vector<std::size_t> vote_order(std::span<const double> costs) {
    std::vector<std::size_t> pi(costs.size());
    std::iota(pi.begin(), pi.end(), std::size_t{0});
    std::stable_sort(pi.begin(), pi.end(), [&](std::size_t a, std::size_t b) { return costs[a] < costs[b]; });
    return pi;
}

QuorumOutcome run_quorum(std::span<const Vote> votes, std::size_t learners, std::size_t classes) {
    if (learners < 2) throw ConfigError("run_quorum: K ≥ 2 required (got " + std::to_string(learners) + ")");
    if (classes < 1) throw ConfigError("run_quorum: C must be positive");
    if (votes.size() != learners)
        throw std::invalid_argument("run_quorum: expected " + std::to_string(learners) + " votes, got " +
                                    std::to_string(votes.size()));

    const std::size_t need = quorum_size(learners);
    QuorumOutcome out;
    out.counts.assign(classes, 0);

    for (std::size_t m = 0; m < learners; ++m) {
        if (votes[m].cls >= classes) throw std::invalid_argument("run_quorum: vote class out of range");
        ++out.counts[votes[m].cls];

        const std::size_t leader = leading_class(out.counts);
        const std::size_t remaining = learners - m - 1;
        bool decided = false;
        if (out.counts[leader] >= need) {
            out.kind = QuorumKind::Reached;
            decided = true;
        } else {
            const bool viable = std::any_of(out.counts.begin(), out.counts.end(),
                                            [&](std::size_t c) { return c + remaining >= need; });
            if (!viable) {
                out.kind = QuorumKind::Unfeasible;
                decided = true;
            }
        }
        if (!decided) continue;

        out.pivot_rank = m;
        out.consensus_class = leader;
        for (std::size_t r = 0; r <= m; ++r) {
            if (votes[r].cls == leader) out.supporters.push_back(r);
        }
        return out;
    }
    // With zero votes remaining after the last rank, one of the two branches above always fires.
    throw std::logic_error("run_quorum: undecided after all votes");
}

}  // namespace squad
