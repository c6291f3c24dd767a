#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

namespace squad {

class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// One learner's vote at an exit: predicted class and its max-softmax value.
struct Vote {
    std::size_t cls = 0;
    double confidence = 0.0;
};

enum class QuorumKind { Reached, Unfeasible };

struct QuorumOutcome {
    QuorumKind kind = QuorumKind::Unfeasible;
    /// 0-based rank in the voting order of the vote that decided the outcome.
    std::size_t pivot_rank = 0;
    /// Argmax of the tally at the pivot (lowest index on ties). Diagnostic only when Unfeasible.
    std::size_t consensus_class = 0;
    /// Ranks <= pivot_rank whose vote equals consensus_class, ascending.
    std::vector<std::size_t> supporters;
    /// Per-class tally after pivot_rank + 1 votes.
    std::vector<std::size_t> counts;

    bool reached() const { return kind == QuorumKind::Reached; }
};

/// Strict majority: floor(K/2) + 1.
constexpr std::size_t quorum_size(std::size_t voters) { return voters / 2 + 1; }

/// Argmax with lowest-index tie-break.
Vote cast_vote(std::span<const float> probs);
Vote cast_vote(std::span<const double> probs);

/// Learner indices sorted by ascending cost; equal costs keep ascending index order.
std::vector<std::size_t> vote_order(std::span<const double> costs);

/// Polls `votes` (already in voting order, one per learner) until the outcome
/// is decided: either the leader holds a quorum, or no class can still reach
/// one with the votes that remain. Throws ConfigError if K < 2 or C < 1,
/// std::invalid_argument on a vote class >= C.
QuorumOutcome run_quorum(std::span<const Vote> votes, std::size_t learners, std::size_t classes);

}  // namespace squad
