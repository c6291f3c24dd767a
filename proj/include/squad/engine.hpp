#pragma once

#include "squad/exit_gate.hpp"
#include "squad/quorum.hpp"
#include "squad/tensor_io.hpp"

#include <cstddef>
#include <optional>
#include <vector>

namespace squad {

struct StageRecord {
    std::size_t exit_index = 0;
    /// Learner indices in voting order at this stage.
    std::vector<std::size_t> order;
    QuorumOutcome outcome;
    /// Absent when the quorum was unfeasible.
    std::optional<GateDecision> gate;
    /// Latency share: cost of the pivot branch, C_{pi(m),e}.
    double fm_contrib = 0.0;
    /// Energy share: completed work up to the pivot plus the interrupted heavier branches.
    double fmt_contrib = 0.0;
};

struct InferenceTrace {
    std::size_t sample_index = 0;
    std::size_t predicted_class = 0;
    std::size_t decided_exit = 0;
    bool forced = false;
    /// Confidence attached to the decision, used for calibration reports:
    /// the gate's sample mean at the deciding stage, or (forced without a
    /// reached quorum) the mean max-softmax of the learners voting for the
    /// predicted class in the full final-stage tally.
    double confidence = 0.0;
    std::vector<StageRecord> stages;
    double f_m = 0.0;
    double f_mt = 0.0;
};

struct EngineOptions {
    /// Reuse the stage-0 voting order at every stage instead of re-sorting per stage.
    bool freeze_order = false;
};

struct DatasetSummary {
    std::size_t samples = 0;
    double accuracy = 0.0;
    double mean_fm = 0.0;
    double mean_fmt = 0.0;
};

struct DatasetResult {
    std::vector<InferenceTrace> traces;
    DatasetSummary summary;
};

/// Per-stage cost shares for pivot rank m under the given voting order.
double stage_fm(const CostModel& costs, std::size_t exit, const std::vector<std::size_t>& order, std::size_t pivot);
double stage_fmt(const CostModel& costs, std::size_t exit, const std::vector<std::size_t>& order, std::size_t pivot);

/// Runs the vertical exit loop for sample n. Throws std::invalid_argument on
/// dimension mismatch between tensor and costs.
InferenceTrace infer_sample(const PredictionTensor& probs, std::size_t n, const CostModel& costs,
                            const ExitCriterion& criterion, const EngineOptions& options = {});

DatasetResult infer_dataset(const Bundle& bundle, const ExitCriterion& criterion, const EngineOptions& options = {});

}  // namespace squad
