#pragma once

#include "squad/engine.hpp"

#include <json.hpp>

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace squad {

inline constexpr std::size_t kDefaultBins = 15;

struct CalibrationBin {
    double lower = 0.0;
    double upper = 0.0;
    std::size_t count = 0;
    double mean_confidence = 0.0;
    double mean_accuracy = 0.0;
};

struct CalibrationReport {
    std::vector<CalibrationBin> bins;
    std::size_t total = 0;
    double ece = 0.0;
};

/// Bin b covers (b/M, (b+1)/M]; confidence 0 falls in bin 0.
std::size_t calibration_bin(double confidence, std::size_t bins);

CalibrationReport ece(std::span<const double> confidences, const std::vector<bool>& correct,
                      std::size_t bins = kDefaultBins);

/// Per-exit calibration of the decided samples plus the pooled population.
struct ExitCalibration {
    std::vector<CalibrationReport> per_exit;
    CalibrationReport all;
};

ExitCalibration exit_calibration(std::span<const InferenceTrace> traces, const LabelVector& labels,
                                 std::size_t exits, std::size_t bins = kDefaultBins);

/// Mean pairwise argmax disagreement; predictions[i][n] is learner i's class on sample n.
double ppd(const std::vector<std::vector<std::size_t>>& predictions);

/// Fraction of samples on which learners i and j disagree, for all pairs.
std::vector<std::vector<double>> disagreement_matrix(const std::vector<std::vector<std::size_t>>& predictions);

struct DiversityReport {
    std::vector<double> ppd;
    std::vector<std::vector<std::vector<double>>> disagreement;
};

DiversityReport diversity_report(const PredictionTensor& probs);

struct UsageReport {
    std::vector<double> exit_ratio;
    /// pivot_ratio[e][m]; nullopt when no sample was decided at exit e.
    std::vector<std::optional<std::vector<double>>> pivot_ratio;
};

/// Throws std::invalid_argument on empty traces.
UsageReport usage_report(std::span<const InferenceTrace> traces, std::size_t exits, std::size_t learners);

struct SweepRow {
    CriterionKind criterion = CriterionKind::TTestLCB;
    double tau = 0.0;
    double alpha = 0.05;
    double accuracy = 0.0;
    double mean_fm = 0.0;
    double mean_fmt = 0.0;
};

std::vector<SweepRow> sweep(const Bundle& bundle, std::span<const ExitCriterion> criteria,
                            const EngineOptions& options = {});

// Serialization of reports. CSV outputs carry a single header row.
std::string sweep_csv(std::span<const SweepRow> rows);
nlohmann::json sweep_json(std::span<const SweepRow> rows);
std::string calibration_csv(const ExitCalibration& cal);
nlohmann::json calibration_json(const ExitCalibration& cal);
std::string usage_csv(const UsageReport& usage);
nlohmann::json usage_json(const UsageReport& usage);
std::string diversity_csv(const DiversityReport& div);
nlohmann::json diversity_json(const DiversityReport& div);
nlohmann::json trace_json(const InferenceTrace& trace);

}  // namespace squad
