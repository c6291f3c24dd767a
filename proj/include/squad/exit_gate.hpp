#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace squad {

enum class CriterionKind { MeanConfidence, TTestLCB };

std::string to_string(CriterionKind kind);
/// Accepts "mean" or "ttest".
CriterionKind parse_criterion(const std::string& name);

struct ExitCriterion {
    CriterionKind kind = CriterionKind::TTestLCB;
    double tau_conf = 0.6;
    /// One-sided significance level of the lower confidence bound.
    double alpha = 0.05;
    /// Optional per-exit thresholds; when non-empty, entry e overrides tau_conf at exit e.
    std::vector<double> stage_tau;

    double tau_at(std::size_t exit) const;
    /// Throws ConfigError when a threshold is outside [0,1] or alpha outside (0, 0.5).
    void validate() const;
};

struct GateDecision {
    bool exit = false;
    /// Value compared against tau: the mean, or the LCB.
    double statistic = 0.0;
    double sample_mean = 0.0;
    /// Bessel-corrected; 0 when n == 1.
    double sample_sd = 0.0;
    std::size_t n = 0;
};

/// Upper-tail Student-t critical value: P(T_df > t) = alpha. Throws
/// std::domain_error for df < 1 or alpha outside (0, 1).
double t_critical(double alpha, double df);

/// Exit test on the supporters' confidences at one stage. Under TTestLCB a
/// single supporter has no defined bound, so the gate stays closed
/// (statistic = -inf). Exit requires statistic > tau (strict).
GateDecision evaluate_gate(std::span<const double> confidences, const ExitCriterion& criterion,
                           std::size_t exit_index = 0);

}  // namespace squad
