#include "squad/exit_gate.hpp"

#include "squad/quorum.hpp"

#include <boost/math/distributions/students_t.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace squad {

std::string to_string(CriterionKind kind) {
    return kind == CriterionKind::MeanConfidence ? "mean" : "ttest";
}

CriterionKind parse_criterion(const std::string& name) {
    if (name == "mean") return CriterionKind::MeanConfidence;
    if (name == "ttest") return CriterionKind::TTestLCB;
    throw ConfigError("unknown criterion '" + name + "' (expected mean or ttest)");
}

double ExitCriterion::tau_at(std::size_t exit) const {
    if (stage_tau.empty()) return tau_conf;
    return exit < stage_tau.size() ? stage_tau[exit] : stage_tau.back();
}

void ExitCriterion::validate() const {
    auto check_tau = [](double t) {
        if (!(t >= 0.0 && t <= 1.0)) throw ConfigError("tau_conf must lie in [0,1]");
    };
    check_tau(tau_conf);
    for (double t : stage_tau) check_tau(t);
    if (!(alpha > 0.0 && alpha < 0.5)) throw ConfigError("alpha must lie in (0, 0.5)");
}

double t_critical(double alpha, double df) {
    if (!(df >= 1.0)) throw std::domain_error("t_critical: df must be >= 1");
    if (!(alpha > 0.0 && alpha < 1.0)) throw std::domain_error("t_critical: alpha must lie in (0,1)");
    const boost::math::students_t dist(df);
    return boost::math::quantile(boost::math::complement(dist, alpha));
}

GateDecision evaluate_gate(std::span<const double> confidences, const ExitCriterion& criterion,
                           std::size_t exit_index) {
    if (confidences.empty()) throw std::invalid_argument("evaluate_gate: empty supporter set");

    GateDecision d;
    d.n = confidences.size();
    double sum = 0.0;
    for (double c : confidences) sum += c;
    d.sample_mean = sum / static_cast<double>(d.n);
    const bool constant = std::all_of(confidences.begin(), confidences.end(),
                                      [&](double c) { return c == confidences.front(); });
    if (constant) d.sample_mean = confidences.front();
    if (d.n > 1 && !constant) {
        double ss = 0.0;
        for (double c : confidences) ss += (c - d.sample_mean) * (c - d.sample_mean);
        d.sample_sd = std::sqrt(ss / static_cast<double>(d.n - 1));
    }

    if (criterion.kind == CriterionKind::MeanConfidence) {
        d.statistic = d.sample_mean;
    } else if (d.n < 2) {
        d.statistic = -std::numeric_limits<double>::infinity();
    } else if (d.sample_sd == 0.0) {
        d.statistic = d.sample_mean;
    } else {
        const double t = t_critical(criterion.alpha, static_cast<double>(d.n - 1));
        d.statistic = d.sample_mean - t * d.sample_sd / std::sqrt(static_cast<double>(d.n));
    }
    d.exit = d.statistic > criterion.tau_at(exit_index);
    return d;
}

}  // namespace squad
