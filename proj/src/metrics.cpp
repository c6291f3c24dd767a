#include "squad/metrics.hpp"

#include "squad/kv_config.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace squad {

using nlohmann::json;

std::size_t calibration_bin(double confidence, std::size_t bins) {
    if (bins == 0) throw std::invalid_argument("calibration_bin: M must be positive");
    if (!(confidence > 0.0)) return 0;
    const double scaled = confidence * static_cast<double>(bins);
    auto b = static_cast<std::size_t>(std::ceil(scaled));
    b = b == 0 ? 0 : b - 1;
    // ceil() can overshoot by one when confidence*M rounds up past an edge.
    if (b > 0 && confidence <= static_cast<double>(b) / static_cast<double>(bins)) --b;
    return std::min(b, bins - 1);
}

CalibrationReport ece(std::span<const double> confidences, const std::vector<bool>& correct, std::size_t bins) {
    if (confidences.size() != correct.size())
        throw std::invalid_argument("ece: " + std::to_string(confidences.size()) + " confidences vs " +
                                    std::to_string(correct.size()) + " correctness flags");
    if (bins == 0) throw std::invalid_argument("ece: M must be positive");
    for (double c : confidences)
        if (!(c >= 0.0 && c <= 1.0)) throw std::invalid_argument("ece: confidence outside [0,1]");

    CalibrationReport report;
    report.bins.resize(bins);
    std::vector<double> conf_sum(bins, 0.0), acc_sum(bins, 0.0);
    for (std::size_t b = 0; b < bins; ++b) {
        report.bins[b].lower = static_cast<double>(b) / static_cast<double>(bins);
        report.bins[b].upper = static_cast<double>(b + 1) / static_cast<double>(bins);
    }
    for (std::size_t i = 0; i < confidences.size(); ++i) {
        const std::size_t b = calibration_bin(confidences[i], bins);
        ++report.bins[b].count;
        conf_sum[b] += confidences[i];
        acc_sum[b] += correct[i] ? 1.0 : 0.0;
    }
    report.total = confidences.size();
    if (report.total == 0) return report;

    for (std::size_t b = 0; b < bins; ++b) {
        auto& bin = report.bins[b];
        if (bin.count == 0) continue;
        bin.mean_confidence = conf_sum[b] / static_cast<double>(bin.count);
        bin.mean_accuracy = acc_sum[b] / static_cast<double>(bin.count);
        report.ece += static_cast<double>(bin.count) / static_cast<double>(report.total) *
                      std::abs(bin.mean_accuracy - bin.mean_confidence);
    }
    return report;
}

ExitCalibration exit_calibration(std::span<const InferenceTrace> traces, const LabelVector& labels,
                                 std::size_t exits, std::size_t bins) {
    std::vector<std::vector<double>> conf(exits);
    std::vector<std::vector<bool>> hit(exits);
    std::vector<double> all_conf;
    std::vector<bool> all_hit;
    for (const auto& t : traces) {
        if (t.decided_exit >= exits) throw std::invalid_argument("exit_calibration: trace exit out of range");
        if (t.sample_index >= labels.y.size()) throw std::invalid_argument("exit_calibration: missing label");
        const bool ok = t.predicted_class == labels.y[t.sample_index];
        conf[t.decided_exit].push_back(t.confidence);
        hit[t.decided_exit].push_back(ok);
        all_conf.push_back(t.confidence);
        all_hit.push_back(ok);
    }
    ExitCalibration out;
    for (std::size_t e = 0; e < exits; ++e) out.per_exit.push_back(ece(conf[e], hit[e], bins));
    out.all = ece(all_conf, all_hit, bins);
    return out;
}

namespace {

void check_predictions(const std::vector<std::vector<std::size_t>>& predictions) {
    if (predictions.size() < 2) throw std::invalid_argument("ppd: at least 2 learners required");
    for (const auto& p : predictions) {
        if (p.size() != predictions.front().size()) throw std::invalid_argument("ppd: unequal sample counts");
    }
    if (predictions.front().empty()) throw std::invalid_argument("ppd: no samples");
}

double pair_disagreement(const std::vector<std::size_t>& a, const std::vector<std::size_t>& b) {
    std::size_t diff = 0;
    for (std::size_t n = 0; n < a.size(); ++n) diff += a[n] != b[n];
    return static_cast<double>(diff) / static_cast<double>(a.size());
}

}  // namespace

double ppd(const std::vector<std::vector<std::size_t>>& predictions) {
    check_predictions(predictions);
    const std::size_t M = predictions.size();
    double sum = 0.0;
    for (std::size_t i = 0; i < M; ++i) {
        for (std::size_t j = i + 1; j < M; ++j) sum += pair_disagreement(predictions[i], predictions[j]);
    }
    return sum / (static_cast<double>(M * (M - 1)) / 2.0);
}

std::vector<std::vector<double>> disagreement_matrix(const std::vector<std::vector<std::size_t>>& predictions) {
    check_predictions(predictions);
    const std::size_t M = predictions.size();
    std::vector<std::vector<double>> d(M, std::vector<double>(M, 0.0));
    for (std::size_t i = 0; i < M; ++i) {
        for (std::size_t j = i + 1; j < M; ++j) d[i][j] = d[j][i] = pair_disagreement(predictions[i], predictions[j]);
    }
    return d;
}

DiversityReport diversity_report(const PredictionTensor& probs) {
    DiversityReport r;
    for (std::size_t e = 0; e < probs.exits(); ++e) {
        std::vector<std::vector<std::size_t>> preds(probs.learners(), std::vector<std::size_t>(probs.samples()));
        for (std::size_t k = 0; k < probs.learners(); ++k) {
            for (std::size_t n = 0; n < probs.samples(); ++n) preds[k][n] = cast_vote(probs.row(k, e, n)).cls;
        }
        r.ppd.push_back(ppd(preds));
        r.disagreement.push_back(disagreement_matrix(preds));
    }
    return r;
}

UsageReport usage_report(std::span<const InferenceTrace> traces, std::size_t exits, std::size_t learners) {
    if (traces.empty()) throw std::invalid_argument("usage_report: no traces");
    std::vector<std::size_t> at_exit(exits, 0);
    std::vector<std::vector<std::size_t>> pivots(exits, std::vector<std::size_t>(learners, 0));
    for (const auto& t : traces) {
        if (t.decided_exit >= exits || t.stages.empty())
            throw std::invalid_argument("usage_report: malformed trace");
        const std::size_t m = t.stages.back().outcome.pivot_rank;
        if (m >= learners) throw std::invalid_argument("usage_report: pivot rank out of range");
        ++at_exit[t.decided_exit];
        ++pivots[t.decided_exit][m];
    }
    UsageReport r;
    const double total = static_cast<double>(traces.size());
    for (std::size_t e = 0; e < exits; ++e) {
        r.exit_ratio.push_back(static_cast<double>(at_exit[e]) / total);
        if (at_exit[e] == 0) {
            r.pivot_ratio.emplace_back(std::nullopt);
            continue;
        }
        std::vector<double> row(learners);
        for (std::size_t m = 0; m < learners; ++m)
            row[m] = static_cast<double>(pivots[e][m]) / static_cast<double>(at_exit[e]);
        r.pivot_ratio.emplace_back(std::move(row));
    }
    return r;
}

std::vector<SweepRow> sweep(const Bundle& bundle, std::span<const ExitCriterion> criteria,
                            const EngineOptions& options) {
    std::vector<SweepRow> rows;
    for (const auto& c : criteria) {
        const auto res = infer_dataset(bundle, c, options);
        rows.push_back({c.kind, c.tau_conf, c.alpha, res.summary.accuracy, res.summary.mean_fm, res.summary.mean_fmt});
    }
    return rows;
}

std::string sweep_csv(std::span<const SweepRow> rows) {
    std::string out = "criterion,tau,alpha,accuracy,mean_fm,mean_fmt\n";
    for (const auto& r : rows) {
        out += to_string(r.criterion) + "," + format_double(r.tau) + "," + format_double(r.alpha) + "," +
               format_double(r.accuracy) + "," + format_double(r.mean_fm) + "," + format_double(r.mean_fmt) + "\n";
    }
    return out;
}

json sweep_json(std::span<const SweepRow> rows) {
    json arr = json::array();
    for (const auto& r : rows) {
        arr.push_back({{"criterion", to_string(r.criterion)},
                       {"tau", r.tau},
                       {"alpha", r.alpha},
                       {"accuracy", r.accuracy},
                       {"mean_fm", r.mean_fm},
                       {"mean_fmt", r.mean_fmt}});
    }
    return arr;
}

namespace {

void append_calibration_rows(std::string& out, const std::string& scope, const CalibrationReport& r) {
    for (std::size_t b = 0; b < r.bins.size(); ++b) {
        const auto& bin = r.bins[b];
        out += scope + "," + std::to_string(b) + "," + format_double(bin.lower) + "," + format_double(bin.upper) +
               "," + std::to_string(bin.count) + "," + format_double(bin.mean_confidence) + "," +
               format_double(bin.mean_accuracy) + "," + format_double(r.ece) + "\n";
    }
}

json calibration_report_json(const CalibrationReport& r) {
    json bins = json::array();
    for (const auto& b : r.bins) {
        bins.push_back({{"lower", b.lower},
                        {"upper", b.upper},
                        {"count", b.count},
                        {"mean_confidence", b.mean_confidence},
                        {"mean_accuracy", b.mean_accuracy}});
    }
    return {{"total", r.total}, {"ece", r.ece}, {"bins", bins}};
}

std::string join(const std::vector<double>& v, char sep) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) s += sep;
        s += format_double(v[i]);
    }
    return s;
}

}  // namespace

std::string calibration_csv(const ExitCalibration& cal) {
    std::string out = "scope,bin,lower,upper,count,mean_confidence,mean_accuracy,ece\n";
    for (std::size_t e = 0; e < cal.per_exit.size(); ++e)
        append_calibration_rows(out, "exit" + std::to_string(e), cal.per_exit[e]);
    append_calibration_rows(out, "all", cal.all);
    return out;
}

json calibration_json(const ExitCalibration& cal) {
    json per = json::array();
    for (const auto& r : cal.per_exit) per.push_back(calibration_report_json(r));
    return {{"per_exit", per}, {"all", calibration_report_json(cal.all)}};
}

std::string usage_csv(const UsageReport& usage) {
    std::string out = "exit,exit_ratio,pivot_ratio\n";
    for (std::size_t e = 0; e < usage.exit_ratio.size(); ++e) {
        out += std::to_string(e) + "," + format_double(usage.exit_ratio[e]) + ",";
        out += usage.pivot_ratio[e] ? join(*usage.pivot_ratio[e], '|') : std::string("-");
        out += "\n";
    }
    return out;
}

json usage_json(const UsageReport& usage) {
    json pivots = json::array();
    for (const auto& row : usage.pivot_ratio) pivots.push_back(row ? json(*row) : json(nullptr));
    return {{"exit_ratio", usage.exit_ratio}, {"pivot_ratio", pivots}};
}

std::string diversity_csv(const DiversityReport& div) {
    std::string out = "exit,ppd\n";
    for (std::size_t e = 0; e < div.ppd.size(); ++e) out += std::to_string(e) + "," + format_double(div.ppd[e]) + "\n";
    return out;
}

json diversity_json(const DiversityReport& div) {
    return {{"ppd", div.ppd}, {"disagreement", div.disagreement}};
}

json trace_json(const InferenceTrace& t) {
    json stages = json::array();
    for (const auto& s : t.stages) {
        json st = {{"exit", s.exit_index},
                   {"kind", s.outcome.reached() ? "reached" : "unfeasible"},
                   {"pivot_rank", s.outcome.pivot_rank},
                   {"pivot_learner", s.order[s.outcome.pivot_rank]},
                   {"consensus", s.outcome.consensus_class},
                   {"supporters", s.outcome.supporters},
                   {"fm", s.fm_contrib},
                   {"fmt", s.fmt_contrib}};
        if (s.gate) {
            st["gate"] = {{"exit", s.gate->exit},
                          {"statistic", std::isfinite(s.gate->statistic) ? json(s.gate->statistic) : json(nullptr)},
                          {"mean", s.gate->sample_mean},
                          {"sd", s.gate->sample_sd},
                          {"n", s.gate->n}};
        } else {
            st["gate"] = nullptr;
        }
        stages.push_back(std::move(st));
    }
    return {{"sample", t.sample_index},   {"predicted", t.predicted_class}, {"exit", t.decided_exit},
            {"forced", t.forced},         {"confidence", t.confidence},     {"f_m", t.f_m},
            {"f_mt", t.f_mt},             {"stages", stages}};
}

}  // namespace squad
