#include "squad/cli.hpp"

#include "squad/engine.hpp"
#include "squad/metrics.hpp"
#include "squad/toytrain.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <fstream>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>

namespace squad {

namespace fs = std::filesystem;

namespace {

std::string join(const std::vector<double>& v, char sep) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) s += sep;
        s += format_double(v[i]);
    }
    return s;
}

std::string join_sizes(const std::vector<std::size_t>& v, char sep) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) s += sep;
        s += std::to_string(v[i]);
    }
    return s;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open " + path.string() + " for writing");
    f << text;
    if (!f) throw IoError("write failed: " + path.string());
}

void write_json(const fs::path& path, const nlohmann::json& j) { write_text(path, j.dump(2) + "\n"); }

void prepare_out(const fs::path& out) {
    std::error_code ec;
    fs::create_directories(out, ec);
    if (ec || !fs::is_directory(out)) throw IoError("cannot create output directory " + out.string());
}

std::size_t to_size(long long v, const std::string& what) {
    if (v < 0) throw UsageError(what + " must be non-negative");
    return static_cast<std::size_t>(v);
}

std::vector<std::size_t> to_sizes(const std::vector<long long>& v, const std::string& what) {
    std::vector<std::size_t> out;
    for (long long x : v) out.push_back(to_size(x, what));
    return out;
}

// Keys accepted in --config files; flags take precedence.
void apply_config_file(RunConfig& c, const KeyValueConfig& kv) {
    static const std::set<std::string> known{
        "criterion", "tau", "alpha", "bins", "seed", "classes", "overlap", "dim", "base_sigma", "separation",
        "train_size", "test_size", "learners", "exits", "train.epochs", "train.learning_rate", "train.momentum",
        "train.batch_size", "train.final_weight", "op_widths", "validation_fraction", "warmup.epochs",
        "warmup.learning_rate", "warmup.momentum", "warmup.batch_size", "warmup.temperature", "elbo.beta_kl",
        "elbo.eta", "elbo.cost_weight", "elbo.samples", "elbo.steps", "elbo.temp_start", "elbo.temp_end",
        "svgd.particles", "svgd.step_size", "svgd.momentum", "svgd.delta", "svgd.bandwidth", "svgd.iterations",
        "prior_scale", "init_spread", "ensemble_size"};
    for (const auto& k : kv.keys())
        if (!known.count(k)) throw UsageError("unknown config key '" + k + "'");

    if (auto v = kv.find("criterion")) {
        c.criteria.clear();
        std::stringstream ss(*v);
        std::string item;
        while (std::getline(ss, item, ',')) c.criteria.push_back(parse_criterion(item));
    }
    c.tau = kv.get_double_list("tau", c.tau);
    c.alpha = kv.get_double("alpha", c.alpha);
    c.bins = to_size(kv.get_int("bins", static_cast<long long>(c.bins)), "bins");
    c.seed = static_cast<std::uint64_t>(kv.get_int("seed", static_cast<long long>(c.seed)));

    auto& t = c.synthetic;
    t.classes = to_size(kv.get_int("classes", static_cast<long long>(t.classes)), "classes");
    t.overlap = kv.get_double("overlap", t.overlap);
    t.dim = to_size(kv.get_int("dim", static_cast<long long>(t.dim)), "dim");
    t.base_sigma = kv.get_double("base_sigma", t.base_sigma);
    t.separation = kv.get_double("separation", t.separation);
    t.train_size = to_size(kv.get_int("train_size", static_cast<long long>(t.train_size)), "train_size");
    t.test_size = to_size(kv.get_int("test_size", static_cast<long long>(t.test_size)), "test_size");

    c.learners = to_size(kv.get_int("learners", static_cast<long long>(c.learners)), "learners");
    c.exits = to_size(kv.get_int("exits", static_cast<long long>(c.exits)), "exits");
    c.train.epochs = to_size(kv.get_int("train.epochs", static_cast<long long>(c.train.epochs)), "train.epochs");
    c.train.learning_rate = kv.get_double("train.learning_rate", c.train.learning_rate);
    c.train.momentum = kv.get_double("train.momentum", c.train.momentum);
    c.train.batch_size =
        to_size(kv.get_int("train.batch_size", static_cast<long long>(c.train.batch_size)), "train.batch_size");
    c.train.final_weight = kv.get_double("train.final_weight", c.train.final_weight);

    auto& s = c.search;
    std::vector<long long> widths(s.op_widths.begin(), s.op_widths.end());
    s.op_widths = to_sizes(kv.get_int_list("op_widths", widths), "op_widths");
    s.validation_fraction = kv.get_double("validation_fraction", s.validation_fraction);
    s.warmup.epochs = to_size(kv.get_int("warmup.epochs", static_cast<long long>(s.warmup.epochs)), "warmup.epochs");
    s.warmup.learning_rate = kv.get_double("warmup.learning_rate", s.warmup.learning_rate);
    s.warmup.momentum = kv.get_double("warmup.momentum", s.warmup.momentum);
    s.warmup.batch_size =
        to_size(kv.get_int("warmup.batch_size", static_cast<long long>(s.warmup.batch_size)), "warmup.batch_size");
    s.warmup.temperature = kv.get_double("warmup.temperature", s.warmup.temperature);
    s.elbo.beta_kl = kv.get_double("elbo.beta_kl", s.elbo.beta_kl);
    s.elbo.eta = kv.get_double("elbo.eta", s.elbo.eta);
    s.elbo.cost_weight = kv.get_double("elbo.cost_weight", s.elbo.cost_weight);
    s.elbo.samples = to_size(kv.get_int("elbo.samples", static_cast<long long>(s.elbo.samples)), "elbo.samples");
    s.elbo.steps = to_size(kv.get_int("elbo.steps", static_cast<long long>(s.elbo.steps)), "elbo.steps");
    s.elbo.temp_start = kv.get_double("elbo.temp_start", s.elbo.temp_start);
    s.elbo.temp_end = kv.get_double("elbo.temp_end", s.elbo.temp_end);
    s.svgd.particles = to_size(kv.get_int("svgd.particles", static_cast<long long>(s.svgd.particles)), "svgd.particles");
    s.svgd.step_size = kv.get_double("svgd.step_size", s.svgd.step_size);
    s.svgd.momentum = kv.get_double("svgd.momentum", s.svgd.momentum);
    s.svgd.delta = kv.get_double("svgd.delta", s.svgd.delta);
    if (kv.contains("svgd.bandwidth")) s.svgd.bandwidth = kv.get_double("svgd.bandwidth", 1.0);
    s.svgd.iterations =
        to_size(kv.get_int("svgd.iterations", static_cast<long long>(s.svgd.iterations)), "svgd.iterations");
    s.prior_scale = kv.get_double("prior_scale", s.prior_scale);
    s.init_spread = kv.get_double("init_spread", s.init_spread);
    s.ensemble_size = to_size(kv.get_int("ensemble_size", static_cast<long long>(s.ensemble_size)), "ensemble_size");
}

ExitCriterion make_criterion(const RunConfig& c, CriterionKind kind, double tau) {
    ExitCriterion crit;
    crit.kind = kind;
    crit.tau_conf = tau;
    crit.alpha = c.alpha;
    return crit;
}

void validate(const RunConfig& c) {
    const auto& sub = c.subcommand;
    if (c.out.empty()) throw UsageError("--out is required");
    if ((sub == "infer" || sub == "sweep") && c.bundle.empty()) throw UsageError("--bundle is required");
    if (c.criteria.empty()) throw UsageError("--criterion must name at least one criterion");
    if (c.tau.empty()) throw UsageError(sub == "sweep" ? "empty sweep grid" : "--tau must not be empty");
    if (c.bins == 0) throw UsageError("--bins must be positive");
    try {
        for (auto kind : c.criteria)
            for (double t : c.tau) make_criterion(c, kind, t).validate();
        c.synthetic.validate();
    } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
    }
    if (sub == "infer" && c.criteria.size() != 1) throw UsageError("infer takes a single --criterion");
    if (sub == "train" && c.learners < 2) throw UsageError("--learners must be >= 2");
    if ((sub == "train" || sub == "search") && c.exits == 0) throw UsageError("--exits must be positive");
    if (sub == "search") {
        if (c.search.ensemble_size < 2) throw UsageError("--ensemble-size must be >= 2");
        if (c.search.svgd.particles < 2) throw UsageError("--particles must be >= 2");
    }
    for (const auto& p : {c.bundle, c.task, c.config})
        if (!p.empty() && !fs::exists(p)) throw UsageError("path does not exist: " + p.string());
}

Dataset task_for(const RunConfig& c, std::ostream& log) {
    if (!c.task.empty()) {
        log << "loading task from " << c.task.string() << "\n";
        return load_task(c.task);
    }
    log << "generating task (classes=" << c.synthetic.classes << ", overlap=" << format_double(c.synthetic.overlap)
        << ", seed=" << c.synthetic.seed << ")\n";
    return gen_task(c.synthetic);
}

void write_manifest(const RunConfig& c, const fs::path& out, const KeyValueConfig& extra = {}) {
    KeyValueConfig kv = describe(c);
    for (const auto& k : extra.keys()) kv.set(k, *extra.find(k));
    kv.save(out / "run_manifest.txt");
}

}  // namespace

KeyValueConfig describe(const RunConfig& c) {
    KeyValueConfig kv;
    kv.set("subcommand", c.subcommand);
    kv.set("bundle", c.bundle.string());
    kv.set("task", c.task.string());
    kv.set("out", c.out.string());
    kv.set("config", c.config.string());
    std::string crits;
    for (std::size_t i = 0; i < c.criteria.size(); ++i) crits += (i ? "," : "") + to_string(c.criteria[i]);
    kv.set("criterion", crits);
    kv.set("tau", join(c.tau, ','));
    kv.set("alpha", c.alpha);
    kv.set("bins", c.bins);
    kv.set("seed", std::to_string(c.seed));
    const auto& t = c.synthetic;
    kv.set("classes", t.classes);
    kv.set("overlap", t.overlap);
    kv.set("dim", t.dim);
    kv.set("base_sigma", t.base_sigma);
    kv.set("separation", t.separation);
    kv.set("train_size", t.train_size);
    kv.set("test_size", t.test_size);
    kv.set("task_seed", std::to_string(t.seed));
    kv.set("learners", c.learners);
    kv.set("exits", c.exits);
    kv.set("train.epochs", c.train.epochs);
    kv.set("train.learning_rate", c.train.learning_rate);
    kv.set("train.momentum", c.train.momentum);
    kv.set("train.batch_size", c.train.batch_size);
    kv.set("train.final_weight", c.train.final_weight);
    const auto& s = c.search;
    kv.set("op_widths", join_sizes(s.op_widths, ','));
    kv.set("validation_fraction", s.validation_fraction);
    kv.set("warmup.epochs", s.warmup.epochs);
    kv.set("warmup.learning_rate", s.warmup.learning_rate);
    kv.set("warmup.momentum", s.warmup.momentum);
    kv.set("warmup.batch_size", s.warmup.batch_size);
    kv.set("warmup.temperature", s.warmup.temperature);
    kv.set("warmup.seed", std::to_string(s.warmup.seed));
    kv.set("elbo.beta_kl", s.elbo.beta_kl);
    kv.set("elbo.eta", s.elbo.eta);
    kv.set("elbo.cost_weight", s.elbo.cost_weight);
    kv.set("elbo.samples", s.elbo.samples);
    kv.set("elbo.steps", s.elbo.steps);
    kv.set("elbo.temp_start", s.elbo.temp_start);
    kv.set("elbo.temp_end", s.elbo.temp_end);
    kv.set("elbo.seed", std::to_string(s.elbo.seed));
    kv.set("svgd.particles", s.svgd.particles);
    kv.set("svgd.step_size", s.svgd.step_size);
    kv.set("svgd.momentum", s.svgd.momentum);
    kv.set("svgd.delta", s.svgd.delta);
    kv.set("svgd.bandwidth", s.svgd.bandwidth ? format_double(*s.svgd.bandwidth) : std::string("median"));
    kv.set("svgd.iterations", s.svgd.iterations);
    kv.set("prior_scale", s.prior_scale);
    kv.set("init_spread", s.init_spread);
    kv.set("ensemble_size", s.ensemble_size);
    kv.set("search.train_epochs", s.train.epochs);
    kv.set("search.seed", std::to_string(s.seed));
    return kv;
}

RunConfig parse_command_line(const std::vector<std::string>& args) {
    CLI::App app{"Quorum-based early-exit ensemble toolkit"};
    app.require_subcommand(1);

    std::string out, bundle, task, config, criterion, tau;
    std::optional<double> alpha, overlap, delta;
    std::optional<long long> bins, seed, classes, learners, exits, ensemble_size, particles, iters;

    auto add_common = [&](CLI::App* s) {
        s->add_option("--out", out, "Output directory");
        s->add_option("--config", config, "key=value file with additional settings");
        s->add_option("--seed", seed, "Random seed");
    };
    auto add_task = [&](CLI::App* s) {
        s->add_option("--task", task, "Task directory written by gen-data");
        s->add_option("--classes", classes, "Number of classes of a generated task");
        s->add_option("--overlap", overlap, "Class overlap of a generated task");
    };
    auto add_gate = [&](CLI::App* s) {
        s->add_option("--bundle", bundle, "Bundle directory");
        s->add_option("--criterion", criterion, "mean or ttest (sweep: comma-separated list)");
        s->add_option("--tau", tau, "Threshold, or comma-separated list");
        s->add_option("--alpha", alpha, "Significance level of the lower confidence bound");
        s->add_option("--bins", bins, "Calibration bins");
    };

    auto* gen = app.add_subcommand("gen-data", "Generate a synthetic Gaussian-mixture task");
    add_common(gen);
    gen->add_option("--classes", classes, "Number of classes");
    gen->add_option("--overlap", overlap, "Class overlap");

    auto* train = app.add_subcommand("train", "Jointly train an ensemble of early-exit learners and export a bundle");
    add_common(train);
    add_task(train);
    train->add_option("--learners", learners, "Ensemble size K");
    train->add_option("--exits", exits, "Exits per learner E");

    auto* infer = app.add_subcommand("infer", "Run quorum inference over a bundle");
    add_common(infer);
    add_gate(infer);

    auto* sweep_cmd = app.add_subcommand("sweep", "Evaluate a grid of exit criteria over a bundle");
    add_common(sweep_cmd);
    add_gate(sweep_cmd);

    auto* search = app.add_subcommand("search", "Architecture search and ensemble export");
    add_common(search);
    add_task(search);
    search->add_option("--exits", exits, "Exits per architecture");
    search->add_option("--ensemble-size", ensemble_size, "Number of learners in the exported ensemble");
    search->add_option("--delta", delta, "SVGD repulsion coefficient delta");
    search->add_option("--particles", particles, "SVGD particles");
    search->add_option("--iters", iters, "SVGD iterations");

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() != 0) throw;
        std::ostringstream text;
        app.exit(e, text, text);
        throw HelpRequested(text.str());
    }

    RunConfig c;
    for (auto* s : {gen, train, infer, sweep_cmd, search})
        if (s->parsed()) c.subcommand = s->get_name();
    if (c.subcommand == "sweep") {
        c.criteria = {CriterionKind::MeanConfidence, CriterionKind::TTestLCB};
        c.tau = kTauPresets;
    }
    c.config = config;
    if (!config.empty()) {
        if (!fs::exists(config)) throw UsageError("config file does not exist: " + config);
        try {
            apply_config_file(c, KeyValueConfig::load(config));
        } catch (const UsageError&) {
            throw;
        } catch (const std::invalid_argument& e) {
            throw UsageError(e.what());
        }
    }

    try {
        if (!criterion.empty()) {
            c.criteria.clear();
            std::stringstream ss(criterion);
            std::string item;
            while (std::getline(ss, item, ',')) c.criteria.push_back(parse_criterion(item));
        }
        if (infer->count("--tau") + sweep_cmd->count("--tau") > 0)
            c.tau = tau.empty() ? std::vector<double>{} : parse_double_list(tau, "--tau");
    } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
    }
    if (alpha) c.alpha = *alpha;
    if (bins) c.bins = to_size(*bins, "--bins");
    if (seed) {
        if (*seed < 0) throw UsageError("--seed must be non-negative");
        c.seed = static_cast<std::uint64_t>(*seed);
    }
    if (classes) c.synthetic.classes = to_size(*classes, "--classes");
    if (overlap) c.synthetic.overlap = *overlap;
    if (learners) c.learners = to_size(*learners, "--learners");
    if (exits) c.exits = to_size(*exits, "--exits");
    if (ensemble_size) c.search.ensemble_size = to_size(*ensemble_size, "--ensemble-size");
    if (delta) c.search.svgd.delta = *delta;
    if (particles) c.search.svgd.particles = to_size(*particles, "--particles");
    if (iters) c.search.svgd.iterations = to_size(*iters, "--iters");
    c.bundle = bundle;
    c.task = task;
    c.out = out;

    // One seed drives the whole run; sub-seeds are fixed offsets so outputs replay exactly.
    c.synthetic.seed = c.seed;
    c.train.seed = c.seed + 1;
    c.search.exits = c.exits;
    c.search.seed = c.seed + 2;
    c.search.warmup.seed = c.seed + 3;
    c.search.elbo.seed = c.seed + 4;

    validate(c);
    return c;
}

void cmd_gen_data(const RunConfig& c, std::ostream& log) {
    prepare_out(c.out);
    const Dataset data = gen_task(c.synthetic);
    save_task(data, c.out);
    write_manifest(c, c.out);
    log << "wrote task with " << data.y_train.size() << " train / " << data.y_test.size() << " test samples to "
        << c.out.string() << "\n";
}

void cmd_train(const RunConfig& c, std::ostream& log) {
    prepare_out(c.out);
    const Dataset data = task_for(c, log);
    std::vector<ToyLearner> learners;
    KeyValueConfig extra;
    for (std::size_t k = 0; k < c.learners; ++k) {
        const std::size_t width = 8 + 4 * k;
        LearnerSpec spec{data.task.dim, data.task.classes, std::vector<std::size_t>(c.exits, width)};
        const std::uint64_t seed = c.train.seed + 100 * k;
        ToyLearner learner(spec, seed);
        JointLossConfig tc = c.train;
        tc.seed = seed;
        const auto result = train_joint(learner, data.x_train, data.y_train, tc);
        log << "learner " << k << " widths " << join_sizes(spec.widths, 'x') << " final loss "
            << format_double(result.loss_curve.empty() ? 0.0 : result.loss_curve.back()) << "\n";
        extra.set("learner" + std::to_string(k) + ".widths", join_sizes(spec.widths, ','));
        extra.set("learner" + std::to_string(k) + ".seed", std::to_string(seed));
        learners.push_back(std::move(learner));
    }
    export_ensemble(learners, data.x_test, data.y_test, c.out);
    write_manifest(c, c.out, extra);
}

void cmd_infer(const RunConfig& c, std::ostream& log) {
    const Bundle bundle = read_bundle(c.bundle);
    const std::size_t E = bundle.probs.exits();
    if (c.tau.size() != 1 && c.tau.size() != E)
        throw UsageError("--tau lists " + std::to_string(c.tau.size()) + " values for " + std::to_string(E) + " exits");
    ExitCriterion crit = make_criterion(c, c.criteria.front(), c.tau.front());
    if (c.tau.size() > 1) crit.stage_tau = c.tau;
    prepare_out(c.out);

    const DatasetResult result = infer_dataset(bundle, crit);
    {
        std::string lines;
        for (const auto& t : result.traces) lines += trace_json(t).dump() + "\n";
        write_text(c.out / "traces.jsonl", lines);
    }
    const UsageReport usage = usage_report(result.traces, E, bundle.probs.learners());
    const ExitCalibration cal = exit_calibration(result.traces, bundle.labels, E, c.bins);
    const DiversityReport div = diversity_report(bundle.probs);

    std::string pivots;
    for (std::size_t e = 0; e < usage.pivot_ratio.size(); ++e) {
        if (e) pivots += ';';
        pivots += usage.pivot_ratio[e] ? join(*usage.pivot_ratio[e], '|') : "-";
    }
    std::ostringstream summary;
    summary << "samples,accuracy,mean_fm,mean_fmt,exit_ratio,pivot_ratio\n"
            << result.summary.samples << ',' << format_double(result.summary.accuracy) << ','
            << format_double(result.summary.mean_fm) << ',' << format_double(result.summary.mean_fmt) << ','
            << join(usage.exit_ratio, '|') << ',' << pivots << "\n";
    write_text(c.out / "summary.csv", summary.str());
    write_text(c.out / "calibration.csv", calibration_csv(cal));
    write_json(c.out / "calibration.json", calibration_json(cal));
    write_text(c.out / "usage.csv", usage_csv(usage));
    write_json(c.out / "usage.json", usage_json(usage));
    write_text(c.out / "diversity.csv", diversity_csv(div));
    write_json(c.out / "diversity.json", diversity_json(div));
    write_manifest(c, c.out);
    log << "accuracy " << format_double(result.summary.accuracy) << ", mean F_M " << format_double(result.summary.mean_fm)
        << ", mean F_MT " << format_double(result.summary.mean_fmt) << "\n";
}

void cmd_sweep(const RunConfig& c, std::ostream& log) {
    const Bundle bundle = read_bundle(c.bundle);
    std::vector<ExitCriterion> grid;
    std::set<std::pair<int, double>> seen;
    for (auto kind : c.criteria)
        for (double t : c.tau)
            if (seen.emplace(static_cast<int>(kind), t).second) grid.push_back(make_criterion(c, kind, t));
    if (grid.empty()) throw UsageError("empty sweep grid");
    prepare_out(c.out);
    const auto rows = sweep(bundle, grid);
    write_text(c.out / "sweep.csv", sweep_csv(rows));
    write_json(c.out / "sweep.json", sweep_json(rows));
    write_manifest(c, c.out);
    log << "evaluated " << rows.size() << " grid points\n";
}

void cmd_search(const RunConfig& c, std::ostream& log) {
    prepare_out(c.out);
    const Dataset data = task_for(c, log);
    const SearchResult r = run_search(data, c.search);
    if (!r.selection.warning.empty()) log << "warning: " << r.selection.warning << "\n";

    nlohmann::json arch = nlohmann::json::object();
    arch["op_widths"] = c.search.op_widths;
    arch["edge_macs"] = nlohmann::json::array();
    for (const auto& e : r.supernet.edges) {
        nlohmann::json row = nlohmann::json::array();
        for (const auto& op : e) row.push_back(op.macs);
        arch["edge_macs"].push_back(row);
    }
    arch["elbo_logits"] = r.elbo.phi.alpha;
    arch["warning"] = r.selection.warning;
    arch["architectures"] = nlohmann::json::array();
    for (std::size_t i = 0; i < r.selection.architectures.size(); ++i) {
        const auto& a = r.selection.architectures[i];
        arch["architectures"].push_back({{"ops", a},
                                         {"widths", r.supernet.learner_spec(a).widths},
                                         {"validation_loss", r.selection.nll[i]}});
    }
    arch["members"] = nlohmann::json::array();
    for (std::size_t i = 0; i < r.members.size(); ++i) {
        const auto& m = r.members[i];
        arch["members"].push_back({{"architecture", m.architecture},
                                   {"seed", m.seed},
                                   {"widths", r.learners[i].spec().widths},
                                   {"stage_macs", stage_macs(r.learners[i].spec())},
                                   {"final_loss", r.training[i].loss_curve.empty() ? 0.0 : r.training[i].loss_curve.back()}});
    }
    write_json(c.out / "architectures.json", arch);

    std::ostringstream traj;
    traj << "iteration,particle,log_posterior";
    for (std::size_t d = 0; d < r.supernet.dimension(); ++d) traj << ",x" << d;
    traj << "\n";
    for (const auto& row : r.trajectory) {
        traj << row.iteration << ',' << row.particle << ',' << format_double(row.log_posterior);
        for (double v : row.position) traj << ',' << format_double(v);
        traj << "\n";
    }
    write_text(c.out / "trajectory.csv", traj.str());

    std::ostringstream elbo;
    elbo << "step,temperature,nll,kl,penalty,elbo\n";
    for (std::size_t t = 0; t < r.elbo.history.size(); ++t) {
        const auto& h = r.elbo.history[t];
        elbo << t << ',' << format_double(r.elbo.temperatures[t]) << ',' << format_double(h.nll) << ','
             << format_double(h.kl) << ',' << format_double(h.penalty) << ',' << format_double(h.elbo) << "\n";
    }
    write_text(c.out / "elbo.csv", elbo.str());

    std::ostringstream warm;
    warm << "epoch,loss\n";
    for (std::size_t t = 0; t < r.warmup_curve.size(); ++t) warm << t << ',' << format_double(r.warmup_curve[t]) << "\n";
    write_text(c.out / "warmup.csv", warm.str());

    export_ensemble(r.learners, data.x_test, data.y_test, c.out / "bundle");

    KeyValueConfig extra;
    for (std::size_t i = 0; i < r.members.size(); ++i) {
        extra.set("member" + std::to_string(i) + ".ops", join_sizes(r.selection.architectures[r.members[i].architecture], ','));
        extra.set("member" + std::to_string(i) + ".seed", std::to_string(r.members[i].seed));
    }
    write_manifest(c, c.out, extra);
    log << "selected " << r.selection.architectures.size() << " architecture(s); ensemble of " << r.members.size()
        << " written to " << (c.out / "bundle").string() << "\n";
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    RunConfig cfg;
    try {
        cfg = parse_command_line(args);
    } catch (const HelpRequested& h) {
        out << h.what();
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        err << "usage error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const UsageError& e) {
        err << "usage error: " << e.what() << "\n";
        return kExitUsage;
    }
    try {
        if (cfg.subcommand == "gen-data") cmd_gen_data(cfg, err);
        else if (cfg.subcommand == "train") cmd_train(cfg, err);
        else if (cfg.subcommand == "infer") cmd_infer(cfg, err);
        else if (cfg.subcommand == "sweep") cmd_sweep(cfg, err);
        else cmd_search(cfg, err);
    } catch (const UsageError& e) {
        err << "usage error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kExitFailure;
    }
    return kExitOk;
}

}  // namespace squad
