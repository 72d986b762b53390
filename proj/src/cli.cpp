#include "byteveil/cli.hpp"

#include "byteveil/checkpoint.hpp"
#include "byteveil/error.hpp"
#include "byteveil/eval.hpp"
#include "byteveil/seeding.hpp"
#include "byteveil/synth_corpus.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>

namespace byteveil {

namespace fs = std::filesystem;

namespace {

void log(const std::string& msg)
{
    std::cerr << "[byteveil] " << msg << '\n';
}

void emit_summary(const nlohmann::json& j)
{
    std::cout << j.dump() << std::endl;
}

template <typename T>
void override_if(std::optional<T> flag, T& target)
{
    if (flag)
        target = *flag;
}

std::vector<std::uint8_t> parse_hex(const std::string& text)
{
    if (text.size() % 2 != 0)
        throw Error(ErrorCode::InvalidConfig, "motif hex string must have even length");
    std::vector<std::uint8_t> out;
    for (std::size_t i = 0; i < text.size(); i += 2) {
        std::size_t used = 0;
        const auto v = std::stoul(text.substr(i, 2), &used, 16);
        if (used != 2)
            throw Error(ErrorCode::InvalidConfig, "motif is not valid hex");
        out.push_back(static_cast<std::uint8_t>(v));
    }
    return out;
}

/// Flags shared by train/attack/evaluate for building a RunConfig.
struct ConfigFlags {
    std::string profile = "desk";
    std::string config_path;
    std::optional<std::size_t> d, window, stride, n_filters, hidden, e, epochs, batch_size, q_max, iters;
    std::optional<double> decov_weight, learning_rate;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> budgets, refresh;

    void attach(CLI::App* cmd, bool network_shape)
    {
        cmd->add_option("--profile", profile, "Constant set: desk or paper")
            ->check(CLI::IsMember({"desk", "paper"}));
        cmd->add_option("--config", config_path, "JSON file with run configuration fields");
        cmd->add_option("--seed", seed, "Seed for every random choice");
        if (network_shape) {
            cmd->add_option("--d", d, "Input dimension");
            cmd->add_option("--window", window, "Convolution window");
            cmd->add_option("--stride", stride, "Convolution stride");
            cmd->add_option("--filters", n_filters, "Filters per convolution branch");
            cmd->add_option("--hidden", hidden, "Fully-connected width");
            cmd->add_option("--embed", e, "Embedding width");
            cmd->add_option("--decov", decov_weight, "DeCov coefficient");
            cmd->add_option("--lr", learning_rate, "SGD learning rate");
            cmd->add_option("--epochs", epochs, "Training epochs");
            cmd->add_option("--batch-size", batch_size, "Mini-batch size");
        }
        cmd->add_option("--refresh", refresh, "Gradient refresh: per-iteration or per-byte");
    }

    RunConfig resolve() const
    {
        RunConfig cfg = RunConfig::profile(profile);
        if (!config_path.empty()) {
            std::ifstream in(config_path);
            if (!in)
                throw Error(ErrorCode::IoError, "cannot open config " + config_path);
            nlohmann::json j;
            try {
                j = nlohmann::json::parse(in);
            } catch (const nlohmann::json::parse_error& e) {
                throw Error(ErrorCode::InvalidConfig, "config " + config_path + ": " + e.what());
            }
            cfg.merge_json(j);
        }
        override_if(d, cfg.hyper.d);
        override_if(window, cfg.hyper.window);
        override_if(stride, cfg.hyper.stride);
        override_if(n_filters, cfg.hyper.n_filters);
        override_if(hidden, cfg.hyper.hidden);
        override_if(e, cfg.hyper.e);
        override_if(decov_weight, cfg.hyper.decov_weight);
        override_if(learning_rate, cfg.train.learning_rate);
        override_if(epochs, cfg.train.epochs);
        override_if(batch_size, cfg.train.batch_size);
        override_if(q_max, cfg.q_max);
        override_if(iters, cfg.max_iterations);
        override_if(seed, cfg.seed);
        if (budgets)
            cfg.budgets = parse_budget_list(*budgets);
        if (refresh)
            cfg.refresh = parse_refresh(*refresh);
        cfg.validate();
        return cfg;
    }
};

std::string checkpoint_name(const fs::path& out, std::size_t split, std::size_t n_splits)
{
    return n_splits == 1 ? out.string() : out.string() + "." + std::to_string(split);
}

/// `path` itself, or path.0, path.1, ... when only numbered files exist.
std::vector<fs::path> discover_checkpoints(const fs::path& path)
{
    if (fs::exists(path))
        return {path};
    std::vector<fs::path> out;
    for (std::size_t i = 0;; ++i) {
        fs::path p = path.string() + "." + std::to_string(i);
        if (!fs::exists(p))
            break;
        out.push_back(p);
    }
    if (out.empty())
        throw Error(ErrorCode::IoError, "no checkpoint at " + path.string());
    return out;
}

int cmd_gen_corpus(const std::string& out, const CorpusSpec& spec)
{
    const Manifest m = generate_corpus(spec, out);
    log("wrote " + std::to_string(m.entries.size()) + " files to " + out);
    emit_summary({{"command", "gen-corpus"},
                  {"files", m.entries.size()},
                  {"malware", spec.n_malware},
                  {"benign", spec.n_benign},
                  {"seed", spec.seed}});
    return kExitOk;
}

int cmd_train(const std::string& corpus_dir, const std::string& out, std::size_t n_splits,
              const std::string& metrics_path, const RunConfig& cfg)
{
    const Manifest manifest = load_manifest(corpus_dir);
    const auto splits = split_corpus(manifest, n_splits, cfg.seed);

    std::vector<EvalRecord> records;
    nlohmann::json split_summaries = nlohmann::json::array();
    for (std::size_t s = 0; s < splits.size(); ++s) {
        const auto train_set = load_samples(manifest, splits[s].train, cfg.hyper.d);
        const auto test_set = load_samples(manifest, splits[s].test, cfg.hyper.d);

        TrainConfig tc = cfg.train;
        tc.seed = derive_seed(cfg.seed, {0x7A, s});
        TrainReport report;
        log("split " + std::to_string(s) + ": training on " + std::to_string(train_set.size()) +
            " samples");
        const ModelParams params = train(cfg.hyper, train_set, tc, &report);
        const DetectionMetrics dm = precision_recall(params, test_set);

        const nlohmann::json meta = {
            {"split", {{"index", s}, {"repeats", n_splits}, {"seed", cfg.seed}}},
            {"corpus_seed", manifest.seed},
            {"run_config", cfg.to_json()},
            {"initial_loss", report.initial_loss},
            {"final_loss", report.final_loss},
        };
        const std::string path = checkpoint_name(out, s, n_splits);
        save_checkpoint(params, path, meta);

        const std::string id = std::to_string(s);
        const double nan = std::numeric_limits<double>::quiet_NaN();
        records.push_back({id, Metric::Precision, dm.precision.value_or(nan), {}});
        records.push_back({id, Metric::Recall, dm.recall.value_or(nan), {}});
        records.push_back({id, Metric::Accuracy, dm.accuracy, {}});
        log("split " + std::to_string(s) + ": loss " + format_real(report.initial_loss) + " -> " +
            format_real(report.final_loss) + ", test accuracy " + format_real(dm.accuracy));
        split_summaries.push_back({{"checkpoint", path},
                                   {"accuracy", dm.accuracy},
                                   {"final_loss", report.final_loss}});
    }
    write_metrics_csv(metrics_path, with_means(records));
    emit_summary({{"command", "train"}, {"splits", split_summaries}, {"metrics", metrics_path}});
    return kExitOk;
}

int cmd_classify(const std::string& model, const std::string& input)
{
    const ModelParams params = load_checkpoint(model);
    const RawBinary bin = read_binary(input);
    const Classification c = classify(params, bin);
    emit_summary({{"command", "classify"},
                  {"label", std::string(to_string(c.label))},
                  {"f", c.f},
                  {"k", informative_length(bin)}});
    return kExitOk;
}

int cmd_attack(const std::string& model, const std::string& input, const std::string& out,
               AttackMode mode, const RunConfig& cfg)
{
    const ModelParams params = load_checkpoint(model);
    const RawBinary original = read_binary(input);
    parse_pe(original);
    const InputVector x0 = to_input_vector(original, params.hyper.d);

    AttackConfig ac;
    ac.q_max = cfg.q_max;
    ac.max_iterations = cfg.max_iterations;
    ac.seed = cfg.seed;
    ac.mode = mode;
    ac.refresh = cfg.refresh;
    const AttackResult r = run_attack(params, x0, ac);
    const RawBinary adv = build_adversarial_binary(original, r);
    write_binary(out, adv);

    log("f " + format_real(r.f_initial) + " -> " + format_real(r.f_final) +
        (r.evaded ? " (evaded)" : " (detected)"));
    emit_summary({{"command", "attack"},
                  {"mode", std::string(to_string(mode))},
                  {"f_initial", r.f_initial},
                  {"f_final", r.f_final},
                  {"evaded", r.evaded},
                  {"q", r.q},
                  {"iterations", r.iterations_used},
                  {"out", out}});
    return kExitOk;
}

int cmd_evaluate(const std::string& model, const std::string& corpus_dir, const fs::path& out_dir,
                 std::size_t max_samples, std::size_t n_buckets, bool svg, bool with_random,
                 const RunConfig& cfg)
{
    EvaluationPlan plan;
    plan.budgets = cfg.budgets;
    plan.max_samples = max_samples;
    plan.n_buckets = n_buckets;
    plan.attack.max_iterations = cfg.max_iterations;
    plan.attack.refresh = cfg.refresh;
    plan.attack.include_random = with_random;

    const std::vector<SplitEvaluation> evals = evaluate_models(model, corpus_dir, plan, cfg.seed);
    std::vector<EvalRecord> records;
    for (const auto& ev : evals)
        records.insert(records.end(), ev.metrics.begin(), ev.metrics.end());
    fs::create_directories(out_dir);

    write_evasion_curve_csv(out_dir / "evasion_curve.csv", evals);
    write_grad_profile_csv(out_dir / "grad_profile.csv", evals);
    write_byte_hist_csv(out_dir / "byte_hist.csv", evals);
    write_metrics_csv(out_dir / "metrics.csv", with_means(records));

    nlohmann::json curve = nlohmann::json::array();
    std::vector<SvgSeries> curve_series(with_random ? 2 : 1);
    std::vector<SvgSeries> profile_series;
    for (std::size_t m = 0; m < curve_series.size(); ++m)
        curve_series[m].name = m == 0 ? "gradient" : "random";
    for (std::size_t b = 0; b < plan.budgets.size(); ++b) {
        for (std::size_t m = 0; m < curve_series.size(); ++m) {
            double sum = 0.0;
            for (const auto& ev : evals)
                sum += ev.curve.points[b * curve_series.size() + m].evasion_rate();
            const double mean = sum / static_cast<double>(evals.size());
            curve_series[m].points.emplace_back(static_cast<double>(plan.budgets[b]), mean);
            curve.push_back({{"mode", curve_series[m].name},
                             {"budget", plan.budgets[b]},
                             {"mean_evasion_rate", mean}});
        }
    }
    for (const auto& ev : evals) {
        SvgSeries s{"split " + ev.split_id, {}};
        for (const auto& bucket : ev.profile)
            s.points.emplace_back(static_cast<double>(bucket.start), bucket.mean_norm);
        profile_series.push_back(std::move(s));
    }
    if (svg) {
        write_svg_chart(out_dir / "evasion_curve.svg", "Evasion rate vs injected bytes",
                        "injected bytes", "evasion rate", curve_series);
        write_svg_chart(out_dir / "grad_profile.svg", "Mean gradient norm per position",
                        "byte position", "mean ||grad||", profile_series);
    }
    emit_summary({{"command", "evaluate"}, {"splits", evals.size()}, {"curve", curve},
                  {"out", out_dir.string()}});
    return kExitOk;
}

} // namespace

std::vector<SplitEvaluation> evaluate_models(const std::string& model,
                                             const std::string& corpus_dir,
                                             const EvaluationPlan& plan, std::uint64_t seed)
{
    const Manifest manifest = load_manifest(corpus_dir);
    const auto checkpoints = discover_checkpoints(model);
    std::vector<SplitEvaluation> evals;
    for (std::size_t c = 0; c < checkpoints.size(); ++c) {
        const Checkpoint ck = load_checkpoint_with_meta(checkpoints[c]);
        std::vector<std::size_t> test_idx;
        std::string split_id = std::to_string(c);
        if (ck.meta.contains("split")) {
            const auto& sp = ck.meta.at("split");
            const auto index = sp.at("index").get<std::size_t>();
            const auto parts = split_corpus(manifest, sp.at("repeats").get<std::size_t>(),
                                            sp.at("seed").get<std::uint64_t>());
            test_idx = parts.at(index).test;
            split_id = std::to_string(index);
        } else {
            test_idx.resize(manifest.entries.size());
            std::iota(test_idx.begin(), test_idx.end(), std::size_t{0});
        }
        const auto test = load_samples(manifest, test_idx, ck.params.hyper.d);
        std::vector<std::string> ids;
        for (std::size_t i : test_idx)
            ids.push_back(manifest.entries[i].file);

        const std::size_t max_budget = *std::max_element(plan.budgets.begin(), plan.budgets.end());
        const bool any_fit = std::any_of(test.begin(), test.end(), [&](const LabeledSample& s) {
            return s.label == Label::Malware && s.x.informative_len + max_budget <= ck.params.hyper.d;
        });
        if (!any_fit)
            throw Error(ErrorCode::ShapeMismatch,
                        "no malware sample of the corpus fits the model input (d=" +
                            std::to_string(ck.params.hyper.d) + ") with budget " +
                            std::to_string(max_budget));

        log("split " + split_id + ": evaluating " + checkpoints[c].string());
        auto ev = evaluate_split(ck.params, split_id, test, ids, plan,
                                 derive_seed(seed, {0xE0, c}));
        log("split " + split_id + ": attacked " + std::to_string(ev.attacked_ids.size()) +
            " samples, " + std::to_string(ev.n_ineligible) + " ineligible, " +
            std::to_string(ev.n_misclassified) + " already misclassified");
        evals.push_back(std::move(ev));
    }

    return evals;
}

RunConfig RunConfig::desk()
{
    RunConfig cfg;
    // 0.1 holds back generalization on the 200-file corpus; see README.
    cfg.hyper.decov_weight = 0.001;
    return cfg;
}

RunConfig RunConfig::paper()
{
    RunConfig cfg;
    cfg.hyper.d = 1000000;
    cfg.hyper.n_filters = 128;
    cfg.q_max = 10000;
    cfg.max_iterations = 20;
    cfg.budgets = {1000, 2000, 5000, 10000};
    return cfg;
}

RunConfig RunConfig::profile(const std::string& name)
{
    if (name == "desk")
        return desk();
    if (name == "paper")
        return paper();
    throw Error(ErrorCode::InvalidConfig, "unknown profile '" + name + "'");
}

void RunConfig::merge_json(const nlohmann::json& j)
{
    static const std::set<std::string> known = {
        "d",          "window", "stride",     "n_filters", "h",    "e", "decov_weight", "learning_rate",
        "epochs",     "batch_size", "seed",   "q_max",     "T",    "budgets", "refresh"};
    if (!j.is_object())
        throw Error(ErrorCode::InvalidConfig, "config must be a JSON object");
    for (const auto& [key, _] : j.items())
        if (!known.contains(key))
            throw Error(ErrorCode::InvalidConfig, "unknown config field '" + key + "'");
    try {
        const auto get = [&](const char* key, auto& target) {
            if (j.contains(key))
                target = j.at(key).get<std::remove_reference_t<decltype(target)>>();
        };
        get("d", hyper.d);
        get("window", hyper.window);
        get("stride", hyper.stride);
        get("n_filters", hyper.n_filters);
        get("h", hyper.hidden);
        get("e", hyper.e);
        get("decov_weight", hyper.decov_weight);
        get("learning_rate", train.learning_rate);
        get("epochs", train.epochs);
        get("batch_size", train.batch_size);
        get("seed", seed);
        get("q_max", q_max);
        get("T", max_iterations);
        get("budgets", budgets);
        if (j.contains("refresh"))
            refresh = parse_refresh(j.at("refresh").get<std::string>());
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::InvalidConfig, std::string("config field has the wrong type: ") + e.what());
    }
}

nlohmann::json RunConfig::to_json() const
{
    return {{"d", hyper.d},
            {"window", hyper.window},
            {"stride", hyper.stride},
            {"n_filters", hyper.n_filters},
            {"h", hyper.hidden},
            {"e", hyper.e},
            {"decov_weight", hyper.decov_weight},
            {"learning_rate", train.learning_rate},
            {"epochs", train.epochs},
            {"batch_size", train.batch_size},
            {"seed", seed},
            {"q_max", q_max},
            {"T", max_iterations},
            {"budgets", budgets},
            {"refresh", std::string(to_string(refresh))}};
}

void RunConfig::validate() const
{
    hyper.validate();
    if (train.epochs == 0 || train.batch_size == 0 || !(train.learning_rate > 0.0))
        throw Error(ErrorCode::InvalidConfig, "epochs, batch_size and learning_rate must be positive");
    if (q_max == 0 || max_iterations == 0)
        throw Error(ErrorCode::InvalidConfig, "q_max and T must be positive");
    if (budgets.empty())
        throw Error(ErrorCode::InvalidConfig, "budget list is empty");
    if (!std::is_sorted(budgets.begin(), budgets.end()))
        throw Error(ErrorCode::InvalidConfig, "budgets must be sorted ascending");
}

std::vector<std::size_t> parse_budget_list(const std::string& text)
{
    std::vector<std::size_t> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item.empty())
            continue;
        std::size_t used = 0;
        unsigned long long v = 0;
        try {
            v = std::stoull(item, &used);
        } catch (const std::exception&) {
            used = 0;
        }
        if (used != item.size() || item.front() == '-')
            throw Error(ErrorCode::InvalidConfig, "bad budget '" + item + "'");
        out.push_back(static_cast<std::size_t>(v));
    }
    if (out.empty())
        throw Error(ErrorCode::InvalidConfig, "budget list is empty");
    if (!std::is_sorted(out.begin(), out.end()))
        throw Error(ErrorCode::InvalidConfig, "budgets must be sorted ascending");
    return out;
}

int run_cli(int argc, const char* const* argv)
{
    kernels::apply_thread_limit();

    CLI::App app{"Byte-level malware detector, padding-byte evasion attack and evaluation harness",
                 "byteveil"};
    app.require_subcommand(1);

    // gen-corpus
    auto* gen = app.add_subcommand("gen-corpus", "Generate a labelled synthetic PE corpus");
    std::string gen_out;
    CorpusSpec spec;
    std::string region = "early";
    std::string motif_hex;
    gen->add_option("--out", gen_out, "Output directory")->required();
    gen->add_option("--malware", spec.n_malware, "Number of malware-class files");
    gen->add_option("--benign", spec.n_benign, "Number of benign-class files");
    gen->add_option("--seed", spec.seed, "Corpus seed");
    gen->add_option("--min-len", spec.min_len, "Smallest file length");
    gen->add_option("--max-len", spec.max_len, "Largest file length");
    gen->add_option("--motif-region", region, "early or uniform")
        ->check(CLI::IsMember({"early", "uniform"}));
    gen->add_option("--motif", motif_hex, "Malware motif as hex");

    // train
    auto* tr = app.add_subcommand("train", "Train the detector on 50/50 splits of a corpus");
    std::string tr_corpus, tr_out, tr_metrics;
    std::size_t tr_splits = 1;
    ConfigFlags tr_flags;
    tr->add_option("--corpus", tr_corpus, "Corpus directory")->required();
    tr->add_option("--out", tr_out, "Checkpoint path (suffixed .0, .1, ... when splits > 1)")->required();
    tr->add_option("--splits", tr_splits, "Number of random 50/50 splits")->check(CLI::PositiveNumber);
    tr->add_option("--metrics", tr_metrics, "metrics.csv path (default: next to the checkpoint)");
    tr_flags.attach(tr, true);

    // classify
    auto* cl = app.add_subcommand("classify", "Classify one file");
    std::string cl_model, cl_input;
    cl->add_option("--model", cl_model, "Checkpoint")->required();
    cl->add_option("--input", cl_input, "PE file")->required();

    // attack
    auto* at = app.add_subcommand("attack", "Append optimised padding to one malware file");
    std::string at_model, at_input, at_out, at_mode = "gradient";
    ConfigFlags at_flags;
    at->add_option("--model", at_model, "Checkpoint")->required();
    at->add_option("--input", at_input, "Malware PE file")->required();
    at->add_option("--out", at_out, "Adversarial output file")->required();
    at->add_option("--mode", at_mode, "gradient or random")->check(CLI::IsMember({"gradient", "random"}));
    at->add_option("--qmax", at_flags.q_max, "Maximum injected bytes");
    at->add_option("--iters", at_flags.iters, "Maximum attack iterations");
    at_flags.attach(at, false);

    // evaluate
    auto* ev = app.add_subcommand("evaluate", "Evasion curves, gradient profiles and byte histograms");
    std::string ev_model, ev_corpus, ev_out;
    std::size_t ev_samples = 200, ev_buckets = 10;
    bool ev_svg = false, ev_no_random = false;
    ConfigFlags ev_flags;
    ev->add_option("--model", ev_model, "Checkpoint (or prefix of numbered split checkpoints)")->required();
    ev->add_option("--corpus", ev_corpus, "Corpus directory")->required();
    ev->add_option("--out", ev_out, "Results directory")->required();
    ev->add_option("--budgets", ev_flags.budgets, "Comma-separated injected-byte budgets");
    ev->add_option("--samples", ev_samples, "Malware samples attacked per split");
    ev->add_option("--buckets", ev_buckets, "Position buckets in the gradient profile");
    ev->add_option("--iters", ev_flags.iters, "Maximum attack iterations");
    ev->add_flag("--svg", ev_svg, "Also write SVG charts");
    ev->add_flag("--no-random", ev_no_random, "Skip the random-injection baseline");
    ev_flags.attach(ev, false);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitUsage;
    }

    try {
        if (*gen) {
            spec.motif_region = parse_motif_region(region);
            if (!motif_hex.empty())
                spec.motif = parse_hex(motif_hex);
            return cmd_gen_corpus(gen_out, spec);
        }
        if (*tr) {
            const RunConfig cfg = tr_flags.resolve();
            const std::string metrics =
                tr_metrics.empty() ? (fs::path(tr_out).parent_path() / "metrics.csv").string()
                                   : tr_metrics;
            return cmd_train(tr_corpus, tr_out, tr_splits, metrics, cfg);
        }
        if (*cl)
            return cmd_classify(cl_model, cl_input);
        if (*at) {
            const RunConfig cfg = at_flags.resolve();
            return cmd_attack(at_model, at_input, at_out, parse_attack_mode(at_mode), cfg);
        }
        if (*ev) {
            if (ev_flags.budgets) {
                try {
                    parse_budget_list(*ev_flags.budgets);
                } catch (const Error& e) {
                    std::cerr << "evaluate: " << e.what() << '\n';
                    return kExitUsage;
                }
            }
            const RunConfig cfg = ev_flags.resolve();
            return cmd_evaluate(ev_model, ev_corpus, ev_out, ev_samples, ev_buckets, ev_svg,
                                !ev_no_random, cfg);
        }
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return e.code() == ErrorCode::NoBudget ? kExitInfeasible : kExitRuntime;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitRuntime;
    }
    return kExitUsage;
}

int run_cli(const std::vector<std::string>& args)
{
    std::vector<const char*> argv;
    argv.push_back("byteveil");
    for (const auto& a : args)
        argv.push_back(a.c_str());
    return run_cli(static_cast<int>(argv.size()), argv.data());
}

} // namespace byteveil
