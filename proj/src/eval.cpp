#include "byteveil/eval.hpp"

#include "byteveil/error.hpp"
#include "byteveil/seeding.hpp"

#include <algorithm>
#include <exception>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

namespace byteveil {

namespace {

std::ofstream open_csv(const std::filesystem::path& path)
{
    std::ofstream out(path, std::ios::trunc | std::ios::binary);
    if (!out)
        throw Error(ErrorCode::IoError, "cannot write " + path.string());
    return out;
}

void write_row(std::ostream& out, std::initializer_list<std::string> fields)
{
    bool first = true;
    for (const auto& f : fields) {
        if (!first)
            out << ',';
        out << csv_escape(f);
        first = false;
    }
    out << "\r\n";
}

/// Sum that does not depend on the order values arrive in.
double canonical_sum(std::vector<double> values)
{
    std::sort(values.begin(), values.end());
    double s = 0.0;
    for (double v : values)
        s += v;
    return s;
}

} // namespace

std::vector<Partition> split_corpus(const Manifest& manifest, std::size_t n_repeats,
                                    std::uint64_t seed)
{
    if (manifest.entries.size() < 2)
        throw Error(ErrorCode::EmptyManifest, "a split needs at least two samples");
    if (n_repeats == 0)
        throw Error(ErrorCode::InvalidConfig, "at least one split is required");

    std::array<std::vector<std::size_t>, 2> by_class;
    for (std::size_t i = 0; i < manifest.entries.size(); ++i)
        by_class[manifest.entries[i].label == Label::Malware ? 1 : 0].push_back(i);

    std::vector<Partition> out;
    for (std::size_t r = 0; r < n_repeats; ++r) {
        std::mt19937_64 rng(derive_seed(seed, {0x5, r}));
        Partition p;
        for (const auto& members : by_class) {
            std::vector<std::size_t> shuffled = members;
            std::shuffle(shuffled.begin(), shuffled.end(), rng);
            const std::size_t n_train = (shuffled.size() + 1) / 2;
            p.train.insert(p.train.end(), shuffled.begin(),
                           shuffled.begin() + static_cast<std::ptrdiff_t>(n_train));
            p.test.insert(p.test.end(), shuffled.begin() + static_cast<std::ptrdiff_t>(n_train),
                          shuffled.end());
        }
        std::sort(p.train.begin(), p.train.end());
        std::sort(p.test.begin(), p.test.end());
        out.push_back(std::move(p));
    }
    return out;
}

std::vector<LabeledSample> load_samples(const Manifest& manifest,
                                        std::span<const std::size_t> indices, std::size_t d)
{
    std::vector<LabeledSample> out;
    out.reserve(indices.size());
    for (std::size_t i : indices) {
        const auto& entry = manifest.entries.at(i);
        const RawBinary bin = read_binary(manifest.path_of(entry));
        parse_pe(bin);
        out.push_back({to_input_vector(bin, d), entry.label});
    }
    return out;
}

std::string_view to_string(Metric metric)
{
    switch (metric) {
    case Metric::Precision: return "precision";
    case Metric::Recall: return "recall";
    case Metric::Accuracy: return "accuracy";
    case Metric::EvasionRate: return "evasion_rate";
    case Metric::GradNormMean: return "grad_norm_mean";
    case Metric::ByteCount: return "byte_count";
    }
    return "unknown";
}

DetectionMetrics metrics_from_confusion(const Confusion& c)
{
    DetectionMetrics m;
    m.confusion = c;
    if (c.tp + c.fp > 0)
        m.precision = static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp);
    if (c.tp + c.fn > 0)
        m.recall = static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn);
    const std::size_t total = c.tp + c.fp + c.tn + c.fn;
    m.accuracy = total == 0 ? 0.0 : static_cast<double>(c.tp + c.tn) / static_cast<double>(total);
    return m;
}

DetectionMetrics precision_recall(const ModelParams& params, std::span<const LabeledSample> test)
{
    std::vector<Label> predicted(test.size());
    const auto n = static_cast<std::ptrdiff_t>(test.size());
#pragma omp parallel for schedule(dynamic)
    for (std::ptrdiff_t i = 0; i < n; ++i)
        predicted[static_cast<std::size_t>(i)] =
            classify(params, test[static_cast<std::size_t>(i)].x).label;

    Confusion c;
    for (std::size_t i = 0; i < test.size(); ++i) {
        const bool truth = test[i].label == Label::Malware;
        const bool pred = predicted[i] == Label::Malware;
        if (truth && pred)
            ++c.tp;
        else if (!truth && pred)
            ++c.fp;
        else if (truth)
            ++c.fn;
        else
            ++c.tn;
    }
    return metrics_from_confusion(c);
}

EvasionCurve evasion_curve(const ModelParams& params, std::span<const AttackSample> samples,
                           std::span<const std::size_t> budgets, const EvasionConfig& config)
{
    EvasionCurve curve;
    curve.budgets.assign(budgets.begin(), budgets.end());
    const std::size_t n_modes = config.include_random ? 2 : 1;
    for (std::size_t m = 0; m < 2; ++m)
        curve.results[m].assign(budgets.size(),
                                std::vector<std::optional<AttackResult>>(samples.size()));

    std::vector<double> f0(samples.size());
    std::vector<char> excluded(2 * budgets.size() * samples.size(), 0);

    struct Task {
        std::size_t sample, budget, mode;
    };
    std::vector<Task> tasks;
    for (std::size_t s = 0; s < samples.size(); ++s)
        for (std::size_t b = 0; b < budgets.size(); ++b)
            for (std::size_t m = 0; m < n_modes; ++m)
                if (budgets[b] > 0)
                    tasks.push_back({s, b, m});

    std::exception_ptr failure;
    const auto n_samples = static_cast<std::ptrdiff_t>(samples.size());
#pragma omp parallel for schedule(dynamic)
    for (std::ptrdiff_t s = 0; s < n_samples; ++s)
        f0[static_cast<std::size_t>(s)] = forward(params, samples[static_cast<std::size_t>(s)].x).f;

    const auto n_tasks = static_cast<std::ptrdiff_t>(tasks.size());
#pragma omp parallel for schedule(dynamic)
    for (std::ptrdiff_t t = 0; t < n_tasks; ++t) {
        const Task task = tasks[static_cast<std::size_t>(t)];
        AttackConfig cfg;
        cfg.q_max = budgets[task.budget];
        cfg.max_iterations = config.max_iterations;
        cfg.refresh = config.refresh;
        cfg.mode = task.mode == 0 ? AttackMode::Gradient : AttackMode::Random;
        cfg.seed = derive_seed(config.seed, {task.sample, budgets[task.budget]});
        try {
            curve.results[task.mode][task.budget][task.sample] =
                run_attack(params, samples[task.sample].x, cfg);
        } catch (const Error& e) {
            if (e.code() == ErrorCode::NoBudget) {
                excluded[(task.mode * budgets.size() + task.budget) * samples.size() + task.sample] = 1;
            } else {
#pragma omp critical
                if (!failure)
                    failure = std::current_exception();
            }
        }
    }
    if (failure)
        std::rethrow_exception(failure);

    for (std::size_t b = 0; b < budgets.size(); ++b) {
        for (std::size_t m = 0; m < n_modes; ++m) {
            CurvePoint pt;
            pt.mode = m == 0 ? AttackMode::Gradient : AttackMode::Random;
            pt.budget = budgets[b];
            for (std::size_t s = 0; s < samples.size(); ++s) {
                if (budgets[b] == 0) {
                    ++pt.n_samples;
                    pt.n_evaded += f0[s] < 0.5 ? 1 : 0;
                } else if (excluded[(m * budgets.size() + b) * samples.size() + s]) {
                    ++pt.n_excluded;
                } else {
                    ++pt.n_samples;
                    pt.n_evaded += curve.results[m][b][s]->evaded ? 1 : 0;
                }
            }
            curve.points.push_back(pt);
        }
    }
    return curve;
}

std::vector<ProfileBucket> gradient_norm_profile(const ModelParams& params,
                                                 std::span<const InputVector> samples,
                                                 std::size_t n_buckets)
{
    const Hyper& h = params.hyper;
    if (samples.empty())
        throw Error(ErrorCode::InvalidConfig, "gradient profile needs at least one sample");
    if (n_buckets == 0 || n_buckets > h.d)
        throw Error(ErrorCode::InvalidConfig, "bucket count must be in [1, d]");

    std::vector<ProfileBucket> buckets(n_buckets);
    for (std::size_t b = 0; b < n_buckets; ++b)
        buckets[b] = {b, b * h.d / n_buckets, (b + 1) * h.d / n_buckets, 0.0};

    // per_sample[s][b] = sum of ||G[j]|| over the bucket's positions
    std::vector<std::vector<double>> per_sample(samples.size(), std::vector<double>(n_buckets, 0.0));
    const auto n = static_cast<std::ptrdiff_t>(samples.size());
#pragma omp parallel for schedule(dynamic)
    for (std::ptrdiff_t s = 0; s < n; ++s) {
        const auto& x = samples[static_cast<std::size_t>(s)];
        const auto grad = grad_wrt_embedding(params, forward(params, x).trace);
        auto& sums = per_sample[static_cast<std::size_t>(s)];
        for (std::size_t b = 0; b < n_buckets; ++b) {
            double acc = 0.0;
            for (std::size_t j = buckets[b].start; j < buckets[b].end; ++j) {
                double n2 = 0.0;
                for (std::size_t c = 0; c < h.e; ++c)
                    n2 += grad[j * h.e + c] * grad[j * h.e + c];
                acc += std::sqrt(n2);
            }
            sums[b] = acc;
        }
    }

    for (auto& bucket : buckets) {
        std::vector<double> column(samples.size());
        for (std::size_t s = 0; s < samples.size(); ++s)
            column[s] = per_sample[s][bucket.index];
        const double width = static_cast<double>(bucket.end - bucket.start);
        bucket.mean_norm = width == 0.0 ? 0.0
                                        : canonical_sum(std::move(column)) /
                                              (static_cast<double>(samples.size()) * width);
    }
    return buckets;
}

ByteHistogram byte_histogram(const AttackResult& result)
{
    if (result.q == 0 || result.proposed_bytes.empty())
        throw Error(ErrorCode::NoBytes, "attack injected no bytes");
    ByteHistogram hist{};
    for (std::uint8_t b : result.proposed_bytes)
        ++hist[b];
    return hist;
}

double shannon_entropy(const ByteHistogram& hist)
{
    const double total = static_cast<double>(std::accumulate(hist.begin(), hist.end(), std::size_t{0}));
    if (total == 0.0)
        return 0.0;
    double h = 0.0;
    for (std::size_t c : hist) {
        if (c == 0)
            continue;
        const double p = static_cast<double>(c) / total;
        h -= p * std::log(p);
    }
    return h;
}

SplitEvaluation evaluate_split(const ModelParams& params, const std::string& split_id,
                               std::span<const LabeledSample> test,
                               std::span<const std::string> test_ids, const EvaluationPlan& plan,
                               std::uint64_t seed)
{
    if (test.size() != test_ids.size())
        throw Error(ErrorCode::InvalidConfig, "test samples and ids differ in length");
    if (plan.budgets.empty())
        throw Error(ErrorCode::InvalidConfig, "at least one budget is required");

    SplitEvaluation ev;
    ev.split_id = split_id;
    ev.detection = precision_recall(params, test);

    const std::size_t max_budget = *std::max_element(plan.budgets.begin(), plan.budgets.end());
    const std::size_t d = params.hyper.d;
    std::vector<std::size_t> candidates;
    for (std::size_t i = 0; i < test.size(); ++i) {
        if (test[i].label != Label::Malware)
            continue;
        if (test[i].x.informative_len + max_budget > d) {
            ++ev.n_ineligible;
            continue;
        }
        candidates.push_back(i);
    }
    std::vector<double> f0(candidates.size());
    const auto nc = static_cast<std::ptrdiff_t>(candidates.size());
#pragma omp parallel for schedule(dynamic)
    for (std::ptrdiff_t i = 0; i < nc; ++i)
        f0[static_cast<std::size_t>(i)] =
            forward(params, test[candidates[static_cast<std::size_t>(i)]].x).f;
    std::vector<std::size_t> detected;
    for (std::size_t i = 0; i < candidates.size(); ++i) {
        if (f0[i] < 0.5)
            ++ev.n_misclassified;
        else
            detected.push_back(candidates[i]);
    }

    std::mt19937_64 rng(derive_seed(seed, {0xA7}));
    std::shuffle(detected.begin(), detected.end(), rng);
    if (detected.size() > plan.max_samples)
        detected.resize(plan.max_samples);
    std::sort(detected.begin(), detected.end());

    std::vector<AttackSample> attack_set;
    std::vector<InputVector> profile_inputs;
    for (std::size_t i : detected) {
        attack_set.push_back({test_ids[i], test[i].x});
        profile_inputs.push_back(test[i].x);
        ev.attacked_ids.push_back(test_ids[i]);
    }

    EvasionConfig cfg = plan.attack;
    cfg.seed = derive_seed(seed, {0xE7});
    ev.curve = evasion_curve(params, attack_set, plan.budgets, cfg);
    if (!profile_inputs.empty())
        ev.profile = gradient_norm_profile(params, profile_inputs, plan.n_buckets);

    const auto max_it = std::max_element(plan.budgets.begin(), plan.budgets.end());
    const auto max_idx = static_cast<std::size_t>(max_it - plan.budgets.begin());
    for (std::size_t s = 0; s < attack_set.size(); ++s) {
        for (std::size_t m = 0; m < 2; ++m) {
            const auto& res = ev.curve.results[m][max_idx][s];
            if (!res || res->q == 0)
                continue;
            const auto hist = byte_histogram(*res);
            for (std::size_t v = 0; v < hist.size(); ++v)
                if (hist[v] > 0)
                    ev.histograms.push_back({split_id + "/" + attack_set[s].id,
                                             m == 0 ? AttackMode::Gradient : AttackMode::Random, v,
                                             hist[v]});
        }
    }

    const double nan = std::numeric_limits<double>::quiet_NaN();
    ev.metrics.push_back({split_id, Metric::Precision, ev.detection.precision.value_or(nan), {}});
    ev.metrics.push_back({split_id, Metric::Recall, ev.detection.recall.value_or(nan), {}});
    ev.metrics.push_back({split_id, Metric::Accuracy, ev.detection.accuracy, {}});
    for (const auto& pt : ev.curve.points) {
        if (pt.budget != max_budget || pt.mode != AttackMode::Gradient)
            continue;
        ev.metrics.push_back({split_id,
                              Metric::EvasionRate,
                              pt.n_samples == 0 ? nan : pt.evasion_rate(),
                              {{"budget", std::to_string(pt.budget)}, {"mode", "gradient"}}});
    }
    if (!ev.profile.empty()) {
        std::vector<double> means;
        for (const auto& b : ev.profile)
            means.push_back(b.mean_norm);
        ev.metrics.push_back({split_id, Metric::GradNormMean,
                              canonical_sum(means) / static_cast<double>(means.size()),
                              {}});
    }
    return ev;
}

std::string csv_escape(std::string_view field)
{
    if (field.find_first_of(",\"\r\n") == std::string_view::npos)
        return std::string(field);
    std::string out = "\"";
    for (char c : field) {
        if (c == '"')
            out += '"';
        out += c;
    }
    out += '"';
    return out;
}

std::string format_real(double v)
{
    if (std::isnan(v))
        return "nan";
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

void write_evasion_curve_csv(const std::filesystem::path& path,
                             std::span<const SplitEvaluation> splits)
{
    auto out = open_csv(path);
    write_row(out, {"split_id", "mode", "budget", "n_samples", "n_evaded", "evasion_rate"});
    for (const auto& ev : splits)
        for (const auto& pt : ev.curve.points)
            write_row(out, {ev.split_id, std::string(to_string(pt.mode)), std::to_string(pt.budget),
                            std::to_string(pt.n_samples), std::to_string(pt.n_evaded),
                            format_real(pt.evasion_rate())});
}

void write_grad_profile_csv(const std::filesystem::path& path,
                            std::span<const SplitEvaluation> splits)
{
    auto out = open_csv(path);
    write_row(out, {"split_id", "bucket_index", "bucket_start", "bucket_end", "mean_norm"});
    for (const auto& ev : splits)
        for (const auto& b : ev.profile)
            write_row(out, {ev.split_id, std::to_string(b.index), std::to_string(b.start),
                            std::to_string(b.end), format_real(b.mean_norm)});
}

void write_byte_hist_csv(const std::filesystem::path& path, std::span<const SplitEvaluation> splits)
{
    auto out = open_csv(path);
    write_row(out, {"sample_id", "mode", "byte_value", "count"});
    for (const auto& ev : splits)
        for (const auto& row : ev.histograms)
            write_row(out, {row.sample_id, std::string(to_string(row.mode)),
                            std::to_string(row.byte_value), std::to_string(row.count)});
}

void write_metrics_csv(const std::filesystem::path& path, std::span<const EvalRecord> records)
{
    auto out = open_csv(path);
    write_row(out, {"split_id", "metric", "value"});
    for (const auto& r : records)
        write_row(out, {r.split_id, std::string(to_string(r.metric)), format_real(r.value)});
}

std::vector<EvalRecord> with_means(std::vector<EvalRecord> records)
{
    std::vector<EvalRecord> means;
    for (const auto& r : records) {
        const bool seen = std::any_of(means.begin(), means.end(), [&](const EvalRecord& m) {
            return m.metric == r.metric && m.extra == r.extra;
        });
        if (seen)
            continue;
        std::vector<double> vals;
        for (const auto& o : records)
            if (o.metric == r.metric && o.extra == r.extra && !std::isnan(o.value))
                vals.push_back(o.value);
        const double mean = vals.empty() ? std::numeric_limits<double>::quiet_NaN()
                                         : std::accumulate(vals.begin(), vals.end(), 0.0) /
                                               static_cast<double>(vals.size());
        means.push_back({"mean", r.metric, mean, r.extra});
    }
    records.insert(records.end(), means.begin(), means.end());
    return records;
}

void write_svg_chart(const std::filesystem::path& path, const std::string& title,
                     const std::string& x_label, const std::string& y_label,
                     std::span<const SvgSeries> series)
{
    constexpr double W = 640, H = 400, L = 70, R = 20, T = 40, B = 50;
    double x_min = std::numeric_limits<double>::infinity(), x_max = -x_min;
    double y_min = 0.0, y_max = 0.0;
    for (const auto& s : series)
        for (const auto& [x, y] : s.points) {
            x_min = std::min(x_min, x);
            x_max = std::max(x_max, x);
            y_min = std::min(y_min, y);
            y_max = std::max(y_max, y);
        }
    if (!std::isfinite(x_min)) {
        x_min = 0;
        x_max = 1;
    }
    if (x_max == x_min)
        x_max = x_min + 1;
    if (y_max == y_min)
        y_max = y_min + 1;
    const auto px = [&](double x) { return L + (x - x_min) / (x_max - x_min) * (W - L - R); };
    const auto py = [&](double y) { return H - B - (y - y_min) / (y_max - y_min) * (H - T - B); };

    static constexpr const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd"};
    std::ostringstream svg;
    svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
        << "\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
        << "<text x=\"" << W / 2 << "\" y=\"24\" text-anchor=\"middle\" font-size=\"16\">" << title
        << "</text>\n"
        << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B
        << "\" stroke=\"black\"/>\n"
        << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - B
        << "\" stroke=\"black\"/>\n"
        << "<text x=\"" << W / 2 << "\" y=\"" << H - 12 << "\" text-anchor=\"middle\">" << x_label
        << "</text>\n"
        << "<text x=\"16\" y=\"" << H / 2 << "\" transform=\"rotate(-90 16 " << H / 2
        << ")\" text-anchor=\"middle\">" << y_label << "</text>\n"
        << "<text x=\"" << L - 6 << "\" y=\"" << py(y_max) + 4 << "\" text-anchor=\"end\">"
        << format_real(y_max) << "</text>\n"
        << "<text x=\"" << L - 6 << "\" y=\"" << py(y_min) + 4 << "\" text-anchor=\"end\">"
        << format_real(y_min) << "</text>\n";
    for (std::size_t i = 0; i < series.size(); ++i) {
        const char* color = colors[i % 4];
        svg << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
        for (const auto& [x, y] : series[i].points)
            svg << px(x) << ',' << py(y) << ' ';
        svg << "\"/>\n<text x=\"" << W - R - 120 << "\" y=\"" << T + 16 * (i + 1) << "\" fill=\""
            << color << "\">" << series[i].name << "</text>\n";
    }
    svg << "</svg>\n";

    std::ofstream out(path, std::ios::trunc);
    if (!out)
        throw Error(ErrorCode::IoError, "cannot write " + path.string());
    out << svg.str();
}

} // namespace byteveil
