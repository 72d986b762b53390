#ifndef BYTEVEIL_EVAL_HPP
#define BYTEVEIL_EVAL_HPP

#include "byteveil/attack.hpp"
#include "byteveil/malconv.hpp"
#include "byteveil/synth_corpus.hpp"
#include "byteveil/train.hpp"

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace byteveil {

// ---------------------------------------------------------------- splits

struct Partition {
    std::vector<std::size_t> train;  // manifest indices
    std::vector<std::size_t> test;
};

/// `n_repeats` independent stratified 50/50 splits. Each class contributes
/// ceil(n/2) samples to train and the rest to test.
std::vector<Partition> split_corpus(const Manifest& manifest, std::size_t n_repeats,
                                    std::uint64_t seed);

/// Reads, validates (parse_pe) and encodes the selected manifest entries.
std::vector<LabeledSample> load_samples(const Manifest& manifest,
                                        std::span<const std::size_t> indices, std::size_t d);

// --------------------------------------------------------------- metrics

enum class Metric { Precision, Recall, Accuracy, EvasionRate, GradNormMean, ByteCount };

std::string_view to_string(Metric metric);

/// One metrics.csv row.
struct EvalRecord {
    std::string split_id;
    Metric metric = Metric::Accuracy;
    double value = 0.0;  // NaN marks an undefined value (e.g. precision with no positives)
    std::map<std::string, std::string> extra;
};

struct Confusion {
    std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
};

/// Malware is the positive class. Precision/recall are empty when their
/// denominator is zero.
struct DetectionMetrics {
    Confusion confusion;
    std::optional<double> precision;
    std::optional<double> recall;
    double accuracy = 0.0;
};

DetectionMetrics metrics_from_confusion(const Confusion& c);
DetectionMetrics precision_recall(const ModelParams& params, std::span<const LabeledSample> test);

// --------------------------------------------------------- evasion curve

struct AttackSample {
    std::string id;
    InputVector x;
};

struct EvasionConfig {
    std::size_t max_iterations = 20;
    std::uint64_t seed = 0;
    Refresh refresh = Refresh::PerIteration;
    bool include_random = true;
};

struct CurvePoint {
    AttackMode mode = AttackMode::Gradient;
    std::size_t budget = 0;
    std::size_t n_samples = 0;
    std::size_t n_evaded = 0;
    std::size_t n_excluded = 0;  // NoBudget

    double evasion_rate() const noexcept
    {
        return n_samples == 0 ? 0.0 : static_cast<double>(n_evaded) / static_cast<double>(n_samples);
    }
};

struct EvasionCurve {
    std::vector<std::size_t> budgets;
    std::vector<CurvePoint> points;  // budget-major, gradient before random
    /// results[mode][budget index][sample index]; empty optional = excluded
    /// or budget zero.
    std::array<std::vector<std::vector<std::optional<AttackResult>>>, 2> results;
};

/// Runs one attack per (sample, budget, mode). Attack seeds derive from
/// (config.seed, sample index, budget) and are shared by both modes.
EvasionCurve evasion_curve(const ModelParams& params, std::span<const AttackSample> samples,
                           std::span<const std::size_t> budgets, const EvasionConfig& config);

// ----------------------------------------------------- gradient profile

struct ProfileBucket {
    std::size_t index = 0;
    std::size_t start = 0;  // first position
    std::size_t end = 0;    // one past the last position
    double mean_norm = 0.0;
};

/// Mean over samples and over the bucket's positions of ||df/dz_j||_2,
/// evaluated on the unmodified inputs.
std::vector<ProfileBucket> gradient_norm_profile(const ModelParams& params,
                                                 std::span<const InputVector> samples,
                                                 std::size_t n_buckets);

// ------------------------------------------------------------- histograms

using ByteHistogram = std::array<std::size_t, 256>;

/// Counts of the padding bytes the strategy injected (result.proposed_bytes).
ByteHistogram byte_histogram(const AttackResult& result);

/// Natural-log Shannon entropy of the normalised counts.
double shannon_entropy(const ByteHistogram& hist);

// ------------------------------------------------------ split evaluation

struct HistogramRow {
    std::string sample_id;
    AttackMode mode = AttackMode::Gradient;
    std::size_t byte_value = 0;
    std::size_t count = 0;
};

struct SplitEvaluation {
    std::string split_id;
    DetectionMetrics detection;
    std::size_t n_ineligible = 0;     // k + max budget > d
    std::size_t n_misclassified = 0;  // f(x0) < 0.5 before any attack
    std::vector<std::string> attacked_ids;
    EvasionCurve curve;
    std::vector<ProfileBucket> profile;
    std::vector<HistogramRow> histograms;  // at the largest budget
    std::vector<EvalRecord> metrics;
};

struct EvaluationPlan {
    std::vector<std::size_t> budgets;
    std::size_t max_samples = 200;
    std::size_t n_buckets = 10;
    EvasionConfig attack;
};

/// Detection metrics on `test`, then the attack protocol on up to
/// max_samples detected, eligible malware samples drawn with `seed`.
SplitEvaluation evaluate_split(const ModelParams& params, const std::string& split_id,
                               std::span<const LabeledSample> test,
                               std::span<const std::string> test_ids, const EvaluationPlan& plan,
                               std::uint64_t seed);

// ------------------------------------------------------------------- CSV

std::string csv_escape(std::string_view field);
std::string format_real(double v);

void write_evasion_curve_csv(const std::filesystem::path& path,
                             std::span<const SplitEvaluation> splits);
void write_grad_profile_csv(const std::filesystem::path& path,
                            std::span<const SplitEvaluation> splits);
void write_byte_hist_csv(const std::filesystem::path& path, std::span<const SplitEvaluation> splits);
void write_metrics_csv(const std::filesystem::path& path, std::span<const EvalRecord> records);

/// Appends per-metric means over splits (split_id "mean"), skipping NaNs.
std::vector<EvalRecord> with_means(std::vector<EvalRecord> records);

struct SvgSeries {
    std::string name;
    std::vector<std::pair<double, double>> points;
};

/// Minimal static line chart, for eyeballing; the CSVs are authoritative.
void write_svg_chart(const std::filesystem::path& path, const std::string& title,
                     const std::string& x_label, const std::string& y_label,
                     std::span<const SvgSeries> series);

} // namespace byteveil

#endif
