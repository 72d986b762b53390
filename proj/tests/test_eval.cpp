#include <doctest.h>

#include "byteveil/error.hpp"
#include "byteveil/eval.hpp"
#include "byteveil/synth_corpus.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <numeric>
#include <random>
#include <set>

using namespace byteveil;
namespace fs = std::filesystem;

namespace {

Manifest fake_manifest(std::size_t n_mal, std::size_t n_ben)
{
    Manifest m;
    for (std::size_t i = 0; i < n_mal + n_ben; ++i)
        m.entries.push_back({"f" + std::to_string(i), i < n_mal ? Label::Malware : Label::Benign,
                             1024, i});
    return m;
}

Hyper small_hyper()
{
    Hyper h;
    h.d = 2048;
    h.window = 64;
    h.stride = 64;
    h.n_filters = 4;
    h.hidden = 8;
    return h;
}

// Files short enough to leave padding at d = 2048.
CorpusSpec short_spec()
{
    CorpusSpec spec;
    spec.max_len = 1536;
    return spec;
}

std::string slurp(const fs::path& p)
{
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

} // namespace

TEST_CASE("splits are disjoint, stratified halves and reproducible")
{
    const Manifest m = fake_manifest(50, 50);
    const auto parts = split_corpus(m, 3, 7);
    REQUIRE(parts.size() == 3);
    for (const auto& p : parts) {
        CHECK(p.train.size() == 50);
        CHECK(p.test.size() == 50);
        std::set<std::size_t> all(p.train.begin(), p.train.end());
        all.insert(p.test.begin(), p.test.end());
        CHECK(all.size() == 100);
        const auto mal = std::count_if(p.train.begin(), p.train.end(),
                                       [&](std::size_t i) { return i < 50; });
        CHECK(mal == 25);
    }
    CHECK(parts[0].train != parts[1].train);
    const auto again = split_corpus(m, 3, 7);
    for (std::size_t r = 0; r < 3; ++r) {
        CHECK(again[r].train == parts[r].train);
        CHECK(again[r].test == parts[r].test);
    }
}

TEST_CASE("odd class sizes put the extra sample in train")
{
    const auto parts = split_corpus(fake_manifest(3, 4), 1, 1);
    CHECK(parts[0].train.size() == 4);
    CHECK(parts[0].test.size() == 3);
}

TEST_CASE("degenerate manifests are rejected")
{
    try {
        split_corpus(fake_manifest(1, 0), 1, 1);
        FAIL("expected EmptyManifest");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::EmptyManifest);
    }
    CHECK_THROWS_AS(split_corpus(fake_manifest(0, 0), 3, 1), Error);
}

TEST_CASE("precision and recall from a confusion matrix")
{
    const DetectionMetrics m = metrics_from_confusion({3, 1, 4, 2});
    REQUIRE(m.precision.has_value());
    REQUIRE(m.recall.has_value());
    CHECK(*m.precision == doctest::Approx(0.75));
    CHECK(*m.recall == doctest::Approx(0.6));
    CHECK(m.accuracy == doctest::Approx(0.7));

    // an all-benign predictor
    const DetectionMetrics b = metrics_from_confusion({0, 0, 5, 5});
    CHECK_FALSE(b.precision.has_value());
    REQUIRE(b.recall.has_value());
    CHECK(*b.recall == 0.0);

    const DetectionMetrics perfect = metrics_from_confusion({4, 0, 6, 0});
    CHECK(*perfect.precision == 1.0);
    CHECK(*perfect.recall == 1.0);
    CHECK(perfect.accuracy == 1.0);
}

TEST_CASE("precision_recall counts decisions of the model")
{
    ModelParams p = ModelParams::random(small_hyper(), 2);
    std::fill(p.out_w.begin(), p.out_w.end(), 0.0F);
    p.out_b[0] = -5.0F;  // always benign
    std::vector<LabeledSample> test;
    for (std::size_t i = 0; i < 4; ++i)
        test.push_back({to_input_vector(make_pe_skeleton(1024), 2048),
                        i < 3 ? Label::Malware : Label::Benign});
    const DetectionMetrics m = precision_recall(p, test);
    CHECK(m.confusion.fn == 3);
    CHECK(m.confusion.tn == 1);
    CHECK_FALSE(m.precision.has_value());
    CHECK(*m.recall == 0.0);
}

TEST_CASE("byte histogram")
{
    AttackResult r;
    r.q = 3;
    r.proposed_bytes = {5, 5, 9};
    const ByteHistogram h = byte_histogram(r);
    CHECK(h[5] == 2);
    CHECK(h[9] == 1);
    CHECK(std::accumulate(h.begin(), h.end(), std::size_t{0}) == 3);
    try {
        byte_histogram(AttackResult{});
        FAIL("expected NoBytes");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::NoBytes);
    }
}

TEST_CASE("Shannon entropy uses natural logs")
{
    ByteHistogram h{};
    h[1] = 10;
    CHECK(shannon_entropy(h) == 0.0);
    h[2] = 10;
    CHECK(shannon_entropy(h) == doctest::Approx(std::log(2.0)));
    ByteHistogram u{};
    u.fill(3);
    CHECK(shannon_entropy(u) == doctest::Approx(std::log(256.0)));
}

TEST_CASE("gradient profile: dead network and order invariance")
{
    ModelParams p = ModelParams::random(small_hyper(), 5);
    std::vector<InputVector> xs;
    for (std::size_t i = 0; i < 6; ++i)
        xs.push_back(to_input_vector(generate_sample(CorpusSpec{}, Label::Malware, i), 2048));

    const auto prof = gradient_norm_profile(p, xs, 10);
    REQUIRE(prof.size() == 10);
    CHECK(prof.front().start == 0);
    CHECK(prof.back().end == 2048);
    for (std::size_t b = 1; b < 10; ++b)
        CHECK(prof[b].start == prof[b - 1].end);

    auto shuffled = xs;
    std::mt19937_64 rng(1);
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    std::reverse(shuffled.begin(), shuffled.end());
    const auto prof2 = gradient_norm_profile(p, shuffled, 10);
    for (std::size_t b = 0; b < 10; ++b)
        CHECK(prof2[b].mean_norm == prof[b].mean_norm);

    std::fill(p.out_w.begin(), p.out_w.end(), 0.0F);
    for (const auto& b : gradient_norm_profile(p, xs, 10))
        CHECK(b.mean_norm == 0.0);
}

TEST_CASE("gradient profile equals a direct per-position average")
{
    const ModelParams p = ModelParams::random(small_hyper(), 6);
    std::vector<InputVector> xs;
    for (std::size_t i = 0; i < 3; ++i)
        xs.push_back(to_input_vector(generate_sample(CorpusSpec{}, Label::Benign, i), 2048));
    const auto prof = gradient_norm_profile(p, xs, 4);
    std::vector<double> per_pos(2048, 0.0);
    for (const auto& x : xs) {
        const auto g = grad_wrt_embedding(p, forward(p, x).trace);
        for (std::size_t j = 0; j < 2048; ++j) {
            double n2 = 0.0;
            for (std::size_t c = 0; c < 8; ++c)
                n2 += g[j * 8 + c] * g[j * 8 + c];
            per_pos[j] += std::sqrt(n2) / 3.0;
        }
    }
    for (const auto& b : prof) {
        const double m = std::accumulate(per_pos.begin() + static_cast<std::ptrdiff_t>(b.start),
                                         per_pos.begin() + static_cast<std::ptrdiff_t>(b.end), 0.0) /
                         static_cast<double>(b.end - b.start);
        CHECK(b.mean_norm == doctest::Approx(m).epsilon(1e-12));
    }
}

TEST_CASE("evasion curve: budget zero and exclusions")
{
    const ModelParams p = ModelParams::random(small_hyper(), 7);
    std::vector<AttackSample> samples;
    for (std::size_t i = 0; i < 3; ++i)
        samples.push_back({"s" + std::to_string(i),
                           to_input_vector(generate_sample(short_spec(), Label::Malware, i), 2048)});
    samples[2].x.informative_len = 2048;  // no room at any budget

    const std::vector<std::size_t> budgets = {0, 64};
    EvasionConfig cfg;
    cfg.max_iterations = 2;
    const EvasionCurve c = evasion_curve(p, samples, budgets, cfg);
    REQUIRE(c.points.size() == 4);
    CHECK(c.points[0].mode == AttackMode::Gradient);
    CHECK(c.points[1].mode == AttackMode::Random);
    std::size_t expected_zero = 0;
    for (const auto& s : samples)
        expected_zero += forward(p, s.x).f < 0.5 ? 1 : 0;
    CHECK(c.points[0].n_samples == 3);
    CHECK(c.points[0].n_evaded == expected_zero);
    CHECK(c.points[2].n_samples == 2);
    CHECK(c.points[2].n_excluded == 1);
    CHECK(c.points[3].n_excluded == 1);
    CHECK_FALSE(c.results[0][1][2].has_value());
    CHECK(c.results[0][1][0].has_value());
    CHECK(c.points[2].evasion_rate() >= 0.0);
    CHECK(c.points[2].evasion_rate() <= 1.0);

    cfg.include_random = false;
    CHECK(evasion_curve(p, samples, budgets, cfg).points.size() == 2);
}

TEST_CASE("evaluate_split excludes undetected and ineligible malware")
{
    ModelParams p = ModelParams::random(small_hyper(), 8);
    std::vector<LabeledSample> test;
    std::vector<std::string> ids;
    for (std::size_t i = 0; i < 6; ++i) {
        test.push_back({to_input_vector(generate_sample(short_spec(), Label::Malware, i), 2048),
                        Label::Malware});
        ids.push_back("m" + std::to_string(i));
    }
    test.push_back({to_input_vector(generate_sample(short_spec(), Label::Benign, 0), 2048),
                    Label::Benign});
    ids.push_back("b0");

    EvaluationPlan plan;
    plan.budgets = {32, 64};
    plan.attack.max_iterations = 2;
    const SplitEvaluation ev = evaluate_split(p, "0", test, ids, plan, 3);
    std::size_t fits = 0, detected = 0;
    for (std::size_t i = 0; i < 6; ++i) {
        if (test[i].x.informative_len + 64 > 2048)
            continue;
        ++fits;
        detected += forward(p, test[i].x).f >= 0.5 ? 1 : 0;
    }
    CHECK(ev.n_ineligible == 6 - fits);
    CHECK(ev.n_misclassified == fits - detected);
    CHECK(ev.attacked_ids.size() == detected);
    for (const auto& pt : ev.curve.points)
        CHECK(pt.n_samples == detected);
    for (const auto& row : ev.histograms)
        CHECK(std::find(ev.attacked_ids.begin(), ev.attacked_ids.end(),
                        row.sample_id.substr(2)) != ev.attacked_ids.end());
    CHECK(!ev.histograms.empty());
    CHECK(ev.histograms.front().sample_id.rfind("0/", 0) == 0);
}

TEST_CASE("CSV quoting and number format")
{
    CHECK(csv_escape("plain") == "plain");
    CHECK(csv_escape("a,b") == "\"a,b\"");
    CHECK(csv_escape("say \"hi\"") == "\"say \"\"hi\"\"\"");
    CHECK(csv_escape("two\nlines") == "\"two\nlines\"");
    CHECK(format_real(0.1) == "0.10000000000000001");
    CHECK(format_real(1.0) == "1");
    CHECK(std::stod(format_real(1.0 / 3.0)) == 1.0 / 3.0);
}

TEST_CASE("metrics CSV with means")
{
    std::vector<EvalRecord> recs = {{"0", Metric::Precision, 0.5, {}},
                                    {"1", Metric::Precision, std::nan(""), {}},
                                    {"2", Metric::Precision, 1.0, {}},
                                    {"0", Metric::Recall, 0.25, {}}};
    const auto all = with_means(recs);
    REQUIRE(all.size() == 6);
    CHECK(all[4].split_id == "mean");
    CHECK(all[4].metric == Metric::Precision);
    CHECK(all[4].value == 0.75);
    CHECK(all[5].value == 0.25);

    const fs::path path = fs::temp_directory_path() / "byteveil_metrics_test.csv";
    write_metrics_csv(path, all);
    const std::string text = slurp(path);
    CHECK(text.rfind("split_id,metric,value\r\n0,precision,0.5\r\n1,precision,nan\r\n", 0) == 0);
    fs::remove(path);
}
