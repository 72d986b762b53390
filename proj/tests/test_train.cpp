#include <doctest.h>

#include "byteveil/error.hpp"
#include "byteveil/train.hpp"

#include <random>

using namespace byteveil;

namespace {

Hyper toy_hyper()
{
    Hyper h;
    h.d = 64;
    h.e = 8;
    h.window = 8;
    h.stride = 8;
    h.n_filters = 4;
    h.hidden = 8;
    h.decov_weight = 0.01;
    return h;
}

constexpr std::uint8_t kMarker = 0xAA;

// Random bytes from [0, 0x7F]; malware additionally carries the marker byte
// at a few random positions.
std::vector<LabeledSample> toy_corpus(std::size_t per_class, std::uint64_t seed)
{
    std::mt19937_64 rng(seed);
    std::vector<LabeledSample> out;
    for (std::size_t i = 0; i < 2 * per_class; ++i) {
        LabeledSample s;
        s.label = i % 2 == 0 ? Label::Malware : Label::Benign;
        const std::size_t k = 32 + rng() % 33;
        s.x.values.assign(64, 0);
        s.x.informative_len = k;
        for (std::size_t j = 0; j < k; ++j)
            s.x.values[j] = static_cast<std::uint8_t>(rng() % 0x80);
        if (s.label == Label::Malware)
            for (int c = 0; c < 3; ++c)
                s.x.values[rng() % k] = kMarker;
        out.push_back(std::move(s));
    }
    return out;
}

double accuracy(const ModelParams& p, const std::vector<LabeledSample>& data)
{
    std::size_t ok = 0;
    for (const auto& s : data)
        ok += decide(forward(p, s.x).f) == s.label ? 1 : 0;
    return static_cast<double>(ok) / static_cast<double>(data.size());
}

} // namespace

TEST_CASE("separable toy corpus is learned")
{
    const auto corpus = toy_corpus(30, 1);
    TrainConfig cfg;
    cfg.epochs = 50;
    cfg.batch_size = 8;
    cfg.learning_rate = 0.05;
    TrainReport rep;
    const ModelParams p = train(toy_hyper(), corpus, cfg, &rep);
    CHECK(accuracy(p, corpus) >= 0.95);
    CHECK(rep.epoch_loss.size() == 50);
    CHECK(rep.final_loss < rep.initial_loss);
}

TEST_CASE("training is deterministic")
{
    const auto corpus = toy_corpus(10, 2);
    TrainConfig cfg;
    cfg.epochs = 3;
    cfg.batch_size = 4;
    const ModelParams a = train(toy_hyper(), corpus, cfg);
    const ModelParams b = train(toy_hyper(), corpus, cfg);
    CHECK(bit_equal(a, b));
    cfg.seed = 99;
    CHECK_FALSE(bit_equal(a, train(toy_hyper(), corpus, cfg)));
}

TEST_CASE("single-class corpus is rejected")
{
    auto corpus = toy_corpus(5, 3);
    std::erase_if(corpus, [](const LabeledSample& s) { return s.label == Label::Benign; });
    try {
        train(toy_hyper(), corpus, TrainConfig{});
        FAIL("expected EmptyClass");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::EmptyClass);
    }
    CHECK_THROWS_AS(train(toy_hyper(), {}, TrainConfig{}), Error);
}

TEST_CASE("bad configurations are rejected")
{
    const auto corpus = toy_corpus(4, 4);
    TrainConfig cfg;
    cfg.batch_size = 0;
    CHECK_THROWS_AS(train(toy_hyper(), corpus, cfg), Error);
    cfg = TrainConfig{};
    cfg.learning_rate = -1.0;
    CHECK_THROWS_AS(train(toy_hyper(), corpus, cfg), Error);

    auto wrong = corpus;
    wrong[0].x.values.resize(63);
    CHECK_THROWS_AS(train(toy_hyper(), wrong, TrainConfig{}), Error);
}

TEST_CASE("a runaway learning rate ends in DivergedLoss")
{
    const auto corpus = toy_corpus(8, 5);
    TrainConfig cfg;
    cfg.learning_rate = 1e30;
    cfg.epochs = 5;
    try {
        train(toy_hyper(), corpus, cfg);
        FAIL("expected DivergedLoss");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::DivergedLoss);
    }
}

TEST_CASE("objective is BCE plus the weighted DeCov penalty")
{
    const auto corpus = toy_corpus(3, 6);
    Hyper h = toy_hyper();
    h.decov_weight = 0.0;
    const ModelParams p = ModelParams::random(h, 8);
    double bce = 0.0;
    std::vector<double> acts;
    for (const auto& s : corpus) {
        const ForwardResult r = forward(p, s.x);
        const double y = s.label == Label::Malware ? 1.0 : 0.0;
        bce -= y * std::log(r.f) + (1.0 - y) * std::log(1.0 - r.f);
        acts.insert(acts.end(), r.trace.fc_out.begin(), r.trace.fc_out.end());
    }
    bce /= static_cast<double>(corpus.size());
    CHECK(batch_objective(p, corpus) == doctest::Approx(bce).epsilon(1e-12));

    ModelParams q = p;
    q.hyper.decov_weight = 0.5;
    const double pen = decov_penalty(acts, corpus.size(), h.hidden);
    CHECK(batch_objective(q, corpus) == doctest::Approx(bce + 0.5 * pen).epsilon(1e-12));
}
