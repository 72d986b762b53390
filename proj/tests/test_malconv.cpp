#include <doctest.h>

#include "byteveil/error.hpp"
#include "byteveil/malconv.hpp"
#include "byteveil/synth_corpus.hpp"

#include <algorithm>
#include <cmath>
#include <random>

using namespace byteveil;

namespace {

Hyper tiny()
{
    Hyper h;
    h.d = 16;
    h.e = 8;
    h.window = 4;
    h.stride = 4;
    h.n_filters = 2;
    h.hidden = 3;
    return h;
}

InputVector random_input(std::size_t d, std::size_t k, std::mt19937_64& rng)
{
    InputVector x;
    x.values.assign(d, 0);
    x.informative_len = k;
    for (std::size_t j = 0; j < k; ++j)
        x.values[j] = static_cast<std::uint8_t>(rng());
    return x;
}

double relu(double v)
{
    return v > 0.0 ? v : 0.0;
}

double logistic(double v)
{
    return 1.0 / (1.0 + std::exp(-v));
}

// Straight-line recomputation, written without any of the library's helpers.
double oracle_forward(const ModelParams& p, const InputVector& x)
{
    const Hyper& h = p.hyper;
    std::vector<std::vector<double>> z(h.d, std::vector<double>(h.e));
    for (std::size_t j = 0; j < h.d; ++j)
        for (std::size_t c = 0; c < h.e; ++c)
            z[j][c] = p.embedding[x.values[j] * h.e + c];

    const std::size_t nw = (h.d - h.window) / h.stride + 1;
    std::vector<double> pooled(h.n_filters, -1e300);
    for (std::size_t f = 0; f < h.n_filters; ++f) {
        for (std::size_t w = 0; w < nw; ++w) {
            double a = p.conv_relu_b[f];
            double b = p.conv_sigm_b[f];
            for (std::size_t t = 0; t < h.window; ++t)
                for (std::size_t c = 0; c < h.e; ++c) {
                    const std::size_t wi = (f * h.window + t) * h.e + c;
                    a += p.conv_relu_w[wi] * z[w * h.stride + t][c];
                    b += p.conv_sigm_w[wi] * z[w * h.stride + t][c];
                }
            pooled[f] = std::max(pooled[f], relu(a) * logistic(b));
        }
    }
    double logit = p.out_b[0];
    for (std::size_t k = 0; k < h.hidden; ++k) {
        double u = p.fc_b[k];
        for (std::size_t f = 0; f < h.n_filters; ++f)
            u += p.fc_w[k * h.n_filters + f] * pooled[f];
        logit += p.out_w[k] * relu(u);
    }
    logit = std::clamp(logit, -30.0, 30.0);
    return logistic(logit);
}

double rel_err(double analytic, double numeric)
{
    const double scale = std::max(std::abs(analytic), std::abs(numeric));
    return scale == 0.0 ? 0.0 : std::abs(analytic - numeric) / scale;
}

// Max error of df/dZ against central differences, using the absolute
// comparison for tiny analytic entries.
bool gradient_matches(const ModelParams& p, const InputVector& x)
{
    const ForwardResult r = forward(p, x, Exec::Serial);
    const auto g = grad_wrt_embedding(p, r.trace);
    const double step = 1e-4;
    for (std::size_t i = 0; i < g.size(); ++i) {
        auto zp = r.trace.z;
        auto zm = r.trace.z;
        zp[i] += step;
        zm[i] -= step;
        const double fd =
            (forward_embedded(p, zp, Exec::Serial).f - forward_embedded(p, zm, Exec::Serial).f) /
            (2.0 * step);
        if (std::abs(g[i]) < 1e-8) {
            if (std::abs(fd - g[i]) > 1e-6)
                return false;
        } else if (rel_err(g[i], fd) > 1e-3) {
            return false;
        }
    }
    return true;
}

} // namespace

TEST_CASE("embed is a row lookup")
{
    std::mt19937_64 rng(1);
    const ModelParams p = ModelParams::random(tiny(), 7);
    InputVector x;
    x.values.assign(16, 0);
    auto z = embed(p, x);
    for (std::size_t j = 0; j < 16; ++j)
        for (std::size_t c = 0; c < 8; ++c)
            CHECK(z[j * 8 + c] == p.embedding[c]);

    x.values[5] = 255;
    const auto z2 = embed(p, x);
    for (std::size_t c = 0; c < 8; ++c)
        CHECK(z2[5 * 8 + c] == p.embedding[255 * 8 + c]);
    for (std::size_t i = 0; i < z.size(); ++i)
        if (i / 8 != 5)
            CHECK(z[i] == z2[i]);
}

TEST_CASE("tiny forward equals the step-by-step oracle")
{
    std::mt19937_64 rng(2);
    for (int trial = 0; trial < 50; ++trial) {
        ModelParams p = ModelParams::random(tiny(), rng());
        // Make the conv branches large enough that ReLU and the gate both matter.
        for (auto& v : p.conv_relu_w)
            v *= 4.0F;
        for (auto& v : p.conv_sigm_b)
            v = static_cast<float>(static_cast<int>(rng() % 5) - 2);
        const InputVector x = random_input(16, 1 + rng() % 16, rng);
        const double f = forward(p, x, Exec::Serial).f;
        CHECK(f == doctest::Approx(oracle_forward(p, x)).epsilon(1e-12));
        CHECK(forward(p, x, Exec::Parallel).f == f);
        CHECK(forward(p, x, Exec::Serial).f == f);
    }
}

TEST_CASE("trace invariants: gating, pooling, argmax")
{
    std::mt19937_64 rng(3);
    Hyper h = tiny();
    h.d = 64;
    const ModelParams p = ModelParams::random(h, 11);
    const InputVector x = random_input(64, 40, rng);
    const ForwardTrace t = forward(p, x, Exec::Serial).trace;
    const std::size_t nw = h.n_windows();
    for (std::size_t i = 0; i < t.gated.size(); ++i)
        CHECK(t.gated[i] == relu(t.pre_relu[i]) * sigmoid(t.pre_sigm[i]));
    for (std::size_t f = 0; f < h.n_filters; ++f) {
        REQUIRE(t.argmax[f] < nw);
        double best = -1.0;
        std::size_t at = 0;
        for (std::size_t w = 0; w < nw; ++w)
            if (t.gated[w * h.n_filters + f] > best) {
                best = t.gated[w * h.n_filters + f];
                at = w;
            }
        CHECK(t.pooled[f] == best);
        CHECK(t.argmax[f] == at);
    }
}

TEST_CASE("pooling ties resolve to the first window")
{
    const ModelParams p = ModelParams::random(tiny(), 5);
    InputVector x;
    x.values.assign(16, 0);
    const ForwardTrace t = forward(p, x).trace;
    for (auto a : t.argmax)
        CHECK(a == 0);
}

TEST_CASE("output stays in [0, 1] and the clamp holds")
{
    std::mt19937_64 rng(4);
    ModelParams p = ModelParams::random(tiny(), 1);
    p.out_b[0] = 1000.0F;
    CHECK(forward(p, random_input(16, 16, rng)).f == sigmoid(30.0));
    p.out_b[0] = -1000.0F;
    const double lo = forward(p, random_input(16, 16, rng)).f;
    CHECK(lo > 0.0);
    CHECK(lo == sigmoid(-30.0));
}

TEST_CASE("decision boundary is inclusive")
{
    CHECK(decide(0.5) == Label::Malware);
    CHECK(decide(0.49) == Label::Benign);
    CHECK(decide(std::nextafter(0.5, 0.0)) == Label::Benign);
}

TEST_CASE("shape mismatch and stale traces")
{
    const ModelParams p = ModelParams::random(tiny(), 1);
    InputVector x;
    x.values.assign(17, 0);
    CHECK_THROWS_AS(forward(p, x), Error);

    Hyper other = tiny();
    other.d = 32;
    const ModelParams q = ModelParams::random(other, 1);
    InputVector y;
    y.values.assign(32, 0);
    const ForwardTrace t = forward(q, y).trace;
    try {
        grad_wrt_embedding(p, t);
        FAIL("expected StaleTrace");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::StaleTrace);
    }
}

TEST_CASE("grad_wrt_embedding matches central differences on the tiny config")
{
    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 10; ++trial) {
        const ModelParams p = ModelParams::random(tiny(), rng());
        CHECK(gradient_matches(p, random_input(16, 16, rng)));
    }
}

TEST_CASE("doubling the output weights keeps the gradient exact")
{
    std::mt19937_64 rng(6);
    ModelParams p = ModelParams::random(tiny(), 21);
    const InputVector x = random_input(16, 12, rng);
    REQUIRE(gradient_matches(p, x));
    for (auto& v : p.out_w)
        v *= 2.0F;
    CHECK(gradient_matches(p, x));
}

TEST_CASE("rows outside every pooled window get zero gradient")
{
    std::mt19937_64 rng(7);
    Hyper h = tiny();
    h.d = 64;  // 16 windows, 2 filters: at most 2 windows carry gradient
    const ModelParams p = ModelParams::random(h, 3);
    const ForwardResult r = forward(p, random_input(64, 64, rng));
    const auto g = grad_wrt_embedding(p, r.trace);
    for (std::size_t j = 0; j < h.d; ++j) {
        const std::size_t w = j / h.stride;
        const bool live = std::find(r.trace.argmax.begin(), r.trace.argmax.end(), w) !=
                          r.trace.argmax.end();
        if (!live)
            for (std::size_t c = 0; c < h.e; ++c)
                CHECK(g[j * h.e + c] == 0.0);
    }
}

TEST_CASE("overlapping windows: gradient still matches")
{
    std::mt19937_64 rng(8);
    Hyper h = tiny();
    h.d = 24;
    h.window = 6;
    h.stride = 3;
    for (int trial = 0; trial < 5; ++trial) {
        const ModelParams p = ModelParams::random(h, rng());
        CHECK(gradient_matches(p, random_input(24, 20, rng)));
    }
}

TEST_CASE("parameter gradients match central differences of the logit")
{
    std::mt19937_64 rng(9);
    Hyper h = tiny();
    h.d = 24;
    h.window = 6;
    h.stride = 3;
    ModelParams p = ModelParams::random(h, 17);
    const InputVector x = random_input(24, 20, rng);
    const ForwardTrace t = forward(p, x, Exec::Serial).trace;
    ParamGrads g = ParamGrads::zeros_like(p);
    accumulate_param_grads(p, t, 1.0, {}, g);

    const std::vector<std::pair<std::vector<float>*, const std::vector<double>*>> pairs = {
        {&p.embedding, &g.embedding}, {&p.conv_relu_w, &g.conv_relu_w},
        {&p.conv_relu_b, &g.conv_relu_b}, {&p.conv_sigm_w, &g.conv_sigm_w},
        {&p.conv_sigm_b, &g.conv_sigm_b}, {&p.fc_w, &g.fc_w},
        {&p.fc_b, &g.fc_b}, {&p.out_w, &g.out_w}, {&p.out_b, &g.out_b}};
    const double step = 1e-3;
    for (const auto& [param, grad] : pairs) {
        for (std::size_t i = 0; i < param->size(); ++i) {
            const float orig = (*param)[i];
            const float up = static_cast<float>(orig + step);
            const float dn = static_cast<float>(orig - step);
            (*param)[i] = up;
            const double lp = forward(p, x, Exec::Serial).trace.logit;
            (*param)[i] = dn;
            const double lm = forward(p, x, Exec::Serial).trace.logit;
            (*param)[i] = orig;
            const double fd = (lp - lm) / (static_cast<double>(up) - static_cast<double>(dn));
            const double a = (*grad)[i];
            if (std::abs(a) < 1e-8)
                CHECK(std::abs(fd) < 1e-6);
            else
                CHECK(rel_err(a, fd) < 1e-3);
        }
    }
}

TEST_CASE("DeCov penalty examples")
{
    const std::vector<double> two = {1, 2, 3, 4};
    CHECK(decov_penalty(two, 2, 2) == doctest::Approx(1.0));

    const std::vector<double> same = {1, 5, -2, 1, 5, -2, 1, 5, -2};
    CHECK(decov_penalty(same, 3, 3) == 0.0);

    const std::vector<double> single = {3, 1, 4, 1, 5};
    CHECK(decov_penalty(single, 1, 5) == 0.0);

    std::mt19937_64 rng(10);
    std::normal_distribution<double> n(0.0, 2.0);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<double> a(6 * 4);
        for (auto& v : a)
            v = n(rng);
        CHECK(decov_penalty(a, 6, 4) >= 0.0);
    }
}

TEST_CASE("DeCov penalty against a brute-force covariance")
{
    std::mt19937_64 rng(11);
    std::normal_distribution<double> n(0.0, 1.0);
    const std::size_t N = 7, H = 5;
    std::vector<double> a(N * H);
    for (auto& v : a)
        v = n(rng);
    double frob = 0.0, diag = 0.0;
    for (std::size_t i = 0; i < H; ++i)
        for (std::size_t j = 0; j < H; ++j) {
            double mi = 0.0, mj = 0.0;
            for (std::size_t r = 0; r < N; ++r) {
                mi += a[r * H + i];
                mj += a[r * H + j];
            }
            mi /= N;
            mj /= N;
            double c = 0.0;
            for (std::size_t r = 0; r < N; ++r)
                c += (a[r * H + i] - mi) * (a[r * H + j] - mj);
            c /= N;
            frob += c * c;
            if (i == j)
                diag += c * c;
        }
    CHECK(decov_penalty(a, N, H) == doctest::Approx(0.5 * (frob - diag)).epsilon(1e-12));
}

TEST_CASE("DeCov gradient matches central differences")
{
    std::mt19937_64 rng(12);
    std::normal_distribution<double> n(0.0, 1.0);
    const std::size_t N = 5, H = 4;
    std::vector<double> a(N * H);
    for (auto& v : a)
        v = n(rng);
    const auto g = decov_gradient(a, N, H);
    for (std::size_t i = 0; i < a.size(); ++i) {
        auto ap = a, am = a;
        ap[i] += 1e-5;
        am[i] -= 1e-5;
        const double fd = (decov_penalty(ap, N, H) - decov_penalty(am, N, H)) / 2e-5;
        CHECK(g[i] == doctest::Approx(fd).epsilon(1e-6));
    }
}

TEST_CASE("classify agrees with forward on the padded file")
{
    Hyper h = tiny();
    h.d = 2048;
    h.window = 64;
    h.stride = 64;
    const ModelParams p = ModelParams::random(h, 4);
    const RawBinary bin = generate_sample(CorpusSpec{}, Label::Malware, 0);
    const Classification c = classify(p, bin);
    const double f = forward(p, to_input_vector(bin, h.d)).f;
    CHECK(c.f == f);
    CHECK(c.label == decide(f));
    CHECK_THROWS_AS(classify(p, RawBinary{{'Z', 'Z', 0, 0}}), Error);
}

TEST_CASE("parameter validation")
{
    ModelParams p = ModelParams::random(tiny(), 1);
    CHECK_NOTHROW(p.validate());
    p.fc_b.pop_back();
    CHECK_THROWS_AS(p.validate(), Error);
    ModelParams q = ModelParams::random(tiny(), 1);
    q.out_w[0] = std::nanf("");
    CHECK_THROWS_AS(q.validate(), Error);
}
