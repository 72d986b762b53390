#include "byteveil/malconv.hpp"

#include "byteveil/error.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <random>

namespace byteveil {

namespace {

void require(bool ok, const std::string& what)
{
    if (!ok)
        throw Error(ErrorCode::ShapeMismatch, what);
}

void check_tensor(const std::vector<float>& t, std::size_t expected, const char* name)
{
    require(t.size() == expected, std::string(name) + " has " + std::to_string(t.size()) +
                                      " entries, expected " + std::to_string(expected));
    for (float v : t)
        require(std::isfinite(v), std::string(name) + " contains a non-finite value");
}

void fill_normal(std::vector<float>& t, double stddev, std::mt19937_64& rng)
{
    std::normal_distribution<double> dist(0.0, stddev);
    for (auto& v : t)
        v = static_cast<float>(dist(rng));
}

/// Windows made only of zero bytes all see the same input; point each at the
/// first such window so the kernel computes it once.
std::vector<std::uint32_t> zero_window_alias(const Hyper& h, std::span<const std::uint8_t> bytes)
{
    const std::size_t nw = h.n_windows();
    std::vector<std::uint32_t> alias(nw);
    std::vector<std::uint32_t> nonzero_prefix(bytes.size() + 1, 0);
    for (std::size_t i = 0; i < bytes.size(); ++i)
        nonzero_prefix[i + 1] = nonzero_prefix[i] + (bytes[i] != 0 ? 1u : 0u);

    std::uint32_t first_zero = static_cast<std::uint32_t>(nw);
    for (std::size_t w = 0; w < nw; ++w) {
        alias[w] = static_cast<std::uint32_t>(w);
        const std::size_t a = w * h.stride;
        if (nonzero_prefix[a + h.window] - nonzero_prefix[a] != 0)
            continue;
        if (first_zero == nw)
            first_zero = static_cast<std::uint32_t>(w);
        else
            alias[w] = first_zero;
    }
    return alias;
}

ForwardResult run_forward(const ModelParams& params, std::vector<double> z,
                          std::vector<std::uint8_t> bytes, Exec exec)
{
    const Hyper& h = params.hyper;
    const std::size_t nw = h.n_windows();
    const std::size_t nf = h.n_filters;

    ForwardResult out;
    ForwardTrace& tr = out.trace;
    tr.hyper = h;
    tr.z = std::move(z);
    tr.bytes = std::move(bytes);
    tr.pre_relu.assign(nw * nf, 0.0);
    tr.pre_sigm.assign(nw * nf, 0.0);

    std::vector<std::uint32_t> alias;
    if (!tr.bytes.empty())
        alias = zero_window_alias(h, tr.bytes);
    kernels::gated_conv_forward(exec, tr.z, h.conv_shape(), {params.conv_relu_w, params.conv_relu_b},
                                {params.conv_sigm_w, params.conv_sigm_b}, alias, tr.pre_relu,
                                tr.pre_sigm);

    tr.gated.resize(nw * nf);
    for (std::size_t i = 0; i < nw * nf; ++i)
        tr.gated[i] = std::max(tr.pre_relu[i], 0.0) * sigmoid(tr.pre_sigm[i]);

    // Temporal max pooling; strict comparison keeps the lowest window on ties.
    tr.argmax.assign(nf, 0);
    tr.pooled.assign(nf, 0.0);
    for (std::size_t f = 0; f < nf; ++f) {
        std::uint32_t best = 0;
        double best_v = tr.gated[f];
        for (std::size_t w = 1; w < nw; ++w) {
            const double v = tr.gated[w * nf + f];
            if (v > best_v) {
                best_v = v;
                best = static_cast<std::uint32_t>(w);
            }
        }
        tr.argmax[f] = best;
        tr.pooled[f] = best_v;
    }

    tr.fc_pre.resize(h.hidden);
    tr.fc_out.resize(h.hidden);
    const std::span<const float> fc_w(params.fc_w);
    for (std::size_t k = 0; k < h.hidden; ++k) {
        tr.fc_pre[k] = params.fc_b[k] + kernels::dot(fc_w.subspan(k * nf, nf), tr.pooled);
        tr.fc_out[k] = std::max(tr.fc_pre[k], 0.0);
    }
    tr.logit = params.out_b[0] + kernels::dot(params.out_w, tr.fc_out);
    out.f = sigmoid(std::clamp(tr.logit, -kLogitClamp, kLogitClamp));
    return out;
}

void check_trace(const ModelParams& params, const ForwardTrace& tr)
{
    const Hyper& h = params.hyper;
    const std::size_t cells = h.n_windows() * h.n_filters;
    if (!(tr.hyper == h) || tr.z.size() != h.d * h.e || tr.pre_relu.size() != cells ||
        tr.pre_sigm.size() != cells || tr.argmax.size() != h.n_filters ||
        tr.pooled.size() != h.n_filters || tr.fc_out.size() != h.hidden ||
        tr.fc_pre.size() != h.hidden)
        throw Error(ErrorCode::StaleTrace, "trace does not match model shape");
}

/// Gradient flowing into each filter's pooled value, given dLoss/dlogit and
/// an optional extra term on the fully-connected outputs. Optionally also
/// accumulates the head's parameter gradients.
std::vector<double> backprop_head(const ModelParams& params, const ForwardTrace& tr, double dlogit,
                                  std::span<const double> d_fc_out, ParamGrads* grads)
{
    const Hyper& h = params.hyper;
    const std::size_t nf = h.n_filters;
    std::vector<double> d_pooled(nf, 0.0);
    for (std::size_t k = 0; k < h.hidden; ++k) {
        double d_out = dlogit * params.out_w[k];
        if (!d_fc_out.empty())
            d_out += d_fc_out[k];
        const double d_pre = tr.fc_pre[k] > 0.0 ? d_out : 0.0;
        if (grads) {
            grads->out_w[k] += dlogit * tr.fc_out[k];
            grads->fc_b[k] += d_pre;
            for (std::size_t f = 0; f < nf; ++f)
                grads->fc_w[k * nf + f] += d_pre * tr.pooled[f];
        }
        if (d_pre == 0.0)
            continue;
        for (std::size_t f = 0; f < nf; ++f)
            d_pooled[f] += params.fc_w[k * nf + f] * d_pre;
    }
    if (grads)
        grads->out_b[0] += dlogit;
    return d_pooled;
}

struct BranchGrad {
    double d_relu = 0.0;
    double d_sigm = 0.0;
};

BranchGrad gate_backward(const ForwardTrace& tr, std::size_t f, double d_pooled)
{
    const std::size_t cell = std::size_t{tr.argmax[f]} * tr.hyper.n_filters + f;
    const double a = tr.pre_relu[cell];
    const double sg = sigmoid(tr.pre_sigm[cell]);
    BranchGrad g;
    g.d_relu = a > 0.0 ? d_pooled * sg : 0.0;
    g.d_sigm = d_pooled * std::max(a, 0.0) * sg * (1.0 - sg);
    return g;
}

} // namespace

void Hyper::validate() const
{
    if (d == 0 || e == 0 || window == 0 || stride == 0 || n_filters == 0 || hidden == 0)
        throw Error(ErrorCode::InvalidConfig, "all network dimensions must be positive");
    if (e > 64)
        throw Error(ErrorCode::InvalidConfig, "embedding width above 64 is not supported");
    if (window > d)
        throw Error(ErrorCode::InvalidConfig, "convolution window exceeds input dimension");
    if (!(decov_weight >= 0.0) || !std::isfinite(decov_weight))
        throw Error(ErrorCode::InvalidConfig, "decov_weight must be finite and non-negative");
}

ModelParams ModelParams::zeros(const Hyper& h)
{
    h.validate();
    ModelParams p;
    p.hyper = h;
    p.embedding.assign(kByteValues * h.e, 0.0f);
    p.conv_relu_w.assign(h.n_filters * h.window * h.e, 0.0f);
    p.conv_relu_b.assign(h.n_filters, 0.0f);
    p.conv_sigm_w.assign(h.n_filters * h.window * h.e, 0.0f);
    p.conv_sigm_b.assign(h.n_filters, 0.0f);
    p.fc_w.assign(h.hidden * h.n_filters, 0.0f);
    p.fc_b.assign(h.hidden, 0.0f);
    p.out_w.assign(h.hidden, 0.0f);
    p.out_b.assign(1, 0.0f);
    return p;
}

ModelParams ModelParams::random(const Hyper& h, std::uint64_t seed)
{
    ModelParams p = zeros(h);
    std::mt19937_64 rng(seed);
    fill_normal(p.embedding, 1.0, rng);
    // Small conv init keeps the random part of each filter from swamping what training adds.
    const double conv_scale = 0.3 / std::sqrt(static_cast<double>(h.window * h.e));
    fill_normal(p.conv_relu_w, conv_scale, rng);
    fill_normal(p.conv_sigm_w, conv_scale, rng);
    fill_normal(p.fc_w, std::sqrt(2.0 / static_cast<double>(h.n_filters)), rng);
    fill_normal(p.out_w, std::sqrt(1.0 / static_cast<double>(h.hidden)), rng);
    return p;
}

void ModelParams::validate() const
{
    const Hyper& h = hyper;
    h.validate();
    check_tensor(embedding, kByteValues * h.e, "embedding");
    check_tensor(conv_relu_w, h.n_filters * h.window * h.e, "conv_relu.weight");
    check_tensor(conv_relu_b, h.n_filters, "conv_relu.bias");
    check_tensor(conv_sigm_w, h.n_filters * h.window * h.e, "conv_sigm.weight");
    check_tensor(conv_sigm_b, h.n_filters, "conv_sigm.bias");
    check_tensor(fc_w, h.hidden * h.n_filters, "fc.weight");
    check_tensor(fc_b, h.hidden, "fc.bias");
    check_tensor(out_w, h.hidden, "out.weight");
    check_tensor(out_b, 1, "out.bias");
}

namespace {

template <typename View, typename Params>
std::vector<View> tensor_list(Params& p)
{
    const Hyper& h = p.hyper;
    return {
        {"embedding", {kByteValues, h.e}, &p.embedding},
        {"conv_relu.weight", {h.n_filters, h.window, h.e}, &p.conv_relu_w},
        {"conv_relu.bias", {h.n_filters}, &p.conv_relu_b},
        {"conv_sigm.weight", {h.n_filters, h.window, h.e}, &p.conv_sigm_w},
        {"conv_sigm.bias", {h.n_filters}, &p.conv_sigm_b},
        {"fc.weight", {h.hidden, h.n_filters}, &p.fc_w},
        {"fc.bias", {h.hidden}, &p.fc_b},
        {"out.weight", {h.hidden}, &p.out_w},
        {"out.bias", {1}, &p.out_b},
    };
}

} // namespace

std::vector<TensorView> tensors(ModelParams& p)
{
    return tensor_list<TensorView>(p);
}

std::vector<ConstTensorView> tensors(const ModelParams& p)
{
    return tensor_list<ConstTensorView>(p);
}

bool bit_equal(const ModelParams& a, const ModelParams& b)
{
    if (!(a.hyper == b.hyper))
        return false;
    const auto ta = tensors(a);
    const auto tb = tensors(b);
    for (std::size_t i = 0; i < ta.size(); ++i) {
        const auto& x = *ta[i].data;
        const auto& y = *tb[i].data;
        if (x.size() != y.size() || std::memcmp(x.data(), y.data(), x.size() * sizeof(float)) != 0)
            return false;
    }
    return true;
}

std::string_view to_string(Label label)
{
    return label == Label::Malware ? "malware" : "benign";
}

double sigmoid(double x) noexcept
{
    if (x >= 0.0)
        return 1.0 / (1.0 + std::exp(-x));
    const double ex = std::exp(x);
    return ex / (1.0 + ex);
}

std::vector<double> embed(const ModelParams& params, const InputVector& x)
{
    const std::size_t e = params.hyper.e;
    std::vector<double> z(x.dim() * e);
    for (std::size_t j = 0; j < x.dim(); ++j) {
        const auto row = params.embedding_row(x.values[j]);
        std::copy(row.begin(), row.end(), z.begin() + static_cast<std::ptrdiff_t>(j * e));
    }
    return z;
}

ForwardResult forward(const ModelParams& params, const InputVector& x, Exec exec)
{
    if (x.dim() != params.hyper.d)
        throw Error(ErrorCode::ShapeMismatch, "input dimension " + std::to_string(x.dim()) +
                                                  " does not match model d=" +
                                                  std::to_string(params.hyper.d));
    return run_forward(params, embed(params, x), x.values, exec);
}

ForwardResult forward_embedded(const ModelParams& params, std::vector<double> z, Exec exec)
{
    if (z.size() != params.hyper.d * params.hyper.e)
        throw Error(ErrorCode::ShapeMismatch, "embedded input has the wrong size");
    return run_forward(params, std::move(z), {}, exec);
}

std::vector<double> grad_wrt_embedding(const ModelParams& params, const ForwardTrace& tr)
{
    check_trace(params, tr);
    const Hyper& h = params.hyper;
    std::vector<double> grad(h.d * h.e, 0.0);

    // Clamped logits give a flat output, hence a zero gradient.
    if (std::abs(tr.logit) > kLogitClamp)
        return grad;
    const double f = sigmoid(tr.logit);
    const double dlogit = f * (1.0 - f);

    const auto d_pooled = backprop_head(params, tr, dlogit, {}, nullptr);
    const std::size_t span_len = h.window * h.e;
    for (std::size_t f_idx = 0; f_idx < h.n_filters; ++f_idx) {
        if (d_pooled[f_idx] == 0.0)
            continue;
        const BranchGrad g = gate_backward(tr, f_idx, d_pooled[f_idx]);
        const float* wr = params.conv_relu_w.data() + f_idx * span_len;
        const float* ws = params.conv_sigm_w.data() + f_idx * span_len;
        double* out = grad.data() + std::size_t{tr.argmax[f_idx]} * h.stride * h.e;
        for (std::size_t i = 0; i < span_len; ++i)
            out[i] += g.d_relu * wr[i] + g.d_sigm * ws[i];
    }
    return grad;
}

ParamGrads ParamGrads::zeros_like(const ModelParams& p)
{
    ParamGrads g;
    g.embedding.assign(p.embedding.size(), 0.0);
    g.conv_relu_w.assign(p.conv_relu_w.size(), 0.0);
    g.conv_relu_b.assign(p.conv_relu_b.size(), 0.0);
    g.conv_sigm_w.assign(p.conv_sigm_w.size(), 0.0);
    g.conv_sigm_b.assign(p.conv_sigm_b.size(), 0.0);
    g.fc_w.assign(p.fc_w.size(), 0.0);
    g.fc_b.assign(p.fc_b.size(), 0.0);
    g.out_w.assign(p.out_w.size(), 0.0);
    g.out_b.assign(p.out_b.size(), 0.0);
    return g;
}

void accumulate_param_grads(const ModelParams& params, const ForwardTrace& tr, double dlogit,
                            std::span<const double> d_fc_out, ParamGrads& grads)
{
    check_trace(params, tr);
    const Hyper& h = params.hyper;
    const auto d_pooled = backprop_head(params, tr, dlogit, d_fc_out, &grads);

    const std::size_t span_len = h.window * h.e;
    const bool have_bytes = tr.bytes.size() == h.d;
    for (std::size_t f_idx = 0; f_idx < h.n_filters; ++f_idx) {
        if (d_pooled[f_idx] == 0.0)
            continue;
        const BranchGrad g = gate_backward(tr, f_idx, d_pooled[f_idx]);
        grads.conv_relu_b[f_idx] += g.d_relu;
        grads.conv_sigm_b[f_idx] += g.d_sigm;

        const std::size_t start = std::size_t{tr.argmax[f_idx]} * h.stride;
        const double* z = tr.z.data() + start * h.e;
        const float* wr = params.conv_relu_w.data() + f_idx * span_len;
        const float* ws = params.conv_sigm_w.data() + f_idx * span_len;
        double* gwr = grads.conv_relu_w.data() + f_idx * span_len;
        double* gws = grads.conv_sigm_w.data() + f_idx * span_len;
        for (std::size_t i = 0; i < span_len; ++i) {
            gwr[i] += g.d_relu * z[i];
            gws[i] += g.d_sigm * z[i];
        }
        if (!have_bytes)
            continue;
        for (std::size_t t = 0; t < h.window; ++t) {
            double* gm = grads.embedding.data() + std::size_t{tr.bytes[start + t]} * h.e;
            for (std::size_t c = 0; c < h.e; ++c) {
                const std::size_t i = t * h.e + c;
                gm[c] += g.d_relu * wr[i] + g.d_sigm * ws[i];
            }
        }
    }
}

namespace {

// Shifted by the first row, so identical rows give an exact mean and a zero penalty.
std::vector<double> column_means(std::span<const double> act, std::size_t batch, std::size_t width)
{
    std::vector<double> mean(width, 0.0);
    for (std::size_t n = 1; n < batch; ++n)
        for (std::size_t a = 0; a < width; ++a)
            mean[a] += act[n * width + a] - act[a];
    for (std::size_t a = 0; a < width; ++a)
        mean[a] = act[a] + mean[a] / static_cast<double>(batch);
    return mean;
}

} // namespace

double decov_penalty(std::span<const double> act, std::size_t batch, std::size_t width)
{
    if (batch == 0 || act.size() != batch * width)
        throw Error(ErrorCode::ShapeMismatch, "decov_penalty: activations are not batch x width");
    const std::vector<double> mean = column_means(act, batch, width);

    double penalty = 0.0;
    for (std::size_t a = 0; a < width; ++a) {
        for (std::size_t b = a + 1; b < width; ++b) {
            double c = 0.0;
            for (std::size_t n = 0; n < batch; ++n)
                c += (act[n * width + a] - mean[a]) * (act[n * width + b] - mean[b]);
            c /= static_cast<double>(batch);
            penalty += c * c;  // each off-diagonal pair appears twice; the 1/2 cancels it
        }
    }
    return penalty;
}

std::vector<double> decov_gradient(std::span<const double> act, std::size_t batch,
                                   std::size_t width)
{
    if (batch == 0 || act.size() != batch * width)
        throw Error(ErrorCode::ShapeMismatch, "decov_gradient: activations are not batch x width");
    const std::vector<double> mean = column_means(act, batch, width);

    std::vector<double> centred(act.size());
    for (std::size_t n = 0; n < batch; ++n)
        for (std::size_t a = 0; a < width; ++a)
            centred[n * width + a] = act[n * width + a] - mean[a];

    std::vector<double> cov(width * width, 0.0);
    for (std::size_t a = 0; a < width; ++a) {
        for (std::size_t b = a + 1; b < width; ++b) {
            double c = 0.0;
            for (std::size_t n = 0; n < batch; ++n)
                c += centred[n * width + a] * centred[n * width + b];
            c /= static_cast<double>(batch);
            cov[a * width + b] = c;
            cov[b * width + a] = c;
        }
    }

    // dP/dh_nc = (2/N) * sum_{b != c} C_cb * (h_nb - mean_b)
    std::vector<double> grad(act.size(), 0.0);
    const double scale = 2.0 / static_cast<double>(batch);
    for (std::size_t n = 0; n < batch; ++n) {
        for (std::size_t c = 0; c < width; ++c) {
            double g = 0.0;
            for (std::size_t b = 0; b < width; ++b)
                g += cov[c * width + b] * centred[n * width + b];
            grad[n * width + c] = scale * g;
        }
    }
    return grad;
}

Classification classify(const ModelParams& params, const InputVector& x)
{
    const double f = forward(params, x).f;
    return {decide(f), f};
}

Classification classify(const ModelParams& params, const RawBinary& file)
{
    parse_pe(file);
    return classify(params, to_input_vector(file, params.hyper.d));
}

} // namespace byteveil
