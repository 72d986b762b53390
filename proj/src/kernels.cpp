#include "byteveil/kernels.hpp"

#include "byteveil/error.hpp"

#include <omp.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdlib>
#include <limits>
#include <string>

namespace byteveil::kernels {

namespace {

constexpr std::size_t kMaxChannels = 64;

void conv_one(std::span<const double> z, const ConvShape& shape, ConvBank relu, ConvBank sigm,
              std::size_t win, std::size_t filter, std::span<double> pre_relu,
              std::span<double> pre_sigm)
{
    const std::size_t span_len = shape.window * shape.channels;
    const auto slice = z.subspan(win * shape.stride * shape.channels, span_len);
    const std::size_t out = win * shape.filters + filter;
    pre_relu[out] = relu.bias[filter] + dot(relu.weight.subspan(filter * span_len, span_len), slice);
    pre_sigm[out] = sigm.bias[filter] + dot(sigm.weight.subspan(filter * span_len, span_len), slice);
}

bool is_alias(std::span<const std::uint32_t> alias, std::size_t win)
{
    return !alias.empty() && alias[win] != win;
}

void copy_aliases(const ConvShape& shape, std::span<const std::uint32_t> alias,
                  std::span<double> pre_relu, std::span<double> pre_sigm)
{
    if (alias.empty())
        return;
    const std::size_t nw = shape.n_windows();
    for (std::size_t w = 0; w < nw; ++w) {
        if (alias[w] == w)
            continue;
        const std::size_t src = std::size_t{alias[w]} * shape.filters;
        const std::size_t dst = w * shape.filters;
        std::copy_n(pre_relu.begin() + src, shape.filters, pre_relu.begin() + dst);
        std::copy_n(pre_sigm.begin() + src, shape.filters, pre_sigm.begin() + dst);
    }
}

ByteChoice select_one(std::span<std::uint8_t> values, std::size_t j, std::span<const double> grad,
                      std::span<const float> embedding, std::size_t channels)
{
    std::array<double, kMaxChannels> z{};
    std::array<double, kMaxChannels> w{};
    const std::uint8_t cur = values[j];
    bool any = false;
    for (std::size_t c = 0; c < channels; ++c) {
        z[c] = embedding[std::size_t{cur} * channels + c];
        w[c] = -grad[j * channels + c];
        any = any || w[c] != 0.0;
    }
    if (!any)
        return {cur, SelectStatus::ZeroGradient};
    return select_byte(std::span<const double>(z.data(), channels),
                       std::span<const double>(w.data(), channels), embedding, cur);
}

void tally(SweepStats& stats, std::uint8_t before, ByteChoice choice)
{
    switch (choice.status) {
    case SelectStatus::Selected:
        if (choice.value != before)
            ++stats.changed;
        break;
    case SelectStatus::NoFeasible: ++stats.no_feasible; break;
    case SelectStatus::ZeroGradient: ++stats.zero_gradient; break;
    }
}

} // namespace

void gated_conv_forward_serial(std::span<const double> z, const ConvShape& shape, ConvBank relu,
                               ConvBank sigm, std::span<const std::uint32_t> alias,
                               std::span<double> pre_relu, std::span<double> pre_sigm)
{
    const std::size_t nw = shape.n_windows();
    for (std::size_t w = 0; w < nw; ++w) {
        if (is_alias(alias, w))
            continue;
        for (std::size_t f = 0; f < shape.filters; ++f)
            conv_one(z, shape, relu, sigm, w, f, pre_relu, pre_sigm);
    }
    copy_aliases(shape, alias, pre_relu, pre_sigm);
}

void gated_conv_forward_omp(std::span<const double> z, const ConvShape& shape, ConvBank relu,
                            ConvBank sigm, std::span<const std::uint32_t> alias,
                            std::span<double> pre_relu, std::span<double> pre_sigm)
{
    const auto nw = static_cast<std::ptrdiff_t>(shape.n_windows());
    const auto nf = static_cast<std::ptrdiff_t>(shape.filters);
#pragma omp parallel for collapse(2) schedule(static) if (!omp_in_parallel())
    for (std::ptrdiff_t w = 0; w < nw; ++w) {
        for (std::ptrdiff_t f = 0; f < nf; ++f) {
            if (is_alias(alias, static_cast<std::size_t>(w)))
                continue;
            conv_one(z, shape, relu, sigm, static_cast<std::size_t>(w), static_cast<std::size_t>(f),
                     pre_relu, pre_sigm);
        }
    }
    copy_aliases(shape, alias, pre_relu, pre_sigm);
}

ByteChoice select_byte(std::span<const double> z, std::span<const double> w,
                       std::span<const float> embedding, std::uint8_t current)
{
    const std::size_t e = z.size();
    if (e == 0 || e > kMaxChannels || w.size() != e || embedding.size() != 256 * e)
        throw Error(ErrorCode::ShapeMismatch, "select_byte: inconsistent embedding width");

    double norm2 = 0.0;
    for (std::size_t c = 0; c < e; ++c)
        norm2 += w[c] * w[c];
    const double norm = std::sqrt(norm2);
    if (!(norm > 0.0) || !std::isfinite(norm))
        return {current, SelectStatus::ZeroGradient};

    std::array<double, kMaxChannels> n{};
    for (std::size_t c = 0; c < e; ++c)
        n[c] = w[c] / norm;

    int best = -1;
    double best_dist2 = std::numeric_limits<double>::infinity();
    std::array<double, kMaxChannels> diff{};
    for (int i = 0; i < 256; ++i) {
        const float* m = embedding.data() + static_cast<std::size_t>(i) * e;
        double s = 0.0;
        for (std::size_t c = 0; c < e; ++c) {
            diff[c] = static_cast<double>(m[c]) - z[c];
            s += n[c] * diff[c];
        }
        if (!(s > 0.0))
            continue;
        double dist2 = 0.0;
        for (std::size_t c = 0; c < e; ++c) {
            const double r = diff[c] - s * n[c];
            dist2 += r * r;
        }
        if (dist2 < best_dist2) {
            best_dist2 = dist2;
            best = i;
        }
    }
    if (best < 0)
        return {current, SelectStatus::NoFeasible};
    return {static_cast<std::uint8_t>(best), SelectStatus::Selected};
}

SweepStats projection_sweep_serial(std::span<std::uint8_t> values, std::size_t begin,
                                   std::size_t end, std::span<const double> grad,
                                   std::span<const float> embedding, std::size_t channels)
{
    SweepStats stats;
    for (std::size_t j = begin; j < end; ++j) {
        const std::uint8_t before = values[j];
        const ByteChoice choice = select_one(values, j, grad, embedding, channels);
        values[j] = choice.value;
        tally(stats, before, choice);
    }
    return stats;
}

SweepStats projection_sweep_omp(std::span<std::uint8_t> values, std::size_t begin, std::size_t end,
                                std::span<const double> grad, std::span<const float> embedding,
                                std::size_t channels)
{
    std::size_t changed = 0, no_feasible = 0, zero_gradient = 0;
    const auto b = static_cast<std::ptrdiff_t>(begin);
    const auto e = static_cast<std::ptrdiff_t>(end);
#pragma omp parallel for schedule(static) reduction(+ : changed, no_feasible, zero_gradient) \
    if (!omp_in_parallel())
    for (std::ptrdiff_t j = b; j < e; ++j) {
        const auto pos = static_cast<std::size_t>(j);
        const std::uint8_t before = values[pos];
        const ByteChoice choice = select_one(values, pos, grad, embedding, channels);
        values[pos] = choice.value;
        SweepStats local;
        tally(local, before, choice);
        changed += local.changed;
        no_feasible += local.no_feasible;
        zero_gradient += local.zero_gradient;
    }
    return {changed, no_feasible, zero_gradient};
}

int configured_threads()
{
    int n = omp_get_max_threads();
    if (const char* env = std::getenv("BYTEVEIL_THREADS")) {
        const int cap = std::atoi(env);
        if (cap > 0)
            n = std::min(n, cap);
    }
    return std::max(n, 1);
}

void apply_thread_limit()
{
    omp_set_num_threads(configured_threads());
}

} // namespace byteveil::kernels
