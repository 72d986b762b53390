#ifndef BYTEVEIL_KERNELS_HPP
#define BYTEVEIL_KERNELS_HPP

// Hot loops of the detector and the attack. Each parallel kernel has a
// serial twin with the same per-element arithmetic; the two must agree
// bit-for-bit (tests/test_kernels.cpp checks this).

#include <cstddef>
#include <cstdint>
#include <span>

namespace byteveil {

enum class Exec { Serial, Parallel };

namespace kernels {

inline double dot(std::span<const float> w, std::span<const double> z) noexcept
{
    double acc = 0.0;
    const std::size_t n = w.size();
    const float* wp = w.data();
    const double* zp = z.data();
#pragma omp simd reduction(+ : acc)
    for (std::size_t i = 0; i < n; ++i)
        acc += static_cast<double>(wp[i]) * zp[i];
    return acc;
}

struct ConvShape {
    std::size_t length = 0;     // sequence positions
    std::size_t channels = 0;   // embedding width
    std::size_t window = 0;
    std::size_t stride = 0;
    std::size_t filters = 0;

    std::size_t n_windows() const noexcept
    {
        return length < window ? 0 : (length - window) / stride + 1;
    }
};

struct ConvBank {
    std::span<const float> weight;  // filters x window x channels
    std::span<const float> bias;    // filters
};

/// Pre-activations of the two convolution branches, laid out
/// [window][filter]. When `alias` is non-empty, window w with alias[w] != w
/// is copied from window alias[w] (alias[w] < w) instead of being computed;
/// the caller guarantees the two windows see identical input.
void gated_conv_forward_serial(std::span<const double> z, const ConvShape& shape, ConvBank relu,
                               ConvBank sigm, std::span<const std::uint32_t> alias,
                               std::span<double> pre_relu, std::span<double> pre_sigm);

void gated_conv_forward_omp(std::span<const double> z, const ConvShape& shape, ConvBank relu,
                            ConvBank sigm, std::span<const std::uint32_t> alias,
                            std::span<double> pre_relu, std::span<double> pre_sigm);

inline void gated_conv_forward(Exec exec, std::span<const double> z, const ConvShape& shape,
                               ConvBank relu, ConvBank sigm, std::span<const std::uint32_t> alias,
                               std::span<double> pre_relu, std::span<double> pre_sigm)
{
    if (exec == Exec::Serial)
        gated_conv_forward_serial(z, shape, relu, sigm, alias, pre_relu, pre_sigm);
    else
        gated_conv_forward_omp(z, shape, relu, sigm, alias, pre_relu, pre_sigm);
}

enum class SelectStatus { Selected, NoFeasible, ZeroGradient };

struct ByteChoice {
    std::uint8_t value = 0;
    SelectStatus status = SelectStatus::Selected;
};

/// Line-projection step for one padding byte. Among the 256 embedding rows,
/// keeps those whose projection s_i = n.(m_i - z) onto the unit direction
/// n = w/|w| is strictly positive and returns the one with the smallest
/// distance to the line z + eta*n (ties: lowest byte value). `current` comes
/// back unchanged when no row qualifies or w is zero.
ByteChoice select_byte(std::span<const double> z, std::span<const double> w,
                       std::span<const float> embedding, std::uint8_t current);

struct SweepStats {
    std::size_t changed = 0;
    std::size_t no_feasible = 0;
    std::size_t zero_gradient = 0;
};

/// Applies select_byte to positions [begin, end) of `values` with
/// w_j = -grad[j]. Positions are independent given a fixed gradient.
SweepStats projection_sweep_serial(std::span<std::uint8_t> values, std::size_t begin,
                                   std::size_t end, std::span<const double> grad,
                                   std::span<const float> embedding, std::size_t channels);

SweepStats projection_sweep_omp(std::span<std::uint8_t> values, std::size_t begin, std::size_t end,
                                std::span<const double> grad, std::span<const float> embedding,
                                std::size_t channels);

inline SweepStats projection_sweep(Exec exec, std::span<std::uint8_t> values, std::size_t begin,
                                   std::size_t end, std::span<const double> grad,
                                   std::span<const float> embedding, std::size_t channels)
{
    return exec == Exec::Serial
               ? projection_sweep_serial(values, begin, end, grad, embedding, channels)
               : projection_sweep_omp(values, begin, end, grad, embedding, channels);
}

/// Worker count for parallel kernels; honours BYTEVEIL_THREADS.
int configured_threads();
void apply_thread_limit();

} // namespace kernels
} // namespace byteveil

#endif
