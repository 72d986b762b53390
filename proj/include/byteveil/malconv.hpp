#ifndef BYTEVEIL_MALCONV_HPP
#define BYTEVEIL_MALCONV_HPP

#include "byteveil/encoding.hpp"
#include "byteveil/kernels.hpp"
#include "byteveil/pe_format.hpp"

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace byteveil {

inline constexpr std::size_t kByteValues = 256;

/// Network shape. Stored in every checkpoint.
struct Hyper {
    std::size_t d = 16384;
    std::size_t e = 8;
    std::size_t window = 512;
    std::size_t stride = 512;
    std::size_t n_filters = 64;
    std::size_t hidden = 128;
    double decov_weight = 0.1;

    std::size_t n_windows() const noexcept { return d < window ? 0 : (d - window) / stride + 1; }
    kernels::ConvShape conv_shape() const noexcept { return {d, e, window, stride, n_filters}; }
    void validate() const;

    bool operator==(const Hyper&) const = default;
};

/// Trainable tensors. Values are float32 so a checkpoint reproduces them
/// exactly; all arithmetic runs in double.
struct ModelParams {
    Hyper hyper;
    std::vector<float> embedding;    // 256 x e; row i embeds byte i
    std::vector<float> conv_relu_w;  // n_filters x window x e
    std::vector<float> conv_relu_b;  // n_filters
    std::vector<float> conv_sigm_w;  // n_filters x window x e
    std::vector<float> conv_sigm_b;  // n_filters
    std::vector<float> fc_w;         // hidden x n_filters
    std::vector<float> fc_b;         // hidden
    std::vector<float> out_w;        // hidden
    std::vector<float> out_b;        // 1

    static ModelParams zeros(const Hyper& hyper);
    static ModelParams random(const Hyper& hyper, std::uint64_t seed);

    std::span<const float> embedding_row(std::uint8_t byte) const noexcept
    {
        return std::span<const float>(embedding).subspan(std::size_t{byte} * hyper.e, hyper.e);
    }

    /// Throws ShapeMismatch on inconsistent shapes or non-finite values.
    void validate() const;
};

template <typename Storage>
struct BasicTensorView {
    std::string name;
    std::vector<std::size_t> shape;
    Storage* data;
};
using TensorView = BasicTensorView<std::vector<float>>;
using ConstTensorView = BasicTensorView<const std::vector<float>>;

/// Named tensors in canonical (checkpoint manifest) order.
std::vector<TensorView> tensors(ModelParams& params);
std::vector<ConstTensorView> tensors(const ModelParams& params);

/// Bitwise equality, including hyperparameters.
bool bit_equal(const ModelParams& a, const ModelParams& b);

/// Everything backprop needs from one forward pass.
struct ForwardTrace {
    Hyper hyper;
    std::vector<std::uint8_t> bytes;  // empty when the pass started from Z directly
    std::vector<double> z;            // d x e
    std::vector<double> pre_relu;     // n_windows x n_filters
    std::vector<double> pre_sigm;
    std::vector<double> gated;
    std::vector<std::uint32_t> argmax;  // n_filters, window index
    std::vector<double> pooled;         // n_filters
    std::vector<double> fc_pre;         // hidden
    std::vector<double> fc_out;         // hidden
    double logit = 0.0;
};

struct ForwardResult {
    double f = 0.0;
    ForwardTrace trace;
};

enum class Label { Benign, Malware };

std::string_view to_string(Label label);

/// Decision rule: malware iff f >= 0.5.
constexpr Label decide(double f) noexcept
{
    return f >= 0.5 ? Label::Malware : Label::Benign;
}

inline constexpr double kLogitClamp = 30.0;

double sigmoid(double x) noexcept;

/// Row j of the result is the embedding of x_j.
std::vector<double> embed(const ModelParams& params, const InputVector& x);

ForwardResult forward(const ModelParams& params, const InputVector& x, Exec exec = Exec::Parallel);

/// Forward pass from an arbitrary d x e matrix. Used for numerical
/// differentiation with respect to the embedded input.
ForwardResult forward_embedded(const ModelParams& params, std::vector<double> z,
                               Exec exec = Exec::Parallel);

/// df/dZ, a d x e matrix. Only rows inside a window selected by some
/// filter's max pooling can be non-zero.
std::vector<double> grad_wrt_embedding(const ModelParams& params, const ForwardTrace& trace);

/// Accumulated parameter gradients, same layout as ModelParams.
struct ParamGrads {
    std::vector<double> embedding, conv_relu_w, conv_relu_b, conv_sigm_w, conv_sigm_b, fc_w, fc_b,
        out_w, out_b;

    static ParamGrads zeros_like(const ModelParams& params);
};

/// Adds dLoss/dparams to `grads` given dLoss/dlogit and an extra gradient on
/// the fully-connected outputs (may be empty). The embedding gradient needs
/// trace.bytes.
void accumulate_param_grads(const ModelParams& params, const ForwardTrace& trace, double dlogit,
                            std::span<const double> d_fc_out, ParamGrads& grads);

/// Half the squared Frobenius norm of the off-diagonal part of the batch
/// covariance of `activations` (batch x width, row-major, 1/N normalisation).
double decov_penalty(std::span<const double> activations, std::size_t batch, std::size_t width);

/// Gradient of decov_penalty with respect to every activation.
std::vector<double> decov_gradient(std::span<const double> activations, std::size_t batch,
                                   std::size_t width);

struct Classification {
    Label label = Label::Benign;
    double f = 0.0;
};

Classification classify(const ModelParams& params, const InputVector& x);

/// Rejects non-PE input, then classifies the zero-padded file.
Classification classify(const ModelParams& params, const RawBinary& file);

} // namespace byteveil

#endif
