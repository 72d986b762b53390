#include "byteveil/attack.hpp"

#include "byteveil/error.hpp"

#include <random>

namespace byteveil {

namespace {

struct Best {
    InputVector x;
    double f;

    void offer(const InputVector& candidate, double f_candidate)
    {
        if (f_candidate < f) {
            x = candidate;
            f = f_candidate;
        }
    }
};

void randomize_padding(InputVector& x, std::size_t q, std::uint64_t seed)
{
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int> byte(0, 255);
    for (std::size_t p = 0; p < q; ++p)
        x.values[x.informative_len + p] = static_cast<std::uint8_t>(byte(rng));
}

/// One sweep with a single backward pass shared by every position.
void sweep_per_iteration(const ModelParams& params, InputVector& x, std::size_t q,
                         const ForwardTrace& trace, Exec exec)
{
    const auto grad = grad_wrt_embedding(params, trace);
    kernels::projection_sweep(exec, x.values, x.informative_len, x.informative_len + q, grad,
                              params.embedding, params.hyper.e);
}

/// One sweep recomputing the gradient before every position whose
/// predecessor changed the vector.
void sweep_per_byte(const ModelParams& params, InputVector& x, std::size_t q, Exec exec)
{
    std::vector<double> grad;
    bool stale = true;
    for (std::size_t p = 0; p < q; ++p) {
        if (stale) {
            grad = grad_wrt_embedding(params, forward(params, x, exec).trace);
            stale = false;
        }
        const std::size_t j = x.informative_len + p;
        const std::uint8_t before = x.values[j];
        kernels::projection_sweep_serial(x.values, j, j + 1, grad, params.embedding, params.hyper.e);
        stale = x.values[j] != before;
    }
}

AttackResult finish(AttackResult r, const InputVector& x0, Best best, const InputVector& last)
{
    const std::size_t q = r.q;
    r.f_final = best.f;
    r.evaded = best.f < 0.5;
    r.injected_bytes = to_bytes(best.x, q);
    r.proposed_bytes = to_bytes(last, q);
    r.bytes_modified = 0;
    for (std::size_t p = 0; p < q; ++p)
        if (best.x.values[x0.informative_len + p] != x0.values[x0.informative_len + p])
            ++r.bytes_modified;
    r.adversarial = std::move(best.x);
    return r;
}

} // namespace

std::string_view to_string(AttackMode mode)
{
    return mode == AttackMode::Gradient ? "gradient" : "random";
}

std::string_view to_string(Refresh refresh)
{
    return refresh == Refresh::PerIteration ? "per-iteration" : "per-byte";
}

AttackMode parse_attack_mode(std::string_view text)
{
    if (text == "gradient")
        return AttackMode::Gradient;
    if (text == "random")
        return AttackMode::Random;
    throw Error(ErrorCode::InvalidConfig, "unknown attack mode '" + std::string(text) + "'");
}

Refresh parse_refresh(std::string_view text)
{
    if (text == "per-iteration")
        return Refresh::PerIteration;
    if (text == "per-byte")
        return Refresh::PerByte;
    throw Error(ErrorCode::InvalidConfig, "unknown refresh schedule '" + std::string(text) + "'");
}

std::size_t compute_budget(std::size_t k, std::size_t q_max, std::size_t d)
{
    if (k >= d || q_max == 0)
        throw Error(ErrorCode::NoBudget, "no padding byte can be manipulated (k=" +
                                             std::to_string(k) + ", q_max=" +
                                             std::to_string(q_max) + ", d=" + std::to_string(d) + ")");
    return std::min(k + q_max, d) - k;
}

AttackResult attack(const ModelParams& params, const InputVector& x0, const AttackConfig& config)
{
    if (config.max_iterations == 0)
        throw Error(ErrorCode::InvalidConfig, "attack needs at least one iteration");
    if (x0.dim() != params.hyper.d)
        throw Error(ErrorCode::ShapeMismatch, "input dimension does not match the model");
    const std::size_t q = compute_budget(x0.informative_len, config.q_max, x0.dim());

    AttackResult r;
    r.q = q;
    r.f_initial = forward(params, x0, config.exec).f;
    Best best{x0, r.f_initial};

    InputVector x = x0;
    randomize_padding(x, q, config.seed);
    ForwardResult current = forward(params, x, config.exec);
    r.f_randomized = current.f;

    for (std::size_t t = 1; t <= config.max_iterations; ++t) {
        if (config.refresh == Refresh::PerIteration)
            sweep_per_iteration(params, x, q, current.trace, config.exec);
        else
            sweep_per_byte(params, x, q, config.exec);
        current = forward(params, x, config.exec);
        r.f_trace.push_back(current.f);
        r.iterations_used = t;
        best.offer(x, current.f);
        if (current.f < 0.5)
            break;
    }
    return finish(std::move(r), x0, std::move(best), x);
}

AttackResult random_attack(const ModelParams& params, const InputVector& x0,
                           const AttackConfig& config)
{
    if (x0.dim() != params.hyper.d)
        throw Error(ErrorCode::ShapeMismatch, "input dimension does not match the model");
    const std::size_t q = compute_budget(x0.informative_len, config.q_max, x0.dim());

    AttackResult r;
    r.q = q;
    r.f_initial = forward(params, x0, config.exec).f;
    Best best{x0, r.f_initial};

    InputVector x = x0;
    randomize_padding(x, q, config.seed);
    r.f_randomized = forward(params, x, config.exec).f;
    r.f_trace.push_back(r.f_randomized);
    r.iterations_used = 1;
    best.offer(x, r.f_randomized);
    return finish(std::move(r), x0, std::move(best), x);
}

AttackResult run_attack(const ModelParams& params, const InputVector& x0,
                        const AttackConfig& config)
{
    return config.mode == AttackMode::Gradient ? attack(params, x0, config)
                                               : random_attack(params, x0, config);
}

RawBinary build_adversarial_binary(const RawBinary& original, const AttackResult& result)
{
    return append_overlay(original, result.injected_bytes);
}

} // namespace byteveil
