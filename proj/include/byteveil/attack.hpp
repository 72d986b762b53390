#ifndef BYTEVEIL_ATTACK_HPP
#define BYTEVEIL_ATTACK_HPP

#include "byteveil/encoding.hpp"
#include "byteveil/kernels.hpp"
#include "byteveil/malconv.hpp"
#include "byteveil/pe_format.hpp"

#include <cstddef>
#include <cstdint>
#include <string_view>
#include <vector>

namespace byteveil {

using kernels::ByteChoice;
using kernels::select_byte;
using kernels::SelectStatus;

enum class AttackMode { Gradient, Random };

/// When the embedding gradient is recomputed during a sweep.
enum class Refresh { PerIteration, PerByte };

std::string_view to_string(AttackMode mode);
std::string_view to_string(Refresh refresh);
AttackMode parse_attack_mode(std::string_view text);
Refresh parse_refresh(std::string_view text);

struct AttackConfig {
    std::size_t q_max = 2048;
    std::size_t max_iterations = 20;
    std::uint64_t seed = 0;
    AttackMode mode = AttackMode::Gradient;
    Refresh refresh = Refresh::PerIteration;
    Exec exec = Exec::Parallel;
};

struct AttackResult {
    bool evaded = false;            // f_final < 0.5
    double f_initial = 0.0;         // f(x0)
    double f_randomized = 0.0;      // after the random fill of the padding
    double f_final = 0.0;           // best over x0 and every completed iteration
    std::vector<double> f_trace;    // f after each outer iteration
    std::size_t q = 0;              // padding positions the attack owned
    std::size_t iterations_used = 0;
    std::size_t bytes_modified = 0;  // positions of the returned vector that differ from x0
    std::vector<std::uint8_t> injected_bytes;  // overlay reproducing the returned vector, length q
    std::vector<std::uint8_t> proposed_bytes;  // padding as the strategy last left it, length q
    InputVector adversarial;                   // the returned (best) vector
};

/// Number of padding bytes an attack may set: min(k + q_max, d) - k.
/// Throws NoBudget when that is not positive.
std::size_t compute_budget(std::size_t k, std::size_t q_max, std::size_t d);

/// Gradient-guided padding optimisation. Informative bytes are never
/// touched; iteration stops once f < 0.5 or after max_iterations sweeps.
/// config.mode is ignored.
AttackResult attack(const ModelParams& params, const InputVector& x0, const AttackConfig& config);

/// Baseline: one uniform random fill of the padding.
AttackResult random_attack(const ModelParams& params, const InputVector& x0,
                           const AttackConfig& config);

/// Dispatches on config.mode.
AttackResult run_attack(const ModelParams& params, const InputVector& x0,
                        const AttackConfig& config);

RawBinary build_adversarial_binary(const RawBinary& original, const AttackResult& result);

} // namespace byteveil

#endif
