#ifndef BYTEVEIL_SEEDING_HPP
#define BYTEVEIL_SEEDING_HPP

#include <cstdint>
#include <initializer_list>

namespace byteveil {

/// splitmix64 finaliser.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept
{
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

/// Child seed for a (seed, index...) path; independent of evaluation order.
constexpr std::uint64_t derive_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> path) noexcept
{
    std::uint64_t s = mix64(seed);
    for (std::uint64_t p : path)
        s = mix64(s ^ mix64(p + 0x632BE59BD9B4E019ull));
    return s;
}

} // namespace byteveil

#endif
