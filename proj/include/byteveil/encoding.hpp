#ifndef BYTEVEIL_ENCODING_HPP
#define BYTEVEIL_ENCODING_HPP

#include "byteveil/pe_format.hpp"

#include <cstddef>
#include <cstdint>
#include <vector>

namespace byteveil {

/// Fixed-width network input. Entries at index >= informative_len are
/// padding; they hold zero until an attack writes them.
struct InputVector {
    std::vector<std::uint8_t> values;
    std::size_t informative_len = 0;

    std::size_t dim() const noexcept { return values.size(); }
    std::size_t padding_len() const noexcept { return values.size() - informative_len; }

    bool operator==(const InputVector&) const = default;
};

/// Zero-pads (or truncates) the file to `d` bytes.
InputVector to_input_vector(const RawBinary& binary, std::size_t d);

/// The first `q_used` padding bytes, i.e. what an overlay must contain to
/// reproduce `vec` when appended to the original file.
std::vector<std::uint8_t> to_bytes(const InputVector& vec, std::size_t q_used);

} // namespace byteveil

#endif
