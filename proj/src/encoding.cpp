#include "byteveil/encoding.hpp"

#include "byteveil/error.hpp"

#include <algorithm>

namespace byteveil {

InputVector to_input_vector(const RawBinary& binary, std::size_t d)
{
    if (d == 0)
        throw Error(ErrorCode::InvalidConfig, "input dimension must be positive");
    InputVector vec;
    vec.informative_len = std::min(binary.length(), d);
    vec.values.assign(d, 0);
    std::copy_n(binary.bytes.begin(), vec.informative_len, vec.values.begin());
    return vec;
}

std::vector<std::uint8_t> to_bytes(const InputVector& vec, std::size_t q_used)
{
    if (q_used > vec.padding_len())
        throw Error(ErrorCode::BudgetExceeded, "requested " + std::to_string(q_used) +
                                                   " padding bytes, only " +
                                                   std::to_string(vec.padding_len()) + " available");
    const auto first = vec.values.begin() + static_cast<std::ptrdiff_t>(vec.informative_len);
    return {first, first + static_cast<std::ptrdiff_t>(q_used)};
}

} // namespace byteveil
