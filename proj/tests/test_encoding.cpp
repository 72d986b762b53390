#include <doctest.h>

#include "byteveil/encoding.hpp"
#include "byteveil/error.hpp"
#include "byteveil/synth_corpus.hpp"

using namespace byteveil;

TEST_CASE("short file is zero padded")
{
    const InputVector v = to_input_vector(RawBinary{{7, 8, 9}}, 5);
    CHECK(v.values == std::vector<std::uint8_t>{7, 8, 9, 0, 0});
    CHECK(v.informative_len == 3);
    CHECK(v.dim() == 5);
    CHECK(v.padding_len() == 2);
}

TEST_CASE("long file keeps only the first d bytes")
{
    const InputVector v = to_input_vector(RawBinary{{1, 2, 3, 4, 5}}, 3);
    CHECK(v.values == std::vector<std::uint8_t>{1, 2, 3});
    CHECK(v.informative_len == 3);
    CHECK(v.padding_len() == 0);
}

TEST_CASE("empty file")
{
    const InputVector v = to_input_vector(RawBinary{}, 4);
    CHECK(v.values == std::vector<std::uint8_t>(4, 0));
    CHECK(v.informative_len == 0);
}

TEST_CASE("k == d is the file exactly")
{
    const RawBinary bin = make_pe_skeleton(2048, 2, 5);
    const InputVector v = to_input_vector(bin, 2048);
    CHECK(v.values == bin.bytes);
    CHECK(v.informative_len == 2048);
}

TEST_CASE("d must be positive")
{
    CHECK_THROWS_AS(to_input_vector(RawBinary{{1}}, 0), Error);
}

TEST_CASE("to_bytes")
{
    InputVector v;
    v.values = {7, 8, 9, 42, 0};
    v.informative_len = 3;
    CHECK(to_bytes(v, 1) == std::vector<std::uint8_t>{42});
    CHECK(to_bytes(v, 2) == std::vector<std::uint8_t>{42, 0});
    CHECK(to_bytes(v, 0).empty());
    try {
        to_bytes(v, 3);
        FAIL("expected BudgetExceeded");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::BudgetExceeded);
    }
}

TEST_CASE("round trip keeps the prefix")
{
    const RawBinary bin = make_pe_skeleton(1500, 1, 99);
    const InputVector v = to_input_vector(bin, 4096);
    CHECK(to_bytes(v, 0).empty());
    CHECK(std::equal(bin.bytes.begin(), bin.bytes.end(), v.values.begin()));
    for (std::size_t j = bin.length(); j < v.dim(); ++j)
        REQUIRE(v.values[j] == 0);
}
