// SPDX-License-Identifier: Apache-2.0
#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "kvq/bitpack.hpp"

using namespace kvq;

TEST_CASE("pack/unpack is bit-exact for widths 2 and 4, lengths 1..64") {
    std::mt19937_64 rng(42);
    for (unsigned width : {2u, 4u}) {
        for (std::size_t len = 1; len <= 64; ++len) {
            std::vector<std::uint32_t> codes(len);
            for (auto& c : codes) {
                c = static_cast<std::uint32_t>(rng() & ((1u << width) - 1));
            }
            const auto bytes = pack_codes(codes, width);
            CHECK(bytes.size() == (len * width + 7) / 8);
            CHECK(unpack_codes(bytes, len, width) == codes);
        }
    }
}

TEST_CASE("payload bit count is the exact sum of code widths") {
    BitWriter w;
    w.put(3, 2);
    w.put(9, 4);
    w.put(0x5A5A, 16);
    CHECK(w.bit_count() == 22);
    CHECK(w.bytes().size() == 3);
}

TEST_CASE("reading past the payload is an error") {
    const std::vector<std::uint8_t> bytes = {0xFF};
    BitReader r(bytes.data(), bytes.size());
    r.get(4);
    r.get(4);
    CHECK_THROWS_AS(r.get(1), error);
}

TEST_CASE("mixed-width streams round trip") {
    BitWriter w;
    w.put(1, 2);
    w.put(15, 4);
    w.put_u16(0xBEEF);
    w.put(2, 2);
    const auto bytes = w.bytes();
    BitReader r(bytes.data(), bytes.size());
    CHECK(r.get(2) == 1);
    CHECK(r.get(4) == 15);
    CHECK(r.get_u16() == 0xBEEF);
    CHECK(r.get(2) == 2);
}
