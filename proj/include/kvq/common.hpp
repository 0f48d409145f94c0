// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <cstring>
#include <stdexcept>
#include <string>

namespace kvq {

/// Error type thrown for every contract violation in this library.
class error : public std::runtime_error {
public:
    explicit error(const std::string& what) : std::runtime_error(what) {}
};

#define KVQ_REQUIRE(cond, msg)                   \
    do {                                         \
        if (!(cond)) {                           \
            throw ::kvq::error(msg);             \
        }                                        \
    } while (0)

/// Truncate a float to BF16 semantics (keep sign, exponent and the top 7
/// explicit mantissa bits; drop the rest). Truncation is idempotent, so
/// generated reference data survives repeated round trips bit-exactly.
inline float bf16_truncate(float x) {
    std::uint32_t bits;
    std::memcpy(&bits, &x, sizeof(bits));
    bits &= 0xFFFF0000u;
    float out;
    std::memcpy(&out, &bits, sizeof(out));
    return out;
}

/// True when the value survives a BF16 round trip unchanged.
inline bool is_bf16_exact(float x) {
    return bf16_truncate(x) == x || x != x;
}

/// Upper 16 bits of the float pattern; the stored form of BF16 metadata.
inline std::uint16_t bf16_bits(float x) {
    std::uint32_t bits;
    std::memcpy(&bits, &x, sizeof(bits));
    return static_cast<std::uint16_t>(bits >> 16);
}

inline float bf16_from_bits(std::uint16_t hi) {
    std::uint32_t bits = static_cast<std::uint32_t>(hi) << 16;
    float out;
    std::memcpy(&out, &bits, sizeof(out));
    return out;
}

inline bool is_power_of_two(std::size_t n) {
    return n != 0 && (n & (n - 1)) == 0;
}

}  // namespace kvq
