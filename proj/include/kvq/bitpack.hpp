// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <vector>

#include "kvq/common.hpp"

namespace kvq {

/// Little-endian bit writer. Codes are packed contiguously with no per-block
/// padding, so the payload bit length is exactly the sum of code widths.
class BitWriter {
public:
    void put(std::uint32_t code, unsigned width) {
        for (unsigned i = 0; i < width; ++i) {
            const std::size_t byte = bit_count_ >> 3;
            if (byte == bytes_.size()) {
                bytes_.push_back(0);
            }
            if ((code >> i) & 1u) {
                bytes_[byte] |= static_cast<std::uint8_t>(1u << (bit_count_ & 7));
            }
            ++bit_count_;
        }
    }

    void put_u16(std::uint16_t v) { put(v, 16); }

    std::size_t bit_count() const { return bit_count_; }
    const std::vector<std::uint8_t>& bytes() const { return bytes_; }
    std::vector<std::uint8_t> take() { return std::move(bytes_); }

private:
    std::vector<std::uint8_t> bytes_;
    std::size_t bit_count_ = 0;
};

class BitReader {
public:
    BitReader(const std::uint8_t* data, std::size_t size_bytes)
        : data_(data), size_bits_(size_bytes * 8) {}

    std::uint32_t get(unsigned width) {
        std::uint32_t code = 0;
        for (unsigned i = 0; i < width; ++i) {
            KVQ_REQUIRE(pos_ < size_bits_, "BitReader: truncated payload");
            if ((data_[pos_ >> 3] >> (pos_ & 7)) & 1u) {
                code |= 1u << i;
            }
            ++pos_;
        }
        return code;
    }

    std::uint16_t get_u16() { return static_cast<std::uint16_t>(get(16)); }

    std::size_t bits_left() const { return size_bits_ - pos_; }

private:
    const std::uint8_t* data_;
    std::size_t size_bits_;
    std::size_t pos_ = 0;
};

inline std::vector<std::uint8_t> pack_codes(const std::vector<std::uint32_t>& codes, unsigned width) {
    BitWriter w;
    for (auto c : codes) {
        w.put(c, width);
    }
    return w.take();
}

inline std::vector<std::uint32_t> unpack_codes(const std::vector<std::uint8_t>& bytes,
                                               std::size_t count, unsigned width) {
    BitReader r(bytes.data(), bytes.size());
    std::vector<std::uint32_t> codes(count);
    for (auto& c : codes) {
        c = r.get(width);
    }
    return codes;
}

}  // namespace kvq
