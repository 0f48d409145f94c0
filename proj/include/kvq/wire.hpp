// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "kvq/codec.hpp"
#include "kvq/common.hpp"

namespace kvq {

// Framed binary layout for PackedChunk, documented byte by byte in
// docs/packed_chunk_format.md. All integers are little-endian.

namespace wire_detail {

inline void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
    out.push_back(static_cast<std::uint8_t>(v & 0xFF));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
}

inline void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    put_u16(out, static_cast<std::uint16_t>(v & 0xFFFF));
    put_u16(out, static_cast<std::uint16_t>(v >> 16));
}

inline void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
    put_u32(out, static_cast<std::uint32_t>(v & 0xFFFFFFFFull));
    put_u32(out, static_cast<std::uint32_t>(v >> 32));
}

inline void put_f64(std::vector<std::uint8_t>& out, double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, sizeof(bits));
    put_u64(out, bits);
}

struct Cursor {
    const std::uint8_t* p;
    std::size_t n;
    std::size_t pos = 0;

    void need(std::size_t k) const { KVQ_REQUIRE(pos + k <= n, "wire: truncated frame"); }
    std::uint8_t u8() {
        need(1);
        return p[pos++];
    }
    std::uint16_t u16() {
        need(2);
        const std::uint16_t v = static_cast<std::uint16_t>(p[pos] | (p[pos + 1] << 8));
        pos += 2;
        return v;
    }
    std::uint32_t u32() {
        const std::uint32_t lo = u16();
        return lo | (static_cast<std::uint32_t>(u16()) << 16);
    }
    std::uint64_t u64() {
        const std::uint64_t lo = u32();
        return lo | (static_cast<std::uint64_t>(u32()) << 32);
    }
    double f64() {
        const std::uint64_t bits = u64();
        double v;
        std::memcpy(&v, &bits, sizeof(v));
        return v;
    }
    std::vector<std::uint8_t> bytes(std::size_t k) {
        need(k);
        std::vector<std::uint8_t> out(p + pos, p + pos + k);
        pos += k;
        return out;
    }
};

}  // namespace wire_detail

inline constexpr std::uint8_t kWireMagic[4] = {'K', 'V', 'Q', '1'};
inline constexpr std::uint16_t kWireVersion = 1;

inline std::vector<std::uint8_t> serialize_packed_chunk(const PackedChunk& pc) {
    using namespace wire_detail;
    std::vector<std::uint8_t> out;
    out.insert(out.end(), kWireMagic, kWireMagic + 4);
    put_u16(out, kWireVersion);
    KVQ_REQUIRE(pc.spec_id.size() <= 0xFFFF, "wire: spec id too long");
    put_u16(out, static_cast<std::uint16_t>(pc.spec_id.size()));
    out.insert(out.end(), pc.spec_id.begin(), pc.spec_id.end());

    const CodecSpec& s = pc.spec;
    put_u16(out, static_cast<std::uint16_t>(s.family));
    put_u16(out, static_cast<std::uint16_t>(s.key_bits));
    put_u16(out, static_cast<std::uint16_t>(s.value_bits));
    put_u32(out, static_cast<std::uint32_t>(s.block_size));
    put_u16(out, static_cast<std::uint16_t>(s.metadata_bits_per_block));
    put_u16(out, static_cast<std::uint16_t>(s.residual_bits));
    put_f64(out, s.outlier_fraction);
    put_u16(out, static_cast<std::uint16_t>(s.outlier_record_bits));
    out.push_back(s.key_axis == Axis::PerTokenRow ? 0 : 1);
    out.push_back(s.value_axis == Axis::PerTokenRow ? 0 : 1);
    out.push_back(s.outlier_records ? 1 : 0);
    out.push_back(pc.is_summary ? 1 : 0);

    put_u32(out, static_cast<std::uint32_t>(pc.tokens));
    put_u32(out, static_cast<std::uint32_t>(pc.channels));
    put_u64(out, pc.payload_bits);
    put_u64(out, pc.payload_bytes.size());
    put_u64(out, pc.metadata_bytes.size());
    put_u64(out, pc.breakdown.payload);
    put_u64(out, pc.breakdown.scales_zeros);
    put_u64(out, pc.breakdown.outliers);
    put_u64(out, pc.breakdown.rotation);
    put_u64(out, pc.breakdown.summary);
    out.insert(out.end(), pc.payload_bytes.begin(), pc.payload_bytes.end());
    out.insert(out.end(), pc.metadata_bytes.begin(), pc.metadata_bytes.end());
    return out;
}

inline PackedChunk deserialize_packed_chunk(const std::uint8_t* data, std::size_t size) {
    using namespace wire_detail;
    Cursor c{data, size};
    c.need(4);
    KVQ_REQUIRE(std::memcmp(data, kWireMagic, 4) == 0, "wire: bad magic");
    c.pos = 4;
    KVQ_REQUIRE(c.u16() == kWireVersion, "wire: unsupported version");
    const std::size_t id_len = c.u16();
    const auto id_bytes = c.bytes(id_len);

    PackedChunk pc;
    pc.spec_id.assign(id_bytes.begin(), id_bytes.end());
    pc.spec.family = static_cast<CodecFamily>(c.u16());
    pc.spec.key_bits = c.u16();
    pc.spec.value_bits = c.u16();
    pc.spec.block_size = c.u32();
    pc.spec.metadata_bits_per_block = c.u16();
    pc.spec.residual_bits = c.u16();
    pc.spec.outlier_fraction = c.f64();
    pc.spec.outlier_record_bits = c.u16();
    pc.spec.key_axis = c.u8() == 0 ? Axis::PerTokenRow : Axis::PerChannelColumn;
    pc.spec.value_axis = c.u8() == 0 ? Axis::PerTokenRow : Axis::PerChannelColumn;
    pc.spec.outlier_records = c.u8() != 0;
    pc.is_summary = c.u8() != 0;

    pc.tokens = c.u32();
    pc.channels = c.u32();
    pc.payload_bits = c.u64();
    const std::uint64_t payload_len = c.u64();
    const std::uint64_t metadata_len = c.u64();
    pc.breakdown.payload = c.u64();
    pc.breakdown.scales_zeros = c.u64();
    pc.breakdown.outliers = c.u64();
    pc.breakdown.rotation = c.u64();
    pc.breakdown.summary = c.u64();
    pc.payload_bytes = c.bytes(payload_len);
    pc.metadata_bytes = c.bytes(metadata_len);
    KVQ_REQUIRE(pc.breakdown.total() == pc.stored_bytes(), "wire: inconsistent byte breakdown");
    return pc;
}

inline PackedChunk deserialize_packed_chunk(const std::vector<std::uint8_t>& buf) {
    return deserialize_packed_chunk(buf.data(), buf.size());
}

}  // namespace kvq
