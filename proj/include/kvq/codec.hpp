// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "kvq/bitpack.hpp"
#include "kvq/blocks.hpp"
#include "kvq/common.hpp"
#include "kvq/corpus.hpp"
#include "kvq/hadamard.hpp"
#include "kvq/matrix.hpp"

namespace kvq {

enum class CodecFamily { BF16, RTN, KIVI, QUAROT, PRQ, QAQ };

inline std::string to_string(CodecFamily f) {
    switch (f) {
        case CodecFamily::BF16: return "BF16";
        case CodecFamily::RTN: return "RTN";
        case CodecFamily::KIVI: return "KIVI";
        case CodecFamily::QUAROT: return "QUAROT";
        case CodecFamily::PRQ: return "PRQ";
        case CodecFamily::QAQ: return "QAQ";
    }
    return "?";
}

inline CodecFamily codec_family_from_string(const std::string& s) {
    if (s == "BF16") return CodecFamily::BF16;
    if (s == "RTN") return CodecFamily::RTN;
    if (s == "KIVI") return CodecFamily::KIVI;
    if (s == "QUAROT") return CodecFamily::QUAROT;
    if (s == "PRQ") return CodecFamily::PRQ;
    if (s == "QAQ") return CodecFamily::QAQ;
    throw error("unknown codec family: " + s);
}

inline std::string to_string(Axis a) {
    return a == Axis::PerTokenRow ? "per_token_row" : "per_channel_column";
}

inline Axis axis_from_string(const std::string& s) {
    if (s == "per_token_row") return Axis::PerTokenRow;
    if (s == "per_channel_column") return Axis::PerChannelColumn;
    throw error("unknown axis: " + s);
}

/// Description of one quantization scheme. Metadata is a BF16 scale plus a
/// BF16 zero point per block (32 bits); PRQ stores that for both stages.
struct CodecSpec {
    CodecFamily family = CodecFamily::BF16;
    unsigned key_bits = 16;
    unsigned value_bits = 16;
    std::size_t block_size = 32;
    unsigned metadata_bits_per_block = 32;
    unsigned residual_bits = 4;
    double outlier_fraction = 0.003;
    unsigned outlier_record_bits = 32;
    Axis key_axis = Axis::PerTokenRow;
    Axis value_axis = Axis::PerTokenRow;
    bool outlier_records = false;  // QAQ always; PRQ only in TPTQ's old zone

    void validate() const {
        auto bits_ok = [](unsigned b) { return b == 2 || b == 4 || b == 16; };
        KVQ_REQUIRE(bits_ok(key_bits) && bits_ok(value_bits), "CodecSpec: bits must be 2, 4 or 16");
        KVQ_REQUIRE(block_size > 0, "CodecSpec: block_size must be positive");
        KVQ_REQUIRE(metadata_bits_per_block == 32,
                    "CodecSpec: metadata layout is fixed at BF16 scale + BF16 zero per block");
        KVQ_REQUIRE(outlier_fraction >= 0.0 && outlier_fraction <= 1.0,
                    "CodecSpec: outlier_fraction must be in [0,1]");
        KVQ_REQUIRE(outlier_record_bits == 32,
                    "CodecSpec: outlier records are a 16-bit index plus a BF16 value");
        switch (family) {
            case CodecFamily::BF16:
                KVQ_REQUIRE(key_bits == 16 && value_bits == 16, "BF16 codec must use 16-bit K/V");
                break;
            case CodecFamily::KIVI:
                KVQ_REQUIRE(key_axis == Axis::PerChannelColumn && value_axis == Axis::PerTokenRow,
                            "KIVI mandates channel-wise keys and token-wise values");
                KVQ_REQUIRE(key_bits < 16 && value_bits < 16, "KIVI requires low-bit K/V");
                break;
            case CodecFamily::PRQ:
                KVQ_REQUIRE(residual_bits == 2 || residual_bits == 4,
                            "PRQ requires a non-zero residual stage");
                KVQ_REQUIRE(key_bits < 16 && value_bits < 16, "PRQ requires low-bit K/V");
                break;
            case CodecFamily::QAQ:
                KVQ_REQUIRE(outlier_records, "QAQ stores outlier records");
                KVQ_REQUIRE(key_bits < 16 && value_bits < 16, "QAQ requires low-bit K/V");
                break;
            default:
                KVQ_REQUIRE(key_bits < 16 && value_bits < 16,
                            "low-bit families require 2- or 4-bit codes");
                break;
        }
    }

    bool has_residual_stage() const { return family == CodecFamily::PRQ; }
    bool has_outlier_stage() const {
        return outlier_records && (family == CodecFamily::QAQ || family == CodecFamily::PRQ);
    }
    bool rotates() const { return family == CodecFamily::QUAROT; }

    std::string id() const {
        if (family == CodecFamily::BF16) return "BF16";
        std::string s = to_string(family);
        if (key_bits == value_bits) {
            s += "_INT" + std::to_string(key_bits);
        } else {
            s += "_K" + std::to_string(key_bits) + "_V" + std::to_string(value_bits);
        }
        if (family == CodecFamily::PRQ) s += "_R" + std::to_string(residual_bits);
        if (block_size != 32) s += "_B" + std::to_string(block_size);
        return s;
    }

    static CodecSpec bf16() { return CodecSpec{}; }
    static CodecSpec rtn(unsigned bits) { return rtn(bits, bits); }
    static CodecSpec rtn(unsigned kb, unsigned vb) {
        CodecSpec s;
        s.family = CodecFamily::RTN;
        s.key_bits = kb;
        s.value_bits = vb;
        return s;
    }
    static CodecSpec kivi(unsigned bits) { return kivi(bits, bits); }
    static CodecSpec kivi(unsigned kb, unsigned vb) {
        CodecSpec s;
        s.family = CodecFamily::KIVI;
        s.key_bits = kb;
        s.value_bits = vb;
        s.key_axis = Axis::PerChannelColumn;
        s.value_axis = Axis::PerTokenRow;
        return s;
    }
    static CodecSpec quarot(unsigned bits) {
        CodecSpec s;
        s.family = CodecFamily::QUAROT;
        s.key_bits = bits;
        s.value_bits = bits;
        return s;
    }
    static CodecSpec prq(unsigned base_bits, unsigned residual = 4) {
        CodecSpec s;
        s.family = CodecFamily::PRQ;
        s.key_bits = base_bits;
        s.value_bits = base_bits;
        s.residual_bits = residual;
        return s;
    }
    static CodecSpec qaq(unsigned bits, double fraction = 0.003) {
        CodecSpec s;
        s.family = CodecFamily::QAQ;
        s.key_bits = bits;
        s.value_bits = bits;
        s.outlier_fraction = fraction;
        s.outlier_records = true;
        return s;
    }
};

inline bool operator==(const CodecSpec& a, const CodecSpec& b) {
    return a.family == b.family && a.key_bits == b.key_bits && a.value_bits == b.value_bits &&
           a.block_size == b.block_size && a.metadata_bits_per_block == b.metadata_bits_per_block &&
           a.residual_bits == b.residual_bits && a.outlier_fraction == b.outlier_fraction &&
           a.outlier_record_bits == b.outlier_record_bits && a.key_axis == b.key_axis &&
           a.value_axis == b.value_axis && a.outlier_records == b.outlier_records;
}
inline bool operator!=(const CodecSpec& a, const CodecSpec& b) { return !(a == b); }

/// Exact byte counts per storage category. Entries sum to the stored size.
struct ByteBreakdown {
    std::uint64_t payload = 0;
    std::uint64_t scales_zeros = 0;
    std::uint64_t outliers = 0;
    std::uint64_t rotation = 0;
    std::uint64_t summary = 0;

    std::uint64_t total() const { return payload + scales_zeros + outliers + rotation + summary; }
};

/// Bit-packed result of encoding one chunk's K/V matrices.
struct PackedChunk {
    CodecSpec spec;
    std::string spec_id;
    std::size_t tokens = 0;
    std::size_t channels = 0;
    std::vector<std::uint8_t> payload_bytes;
    std::vector<std::uint8_t> metadata_bytes;
    std::uint64_t payload_bits = 0;  // exact sum of assigned code widths
    ByteBreakdown breakdown;
    bool is_summary = false;

    std::uint64_t stored_bytes() const { return payload_bytes.size() + metadata_bytes.size(); }
    std::uint64_t bf16_equivalent_bytes() const { return tokens * channels * 2 * 2; }
};

struct KvPair {
    Matrix keys;
    Matrix values;
};

struct QuantError {
    double mse = 0.0;
    double max_abs = 0.0;
    double snr_db = std::numeric_limits<double>::infinity();
};

inline QuantError measure_error(const Matrix& source, const Matrix& decoded) {
    KVQ_REQUIRE(source.same_shape(decoded), "measure_error: shape mismatch");
    double err = 0.0, sig = 0.0, mx = 0.0;
    for (std::size_t i = 0; i < source.size(); ++i) {
        const double d = static_cast<double>(source.data()[i]) - decoded.data()[i];
        err += d * d;
        sig += static_cast<double>(source.data()[i]) * source.data()[i];
        mx = std::max(mx, std::abs(d));
    }
    QuantError q;
    q.max_abs = mx;
    q.mse = (mx == 0.0) ? 0.0 : err / static_cast<double>(source.size());
    q.snr_db = (err == 0.0) ? std::numeric_limits<double>::infinity()
                            : 10.0 * std::log10(sig / err);
    return q;
}

inline QuantError measure_error(const KvPair& source, const KvPair& decoded) {
    const QuantError k = measure_error(source.keys, decoded.keys);
    const QuantError v = measure_error(source.values, decoded.values);
    QuantError q;
    q.max_abs = std::max(k.max_abs, v.max_abs);
    q.mse = 0.5 * (k.mse + v.mse);
    q.snr_db = std::min(k.snr_db, v.snr_db);
    return q;
}

namespace detail {

inline unsigned max_code(unsigned bits) { return (1u << bits) - 1u; }

inline std::size_t outlier_count(const CodecSpec& spec, std::size_t n) {
    if (!spec.has_outlier_stage()) return 0;
    return static_cast<std::size_t>(std::llround(spec.outlier_fraction * static_cast<double>(n)));
}

/// Per-block affine grid. The block's min maps to code 0 and its max to the
/// top code, so a re-encode of decoded values re-derives the identical grid.
struct AffineGrid {
    float scale = 0.0f;
    float zero = 0.0f;
};

inline AffineGrid derive_grid(std::span<const float> x, unsigned bits) {
    float mn = x[0], mx = x[0];
    for (float v : x) {
        mn = std::min(mn, v);
        mx = std::max(mx, v);
    }
    AffineGrid g;
    g.zero = bf16_from_bits(bf16_bits(mn));
    const float raw = (mx - mn) / static_cast<float>(max_code(bits));
    // round-to-nearest BF16 keeps the grid stable under re-encoding
    std::uint32_t b;
    std::memcpy(&b, &raw, sizeof(b));
    const std::uint32_t lsb = (b >> 16) & 1u;
    b += 0x7FFFu + lsb;
    b &= 0xFFFF0000u;
    std::memcpy(&g.scale, &b, sizeof(g.scale));
    return g;
}

inline std::uint32_t quantize_affine(float x, const AffineGrid& g, unsigned bits) {
    if (g.scale == 0.0f) return 0;
    const float q = std::round((x - g.zero) / g.scale);
    const float m = static_cast<float>(max_code(bits));
    return static_cast<std::uint32_t>(std::clamp(q, 0.0f, m));
}

inline float dequantize_affine(std::uint32_t code, const AffineGrid& g) {
    return g.zero + g.scale * static_cast<float>(code);
}

struct MatrixPlan {
    Axis axis = Axis::PerTokenRow;
    unsigned bits = 4;
    std::vector<BlockRef> blocks;
};

inline MatrixPlan make_plan(const CodecSpec& spec, std::size_t rows, std::size_t cols, bool keys) {
    MatrixPlan p;
    p.axis = keys ? spec.key_axis : spec.value_axis;
    p.bits = keys ? spec.key_bits : spec.value_bits;
    p.blocks = partition_blocks(rows, cols, spec.block_size, p.axis);
    return p;
}

struct MetaWriter {
    std::vector<std::uint8_t>& out;
    void u16(std::uint16_t v) {
        out.push_back(static_cast<std::uint8_t>(v & 0xFF));
        out.push_back(static_cast<std::uint8_t>(v >> 8));
    }
    void u32(std::uint32_t v) {
        u16(static_cast<std::uint16_t>(v & 0xFFFF));
        u16(static_cast<std::uint16_t>(v >> 16));
    }
};

struct MetaReader {
    const std::vector<std::uint8_t>& in;
    std::size_t pos = 0;
    std::uint16_t u16() {
        KVQ_REQUIRE(pos + 2 <= in.size(), "metadata truncated");
        const std::uint16_t v = static_cast<std::uint16_t>(in[pos] | (in[pos + 1] << 8));
        pos += 2;
        return v;
    }
    std::uint32_t u32() {
        const std::uint32_t lo = u16();
        return lo | (static_cast<std::uint32_t>(u16()) << 16);
    }
};

struct OutlierRecord {
    std::uint16_t index;
    std::uint16_t value_bits;
};

/// Select the outlier set: the `count` largest |x|, ties broken toward the
/// lower index. Returns records sorted by index.
inline std::vector<OutlierRecord> select_outliers(const std::vector<float>& x, std::size_t count) {
    std::vector<OutlierRecord> recs;
    if (count == 0) return recs;
    KVQ_REQUIRE(x.size() <= 65536, "outlier records use 16-bit indices");
    std::vector<std::uint32_t> idx(x.size());
    std::iota(idx.begin(), idx.end(), 0u);
    std::stable_sort(idx.begin(), idx.end(), [&](std::uint32_t a, std::uint32_t b) {
        const float ma = std::abs(x[a]), mb = std::abs(x[b]);
        if (ma != mb) return ma > mb;
        return a < b;
    });
    idx.resize(std::min(count, idx.size()));
    std::sort(idx.begin(), idx.end());
    recs.reserve(idx.size());
    for (auto i : idx) {
        recs.push_back({static_cast<std::uint16_t>(i), bf16_bits(x[i])});
    }
    return recs;
}

struct MatrixEncodeResult {
    std::uint64_t payload_bits = 0;
    std::uint64_t meta_scale_bytes = 0;
    std::uint64_t meta_outlier_bytes = 0;
};

inline std::size_t element_index(const Matrix& m, const BlockRef& b, Axis axis, std::size_t i) {
    return (axis == Axis::PerTokenRow) ? b.lane * m.cols() + b.offset + i
                                       : (b.offset + i) * m.cols() + b.lane;
}

/// Encode one matrix into the shared payload/metadata streams.
/// Payload: stage-1 codes, then (PRQ) stage-2 codes.
/// Metadata: stage-1 grids, then (PRQ) stage-2 grids, then outlier records.
inline MatrixEncodeResult encode_matrix(const CodecSpec& spec, const Matrix& m, bool keys,
                                        BitWriter& payload, std::vector<std::uint8_t>& meta) {
    MatrixEncodeResult res;
    MetaWriter mw{meta};
    const std::size_t meta_before = meta.size();

    if (spec.family == CodecFamily::BF16) {
        for (float v : m.values()) {
            payload.put(bf16_bits(v), 16);
        }
        res.payload_bits = static_cast<std::uint64_t>(m.size()) * 16;
        return res;
    }

    Matrix work = spec.rotates() ? hadamard_rotate_rows(m) : m;

    // Outlier extraction happens before grid derivation so the bulk grid
    // excludes the recorded entries.
    const std::size_t n_out = outlier_count(spec, work.size());
    std::vector<OutlierRecord> records;
    std::vector<bool> is_outlier;
    if (n_out > 0) {
        records = select_outliers(work.values(), n_out);
        is_outlier.assign(work.size(), false);
        for (const auto& r : records) {
            is_outlier[r.index] = true;
        }
    }

    const MatrixPlan plan = make_plan(spec, work.rows(), work.cols(), keys);
    const unsigned m1 = max_code(plan.bits);
    std::vector<float> buf(spec.block_size);
    std::vector<float> bulk(spec.block_size);
    std::vector<std::uint32_t> stage1(work.size());
    std::vector<std::uint32_t> stage2;
    if (spec.has_residual_stage()) {
        stage2.resize(work.size());
    }
    std::vector<AffineGrid> grids1(plan.blocks.size());
    std::vector<AffineGrid> grids2(spec.has_residual_stage() ? plan.blocks.size() : 0);

    std::size_t flat = 0;  // element order: block by block
    for (std::size_t bi = 0; bi < plan.blocks.size(); ++bi) {
        const BlockRef& b = plan.blocks[bi];
        std::span<float> x(buf.data(), b.length);
        gather_block(work, b, plan.axis, x);

        // The grid is derived from non-outlier entries only.
        AffineGrid g;
        if (n_out > 0) {
            std::size_t nb = 0;
            for (std::size_t i = 0; i < b.length; ++i) {
                const std::size_t el = element_index(work, b, plan.axis, i);
                if (!is_outlier[el]) bulk[nb++] = x[i];
            }
            g = (nb > 0) ? derive_grid(std::span<const float>(bulk.data(), nb), plan.bits)
                         : AffineGrid{};
        } else {
            g = derive_grid(std::span<const float>(x.data(), b.length), plan.bits);
        }
        grids1[bi] = g;

        AffineGrid g2;
        if (spec.has_residual_stage()) {
            // Stage-2 step is an exact power-of-two fraction of stage 1, so
            // a re-encode re-derives both grids bitwise.
            g2.scale = g.scale / static_cast<float>(1u << spec.residual_bits);
            g2.zero = 0.0f;
            grids2[bi] = g2;
        }

        const int r_max = static_cast<int>(max_code(spec.residual_bits) / 2);  // 7 or 1
        for (std::size_t i = 0; i < b.length; ++i, ++flat) {
            const std::uint32_t q1 = quantize_affine(x[i], g, plan.bits);
            stage1[flat] = q1;
            if (spec.has_residual_stage()) {
                int q2 = 0;
                // Extreme codes stay uncorrected; they anchor the grid.
                if (q1 != 0 && q1 != m1 && g2.scale != 0.0f) {
                    const float r = x[i] - dequantize_affine(q1, g);
                    q2 = static_cast<int>(std::clamp(std::round(r / g2.scale),
                                                     static_cast<float>(-r_max),
                                                     static_cast<float>(r_max)));
                }
                stage2[flat] = static_cast<std::uint32_t>(q2 + r_max);
            }
        }
    }

    for (std::size_t i = 0; i < stage1.size(); ++i) {
        payload.put(stage1[i], plan.bits);
    }
    res.payload_bits += static_cast<std::uint64_t>(stage1.size()) * plan.bits;
    if (spec.has_residual_stage()) {
        for (std::size_t i = 0; i < stage2.size(); ++i) {
            payload.put(stage2[i], spec.residual_bits);
        }
        res.payload_bits += static_cast<std::uint64_t>(stage2.size()) * spec.residual_bits;
    }

    for (const auto& g : grids1) {
        mw.u16(bf16_bits(g.scale));
        mw.u16(bf16_bits(g.zero));
    }
    for (const auto& g : grids2) {
        mw.u16(bf16_bits(g.scale));
        mw.u16(bf16_bits(g.zero));
    }
    res.meta_scale_bytes = meta.size() - meta_before;

    for (const auto& r : records) {
        mw.u16(r.index);
        mw.u16(r.value_bits);
    }
    res.meta_outlier_bytes = records.size() * 4;
    return res;
}

inline Matrix decode_matrix(const CodecSpec& spec, std::size_t rows, std::size_t cols, bool keys,
                            BitReader& payload, MetaReader& meta_grids, MetaReader& meta_records) {
    Matrix out(rows, cols);
    if (spec.family == CodecFamily::BF16) {
        for (auto& v : out.values()) {
            v = bf16_from_bits(payload.get_u16());
        }
        return out;
    }

    const MatrixPlan plan = make_plan(spec, rows, cols, keys);
    const std::size_t n = rows * cols;
    std::vector<std::uint32_t> stage1(n);
    for (auto& q : stage1) {
        q = payload.get(plan.bits);
    }
    std::vector<std::uint32_t> stage2;
    if (spec.has_residual_stage()) {
        stage2.resize(n);
        for (auto& q : stage2) {
            q = payload.get(spec.residual_bits);
        }
    }

    std::vector<AffineGrid> grids1(plan.blocks.size());
    for (auto& g : grids1) {
        g.scale = bf16_from_bits(meta_grids.u16());
        g.zero = bf16_from_bits(meta_grids.u16());
    }
    std::vector<AffineGrid> grids2;
    if (spec.has_residual_stage()) {
        grids2.resize(plan.blocks.size());
        for (auto& g : grids2) {
            g.scale = bf16_from_bits(meta_grids.u16());
            g.zero = bf16_from_bits(meta_grids.u16());
        }
    }

    const int r_max = static_cast<int>(max_code(spec.residual_bits) / 2);
    std::size_t flat = 0;
    for (std::size_t bi = 0; bi < plan.blocks.size(); ++bi) {
        const BlockRef& b = plan.blocks[bi];
        for (std::size_t i = 0; i < b.length; ++i, ++flat) {
            float v = dequantize_affine(stage1[flat], grids1[bi]);
            if (spec.has_residual_stage()) {
                const int q2 = static_cast<int>(stage2[flat]) - r_max;
                v += grids2[bi].scale * static_cast<float>(q2);
            }
            const std::size_t el = element_index(out, b, plan.axis, i);
            out.data()[el] = v;
        }
    }

    const std::size_t n_out = outlier_count(spec, n);
    for (std::size_t i = 0; i < n_out; ++i) {
        const std::uint16_t idx = meta_records.u16();
        const std::uint16_t val = meta_records.u16();
        KVQ_REQUIRE(idx < n, "outlier record index out of range");
        out.data()[idx] = bf16_from_bits(val);
    }

    if (spec.rotates()) {
        out = hadamard_rotate_rows(out);
    }
    return out;
}

}  // namespace detail

/// Encode arbitrary K/V matrices (used for re-encoding decoded state and for
/// summaries, which are not BF16-exact).
inline PackedChunk encode_matrices(const CodecSpec& spec, const Matrix& keys, const Matrix& values,
                                   const std::string& spec_id = "") {
    spec.validate();
    KVQ_REQUIRE(keys.same_shape(values), "encode: keys/values shape mismatch");
    if (spec.rotates()) {
        KVQ_REQUIRE(is_power_of_two(keys.cols()), "encode: rotation needs power-of-two channels");
    }

    PackedChunk pc;
    pc.spec = spec;
    pc.spec_id = spec_id.empty() ? spec.id() : spec_id;
    pc.tokens = keys.rows();
    pc.channels = keys.cols();

    BitWriter payload;
    std::vector<std::uint8_t> grid_meta;
    std::vector<std::uint8_t> record_meta;

    if (spec.rotates()) {
        detail::MetaWriter mw{grid_meta};
        mw.u32(static_cast<std::uint32_t>(std::countr_zero(keys.cols())));
        pc.breakdown.rotation = 4;
    }

    std::vector<std::uint8_t> grids_k, grids_v, recs_k, recs_v;
    {
        std::vector<std::uint8_t> meta;
        const auto rk = detail::encode_matrix(spec, keys, true, payload, meta);
        grids_k.assign(meta.begin(), meta.begin() + rk.meta_scale_bytes);
        recs_k.assign(meta.begin() + rk.meta_scale_bytes, meta.end());
        pc.breakdown.scales_zeros += rk.meta_scale_bytes;
        pc.breakdown.outliers += rk.meta_outlier_bytes;
        pc.payload_bits += rk.payload_bits;
    }
    {
        std::vector<std::uint8_t> meta;
        const auto rv = detail::encode_matrix(spec, values, false, payload, meta);
        grids_v.assign(meta.begin(), meta.begin() + rv.meta_scale_bytes);
        recs_v.assign(meta.begin() + rv.meta_scale_bytes, meta.end());
        pc.breakdown.scales_zeros += rv.meta_scale_bytes;
        pc.breakdown.outliers += rv.meta_outlier_bytes;
        pc.payload_bits += rv.payload_bits;
    }

    pc.metadata_bytes = std::move(grid_meta);
    pc.metadata_bytes.insert(pc.metadata_bytes.end(), grids_k.begin(), grids_k.end());
    pc.metadata_bytes.insert(pc.metadata_bytes.end(), grids_v.begin(), grids_v.end());
    pc.metadata_bytes.insert(pc.metadata_bytes.end(), recs_k.begin(), recs_k.end());
    pc.metadata_bytes.insert(pc.metadata_bytes.end(), recs_v.begin(), recs_v.end());
    pc.payload_bytes = payload.take();
    pc.breakdown.payload = pc.payload_bytes.size();
    return pc;
}

inline PackedChunk encode_chunk(const CodecSpec& spec, const KvChunk& chunk,
                                const std::string& spec_id = "") {
    return encode_matrices(spec, chunk.keys, chunk.values, spec_id);
}

/// Mark a packed chunk as a soft-prune summary: its whole footprint is
/// reported under the `summary` accounting category.
inline PackedChunk mark_summary(PackedChunk pc) {
    ByteBreakdown b;
    b.summary = pc.breakdown.total();
    pc.breakdown = b;
    pc.is_summary = true;
    return pc;
}

inline KvPair decode_chunk(const PackedChunk& pc) {
    pc.spec.validate();
    KVQ_REQUIRE(pc.breakdown.total() == pc.stored_bytes(),
                "decode: byte breakdown does not match stored buffers");

    BitReader payload(pc.payload_bytes.data(), pc.payload_bytes.size());
    detail::MetaReader grids{pc.metadata_bytes, 0};
    if (pc.spec.rotates()) {
        const std::uint32_t log2n = grids.u32();
        KVQ_REQUIRE(log2n == static_cast<std::uint32_t>(std::countr_zero(pc.channels)),
                    "decode: rotation descriptor does not match chunk shape");
    }

    // Records live after all grid metadata; compute their offset from spec.
    const std::size_t n = pc.tokens * pc.channels;
    const std::size_t n_out = detail::outlier_count(pc.spec, n);
    KVQ_REQUIRE(pc.metadata_bytes.size() >= n_out * 2 * 4,
                "decode: metadata too small for outlier records");
    detail::MetaReader recs_k{pc.metadata_bytes, pc.metadata_bytes.size() - n_out * 2 * 4};
    detail::MetaReader recs_v{pc.metadata_bytes, pc.metadata_bytes.size() - n_out * 4};

    KvPair out;
    out.keys = detail::decode_matrix(pc.spec, pc.tokens, pc.channels, true, payload, grids, recs_k);
    out.values = detail::decode_matrix(pc.spec, pc.tokens, pc.channels, false, payload, grids, recs_v);
    return out;
}

/// Exact per-category byte counts; no estimates.
inline ByteBreakdown measure_bytes(const PackedChunk& pc) {
    KVQ_REQUIRE(pc.breakdown.total() == pc.stored_bytes(), "measure_bytes: invalid PackedChunk");
    return pc.breakdown;
}

namespace detail {

inline std::uint64_t matrix_block_count(std::size_t rows, std::size_t cols, std::size_t block,
                                        Axis axis) {
    const std::uint64_t lanes = (axis == Axis::PerTokenRow) ? rows : cols;
    const std::uint64_t lane_len = (axis == Axis::PerTokenRow) ? cols : rows;
    return lanes * ((lane_len + block - 1) / block);
}

inline std::uint64_t matrix_stored_bits(const CodecSpec& spec, std::size_t rows, std::size_t cols,
                                        bool keys) {
    const std::uint64_t n = static_cast<std::uint64_t>(rows) * cols;
    if (spec.family == CodecFamily::BF16) {
        return n * 16;
    }
    const unsigned bits = keys ? spec.key_bits : spec.value_bits;
    const Axis axis = keys ? spec.key_axis : spec.value_axis;
    std::uint64_t stages = 1;
    std::uint64_t payload = n * bits;
    if (spec.has_residual_stage()) {
        stages = 2;
        payload += n * spec.residual_bits;
    }
    const std::uint64_t blocks = matrix_block_count(rows, cols, spec.block_size, axis);
    const std::uint64_t meta = blocks * spec.metadata_bits_per_block * stages;
    const std::uint64_t outliers =
        static_cast<std::uint64_t>(outlier_count(spec, n)) * spec.outlier_record_bits;
    return payload + meta + outliers;
}

}  // namespace detail

/// Analytic compression ratio: BF16-equivalent bits over stored bits,
/// including tail-block metadata, outlier records and the per-chunk rotation
/// descriptor. Matches measure_bytes-derived ratios exactly.
inline double nominal_compression_ratio(const CodecSpec& spec, std::size_t tokens,
                                        std::size_t channels) {
    spec.validate();
    KVQ_REQUIRE(tokens > 0 && channels > 0, "nominal_compression_ratio: dimensions must be positive");
    const std::uint64_t n = static_cast<std::uint64_t>(tokens) * channels;
    const std::uint64_t bf16_bits_total = n * 2 * 16;
    std::uint64_t stored = detail::matrix_stored_bits(spec, tokens, channels, true) +
                           detail::matrix_stored_bits(spec, tokens, channels, false);
    if (spec.rotates()) {
        stored += 32;
    }
    return static_cast<double>(bf16_bits_total) / static_cast<double>(stored);
}

}  // namespace kvq
