// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "kvq/common.hpp"
#include "kvq/matrix.hpp"

namespace kvq {

enum class Axis {
    PerTokenRow,      // blocks run along a token's channel vector
    PerChannelColumn  // blocks run down a channel across tokens
};

/// One quantization block: a contiguous run of `length` elements starting at
/// `offset` within row/column `lane` of the partitioned axis. The final block
/// of a lane may be a short tail when the axis length is not divisible.
struct BlockRef {
    std::size_t lane = 0;
    std::size_t offset = 0;
    std::size_t length = 0;
};

inline std::vector<BlockRef> partition_blocks(std::size_t rows, std::size_t cols,
                                              std::size_t block_size, Axis axis) {
    KVQ_REQUIRE(block_size > 0, "partition_blocks: block_size must be positive");
    const std::size_t lanes = (axis == Axis::PerTokenRow) ? rows : cols;
    const std::size_t lane_len = (axis == Axis::PerTokenRow) ? cols : rows;
    std::vector<BlockRef> blocks;
    blocks.reserve(lanes * ((lane_len + block_size - 1) / block_size));
    for (std::size_t lane = 0; lane < lanes; ++lane) {
        for (std::size_t off = 0; off < lane_len; off += block_size) {
            const std::size_t len = std::min(block_size, lane_len - off);
            blocks.push_back({lane, off, len});
        }
    }
    return blocks;
}

inline std::vector<BlockRef> partition_blocks(const Matrix& m, std::size_t block_size, Axis axis) {
    return partition_blocks(m.rows(), m.cols(), block_size, axis);
}

inline void gather_block(const Matrix& m, const BlockRef& b, Axis axis, std::span<float> out) {
    if (axis == Axis::PerTokenRow) {
        for (std::size_t i = 0; i < b.length; ++i) {
            out[i] = m.at(b.lane, b.offset + i);
        }
    } else {
        for (std::size_t i = 0; i < b.length; ++i) {
            out[i] = m.at(b.offset + i, b.lane);
        }
    }
}

inline void scatter_block(Matrix& m, const BlockRef& b, Axis axis, std::span<const float> in) {
    if (axis == Axis::PerTokenRow) {
        for (std::size_t i = 0; i < b.length; ++i) {
            m.at(b.lane, b.offset + i) = in[i];
        }
    } else {
        for (std::size_t i = 0; i < b.length; ++i) {
            m.at(b.offset + i, b.lane) = in[i];
        }
    }
}

}  // namespace kvq
