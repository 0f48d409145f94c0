// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "kvq/common.hpp"
#include "kvq/matrix.hpp"

namespace kvq {

/// In-place orthonormal Walsh-Hadamard transform. With the 1/sqrt(n) scaling
/// applied on every call the transform is its own inverse.
inline void hadamard_transform_inplace(std::span<float> v) {
    const std::size_t n = v.size();
    KVQ_REQUIRE(is_power_of_two(n), "hadamard_transform: length must be a power of two");
    for (std::size_t h = 1; h < n; h <<= 1) {
        for (std::size_t i = 0; i < n; i += h << 1) {
            for (std::size_t j = i; j < i + h; ++j) {
                const float a = v[j];
                const float b = v[j + h];
                v[j] = a + b;
                v[j + h] = a - b;
            }
        }
    }
    const float scale = 1.0f / std::sqrt(static_cast<float>(n));
    for (auto& x : v) {
        x *= scale;
    }
}

inline std::vector<float> hadamard_transform(std::span<const float> v) {
    std::vector<float> out(v.begin(), v.end());
    hadamard_transform_inplace(out);
    return out;
}

/// Rotate every token row of the matrix. Row length must be a power of two.
inline Matrix hadamard_rotate_rows(const Matrix& m) {
    Matrix out = m;
    for (std::size_t r = 0; r < out.rows(); ++r) {
        hadamard_transform_inplace(out.row(r));
    }
    return out;
}

}  // namespace kvq
