// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "kvq/common.hpp"
#include "kvq/matrix.hpp"

namespace kvq {

enum class Distribution { Gaussian, HeavyTailed, OutlierInjected };

inline std::string to_string(Distribution d) {
    switch (d) {
        case Distribution::Gaussian: return "gaussian";
        case Distribution::HeavyTailed: return "heavy_tailed";
        case Distribution::OutlierInjected: return "outlier_injected";
    }
    return "?";
}

inline Distribution distribution_from_string(const std::string& s) {
    if (s == "gaussian") return Distribution::Gaussian;
    if (s == "heavy_tailed") return Distribution::HeavyTailed;
    if (s == "outlier_injected") return Distribution::OutlierInjected;
    throw error("unknown distribution: " + s);
}

struct CorpusSpec {
    std::uint64_t seed = 7;
    std::size_t num_layers = 4;
    std::size_t num_chunks = 14;
    std::size_t tokens_per_chunk = 125;
    std::size_t channels = 64;
    Distribution distribution = Distribution::Gaussian;
    double outlier_fraction = 0.0;
    double outlier_scale = 1.0;

    void validate() const {
        KVQ_REQUIRE(num_layers > 0 && num_chunks > 0 && tokens_per_chunk > 0 && channels > 0,
                    "CorpusSpec: sizes must be positive");
        KVQ_REQUIRE(is_power_of_two(channels), "CorpusSpec: channels must be a power of two");
        KVQ_REQUIRE(outlier_fraction >= 0.0 && outlier_fraction <= 1.0,
                    "CorpusSpec: outlier_fraction must be in [0,1]");
        KVQ_REQUIRE(outlier_scale >= 1.0, "CorpusSpec: outlier_scale must be >= 1");
    }
};

/// One cache chunk: the K/V state written for one layer at one rollout step.
/// chunk_age counts steps since the chunk was appended (0 = newest).
struct KvChunk {
    std::size_t layer_id = 0;
    std::size_t chunk_age = 0;
    Matrix keys;
    Matrix values;
    std::vector<std::pair<std::uint32_t, std::uint32_t>> token_coords;
    std::vector<float> motion_score;

    std::size_t tokens() const { return keys.rows(); }
    std::size_t channels() const { return keys.cols(); }

    void validate() const {
        KVQ_REQUIRE(keys.same_shape(values), "KvChunk: keys/values shape mismatch");
        KVQ_REQUIRE(is_power_of_two(keys.cols()), "KvChunk: channels must be a power of two");
        for (float x : keys.values()) {
            KVQ_REQUIRE(std::isfinite(x) && is_bf16_exact(x), "KvChunk: keys must be finite BF16 values");
        }
        for (float x : values.values()) {
            KVQ_REQUIRE(std::isfinite(x) && is_bf16_exact(x), "KvChunk: values must be finite BF16 values");
        }
    }
};

namespace detail {

// splitmix64, used to derive independent stream seeds from (seed, tags).
inline std::uint64_t mix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

inline std::uint64_t stream_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b, std::uint64_t c) {
    return mix64(seed ^ mix64(a ^ mix64(b ^ mix64(c))));
}

/// Deterministic gaussian source. std::normal_distribution is
/// implementation-defined, so Box-Muller is done by hand on top of the
/// fully-specified mt19937_64 bit stream.
class GaussianSource {
public:
    explicit GaussianSource(std::uint64_t seed) : rng_(seed) {}

    double uniform() {  // in (0,1)
        const std::uint64_t r = rng_();
        return (static_cast<double>(r >> 11) + 0.5) * (1.0 / 9007199254740992.0);
    }

    double gaussian() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        const double u1 = uniform();
        const double u2 = uniform();
        const double mag = std::sqrt(-2.0 * std::log(u1));
        const double ang = 6.283185307179586476925286766559 * u2;
        spare_ = mag * std::sin(ang);
        have_spare_ = true;
        return mag * std::cos(ang);
    }

private:
    std::mt19937_64 rng_;
    double spare_ = 0.0;
    bool have_spare_ = false;
};

inline void fill_matrix(Matrix& m, const CorpusSpec& spec, std::uint64_t layer,
                        std::uint64_t chunk, std::uint64_t which) {
    GaussianSource base(stream_seed(spec.seed, layer, chunk, which));
    for (auto& x : m.values()) {
        double v = base.gaussian();
        if (spec.distribution == Distribution::HeavyTailed) {
            // Student-t with 3 degrees of freedom.
            const double a = base.gaussian(), b = base.gaussian(), c = base.gaussian();
            const double chi = (a * a + b * b + c * c) / 3.0;
            v /= std::sqrt(chi > 1e-12 ? chi : 1e-12);
        }
        x = bf16_truncate(static_cast<float>(v));
    }
    if (spec.distribution == Distribution::OutlierInjected && spec.outlier_fraction > 0.0) {
        // Separate stream: outlier_fraction = 0 leaves the base draw untouched.
        GaussianSource inject(stream_seed(spec.seed, layer, chunk, which + 100));
        for (auto& x : m.values()) {
            const double u = inject.uniform();
            const double sign = inject.uniform() < 0.5 ? -1.0 : 1.0;
            const double far = inject.uniform();
            const double jitter = std::abs(inject.gaussian());
            if (u < spec.outlier_fraction) {
                // Near/far magnitude mix; the far mode dominates so injected
                // outliers sit well beyond 10 sigma of the mixture.
                const double mult = (far < 0.7 ? 3.5 : 1.0) * (1.0 + 0.05 * jitter);
                x = bf16_truncate(static_cast<float>(sign * spec.outlier_scale * mult));
            }
        }
    }
}

}  // namespace detail

/// Deterministically generate num_layers * num_chunks chunks, ordered by
/// (chunk, layer). chunk_age is relative to the final chunk. motion_score is
/// the per-token K/V difference magnitude against the previous chunk of the
/// same layer (zero for the first chunk).
inline std::vector<KvChunk> generate_corpus(const CorpusSpec& spec) {
    spec.validate();
    std::vector<KvChunk> out;
    out.reserve(spec.num_layers * spec.num_chunks);
    const std::size_t grid_w = static_cast<std::size_t>(
        std::ceil(std::sqrt(static_cast<double>(spec.tokens_per_chunk))));
    for (std::size_t chunk = 0; chunk < spec.num_chunks; ++chunk) {
        for (std::size_t layer = 0; layer < spec.num_layers; ++layer) {
            KvChunk kc;
            kc.layer_id = layer;
            kc.chunk_age = spec.num_chunks - 1 - chunk;
            kc.keys = Matrix(spec.tokens_per_chunk, spec.channels);
            kc.values = Matrix(spec.tokens_per_chunk, spec.channels);
            detail::fill_matrix(kc.keys, spec, layer, chunk, 0);
            detail::fill_matrix(kc.values, spec, layer, chunk, 1);
            kc.token_coords.resize(spec.tokens_per_chunk);
            for (std::size_t t = 0; t < spec.tokens_per_chunk; ++t) {
                kc.token_coords[t] = {static_cast<std::uint32_t>(t % grid_w),
                                      static_cast<std::uint32_t>(t / grid_w)};
            }
            kc.motion_score.assign(spec.tokens_per_chunk, 0.0f);
            if (chunk > 0) {
                const KvChunk& prev = out[(chunk - 1) * spec.num_layers + layer];
                for (std::size_t t = 0; t < spec.tokens_per_chunk; ++t) {
                    double acc = 0.0;
                    for (std::size_t c = 0; c < spec.channels; ++c) {
                        const double dk = kc.keys.at(t, c) - prev.keys.at(t, c);
                        const double dv = kc.values.at(t, c) - prev.values.at(t, c);
                        acc += dk * dk + dv * dv;
                    }
                    kc.motion_score[t] = static_cast<float>(std::sqrt(acc));
                }
            }
            out.push_back(std::move(kc));
        }
    }
    return out;
}

}  // namespace kvq
