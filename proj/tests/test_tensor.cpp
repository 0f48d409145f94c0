// SPDX-License-Identifier: Apache-2.0
#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <set>

#include "kvq/blocks.hpp"
#include "kvq/corpus.hpp"
#include "kvq/hadamard.hpp"

using namespace kvq;

TEST_CASE("bf16 truncation is idempotent and flags exact values") {
    CHECK(bf16_truncate(1.0f) == 1.0f);
    CHECK(is_bf16_exact(1.5f));
    const float x = 1.00048828125f;  // needs more than 8 mantissa bits
    CHECK(bf16_truncate(x) != x);
    CHECK(bf16_truncate(bf16_truncate(x)) == bf16_truncate(x));
}

TEST_CASE("generate_corpus shape contract") {
    CorpusSpec spec;
    spec.seed = 7;
    spec.num_layers = 1;
    spec.num_chunks = 2;
    spec.tokens_per_chunk = 4;
    spec.channels = 8;
    const auto corpus = generate_corpus(spec);
    REQUIRE(corpus.size() == 2);
    for (const auto& c : corpus) {
        CHECK(c.keys.rows() == 4);
        CHECK(c.keys.cols() == 8);
        CHECK(c.values.rows() == 4);
        CHECK(c.values.cols() == 8);
        c.validate();  // finite BF16 entries, power-of-two channels
    }
}

TEST_CASE("generate_corpus is deterministic in its spec") {
    CorpusSpec spec;
    spec.seed = 1234;
    spec.num_layers = 2;
    spec.num_chunks = 3;
    spec.tokens_per_chunk = 16;
    spec.channels = 16;
    const auto a = generate_corpus(spec);
    const auto b = generate_corpus(spec);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].keys == b[i].keys);
        CHECK(a[i].values == b[i].values);
        CHECK(a[i].motion_score == b[i].motion_score);
    }
}

TEST_CASE("outlier_fraction zero reduces to the gaussian corpus bit-exactly") {
    CorpusSpec g;
    g.seed = 7;
    CorpusSpec o = g;
    o.distribution = Distribution::OutlierInjected;
    o.outlier_fraction = 0.0;
    o.outlier_scale = 50.0;
    const auto a = generate_corpus(g);
    const auto b = generate_corpus(o);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].keys == b[i].keys);
        CHECK(a[i].values == b[i].values);
    }
}

TEST_CASE("injected outliers land beyond ten sigma at roughly their fraction") {
    CorpusSpec spec;
    spec.seed = 7;
    spec.distribution = Distribution::OutlierInjected;
    spec.outlier_fraction = 0.01;
    spec.outlier_scale = 50.0;
    const auto corpus = generate_corpus(spec);
    double sum = 0.0, sq = 0.0;
    std::size_t n = 0;
    for (const auto& c : corpus) {
        for (float x : c.keys.values()) {
            sum += x;
            sq += static_cast<double>(x) * x;
            ++n;
        }
        for (float x : c.values.values()) {
            sum += x;
            sq += static_cast<double>(x) * x;
            ++n;
        }
    }
    const double mean = sum / n;
    const double stdev = std::sqrt(sq / n - mean * mean);
    std::size_t beyond = 0;
    for (const auto& c : corpus) {
        for (float x : c.keys.values()) beyond += std::abs(x) > 10.0 * stdev;
        for (float x : c.values.values()) beyond += std::abs(x) > 10.0 * stdev;
    }
    const double fraction = static_cast<double>(beyond) / n;
    CHECK(fraction >= 0.005);
    CHECK(fraction <= 0.015);
}

TEST_CASE("motion score is the K/V difference magnitude against the previous chunk") {
    CorpusSpec spec;
    spec.seed = 11;
    spec.num_layers = 2;
    spec.num_chunks = 3;
    spec.tokens_per_chunk = 8;
    spec.channels = 16;
    const auto corpus = generate_corpus(spec);
    for (std::size_t l = 0; l < spec.num_layers; ++l) {
        for (float m : corpus[l].motion_score) CHECK(m == 0.0f);
    }
    // independent recomputation for chunk 2, layer 1
    const auto& prev = corpus[1 * spec.num_layers + 1];
    const auto& cur = corpus[2 * spec.num_layers + 1];
    for (std::size_t t = 0; t < spec.tokens_per_chunk; ++t) {
        double acc = 0.0;
        for (std::size_t c = 0; c < spec.channels; ++c) {
            const double dk = cur.keys.at(t, c) - prev.keys.at(t, c);
            const double dv = cur.values.at(t, c) - prev.values.at(t, c);
            acc += dk * dk + dv * dv;
        }
        CHECK(cur.motion_score[t] == Catch::Approx(std::sqrt(acc)).margin(1e-6));
    }
}

TEST_CASE("corpus validation rejects bad shapes") {
    CorpusSpec spec;
    spec.channels = 48;  // not a power of two
    CHECK_THROWS_AS(generate_corpus(spec), error);
    spec.channels = 64;
    spec.num_chunks = 0;
    CHECK_THROWS_AS(generate_corpus(spec), error);
}

TEST_CASE("partition_blocks tiles exactly") {
    SECTION("4x8, block 8, per token row") {
        const auto blocks = partition_blocks(4, 8, 8, Axis::PerTokenRow);
        REQUIRE(blocks.size() == 4);
        for (const auto& b : blocks) CHECK(b.length == 8);
    }
    SECTION("4x8, block 4, per channel column") {
        const auto blocks = partition_blocks(4, 8, 4, Axis::PerChannelColumn);
        REQUIRE(blocks.size() == 8);  // 8 columns, one block of 4 each
        for (const auto& b : blocks) CHECK(b.length == 4);
    }
    SECTION("4x6, block 4, per token row: short tail per row") {
        const auto blocks = partition_blocks(4, 6, 4, Axis::PerTokenRow);
        REQUIRE(blocks.size() == 8);
        for (std::size_t r = 0; r < 4; ++r) {
            CHECK(blocks[2 * r].length == 4);
            CHECK(blocks[2 * r + 1].length == 2);
        }
    }
    SECTION("zero block size is an error") {
        CHECK_THROWS_AS(partition_blocks(4, 8, 0, Axis::PerTokenRow), error);
    }
}

TEST_CASE("partition then reassembly is the identity") {
    for (const auto [rows, cols, block] :
         {std::tuple{4u, 8u, 8u}, {4u, 8u, 3u}, {7u, 5u, 2u}, {1u, 64u, 32u}, {13u, 16u, 16u}}) {
        for (Axis axis : {Axis::PerTokenRow, Axis::PerChannelColumn}) {
            Matrix m(rows, cols);
            for (std::size_t i = 0; i < m.size(); ++i) m.data()[i] = static_cast<float>(i) * 0.5f;
            Matrix rebuilt(rows, cols, -1.0f);
            std::vector<float> buf(block);
            std::size_t covered = 0;
            for (const auto& b : partition_blocks(m, block, axis)) {
                std::span<float> x(buf.data(), b.length);
                gather_block(m, b, axis, x);
                scatter_block(rebuilt, b, axis, x);
                covered += b.length;
            }
            CHECK(covered == m.size());  // each element exactly once
            CHECK(rebuilt == m);
        }
    }
}

TEST_CASE("hadamard transform basics") {
    SECTION("length one is the identity") {
        std::vector<float> v = {3.25f};
        hadamard_transform_inplace(v);
        CHECK(v[0] == 3.25f);
    }
    SECTION("two-point analytic transform") {
        std::vector<float> v = {1.0f, 0.0f};
        hadamard_transform_inplace(v);
        const float inv_sqrt2 = 1.0f / std::sqrt(2.0f);
        CHECK(v[0] == Catch::Approx(inv_sqrt2).margin(1e-7));
        CHECK(v[1] == Catch::Approx(inv_sqrt2).margin(1e-7));
    }
    SECTION("self-inverse and norm preserving on seeded data") {
        detail::GaussianSource src(99);
        std::vector<float> v(64);
        for (auto& x : v) x = static_cast<float>(src.gaussian());
        double norm0 = 0.0;
        for (float x : v) norm0 += static_cast<double>(x) * x;
        auto once = hadamard_transform(v);
        double norm1 = 0.0;
        for (float x : once) norm1 += static_cast<double>(x) * x;
        CHECK(std::abs(std::sqrt(norm1) - std::sqrt(norm0)) <= 1e-6 * std::sqrt(norm0));
        auto twice = hadamard_transform(once);
        for (std::size_t i = 0; i < v.size(); ++i) {
            CHECK(std::abs(twice[i] - v[i]) <= 1e-6);
        }
    }
    SECTION("non-power-of-two length is an error") {
        std::vector<float> v(6, 1.0f);
        CHECK_THROWS_AS(hadamard_transform_inplace(v), error);
    }
}
