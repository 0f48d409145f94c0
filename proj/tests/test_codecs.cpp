// SPDX-License-Identifier: Apache-2.0
#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "kvq/codec.hpp"

using namespace kvq;

namespace {

std::vector<KvChunk> fixed_corpus(Distribution dist = Distribution::Gaussian,
                                  double outlier_fraction = 0.0, double outlier_scale = 1.0) {
    CorpusSpec spec;
    spec.seed = 7;
    spec.num_layers = 1;
    spec.num_chunks = 4;
    spec.distribution = dist;
    spec.outlier_fraction = outlier_fraction;
    spec.outlier_scale = outlier_scale;
    return generate_corpus(spec);
}

double corpus_mse(const CodecSpec& codec, const std::vector<KvChunk>& corpus) {
    double acc = 0.0;
    for (const auto& chunk : corpus) {
        const auto packed = encode_chunk(codec, chunk);
        const auto dec = decode_chunk(packed);
        acc += measure_error({chunk.keys, chunk.values}, dec).mse;
    }
    return acc / static_cast<double>(corpus.size());
}

}  // namespace

TEST_CASE("constant RTN block decodes exactly") {
    Matrix k(1, 32, 5.0f), v(1, 32, 5.0f);
    const auto packed = encode_matrices(CodecSpec::rtn(4), k, v);
    const auto dec = decode_chunk(packed);
    for (float x : dec.keys.values()) CHECK(x == 5.0f);
    for (float x : dec.values.values()) CHECK(x == 5.0f);
}

TEST_CASE("RTN byte accounting on one 32-element block") {
    Matrix k(1, 32, 0.0f), v(1, 32, 0.0f);
    for (std::size_t c = 0; c < 32; ++c) {
        k.at(0, c) = static_cast<float>(c);
        v.at(0, c) = static_cast<float>(31 - c);
    }
    const auto packed = encode_matrices(CodecSpec::rtn(4), k, v);
    const auto bd = measure_bytes(packed);
    // 16 payload bytes and 4 metadata bytes per 32-element matrix
    CHECK(bd.payload == 32);
    CHECK(bd.scales_zeros == 8);
    CHECK(bd.outliers == 0);
    CHECK(bd.rotation == 0);
    CHECK(packed.payload_bits == 2 * 32 * 4);
    CHECK(bd.total() == packed.stored_bytes());
}

TEST_CASE("BF16 stores two bytes per element with no metadata") {
    Matrix k(1, 32, 1.5f), v(1, 32, -2.25f);
    const auto packed = encode_matrices(CodecSpec::bf16(), k, v);
    const auto bd = measure_bytes(packed);
    CHECK(bd.payload == 128);  // 64 bytes per 32-element matrix
    CHECK(packed.metadata_bytes.empty());
    const auto dec = decode_chunk(packed);
    CHECK(dec.keys == k);
    CHECK(dec.values == v);
    CHECK(nominal_compression_ratio(CodecSpec::bf16(), 125, 64) == 1.0);
}

TEST_CASE("QAQ outlier accounting on a 32x32 chunk") {
    CorpusSpec spec;
    spec.seed = 3;
    spec.num_layers = 1;
    spec.num_chunks = 1;
    spec.tokens_per_chunk = 32;
    spec.channels = 32;
    const auto corpus = generate_corpus(spec);
    const auto packed = encode_chunk(CodecSpec::qaq(2, 0.003), corpus[0]);
    // round(1024 * 0.003) = 3 records per matrix, 4 bytes each
    CHECK(measure_bytes(packed).outliers == 24);
}

TEST_CASE("QAQ with zero outlier fraction is bit-identical to RTN") {
    const auto corpus = fixed_corpus();
    for (unsigned bits : {2u, 4u}) {
        const auto rtn = encode_chunk(CodecSpec::rtn(bits), corpus[0]);
        const auto qaq = encode_chunk(CodecSpec::qaq(bits, 0.0), corpus[0]);
        CHECK(qaq.payload_bytes == rtn.payload_bytes);
        CHECK(qaq.metadata_bytes == rtn.metadata_bytes);
        CHECK(measure_bytes(qaq).outliers == 0);
        const auto da = decode_chunk(rtn);
        const auto db = decode_chunk(qaq);
        CHECK(da.keys == db.keys);
        CHECK(da.values == db.values);
    }
}

TEST_CASE("decode of a re-encoded decode is bit-identical for every family") {
    for (auto dist : {Distribution::Gaussian, Distribution::OutlierInjected}) {
        const auto corpus =
            fixed_corpus(dist, dist == Distribution::OutlierInjected ? 0.01 : 0.0, 50.0);
        const std::vector<CodecSpec> specs = {
            CodecSpec::bf16(),   CodecSpec::rtn(2),    CodecSpec::rtn(4), CodecSpec::rtn(2, 4),
            CodecSpec::kivi(2),  CodecSpec::kivi(4),   CodecSpec::quarot(2),
            CodecSpec::quarot(4), CodecSpec::prq(2, 4), CodecSpec::prq(4, 4),
            CodecSpec::prq(4, 2), CodecSpec::qaq(2),   CodecSpec::qaq(4)};
        for (const auto& spec : specs) {
            for (const auto& chunk : corpus) {
                const auto once = decode_chunk(encode_chunk(spec, chunk));
                const auto twice = decode_chunk(encode_matrices(spec, once.keys, once.values));
                REQUIRE(once.keys == twice.keys);
                REQUIRE(once.values == twice.values);
            }
        }
    }
}

TEST_CASE("PRQ beats RTN at equal base bits on the fixed corpus") {
    const auto corpus = fixed_corpus();
    const double prq4 = corpus_mse(CodecSpec::prq(4, 4), corpus);
    const double rtn4 = corpus_mse(CodecSpec::rtn(4), corpus);
    CHECK(prq4 < rtn4);
    const double prq2 = corpus_mse(CodecSpec::prq(2, 4), corpus);
    const double rtn2 = corpus_mse(CodecSpec::rtn(2), corpus);
    CHECK(prq2 <= rtn2);
}

TEST_CASE("MSE is monotone in bit width for every family") {
    const auto corpus = fixed_corpus();
    struct FamilyPair {
        CodecSpec two, four;
    };
    const std::vector<FamilyPair> families = {
        {CodecSpec::rtn(2), CodecSpec::rtn(4)},
        {CodecSpec::kivi(2), CodecSpec::kivi(4)},
        {CodecSpec::quarot(2), CodecSpec::quarot(4)},
        {CodecSpec::prq(2, 4), CodecSpec::prq(4, 4)},
        {CodecSpec::qaq(2), CodecSpec::qaq(4)},
    };
    for (const auto& f : families) {
        const double m2 = corpus_mse(f.two, corpus);
        const double m4 = corpus_mse(f.four, corpus);
        CHECK(m2 > m4);
        CHECK(m4 > 0.0);
    }
    CHECK(corpus_mse(CodecSpec::bf16(), corpus) == 0.0);
}

TEST_CASE("rotation and outlier records beat plain RTN on the outlier corpus") {
    const auto corpus = fixed_corpus(Distribution::OutlierInjected, 0.01, 50.0);
    const double rtn = corpus_mse(CodecSpec::rtn(4), corpus);
    CHECK(corpus_mse(CodecSpec::quarot(4), corpus) < rtn);
    CHECK(corpus_mse(CodecSpec::qaq(4), corpus) < rtn);
}

TEST_CASE("QUAROT decode preserves the chunk norm within five percent") {
    const auto corpus = fixed_corpus();
    for (const auto& chunk : corpus) {
        const auto dec = decode_chunk(encode_chunk(CodecSpec::quarot(4), chunk));
        double src = 0.0, out = 0.0;
        for (float x : chunk.keys.values()) src += static_cast<double>(x) * x;
        for (float x : chunk.values.values()) src += static_cast<double>(x) * x;
        for (float x : dec.keys.values()) out += static_cast<double>(x) * x;
        for (float x : dec.values.values()) out += static_cast<double>(x) * x;
        CHECK(std::abs(std::sqrt(out) - std::sqrt(src)) <= 0.05 * std::sqrt(src));
    }
}

TEST_CASE("nominal compression ratios match the published table") {
    CHECK(nominal_compression_ratio(CodecSpec::rtn(4), 125, 64) == Catch::Approx(3.20).margin(1e-9));
    CHECK(nominal_compression_ratio(CodecSpec::rtn(2), 125, 64) ==
          Catch::Approx(16.0 / 3.0).margin(1e-9));
    CHECK(nominal_compression_ratio(CodecSpec::prq(4, 4), 125, 64) ==
          Catch::Approx(1.60).margin(1e-9));
    CHECK(nominal_compression_ratio(CodecSpec::prq(2, 4), 125, 64) ==
          Catch::Approx(2.00).margin(1e-9));
    // KIVI pays for token-axis tail blocks on the key side
    CHECK(nominal_compression_ratio(CodecSpec::kivi(2), 125, 64) ==
          Catch::Approx(5.31).margin(0.005));
    CHECK(nominal_compression_ratio(CodecSpec::kivi(4), 125, 64) ==
          Catch::Approx(3.19).margin(0.005));
    // the per-chunk rotation descriptor amortizes below 0.1% of payload
    const double q4 = nominal_compression_ratio(CodecSpec::quarot(4), 125, 64);
    const double r4 = nominal_compression_ratio(CodecSpec::rtn(4), 125, 64);
    CHECK(std::abs(q4 - r4) <= 0.001 * r4);
    CHECK(q4 == Catch::Approx(3.20).margin(0.01));
    const double q2 = nominal_compression_ratio(CodecSpec::quarot(2), 125, 64);
    CHECK(q2 == Catch::Approx(5.33).margin(0.01));
}

TEST_CASE("nominal ratio equals the measured ratio on divisible shapes") {
    CorpusSpec cs;
    cs.seed = 5;
    cs.num_layers = 1;
    cs.num_chunks = 1;
    cs.tokens_per_chunk = 128;
    cs.channels = 64;
    const auto corpus = generate_corpus(cs);
    for (const auto& spec : {CodecSpec::rtn(2), CodecSpec::rtn(4), CodecSpec::kivi(4),
                             CodecSpec::quarot(4), CodecSpec::prq(4, 4), CodecSpec::qaq(4)}) {
        const auto packed = encode_chunk(spec, corpus[0]);
        const double measured = static_cast<double>(packed.bf16_equivalent_bytes()) /
                                static_cast<double>(packed.stored_bytes());
        CHECK(measured ==
              Catch::Approx(nominal_compression_ratio(spec, 128, 64)).epsilon(1e-12));
    }
}

TEST_CASE("codec spec invariants are enforced") {
    CodecSpec bad = CodecSpec::bf16();
    bad.key_bits = 4;
    CHECK_THROWS_AS(bad.validate(), error);

    CodecSpec kivi = CodecSpec::kivi(4);
    kivi.key_axis = Axis::PerTokenRow;
    CHECK_THROWS_AS(kivi.validate(), error);

    CodecSpec prq = CodecSpec::prq(4, 4);
    prq.residual_bits = 0;
    CHECK_THROWS_AS(prq.validate(), error);

    CodecSpec odd = CodecSpec::rtn(4);
    odd.key_bits = 3;
    CHECK_THROWS_AS(odd.validate(), error);
}

TEST_CASE("quant error invariant: zero mse iff exact reconstruction") {
    Matrix a(2, 4, 1.0f), b(2, 4, 1.0f);
    CHECK(measure_error(a, b).mse == 0.0);
    b.at(1, 3) = 1.25f;
    const auto err = measure_error(a, b);
    CHECK(err.mse > 0.0);
    CHECK(err.max_abs == 0.25);
}
