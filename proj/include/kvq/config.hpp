// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "kvq/common.hpp"
#include "kvq/corpus.hpp"
#include "kvq/presets.hpp"
#include "kvq/rollout.hpp"

namespace kvq {

using json = nlohmann::json;

// ---- JSON bindings ---------------------------------------------------------

inline json to_json(const CodecSpec& s) {
    json j;
    j["family"] = to_string(s.family);
    j["key_bits"] = s.key_bits;
    j["value_bits"] = s.value_bits;
    j["block_size"] = s.block_size;
    j["metadata_bits_per_block"] = s.metadata_bits_per_block;
    j["residual_bits"] = s.residual_bits;
    j["outlier_fraction"] = s.outlier_fraction;
    j["outlier_record_bits"] = s.outlier_record_bits;
    j["key_axis"] = to_string(s.key_axis);
    j["value_axis"] = to_string(s.value_axis);
    j["outlier_records"] = s.outlier_records;
    return j;
}

inline CodecSpec codec_from_json(const json& j) {
    CodecSpec s;
    s.family = codec_family_from_string(j.at("family").get<std::string>());
    s.key_bits = j.value("key_bits", 16u);
    s.value_bits = j.value("value_bits", 16u);
    s.block_size = j.value("block_size", std::size_t{32});
    s.metadata_bits_per_block = j.value("metadata_bits_per_block", 32u);
    s.residual_bits = j.value("residual_bits", 4u);
    s.outlier_fraction = j.value("outlier_fraction", 0.003);
    s.outlier_record_bits = j.value("outlier_record_bits", 32u);
    s.key_axis = axis_from_string(j.value("key_axis", std::string("per_token_row")));
    s.value_axis = axis_from_string(j.value("value_axis", std::string("per_token_row")));
    s.outlier_records = j.value("outlier_records", false);
    s.validate();
    return s;
}

inline json to_json(const PolicySpec& p) {
    json j;
    j["kind"] = to_string(p.kind);
    j["base_codec"] = to_json(p.base_codec);
    j["window_chunks"] = p.window_chunks;
    j["refresh_interval_steps"] = p.refresh_interval_steps;
    if (!p.tier_boundaries.empty()) {
        j["tier_boundaries"] = p.tier_boundaries;
        json tiers = json::array();
        for (const auto& c : p.tier_codecs) tiers.push_back(to_json(c));
        j["tier_codecs"] = tiers;
    }
    j["keep_fraction"] = p.keep_fraction;
    j["summary_tokens"] = p.summary_tokens;
    if (p.kind == PolicyKind::SPATIAL_MIXED) {
        j["fg_codec"] = to_json(p.fg_codec);
        j["bg_codec"] = to_json(p.bg_codec);
        j["motion_threshold"] = p.motion_threshold;
    }
    j["importance_decay"] = p.importance_decay;
    if (p.kind == PolicyKind::FC_HYBRID || p.kind == PolicyKind::FC_ADAPTIVE) {
        j["high_codec"] = to_json(p.high_codec);
        j["base_window"] = p.base_window;
        j["sensitive_window"] = p.sensitive_window;
        j["drift_bonus_chunks"] = p.drift_bonus_chunks;
        j["drift_threshold_rel"] = p.drift_threshold_rel;
    }
    j["native_reuse"] = p.native_reuse;
    return j;
}

inline PolicySpec policy_from_json(const json& j) {
    PolicySpec p;
    p.kind = policy_kind_from_string(j.at("kind").get<std::string>());
    p.base_codec = codec_from_json(j.at("base_codec"));
    p.window_chunks = j.value("window_chunks", std::size_t{2});
    p.refresh_interval_steps = j.value("refresh_interval_steps", std::size_t{7});
    if (j.contains("tier_boundaries")) {
        p.tier_boundaries = j.at("tier_boundaries").get<std::vector<std::size_t>>();
        for (const auto& c : j.at("tier_codecs")) p.tier_codecs.push_back(codec_from_json(c));
    }
    p.keep_fraction = j.value("keep_fraction", 0.58);
    p.summary_tokens = j.value("summary_tokens", std::size_t{1});
    if (j.contains("fg_codec")) p.fg_codec = codec_from_json(j.at("fg_codec"));
    if (j.contains("bg_codec")) p.bg_codec = codec_from_json(j.at("bg_codec"));
    p.motion_threshold = j.value("motion_threshold", 0.0);
    p.importance_decay = j.value("importance_decay", 0.9);
    if (j.contains("high_codec")) p.high_codec = codec_from_json(j.at("high_codec"));
    p.base_window = j.value("base_window", std::size_t{2});
    p.sensitive_window = j.value("sensitive_window", std::size_t{5});
    p.drift_bonus_chunks = j.value("drift_bonus_chunks", std::size_t{7});
    p.drift_threshold_rel = j.value("drift_threshold_rel", 0.999);
    p.native_reuse = j.value("native_reuse", false);
    p.validate();
    return p;
}

inline json to_json(const MethodPreset& p) {
    json j;
    j["name"] = p.name;
    j["policy"] = to_json(p.policy);
    j["read_granularity"] = to_string(p.read_granularity);
    if (!std::isnan(p.target_ratio)) {
        j["target_ratio"] = p.target_ratio;
        j["ratio_tolerance"] = p.ratio_tolerance;
    }
    return j;
}

inline MethodPreset preset_from_json(const json& j) {
    MethodPreset p;
    p.name = j.at("name").get<std::string>();
    p.policy = policy_from_json(j.at("policy"));
    p.read_granularity =
        read_granularity_from_string(j.value("read_granularity", std::string("per_layer")));
    p.target_ratio = j.value("target_ratio", std::numeric_limits<double>::quiet_NaN());
    p.ratio_tolerance = j.value("ratio_tolerance", 0.0);
    return p;
}

inline json to_json(const CorpusSpec& c) {
    json j;
    j["seed"] = c.seed;
    j["num_layers"] = c.num_layers;
    j["num_chunks"] = c.num_chunks;
    j["tokens_per_chunk"] = c.tokens_per_chunk;
    j["channels"] = c.channels;
    j["distribution"] = to_string(c.distribution);
    j["outlier_fraction"] = c.outlier_fraction;
    j["outlier_scale"] = c.outlier_scale;
    return j;
}

inline CorpusSpec corpus_from_json(const json& j) {
    CorpusSpec c;
    c.seed = j.value("seed", std::uint64_t{7});
    c.num_layers = j.value("num_layers", std::size_t{4});
    c.num_chunks = j.value("num_chunks", std::size_t{14});
    c.tokens_per_chunk = j.value("tokens_per_chunk", std::size_t{125});
    c.channels = j.value("channels", std::size_t{64});
    c.distribution = distribution_from_string(j.value("distribution", std::string("gaussian")));
    c.outlier_fraction = j.value("outlier_fraction", 0.0);
    c.outlier_scale = j.value("outlier_scale", 1.0);
    c.validate();
    return c;
}

// ---- Benchmark configuration ------------------------------------------------

/// Memory-model calibration. GiB values are scaled onto the synthetic corpus
/// through the BF16-equivalent target; raw byte fields override when set.
struct Calibration {
    double base_footprint_gib = 8.03;
    double bf16_equiv_gib_target = 11.25;
    std::uint64_t base_footprint_bytes = 0;     // desk bytes; 0 = derive from GiB
    std::uint64_t bf16_equiv_bytes_target = 0;  // bytes; 0 = derive from GiB
    std::size_t steps = 14;
    double feedback_gain = 0.05;
    double noise_sigma = 0.02;
    std::vector<std::pair<std::string, ReadGranularity>> granularity_overrides;
};

struct BenchConfig {
    CorpusSpec corpus;
    std::vector<std::string> methods;  // empty = all shipped presets
    std::vector<std::uint64_t> seeds = {7};
    Calibration calibration;
    std::string output_dir;

    void validate() const {
        corpus.validate();
        KVQ_REQUIRE(!seeds.empty(), "BenchConfig: at least one seed");
        for (const auto& m : methods) {
            find_preset(m);  // throws on unknown preset
        }
        KVQ_REQUIRE(calibration.steps > 0 && calibration.steps <= corpus.num_chunks,
                    "BenchConfig: steps must fit the corpus");
    }

    std::vector<std::string> method_list() const {
        if (!methods.empty()) return methods;
        std::vector<std::string> all;
        for (const auto& p : all_presets()) all.push_back(p.name);
        return all;
    }
};

inline json to_json(const BenchConfig& c) {
    json j;
    j["corpus"] = to_json(c.corpus);
    j["methods"] = c.methods;
    j["seeds"] = c.seeds;
    json cal;
    cal["base_footprint_gib"] = c.calibration.base_footprint_gib;
    cal["bf16_equiv_gib_target"] = c.calibration.bf16_equiv_gib_target;
    if (c.calibration.base_footprint_bytes) {
        cal["base_footprint_bytes"] = c.calibration.base_footprint_bytes;
    }
    if (c.calibration.bf16_equiv_bytes_target) {
        cal["bf16_equiv_bytes_target"] = c.calibration.bf16_equiv_bytes_target;
    }
    cal["steps"] = c.calibration.steps;
    cal["feedback_gain"] = c.calibration.feedback_gain;
    cal["noise_sigma"] = c.calibration.noise_sigma;
    if (!c.calibration.granularity_overrides.empty()) {
        json ov = json::object();
        for (const auto& [k, g] : c.calibration.granularity_overrides) {
            ov[k] = to_string(g);
        }
        cal["read_granularity_overrides"] = ov;
    }
    j["calibration"] = cal;
    j["output_dir"] = c.output_dir;
    return j;
}

inline BenchConfig bench_config_from_json(const json& j) {
    BenchConfig c;
    if (j.contains("corpus")) c.corpus = corpus_from_json(j.at("corpus"));
    if (j.contains("methods")) c.methods = j.at("methods").get<std::vector<std::string>>();
    if (j.contains("seeds")) c.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    if (j.contains("calibration")) {
        const json& cal = j.at("calibration");
        c.calibration.base_footprint_gib = cal.value("base_footprint_gib", 8.03);
        c.calibration.bf16_equiv_gib_target = cal.value("bf16_equiv_gib_target", 11.25);
        c.calibration.base_footprint_bytes = cal.value("base_footprint_bytes", std::uint64_t{0});
        c.calibration.bf16_equiv_bytes_target =
            cal.value("bf16_equiv_bytes_target", std::uint64_t{0});
        c.calibration.steps = cal.value("steps", std::size_t{14});
        c.calibration.feedback_gain = cal.value("feedback_gain", 0.05);
        c.calibration.noise_sigma = cal.value("noise_sigma", 0.02);
        if (cal.contains("read_granularity_overrides")) {
            for (const auto& [k, v] : cal.at("read_granularity_overrides").items()) {
                c.calibration.granularity_overrides.emplace_back(
                    k, read_granularity_from_string(v.get<std::string>()));
            }
        }
    }
    c.output_dir = j.value("output_dir", std::string());
    c.validate();
    return c;
}

inline BenchConfig load_bench_config(const std::string& path) {
    std::ifstream f(path);
    KVQ_REQUIRE(f.good(), "cannot open config file: " + path);
    json j = json::parse(f);
    return bench_config_from_json(j);
}

/// FNV-1a over the canonical JSON dump; stamped on every output file so
/// mixed-calibration comparisons are detectable.
inline std::string config_hash(const BenchConfig& c) {
    const std::string canon = to_json(c).dump();
    std::uint64_t h = 0xCBF29CE484222325ull;
    for (unsigned char ch : canon) {
        h ^= ch;
        h *= 0x100000001B3ull;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

/// Desk-scale BF16 bytes of the full simulated cache under this config.
inline std::uint64_t desk_bf16_final_bytes(const BenchConfig& c) {
    return static_cast<std::uint64_t>(c.calibration.steps) * c.corpus.num_layers *
           c.corpus.tokens_per_chunk * c.corpus.channels * 2 * 2;
}

/// Build the per-method rollout config, applying calibration scaling and
/// granularity overrides.
inline RolloutConfig make_rollout_config(const BenchConfig& c, const MethodPreset& preset,
                                         std::uint64_t seed) {
    RolloutConfig rc;
    rc.corpus = c.corpus;
    rc.corpus.seed = seed;
    rc.policy = preset.policy;
    rc.steps = c.calibration.steps;
    rc.read_granularity = preset.read_granularity;
    for (const auto& [name, g] : c.calibration.granularity_overrides) {
        if (name == preset.name) rc.read_granularity = g;
    }
    const std::uint64_t bf16_final = desk_bf16_final_bytes(c);
    rc.bf16_equiv_bytes_target =
        c.calibration.bf16_equiv_bytes_target
            ? c.calibration.bf16_equiv_bytes_target
            : static_cast<std::uint64_t>(
                  std::llround(c.calibration.bf16_equiv_gib_target * 1024.0 * 1024.0 * 1024.0));
    rc.base_footprint_bytes =
        c.calibration.base_footprint_bytes
            ? c.calibration.base_footprint_bytes
            : static_cast<std::uint64_t>(std::llround(
                  c.calibration.base_footprint_gib / c.calibration.bf16_equiv_gib_target *
                  static_cast<double>(bf16_final)));
    rc.feedback_gain = c.calibration.feedback_gain;
    rc.noise_sigma = c.calibration.noise_sigma;
    rc.method_id = preset.name;
    return rc;
}

}  // namespace kvq
