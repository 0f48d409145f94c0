// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "kvq/codec.hpp"
#include "kvq/common.hpp"
#include "kvq/policy.hpp"
#include "kvq/rollout.hpp"

namespace kvq {

/// One shipped benchmark method: a named policy plus its memory-model
/// calibration and (where the reference tables publish one) the compression
/// ratio it is expected to realize on the default corpus.
struct MethodPreset {
    std::string name;
    PolicySpec policy;
    ReadGranularity read_granularity = ReadGranularity::PerLayer;
    double target_ratio = std::numeric_limits<double>::quiet_NaN();
    double ratio_tolerance = 0.0;  // 0 = informational target only
};

namespace detail {

inline MethodPreset codec_preset(const std::string& name, const CodecSpec& codec,
                                 ReadGranularity g, double target, double tol) {
    MethodPreset p;
    p.name = name;
    p.policy.kind = PolicyKind::NONE;
    p.policy.base_codec = codec;
    p.read_granularity = g;
    p.target_ratio = target;
    p.ratio_tolerance = tol;
    return p;
}

inline MethodPreset spatial_preset(const std::string& name, const CodecSpec& fg,
                                   const CodecSpec& bg, double threshold, double target) {
    MethodPreset p;
    p.name = name;
    p.policy.kind = PolicyKind::SPATIAL_MIXED;
    p.policy.base_codec = bg;
    p.policy.fg_codec = fg;
    p.policy.bg_codec = bg;
    p.policy.motion_threshold = threshold;
    p.read_granularity = ReadGranularity::PerChunk;
    p.target_ratio = target;
    p.ratio_tolerance = 0.0;
    return p;
}

}  // namespace detail

/// The 33 methods of the study. Window sizes, tier boundaries, keep
/// fractions and motion thresholds are calibrated presets targeting the
/// published per-method compression ratios; docs/calibration.md records
/// every choice.
inline const std::vector<MethodPreset>& all_presets() {
    static const std::vector<MethodPreset> presets = [] {
        using detail::codec_preset;
        using detail::spatial_preset;
        std::vector<MethodPreset> v;

        v.push_back(codec_preset("BF16", CodecSpec::bf16(), ReadGranularity::PerLayer, 1.00, 0.02));
        v.push_back(codec_preset("RTN_INT2", CodecSpec::rtn(2), ReadGranularity::PerLayer, 5.33, 0.02));
        v.push_back(codec_preset("RTN_INT4", CodecSpec::rtn(4), ReadGranularity::PerLayer, 3.20, 0.02));
        v.push_back(codec_preset("RTN_K2_V4", CodecSpec::rtn(2, 4), ReadGranularity::PerLayer,
                                 std::numeric_limits<double>::quiet_NaN(), 0.0));

        {
            MethodPreset p;
            p.name = "RTN_INT4_RECENT2";
            p.policy.kind = PolicyKind::RECENT_WINDOW;
            p.policy.base_codec = CodecSpec::rtn(4);
            p.policy.window_chunks = 2;
            p.read_granularity = ReadGranularity::WholeCache;
            p.target_ratio = 2.43;
            p.ratio_tolerance = 0.15;
            v.push_back(p);
        }
        {
            MethodPreset p;
            p.name = "RTN_INT4_REFRESH";
            p.policy.kind = PolicyKind::REFRESH;
            p.policy.base_codec = CodecSpec::rtn(4);
            p.policy.refresh_interval_steps = 7;
            p.read_granularity = ReadGranularity::WholeCache;
            p.target_ratio = 3.20;
            p.ratio_tolerance = 0.02;
            v.push_back(p);
        }

        v.push_back(codec_preset("KIVI_INT2", CodecSpec::kivi(2), ReadGranularity::PerLayer, 5.31, 0.15));
        v.push_back(codec_preset("KIVI_INT4", CodecSpec::kivi(4), ReadGranularity::PerLayer, 3.19, 0.15));
        v.push_back(codec_preset("KIVI_K2_V4", CodecSpec::kivi(2, 4), ReadGranularity::PerLayer,
                                 std::numeric_limits<double>::quiet_NaN(), 0.0));
        {
            MethodPreset p;
            p.name = "KIVI_INT4_REFRESH";
            p.policy.kind = PolicyKind::REFRESH;
            p.policy.base_codec = CodecSpec::kivi(4);
            p.policy.refresh_interval_steps = 7;
            p.read_granularity = ReadGranularity::WholeCache;
            p.target_ratio = 3.19;
            p.ratio_tolerance = 0.15;
            v.push_back(p);
        }

        v.push_back(codec_preset("QUAROT_KV_INT2", CodecSpec::quarot(2), ReadGranularity::WholeCache,
                                 5.33, 0.02));
        v.push_back(codec_preset("QUAROT_KV_INT4", CodecSpec::quarot(4), ReadGranularity::WholeCache,
                                 3.20, 0.02));
        {
            MethodPreset p;
            p.name = "QUAROT_KV_INT4_RECENT2";
            p.policy.kind = PolicyKind::RECENT_WINDOW;
            p.policy.base_codec = CodecSpec::quarot(4);
            p.policy.window_chunks = 2;
            p.read_granularity = ReadGranularity::WholeCache;
            p.target_ratio = 2.43;
            p.ratio_tolerance = 0.15;
            v.push_back(p);
        }
        {
            MethodPreset p;
            p.name = "QUAROT_KV_INT4_REFRESH";
            p.policy.kind = PolicyKind::REFRESH;
            p.policy.base_codec = CodecSpec::quarot(4);
            p.policy.refresh_interval_steps = 7;
            p.read_granularity = ReadGranularity::WholeCache;
            v.push_back(p);
        }

        v.push_back(codec_preset("PRQ_INT2", CodecSpec::prq(2, 4), ReadGranularity::PerLayer, 2.00, 0.02));
        v.push_back(codec_preset("PRQ_INT4", CodecSpec::prq(4, 4), ReadGranularity::PerLayer, 1.60, 0.02));
        v.push_back(codec_preset("QAQ_INT2", CodecSpec::qaq(2), ReadGranularity::PerChunk, 5.18, 0.15));
        v.push_back(codec_preset("QAQ_INT4", CodecSpec::qaq(4), ReadGranularity::PerChunk, 3.14, 0.15));

        {
            MethodPreset p;
            p.name = "AGE_TIER_INT2";
            p.policy.kind = PolicyKind::AGE_TIER;
            p.policy.base_codec = CodecSpec::rtn(2);
            p.policy.tier_boundaries = {4};
            p.policy.tier_codecs = {CodecSpec::rtn(4), CodecSpec::rtn(2)};
            p.read_granularity = ReadGranularity::PerChunk;
            p.target_ratio = 4.41;
            p.ratio_tolerance = 0.15;
            v.push_back(p);
        }
        {
            MethodPreset p;
            p.name = "AGE_TIER_INT4";
            p.policy.kind = PolicyKind::AGE_TIER;
            p.policy.base_codec = CodecSpec::rtn(4);
            CodecSpec fine = CodecSpec::rtn(4);
            fine.block_size = 16;  // finer grid on the newest chunk
            p.policy.tier_boundaries = {1};
            p.policy.tier_codecs = {fine, CodecSpec::rtn(4)};
            p.read_granularity = ReadGranularity::PerChunk;
            p.target_ratio = 3.18;
            p.ratio_tolerance = 0.15;
            v.push_back(p);
        }
        {
            MethodPreset p;
            p.name = "TPTQ_INT2";
            p.policy.kind = PolicyKind::TPTQ;
            p.policy.base_codec = CodecSpec::rtn(2);
            CodecSpec old_zone = CodecSpec::prq(2, 4);
            old_zone.outlier_records = true;  // explicit outlier preservation
            p.policy.tier_boundaries = {2, 11};
            p.policy.tier_codecs = {CodecSpec::bf16(), CodecSpec::rtn(2), old_zone};
            p.read_granularity = ReadGranularity::PerChunk;
            p.target_ratio = 2.72;
            p.ratio_tolerance = 0.15;
            v.push_back(p);
        }

        {
            MethodPreset p;
            p.name = "FLOWCACHE_HYBRID_INT2";
            p.policy.kind = PolicyKind::FC_HYBRID;
            p.policy.base_codec = CodecSpec::rtn(2);
            p.policy.high_codec = CodecSpec::rtn(4);
            p.policy.base_window = 2;
            p.policy.sensitive_window = 5;
            p.read_granularity = ReadGranularity::PerChunk;
            p.target_ratio = 4.61;
            p.ratio_tolerance = 0.15;
            v.push_back(p);
        }
        {
            MethodPreset p;
            p.name = "FLOWCACHE_ADAPTIVE_INT2";
            p.policy.kind = PolicyKind::FC_ADAPTIVE;
            p.policy.base_codec = CodecSpec::rtn(2);
            p.policy.high_codec = CodecSpec::rtn(4);
            p.policy.base_window = 2;
            p.policy.sensitive_window = 5;
            p.policy.drift_bonus_chunks = 7;
            p.read_granularity = ReadGranularity::PerChunk;
            p.target_ratio = 4.27;
            p.ratio_tolerance = 0.15;
            v.push_back(p);
        }
        {
            MethodPreset p;
            p.name = "FLOWCACHE_PRUNE_INT2";
            p.policy.kind = PolicyKind::FC_PRUNE;
            p.policy.base_codec = CodecSpec::rtn(2);
            p.policy.keep_fraction = 0.6855;
            p.read_granularity = ReadGranularity::PerChunk;
            p.target_ratio = 7.78;
            p.ratio_tolerance = 0.15;
            v.push_back(p);
        }
        {
            MethodPreset p;
            p.name = "FLOWCACHE_PRUNE_INT4";
            p.policy.kind = PolicyKind::FC_PRUNE;
            p.policy.base_codec = CodecSpec::rtn(4);
            p.policy.keep_fraction = 0.58;
            p.read_granularity = ReadGranularity::PerChunk;
            p.target_ratio = 5.50;
            p.ratio_tolerance = 0.15;
            v.push_back(p);
        }
        {
            MethodPreset p;
            p.name = "FLOWCACHE_SOFT_PRUNE_INT2";
            p.policy.kind = PolicyKind::FC_SOFT_PRUNE;
            p.policy.base_codec = CodecSpec::rtn(2);
            p.policy.keep_fraction = 0.78;
            p.read_granularity = ReadGranularity::PerChunk;
            p.target_ratio = 6.82;
            p.ratio_tolerance = 0.15;
            v.push_back(p);
        }
        {
            MethodPreset p;
            p.name = "FLOWCACHE_SOFT_PRUNE_INT4";
            p.policy.kind = PolicyKind::FC_SOFT_PRUNE;
            p.policy.base_codec = CodecSpec::rtn(4);
            p.policy.keep_fraction = 0.58;
            p.read_granularity = ReadGranularity::PerChunk;
            p.target_ratio = 5.49;
            p.ratio_tolerance = 0.15;
            v.push_back(p);
        }
        {
            MethodPreset p;
            p.name = "FLOWCACHE_NATIVE";
            p.policy.kind = PolicyKind::FC_NATIVE;
            p.policy.base_codec = CodecSpec::bf16();
            p.policy.native_reuse = true;
            p.read_granularity = ReadGranularity::PerChunk;
            p.target_ratio = 1.00;
            p.ratio_tolerance = 0.02;
            v.push_back(p);
        }
        {
            MethodPreset p;
            p.name = "FLOWCACHE_NATIVE_SOFT_PRUNE_INT4";
            p.policy.kind = PolicyKind::FC_NATIVE_SOFT_PRUNE;
            p.policy.base_codec = CodecSpec::rtn(4);
            p.policy.keep_fraction = 0.58;
            p.policy.native_reuse = true;
            p.read_granularity = ReadGranularity::PerChunk;
            p.target_ratio = 5.49;
            p.ratio_tolerance = 0.15;
            v.push_back(p);
        }

        // Motion thresholds calibrated on the default corpus (see
        // docs/calibration.md): foreground fractions 0.666 / 0.806 / 0.803.
        v.push_back(spatial_preset("SPATIAL_MIXED_FG_RTN_INT4_BG_RTN_INT2", CodecSpec::rtn(4),
                                   CodecSpec::rtn(2), 15.31, 3.68));
        v.push_back(spatial_preset("SPATIAL_MIXED_FG_RTN_INT4_BG_RTN_INT4", CodecSpec::rtn(4),
                                   CodecSpec::rtn(4), 15.31, 3.18));
        v.push_back(spatial_preset("SPATIAL_MIXED_FG_KIVI_INT4_BG_KIVI_INT2", CodecSpec::kivi(4),
                                   CodecSpec::kivi(2), 14.79, 3.45));
        v.push_back(spatial_preset("SPATIAL_MIXED_FG_QUAROT_KV_INT4_BG_RTN_INT2",
                                   CodecSpec::quarot(4), CodecSpec::rtn(2), 14.81, 3.46));
        return v;
    }();
    return presets;
}

inline const MethodPreset& find_preset(const std::string& name) {
    for (const auto& p : all_presets()) {
        if (p.name == name) return p;
    }
    throw error("unknown preset: " + name);
}

}  // namespace kvq
