// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "kvq/codec.hpp"
#include "kvq/common.hpp"
#include "kvq/corpus.hpp"

namespace kvq {

enum class PolicyKind {
    NONE,
    RECENT_WINDOW,
    REFRESH,
    AGE_TIER,
    TPTQ,
    FC_PRUNE,
    FC_SOFT_PRUNE,
    FC_HYBRID,
    FC_ADAPTIVE,
    FC_NATIVE,
    FC_NATIVE_SOFT_PRUNE,
    SPATIAL_MIXED
};

inline std::string to_string(PolicyKind k) {
    switch (k) {
        case PolicyKind::NONE: return "NONE";
        case PolicyKind::RECENT_WINDOW: return "RECENT_WINDOW";
        case PolicyKind::REFRESH: return "REFRESH";
        case PolicyKind::AGE_TIER: return "AGE_TIER";
        case PolicyKind::TPTQ: return "TPTQ";
        case PolicyKind::FC_PRUNE: return "FC_PRUNE";
        case PolicyKind::FC_SOFT_PRUNE: return "FC_SOFT_PRUNE";
        case PolicyKind::FC_HYBRID: return "FC_HYBRID";
        case PolicyKind::FC_ADAPTIVE: return "FC_ADAPTIVE";
        case PolicyKind::FC_NATIVE: return "FC_NATIVE";
        case PolicyKind::FC_NATIVE_SOFT_PRUNE: return "FC_NATIVE_SOFT_PRUNE";
        case PolicyKind::SPATIAL_MIXED: return "SPATIAL_MIXED";
    }
    return "?";
}

inline PolicyKind policy_kind_from_string(const std::string& s) {
    for (auto k : {PolicyKind::NONE, PolicyKind::RECENT_WINDOW, PolicyKind::REFRESH,
                   PolicyKind::AGE_TIER, PolicyKind::TPTQ, PolicyKind::FC_PRUNE,
                   PolicyKind::FC_SOFT_PRUNE, PolicyKind::FC_HYBRID, PolicyKind::FC_ADAPTIVE,
                   PolicyKind::FC_NATIVE, PolicyKind::FC_NATIVE_SOFT_PRUNE,
                   PolicyKind::SPATIAL_MIXED}) {
        if (to_string(k) == s) return k;
    }
    throw error("unknown policy kind: " + s);
}

/// A cache-management policy over a growing chunked cache.
struct PolicySpec {
    PolicyKind kind = PolicyKind::NONE;
    CodecSpec base_codec = CodecSpec::bf16();
    std::size_t window_chunks = 2;
    std::size_t refresh_interval_steps = 7;
    std::vector<std::size_t> tier_boundaries;  // ascending chunk-age thresholds
    std::vector<CodecSpec> tier_codecs;        // boundaries.size() + 1 entries
    double keep_fraction = 0.58;
    std::size_t summary_tokens = 1;
    CodecSpec fg_codec = CodecSpec::bf16();
    CodecSpec bg_codec = CodecSpec::bf16();
    double motion_threshold = 0.0;
    double importance_decay = 0.9;
    // Hybrid/adaptive budget profile. The high-precision window is wider on
    // the designated sensitive layers (first and last); a drift-flagged
    // layer's window is extended by drift_bonus_chunks.
    CodecSpec high_codec = CodecSpec::rtn(4);
    std::size_t base_window = 2;
    std::size_t sensitive_window = 5;
    std::size_t drift_bonus_chunks = 7;
    double drift_threshold_rel = 0.999;  // relative to the max layer signal
    bool native_reuse = false;

    void validate() const {
        KVQ_REQUIRE(keep_fraction > 0.0 && keep_fraction <= 1.0,
                    "PolicySpec: keep_fraction must be in (0,1]");
        KVQ_REQUIRE(refresh_interval_steps > 0, "PolicySpec: refresh interval must be positive");
        for (std::size_t i = 1; i < tier_boundaries.size(); ++i) {
            KVQ_REQUIRE(tier_boundaries[i - 1] < tier_boundaries[i],
                        "PolicySpec: tier boundaries must be strictly ascending");
        }
        if (kind == PolicyKind::AGE_TIER || kind == PolicyKind::TPTQ) {
            KVQ_REQUIRE(tier_codecs.size() == tier_boundaries.size() + 1,
                        "PolicySpec: need one codec per tier");
        }
        base_codec.validate();
    }

    bool prunes() const {
        return kind == PolicyKind::FC_PRUNE || kind == PolicyKind::FC_SOFT_PRUNE ||
               kind == PolicyKind::FC_NATIVE_SOFT_PRUNE;
    }
    bool soft_prunes() const {
        return kind == PolicyKind::FC_SOFT_PRUNE || kind == PolicyKind::FC_NATIVE_SOFT_PRUNE;
    }
    bool layer_budgeted() const {
        return kind == PolicyKind::FC_HYBRID || kind == PolicyKind::FC_ADAPTIVE;
    }
    bool refreshes() const { return kind == PolicyKind::REFRESH; }
};

/// One decision per live chunk per step. EVICT and SUMMARIZE are terminal.
struct Decision {
    enum class Kind { KeepBf16, Quantize, Evict, Summarize, Split };
    Kind kind = Kind::KeepBf16;
    CodecSpec codec;
    CodecSpec fg, bg;                                        // Split
    std::vector<bool> mask;                                  // Split: true = foreground
    std::size_t summary_tokens = 1;                          // Summarize
    std::size_t kept_tokens = std::numeric_limits<std::size_t>::max();  // Quantize trim
};

struct ImportanceScore {
    std::size_t chunk_index = 0;
    double score = 0.0;
};

/// score = mean per-token key-vector norm, decayed by chunk age.
inline ImportanceScore compute_importance(const KvChunk& chunk, double decay) {
    KVQ_REQUIRE(decay > 0.0 && decay <= 1.0, "compute_importance: decay must be in (0,1]");
    double acc = 0.0;
    for (std::size_t t = 0; t < chunk.keys.rows(); ++t) {
        double row = 0.0;
        for (std::size_t c = 0; c < chunk.keys.cols(); ++c) {
            row += static_cast<double>(chunk.keys.at(t, c)) * chunk.keys.at(t, c);
        }
        acc += std::sqrt(row);
    }
    const double mean_norm = chunk.keys.rows() ? acc / static_cast<double>(chunk.keys.rows()) : 0.0;
    return {0, mean_norm * std::pow(decay, static_cast<double>(chunk.chunk_age))};
}

/// Per-chunk precision/retention decisions for the non-pruning policy kinds.
/// `ages` lists chunk ages (0 = newest); `step` is the 1-based rollout step.
inline std::vector<Decision> assign_precisions(const PolicySpec& policy,
                                               const std::vector<std::size_t>& ages,
                                               std::size_t step) {
    policy.validate();
    std::vector<Decision> out(ages.size());
    auto quantize = [](const CodecSpec& c) {
        Decision d;
        d.kind = Decision::Kind::Quantize;
        d.codec = c;
        return d;
    };
    switch (policy.kind) {
        case PolicyKind::NONE:
            for (auto& d : out) d = quantize(policy.base_codec);
            break;
        case PolicyKind::RECENT_WINDOW:
            for (std::size_t i = 0; i < ages.size(); ++i) {
                if (ages[i] < policy.window_chunks) {
                    out[i].kind = Decision::Kind::KeepBf16;
                } else {
                    out[i] = quantize(policy.base_codec);
                }
            }
            break;
        case PolicyKind::REFRESH: {
            // Chunks appended since the last refresh stay BF16; a refresh
            // step re-quantizes everything at the base codec.
            const std::size_t since = step % policy.refresh_interval_steps;
            for (std::size_t i = 0; i < ages.size(); ++i) {
                if (since != 0 && ages[i] < since) {
                    out[i].kind = Decision::Kind::KeepBf16;
                } else {
                    out[i] = quantize(policy.base_codec);
                }
            }
            break;
        }
        case PolicyKind::AGE_TIER:
        case PolicyKind::TPTQ:
            for (std::size_t i = 0; i < ages.size(); ++i) {
                const std::size_t tier =
                    std::upper_bound(policy.tier_boundaries.begin(), policy.tier_boundaries.end(),
                                     ages[i]) -
                    policy.tier_boundaries.begin();
                const CodecSpec& c = policy.tier_codecs[tier];
                if (c.family == CodecFamily::BF16) {
                    out[i].kind = Decision::Kind::KeepBf16;
                } else {
                    out[i] = quantize(c);
                }
            }
            break;
        case PolicyKind::SPATIAL_MIXED:
            for (auto& d : out) {
                d.kind = Decision::Kind::Split;
                d.fg = policy.fg_codec;
                d.bg = policy.bg_codec;
            }
            break;
        case PolicyKind::FC_NATIVE:
            for (auto& d : out) d.kind = Decision::Kind::KeepBf16;
            break;
        case PolicyKind::FC_PRUNE:
        case PolicyKind::FC_SOFT_PRUNE:
        case PolicyKind::FC_NATIVE_SOFT_PRUNE:
        case PolicyKind::FC_HYBRID:
        case PolicyKind::FC_ADAPTIVE:
            // Retention is decided by prune_cache / allocate_budgets; the
            // surviving chunks are coded at the base codec by default.
            for (auto& d : out) d = quantize(policy.base_codec);
            break;
    }
    return out;
}

/// Foreground mask for SPATIAL_MIXED: motion above the threshold.
inline std::vector<bool> spatial_split_mask(const PolicySpec& policy, const KvChunk& chunk) {
    std::vector<bool> mask(chunk.motion_score.size());
    for (std::size_t i = 0; i < mask.size(); ++i) {
        mask[i] = chunk.motion_score[i] > policy.motion_threshold;
    }
    return mask;
}

struct ScoredChunk {
    std::size_t index = 0;  // caller-side identifier
    std::size_t age = 0;
    std::size_t tokens = 0;  // currently retained tokens
    double score = 0.0;
};

struct PruneDecision {
    enum class Action { Keep, Trim, Evict, Summarize };
    std::size_t index = 0;
    Action action = Action::Keep;
    std::size_t kept_tokens = 0;
};

/// Retention under a token budget of keep_fraction of everything appended so
/// far. ceil(keep_fraction * N) chunks survive, the lowest-ranked of them
/// only partially; the rest are evicted (hard) or summarized (soft). Ranking
/// is by importance, ties toward newer chunks, and the newest chunk is never
/// evicted.
inline std::vector<PruneDecision> prune_cache(const PolicySpec& policy,
                                              std::vector<ScoredChunk> scored,
                                              std::size_t appended_chunks,
                                              std::size_t tokens_per_chunk) {
    KVQ_REQUIRE(policy.prunes(), "prune_cache: policy kind does not prune");
    KVQ_REQUIRE(policy.keep_fraction > 0.0 && policy.keep_fraction <= 1.0,
                "prune_cache: keep_fraction out of range");
    std::uint64_t budget = static_cast<std::uint64_t>(
        std::llround(policy.keep_fraction * static_cast<double>(appended_chunks) *
                     static_cast<double>(tokens_per_chunk)));

    std::stable_sort(scored.begin(), scored.end(), [](const ScoredChunk& a, const ScoredChunk& b) {
        if (a.age == 0) return true;  // newest-chunk protection
        if (b.age == 0) return false;
        if (a.score != b.score) return a.score > b.score;
        return a.age < b.age;
    });

    std::vector<PruneDecision> out;
    out.reserve(scored.size());
    for (const auto& sc : scored) {
        PruneDecision d;
        d.index = sc.index;
        const std::uint64_t grant = std::min<std::uint64_t>(sc.tokens, budget);
        budget -= grant;
        if (grant == sc.tokens) {
            d.action = PruneDecision::Action::Keep;
            d.kept_tokens = sc.tokens;
        } else if (grant > 0) {
            d.action = PruneDecision::Action::Trim;
            d.kept_tokens = static_cast<std::size_t>(grant);
        } else if (sc.age == 0) {
            d.action = PruneDecision::Action::Keep;  // unreachable guard
            d.kept_tokens = sc.tokens;
        } else {
            d.action = policy.soft_prunes() ? PruneDecision::Action::Summarize
                                            : PruneDecision::Action::Evict;
            d.kept_tokens = 0;
        }
        out.push_back(d);
    }
    return out;
}

/// Per-(layer, chunk) codec budgets for the hybrid/adaptive kinds. The bit
/// budget drops with chunk age; sensitive layers (first and last) keep the
/// high codec for a wider age band; ADAPTIVE additionally widens the band of
/// layers whose drift signal exceeds the relative threshold.
inline std::vector<std::vector<CodecSpec>> allocate_budgets(
    const PolicySpec& policy, std::size_t layers, const std::vector<std::size_t>& ages,
    const std::vector<double>& drift_signal) {
    KVQ_REQUIRE(policy.layer_budgeted(), "allocate_budgets: policy kind has no layer budgets");
    KVQ_REQUIRE(drift_signal.size() == layers, "allocate_budgets: one drift signal per layer");

    double max_signal = 0.0;
    for (double s : drift_signal) max_signal = std::max(max_signal, s);

    std::vector<std::vector<CodecSpec>> out(layers);
    for (std::size_t l = 0; l < layers; ++l) {
        const bool sensitive = (l == 0 || l + 1 == layers);
        std::size_t window = sensitive ? policy.sensitive_window : policy.base_window;
        if (policy.kind == PolicyKind::FC_ADAPTIVE && max_signal > 0.0 &&
            drift_signal[l] >= policy.drift_threshold_rel * max_signal) {
            window += policy.drift_bonus_chunks;
        }
        out[l].reserve(ages.size());
        for (std::size_t age : ages) {
            out[l].push_back(age < window ? policy.high_codec : policy.base_codec);
        }
    }
    return out;
}

}  // namespace kvq
