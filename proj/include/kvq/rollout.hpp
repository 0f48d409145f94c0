// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "kvq/codec.hpp"
#include "kvq/common.hpp"
#include "kvq/corpus.hpp"
#include "kvq/ledger.hpp"
#include "kvq/policy.hpp"
#include "kvq/summary.hpp"

namespace kvq {

enum class ReadGranularity { WholeCache, PerLayer, PerChunk };

inline std::string to_string(ReadGranularity g) {
    switch (g) {
        case ReadGranularity::WholeCache: return "whole_cache";
        case ReadGranularity::PerLayer: return "per_layer";
        case ReadGranularity::PerChunk: return "per_chunk";
    }
    return "?";
}

inline ReadGranularity read_granularity_from_string(const std::string& s) {
    if (s == "whole_cache") return ReadGranularity::WholeCache;
    if (s == "per_layer") return ReadGranularity::PerLayer;
    if (s == "per_chunk") return ReadGranularity::PerChunk;
    throw error("unknown read granularity: " + s);
}

struct RolloutConfig {
    CorpusSpec corpus;
    PolicySpec policy;
    std::size_t steps = 14;
    std::uint64_t base_footprint_bytes = 0;          // desk-scale bytes
    ReadGranularity read_granularity = ReadGranularity::PerLayer;
    std::uint64_t bf16_equiv_bytes_target = 0;       // 0 = report raw bytes
    double feedback_gain = 0.05;
    double noise_sigma = 0.02;
    std::string method_id;

    void validate() const {
        corpus.validate();
        policy.validate();
        KVQ_REQUIRE(steps > 0 && steps <= corpus.num_chunks,
                    "RolloutConfig: steps must be in [1, corpus.num_chunks]");
    }
};

/// Final-state snapshot of one stored chunk, for accounting checks.
struct FinalChunkInfo {
    std::size_t layer = 0;
    std::size_t age = 0;
    std::size_t kept_tokens = 0;
    bool is_summary = false;
    std::uint64_t stored_bytes = 0;
    std::uint64_t bf16_equiv_bytes = 0;
    ByteBreakdown breakdown;
    std::string codec_id;
};

namespace detail {

struct RunTrace {
    std::uint64_t corpus_seed = 0;
    std::vector<std::vector<double>> surrogate;     // per step, dim = channels
    std::vector<std::vector<double>> layer_means;   // per step, layers * channels
};

}  // namespace detail

struct RolloutResult {
    MemoryLedger ledger;
    DriftTrace drift;
    MethodSummary summary;
    std::vector<FinalChunkInfo> final_cache;
    std::vector<std::size_t> evicted_ages_by_step;  // cumulative evicted count per step
    detail::RunTrace trace;
};

namespace detail {

inline std::uint64_t codec_work_units(const CodecSpec& spec, std::size_t tokens,
                                      std::size_t channels) {
    const std::uint64_t n = static_cast<std::uint64_t>(tokens) * channels * 2;
    switch (spec.family) {
        case CodecFamily::BF16: return 0;
        case CodecFamily::RTN:
        case CodecFamily::KIVI: return n;
        case CodecFamily::QUAROT: return n + n * std::countr_zero(channels);
        case CodecFamily::PRQ: return 2 * n + (spec.has_outlier_stage() ? n : 0);
        case CodecFamily::QAQ: return 2 * n;
    }
    return n;
}

struct CacheEntry {
    std::size_t layer = 0;
    std::size_t age = 0;
    Matrix src_keys, src_values;  // content as appended; rows shrink on trims
    std::vector<float> motion;
    bool live = true;
    bool split = false;
    PackedChunk pack, fg_pack, bg_pack;
    std::vector<std::uint8_t> mask_bytes;
    Matrix dec_keys, dec_values;
    std::string codec_tag;  // identity of the current encoding decision

    std::size_t tokens() const { return src_keys.rows(); }
    std::size_t channels() const { return src_keys.cols(); }
    std::uint64_t bf16_equiv() const {
        return static_cast<std::uint64_t>(tokens()) * channels() * 2 * 2;
    }
    bool stored_bf16() const { return !split && pack.spec.family == CodecFamily::BF16; }
    std::uint64_t stored_bytes() const {
        if (split) {
            return fg_pack.stored_bytes() + bg_pack.stored_bytes() + mask_bytes.size();
        }
        return pack.stored_bytes();
    }
};

struct SummaryEntry {
    std::size_t layer = 0;
    PackedChunk pack;
    Matrix dec_keys, dec_values;
};

/// Fixed random linear map for the drift surrogate: scale-preserving by the
/// 1/sqrt(dim) normalization, deterministic across runs.
inline std::vector<double> surrogate_map(std::size_t dim) {
    std::vector<double> map(dim * dim);
    GaussianSource src(stream_seed(0x5EEDFACEull, dim, 0, 0));
    const double norm = 1.0 / std::sqrt(static_cast<double>(dim));
    for (auto& x : map) {
        x = src.gaussian() * norm;
    }
    return map;
}

inline std::vector<double> step_noise(std::uint64_t corpus_seed, std::size_t step, std::size_t dim,
                                      double sigma) {
    std::vector<double> out(dim);
    GaussianSource src(stream_seed(corpus_seed, 0xD21F7ull, step, 1));
    for (auto& x : out) {
        x = src.gaussian() * sigma;
    }
    return out;
}

class RolloutEngine {
public:
    RolloutEngine(const RolloutConfig& config, const RunTrace* reference)
        : cfg_(config), ref_(reference) {
        cfg_.validate();
        if (ref_ != nullptr) {
            KVQ_REQUIRE(ref_->corpus_seed == cfg_.corpus.seed, "drift reference: seed mismatch");
            KVQ_REQUIRE(ref_->surrogate.size() >= cfg_.steps,
                        "drift reference: rollout shorter than config");
        }
        corpus_ = generate_corpus(cfg_.corpus);
        map_ = surrogate_map(cfg_.corpus.channels);
    }

    RolloutResult run() {
        RolloutResult res;
        res.ledger.base_footprint_bytes = cfg_.base_footprint_bytes;
        res.trace.corpus_seed = cfg_.corpus.seed;
        const std::size_t layers = cfg_.corpus.num_layers;
        const std::size_t dim = cfg_.corpus.channels;
        prev_h_.assign(dim, 0.0);

        for (std::size_t step = 1; step <= cfg_.steps; ++step) {
            for (auto& e : entries_) {
                if (e.live) ++e.age;
            }

            // -- append ---------------------------------------------------
            const std::uint64_t persistent_before = stored_total();
            std::uint64_t incoming = 0;
            for (std::size_t l = 0; l < layers; ++l) {
                CacheEntry e = make_entry(step, l);
                incoming += e.bf16_equiv();
                entries_.push_back(std::move(e));
            }
            res.ledger.events.push_back({step, Phase::Append, persistent_before, incoming});

            // -- retention ------------------------------------------------
            if (cfg_.policy.prunes()) {
                apply_prune(step);
                res.ledger.events.push_back({step, Phase::Prune, stored_total(), 0});
            }

            // -- precision assignment ------------------------------------
            if (cfg_.policy.refreshes() && step % cfg_.policy.refresh_interval_steps == 0) {
                const std::uint64_t before = stored_total();
                const std::uint64_t transient = refresh_all();
                res.ledger.events.push_back({step, Phase::Refresh, before, transient});
            } else if (cfg_.policy.layer_budgeted()) {
                apply_budgets(step);
            } else {
                apply_assignments(step);
            }

            // -- attention read -------------------------------------------
            const std::uint64_t persistent_now = stored_total();
            res.ledger.events.push_back(
                {step, Phase::AttentionRead, persistent_now, read_transient()});
            if (!cfg_.policy.native_reuse) {
                for (const auto& e : entries_) {
                    if (e.live && !e.stored_bf16()) {
                        work_ += entry_decode_work(e);
                    }
                }
                for (const auto& s : summaries_) {
                    work_ += codec_work_units(s.pack.spec, s.pack.tokens, s.pack.channels);
                }
            }

            // -- drift surrogate ------------------------------------------
            update_surrogate(step, res.trace);
            double dev = 0.0;
            if (ref_ != nullptr) {
                const auto& h = res.trace.surrogate.back();
                const auto& hr = ref_->surrogate[step - 1];
                for (std::size_t i = 0; i < dim; ++i) {
                    const double d = h[i] - hr[i];
                    dev += d * d;
                }
                dev = std::sqrt(dev);
            }
            res.drift.deviation.push_back(dev);

            res.ledger.bf16_equiv_bytes.push_back(static_cast<std::uint64_t>(step) * layers *
                                                  chunk_bf16_bytes());
            res.ledger.compressed_bytes.push_back(stored_total());
            res.evicted_ages_by_step.push_back(evicted_count_);
        }

        res.drift.terminal_drift = res.drift.deviation.empty() ? 0.0 : res.drift.deviation.back();
        finalize(res);
        return res;
    }

private:
    std::uint64_t chunk_bf16_bytes() const {
        return static_cast<std::uint64_t>(cfg_.corpus.tokens_per_chunk) * cfg_.corpus.channels * 2 *
               2;
    }

    CacheEntry make_entry(std::size_t step, std::size_t layer) {
        const KvChunk& src = corpus_[(step - 1) * cfg_.corpus.num_layers + layer];
        CacheEntry e;
        e.layer = layer;
        e.age = 0;
        e.src_keys = src.keys;
        e.src_values = src.values;
        e.motion = src.motion_score;
        if (cfg_.feedback_gain != 0.0) {
            // Self-forcing feedback: the surrogate state of the previous step
            // perturbs the new chunk, so quantization error compounds.
            for (std::size_t t = 0; t < e.src_keys.rows(); ++t) {
                for (std::size_t c = 0; c < e.src_keys.cols(); ++c) {
                    const float bump = static_cast<float>(cfg_.feedback_gain * prev_h_[c]);
                    e.src_keys.at(t, c) = bf16_truncate(e.src_keys.at(t, c) + bump);
                    e.src_values.at(t, c) = bf16_truncate(e.src_values.at(t, c) + bump);
                }
            }
        }
        store(e, CodecSpec::bf16(), "bf16");
        return e;
    }

    void store(CacheEntry& e, const CodecSpec& codec, const std::string& tag) {
        e.split = false;
        e.pack = encode_matrices(codec, e.src_keys, e.src_values);
        work_ += codec_work_units(codec, e.tokens(), e.channels());
        const KvPair dec = decode_chunk(e.pack);
        e.dec_keys = dec.keys;
        e.dec_values = dec.values;
        e.codec_tag = tag;
    }

    void restore_from_decoded(CacheEntry& e, const CodecSpec& codec, const std::string& tag) {
        // Re-encoding reads the chunk's current decoded state; once a chunk
        // has been quantized the pristine values are gone.
        e.split = false;
        e.pack = encode_matrices(codec, e.dec_keys, e.dec_values);
        work_ += codec_work_units(codec, e.tokens(), e.channels());
        const KvPair dec = decode_chunk(e.pack);
        e.dec_keys = dec.keys;
        e.dec_values = dec.values;
        e.codec_tag = tag;
    }

    void store_split(CacheEntry& e, const CodecSpec& fg, const CodecSpec& bg,
                     const std::vector<bool>& mask, const std::string& tag) {
        std::size_t n_fg = 0;
        for (bool b : mask) n_fg += b ? 1 : 0;
        const std::size_t n_bg = mask.size() - n_fg;
        const std::size_t cols = e.channels();
        Matrix fk(std::max<std::size_t>(n_fg, 1), cols), fv(std::max<std::size_t>(n_fg, 1), cols);
        Matrix bk(std::max<std::size_t>(n_bg, 1), cols), bv(std::max<std::size_t>(n_bg, 1), cols);
        std::size_t fi = 0, bi = 0;
        for (std::size_t t = 0; t < mask.size(); ++t) {
            Matrix& dk = mask[t] ? fk : bk;
            Matrix& dv = mask[t] ? fv : bv;
            std::size_t& idx = mask[t] ? fi : bi;
            for (std::size_t c = 0; c < cols; ++c) {
                dk.at(idx, c) = e.dec_keys.at(t, c);
                dv.at(idx, c) = e.dec_values.at(t, c);
            }
            ++idx;
        }
        e.split = true;
        e.mask_bytes.assign((mask.size() + 7) / 8, 0);
        for (std::size_t t = 0; t < mask.size(); ++t) {
            if (mask[t]) e.mask_bytes[t / 8] |= static_cast<std::uint8_t>(1u << (t % 8));
        }
        if (n_fg > 0) {
            e.fg_pack = encode_matrices(fg, fk, fv);
            work_ += codec_work_units(fg, n_fg, cols);
        } else {
            e.fg_pack = PackedChunk{};
        }
        if (n_bg > 0) {
            e.bg_pack = encode_matrices(bg, bk, bv);
            work_ += codec_work_units(bg, n_bg, cols);
        } else {
            e.bg_pack = PackedChunk{};
        }
        // decoded view: reassemble
        KvPair fdec, bdec;
        if (n_fg > 0) fdec = decode_chunk(e.fg_pack);
        if (n_bg > 0) bdec = decode_chunk(e.bg_pack);
        fi = bi = 0;
        for (std::size_t t = 0; t < mask.size(); ++t) {
            const KvPair& src = mask[t] ? fdec : bdec;
            std::size_t& idx = mask[t] ? fi : bi;
            for (std::size_t c = 0; c < cols; ++c) {
                e.dec_keys.at(t, c) = src.keys.at(idx, c);
                e.dec_values.at(t, c) = src.values.at(idx, c);
            }
            ++idx;
        }
        e.codec_tag = tag;
    }

    std::uint64_t entry_decode_work(const CacheEntry& e) const {
        if (!e.split) {
            return codec_work_units(e.pack.spec, e.tokens(), e.channels());
        }
        std::uint64_t w = 0;
        if (e.fg_pack.tokens > 0) w += codec_work_units(e.fg_pack.spec, e.fg_pack.tokens, e.channels());
        if (e.bg_pack.tokens > 0) w += codec_work_units(e.bg_pack.spec, e.bg_pack.tokens, e.channels());
        return w;
    }

    std::uint64_t stored_total() const {
        std::uint64_t total = 0;
        for (const auto& e : entries_) {
            if (e.live) total += e.stored_bytes();
        }
        for (const auto& s : summaries_) {
            total += s.pack.stored_bytes();
        }
        return total;
    }

    std::uint64_t read_transient() const {
        // BF16 materialization cost of reading the compressed store.
        std::uint64_t quantized_equiv = 0;
        std::uint64_t largest = 0;
        for (const auto& e : entries_) {
            if (e.live && !e.stored_bf16()) {
                quantized_equiv += e.bf16_equiv();
                largest = std::max(largest, e.bf16_equiv());
            }
        }
        for (const auto& s : summaries_) {
            quantized_equiv += s.pack.bf16_equivalent_bytes();
        }
        switch (cfg_.read_granularity) {
            case ReadGranularity::WholeCache:
                return quantized_equiv;
            case ReadGranularity::PerLayer: {
                // Calibrated pipelined-read share: all but one layer's
                // reconstruction is held at the observed peak.
                const std::uint64_t layers = cfg_.corpus.num_layers;
                return quantized_equiv - quantized_equiv / layers;
            }
            case ReadGranularity::PerChunk:
                return largest;
        }
        return quantized_equiv;
    }

    void apply_prune(std::size_t step) {
        for (std::size_t l = 0; l < cfg_.corpus.num_layers; ++l) {
            std::vector<ScoredChunk> scored;
            std::vector<std::size_t> slots;
            for (std::size_t i = 0; i < entries_.size(); ++i) {
                const auto& e = entries_[i];
                if (!e.live || e.layer != l) continue;
                ScoredChunk sc;
                sc.index = slots.size();
                sc.age = e.age;
                sc.tokens = e.tokens();
                sc.score = importance_of(e);
                scored.push_back(sc);
                slots.push_back(i);
            }
            const auto decisions =
                prune_cache(cfg_.policy, scored, step, cfg_.corpus.tokens_per_chunk);
            for (const auto& d : decisions) {
                CacheEntry& e = entries_[slots[d.index]];
                switch (d.action) {
                    case PruneDecision::Action::Keep:
                        break;
                    case PruneDecision::Action::Trim:
                        trim_entry(e, d.kept_tokens);
                        break;
                    case PruneDecision::Action::Summarize:
                        summarize_entry(e);
                        [[fallthrough]];
                    case PruneDecision::Action::Evict:
                        e.live = false;
                        e.pack = PackedChunk{};
                        e.fg_pack = PackedChunk{};
                        e.bg_pack = PackedChunk{};
                        ++evicted_count_;
                        break;
                }
            }
        }
    }

    double importance_of(const CacheEntry& e) const {
        double acc = 0.0;
        for (std::size_t t = 0; t < e.src_keys.rows(); ++t) {
            double row = 0.0;
            for (std::size_t c = 0; c < e.src_keys.cols(); ++c) {
                row += static_cast<double>(e.src_keys.at(t, c)) * e.src_keys.at(t, c);
            }
            acc += std::sqrt(row);
        }
        const double mean = e.src_keys.rows() ? acc / static_cast<double>(e.src_keys.rows()) : 0.0;
        return mean * std::pow(cfg_.policy.importance_decay, static_cast<double>(e.age));
    }

    void trim_entry(CacheEntry& e, std::size_t kept) {
        // Token eviction is terminal: the leading `kept` rows survive.
        auto shrink = [kept](Matrix& m) {
            Matrix out(kept, m.cols());
            for (std::size_t t = 0; t < kept; ++t) {
                for (std::size_t c = 0; c < m.cols(); ++c) {
                    out.at(t, c) = m.at(t, c);
                }
            }
            m = std::move(out);
        };
        shrink(e.src_keys);
        shrink(e.src_values);
        shrink(e.dec_keys);
        shrink(e.dec_values);
        e.motion.resize(kept);
        // Re-encode the surviving rows in the current codec.
        const CodecSpec codec = e.split ? cfg_.policy.base_codec : e.pack.spec;
        restore_from_decoded(e, codec, e.codec_tag);
    }

    void summarize_entry(const CacheEntry& e) {
        const std::size_t n = std::max<std::size_t>(cfg_.policy.summary_tokens, 1);
        if (cfg_.policy.summary_tokens == 0) return;
        // Mean-pool the decoded token rows into `n` summary rows.
        Matrix sk(n, e.channels(), 0.0f), sv(n, e.channels(), 0.0f);
        const std::size_t rows = e.dec_keys.rows();
        const std::size_t per = (rows + n - 1) / n;
        for (std::size_t g = 0; g < n; ++g) {
            const std::size_t lo = g * per;
            const std::size_t hi = std::min(rows, lo + per);
            if (lo >= hi) continue;
            for (std::size_t c = 0; c < e.channels(); ++c) {
                double ak = 0.0, av = 0.0;
                for (std::size_t t = lo; t < hi; ++t) {
                    ak += e.dec_keys.at(t, c);
                    av += e.dec_values.at(t, c);
                }
                sk.at(g, c) = static_cast<float>(ak / static_cast<double>(hi - lo));
                sv.at(g, c) = static_cast<float>(av / static_cast<double>(hi - lo));
            }
        }
        SummaryEntry s;
        s.layer = e.layer;
        s.pack = mark_summary(encode_matrices(cfg_.policy.base_codec, sk, sv));
        work_ += codec_work_units(cfg_.policy.base_codec, n, e.channels());
        const KvPair dec = decode_chunk(s.pack);
        s.dec_keys = dec.keys;
        s.dec_values = dec.values;
        summaries_.push_back(std::move(s));
    }

    std::uint64_t refresh_all() {
        // Double-buffer refresh: the whole cache is decoded to BF16 while the
        // old compressed store is still held.
        std::uint64_t transient = 0;
        for (auto& e : entries_) {
            if (!e.live) continue;
            transient += e.bf16_equiv();
            work_ += entry_decode_work(e);
            restore_from_decoded(e, cfg_.policy.base_codec, "base");
        }
        for (const auto& s : summaries_) {
            transient += s.pack.bf16_equivalent_bytes();
        }
        return transient;
    }

    void apply_budgets(std::size_t step) {
        std::vector<std::size_t> ages;
        for (const auto& e : entries_) {
            if (e.live && e.layer == 0) ages.push_back(e.age);
        }
        std::vector<double> signals(cfg_.corpus.num_layers, 0.0);
        if (cfg_.policy.kind == PolicyKind::FC_ADAPTIVE && ref_ != nullptr && step >= 2) {
            signals = layer_signals_[step - 2];
        }
        const auto budgets = allocate_budgets(cfg_.policy, cfg_.corpus.num_layers, ages, signals);
        std::vector<std::size_t> cursor(cfg_.corpus.num_layers, 0);
        for (auto& e : entries_) {
            if (!e.live) continue;
            const CodecSpec& want = budgets[e.layer][cursor[e.layer]++];
            const std::string tag = want.id();
            if (e.codec_tag != tag) {
                if (e.codec_tag == "bf16") {
                    store(e, want, tag);
                } else {
                    restore_from_decoded(e, want, tag);
                }
            }
        }
    }

    void apply_assignments(std::size_t step) {
        std::vector<std::size_t> ages;
        std::vector<std::size_t> slots;
        for (std::size_t i = 0; i < entries_.size(); ++i) {
            if (entries_[i].live && entries_[i].layer == 0) {
                ages.push_back(entries_[i].age);
            }
        }
        const auto decisions = assign_precisions(cfg_.policy, ages, step);
        for (auto& e : entries_) {
            if (!e.live) continue;
            std::size_t pos = 0;
            while (pos < ages.size() && ages[pos] != e.age) ++pos;
            KVQ_REQUIRE(pos < ages.size(), "assignment: no decision for live chunk age");
            const Decision& d = decisions[pos];
            switch (d.kind) {
                case Decision::Kind::KeepBf16:
                    if (e.codec_tag != "bf16") {
                        restore_from_decoded(e, CodecSpec::bf16(), "bf16");
                    }
                    break;
                case Decision::Kind::Quantize: {
                    const std::string tag = d.codec.id();
                    if (e.codec_tag != tag) {
                        if (e.codec_tag == "bf16") {
                            store(e, d.codec, tag);
                        } else {
                            restore_from_decoded(e, d.codec, tag);
                        }
                    }
                    break;
                }
                case Decision::Kind::Split: {
                    const std::string tag = "split:" + d.fg.id() + "/" + d.bg.id();
                    if (e.codec_tag != tag) {
                        std::vector<bool> mask(e.motion.size());
                        for (std::size_t t = 0; t < mask.size(); ++t) {
                            mask[t] = e.motion[t] > cfg_.policy.motion_threshold;
                        }
                        store_split(e, d.fg, d.bg, mask, tag);
                    }
                    break;
                }
                default:
                    throw error("assignment: unexpected terminal decision");
            }
        }
    }

    void update_surrogate(std::size_t step, RunTrace& trace) {
        const std::size_t dim = cfg_.corpus.channels;
        const std::size_t layers = cfg_.corpus.num_layers;
        std::vector<double> mean(dim, 0.0);
        std::vector<double> lmean(layers * dim, 0.0);
        std::vector<std::uint64_t> lcount(layers, 0);
        std::uint64_t count = 0;
        auto accumulate = [&](const Matrix& m, std::size_t layer) {
            for (std::size_t t = 0; t < m.rows(); ++t) {
                for (std::size_t c = 0; c < m.cols(); ++c) {
                    mean[c] += m.at(t, c);
                    lmean[layer * dim + c] += m.at(t, c);
                }
            }
            count += m.rows();
            lcount[layer] += m.rows();
        };
        for (const auto& e : entries_) {
            if (!e.live) continue;
            accumulate(e.dec_keys, e.layer);
            accumulate(e.dec_values, e.layer);
        }
        for (const auto& s : summaries_) {
            accumulate(s.dec_keys, s.layer);
            accumulate(s.dec_values, s.layer);
        }
        for (auto& x : mean) {
            x /= std::max<std::uint64_t>(count, 1);
        }
        for (std::size_t l = 0; l < layers; ++l) {
            for (std::size_t c = 0; c < dim; ++c) {
                lmean[l * dim + c] /= std::max<std::uint64_t>(lcount[l], 1);
            }
        }

        const auto noise = step_noise(cfg_.corpus.seed, step, dim, cfg_.noise_sigma);
        std::vector<double> h(dim, 0.0);
        for (std::size_t r = 0; r < dim; ++r) {
            double acc = 0.0;
            for (std::size_t c = 0; c < dim; ++c) {
                acc += map_[r * dim + c] * mean[c];
            }
            h[r] = acc + noise[r];
        }
        prev_h_ = h;
        trace.surrogate.push_back(std::move(h));
        trace.layer_means.push_back(lmean);

        // Per-layer drift signals for the adaptive budget policy.
        std::vector<double> sig(layers, 0.0);
        if (ref_ != nullptr) {
            const auto& rl = ref_->layer_means[step - 1];
            for (std::size_t l = 0; l < layers; ++l) {
                double acc = 0.0;
                for (std::size_t c = 0; c < dim; ++c) {
                    const double d = lmean[l * dim + c] - rl[l * dim + c];
                    acc += d * d;
                }
                sig[l] = std::sqrt(acc);
            }
        }
        layer_signals_.push_back(std::move(sig));
    }

    void finalize(RolloutResult& res) {
        const std::size_t tokens = cfg_.corpus.tokens_per_chunk;
        const std::size_t channels = cfg_.corpus.channels;

        double err = 0.0, sig = 0.0, mx = 0.0;
        for (const auto& e : entries_) {
            if (!e.live) continue;
            auto acc = [&](const Matrix& a, const Matrix& b) {
                for (std::size_t i = 0; i < a.size(); ++i) {
                    const double d = static_cast<double>(a.data()[i]) - b.data()[i];
                    err += d * d;
                    sig += static_cast<double>(a.data()[i]) * a.data()[i];
                    mx = std::max(mx, std::abs(d));
                }
            };
            acc(e.src_keys, e.dec_keys);
            acc(e.src_values, e.dec_values);
            FinalChunkInfo info;
            info.layer = e.layer;
            info.age = e.age;
            info.kept_tokens = e.tokens();
            info.stored_bytes = e.stored_bytes();
            info.bf16_equiv_bytes = e.bf16_equiv();
            info.codec_id = e.codec_tag;
            if (!e.split) {
                info.breakdown = e.pack.breakdown;
            } else {
                info.breakdown.payload = e.fg_pack.breakdown.payload + e.bg_pack.breakdown.payload;
                info.breakdown.scales_zeros = e.fg_pack.breakdown.scales_zeros +
                                              e.bg_pack.breakdown.scales_zeros + e.mask_bytes.size();
                info.breakdown.outliers = e.fg_pack.breakdown.outliers + e.bg_pack.breakdown.outliers;
                info.breakdown.rotation = e.fg_pack.breakdown.rotation + e.bg_pack.breakdown.rotation;
            }
            res.final_cache.push_back(info);
        }
        for (const auto& s : summaries_) {
            FinalChunkInfo info;
            info.layer = s.layer;
            info.is_summary = true;
            info.kept_tokens = s.pack.tokens;
            info.stored_bytes = s.pack.stored_bytes();
            info.bf16_equiv_bytes = s.pack.bf16_equivalent_bytes();
            info.breakdown = s.pack.breakdown;
            info.codec_id = s.pack.spec_id;
            res.final_cache.push_back(info);
        }

        std::uint64_t elems = 0;
        for (const auto& e : entries_) {
            if (e.live) elems += e.src_keys.size() + e.src_values.size();
        }

        MethodSummary& m = res.summary;
        m.method_id = cfg_.method_id.empty() ? to_string(cfg_.policy.kind) : cfg_.method_id;
        m.nominal_ratio = nominal_compression_ratio(cfg_.policy.base_codec, tokens, channels);
        const std::uint64_t bf16_final = res.ledger.bf16_equiv_bytes.back();
        const std::uint64_t stored_final = res.ledger.compressed_bytes.back();
        m.realized_ratio = static_cast<double>(bf16_final) / static_cast<double>(stored_final);
        m.peak_bytes = res.ledger.peak_bytes();
        const double scale =
            cfg_.bf16_equiv_bytes_target > 0
                ? static_cast<double>(cfg_.bf16_equiv_bytes_target) / static_cast<double>(bf16_final)
                : 1.0;
        m.peak_gib = static_cast<double>(m.peak_bytes) * scale / (1024.0 * 1024.0 * 1024.0);
        m.work_units = work_;
        m.mse = (mx == 0.0) ? 0.0 : err / static_cast<double>(elems);
        m.snr_db = (err == 0.0) ? std::numeric_limits<double>::infinity()
                                : 10.0 * std::log10(sig / err);
        m.terminal_drift = res.drift.terminal_drift;
        m.benchmark_id = "synthetic/" + to_string(cfg_.corpus.distribution);
    }

    RolloutConfig cfg_;
    const RunTrace* ref_;
    std::vector<KvChunk> corpus_;
    std::vector<double> map_;
    std::vector<CacheEntry> entries_;
    std::vector<SummaryEntry> summaries_;
    std::vector<double> prev_h_;
    std::vector<std::vector<double>> layer_signals_;
    std::uint64_t work_ = 0;
    std::size_t evicted_count_ = 0;
};

/// True when the policy stores every chunk in BF16 exactly, which makes the
/// rollout its own drift reference.
inline bool is_reference_policy(const PolicySpec& p) {
    if (p.kind == PolicyKind::FC_NATIVE) return true;
    if (p.kind == PolicyKind::NONE && p.base_codec.family == CodecFamily::BF16) return true;
    return false;
}

}  // namespace detail

/// Full chunked autoregressive simulation: appends one chunk per layer per
/// step, applies the policy, models attention-read and refresh transients,
/// and tracks the drift proxy against the BF16 reference rollout.
inline RolloutResult simulate_rollout(const RolloutConfig& config) {
    config.validate();
    if (detail::is_reference_policy(config.policy)) {
        detail::RolloutEngine self(config, nullptr);
        RolloutResult res = self.run();
        // A BF16 cache is its own reference: the trace is identical, so the
        // deviation is identically zero.
        for (auto& d : res.drift.deviation) d = 0.0;
        res.drift.terminal_drift = 0.0;
        res.summary.terminal_drift = 0.0;
        return res;
    }
    RolloutConfig ref_cfg = config;
    ref_cfg.policy = PolicySpec{};
    ref_cfg.policy.kind = PolicyKind::NONE;
    ref_cfg.policy.base_codec = CodecSpec::bf16();
    ref_cfg.method_id = "BF16_REFERENCE";
    detail::RolloutEngine ref_engine(ref_cfg, nullptr);
    const RolloutResult ref = ref_engine.run();
    detail::RolloutEngine engine(config, &ref.trace);
    return engine.run();
}

/// Drift trace of a compressed rollout against a previously computed BF16
/// reference rollout sharing the same seed and corpus.
inline DriftTrace drift_loop(const RolloutConfig& config, const RolloutResult& reference) {
    config.validate();
    KVQ_REQUIRE(reference.trace.corpus_seed == config.corpus.seed, "drift_loop: seed mismatch");
    detail::RolloutEngine engine(config, &reference.trace);
    return engine.run().drift;
}

/// Decode-and-re-encode of a packed cache; returns the new cache plus the
/// transient footprint (the full BF16 image held alongside the old store).
struct RefreshResult {
    std::vector<PackedChunk> cache;
    std::uint64_t transient_bytes = 0;
};

inline RefreshResult refresh_cache(const std::vector<PackedChunk>& cache, const CodecSpec& base) {
    RefreshResult out;
    out.cache.reserve(cache.size());
    for (const auto& pc : cache) {
        out.transient_bytes += pc.bf16_equivalent_bytes();
        const KvPair dec = decode_chunk(pc);
        out.cache.push_back(encode_matrices(base, dec.keys, dec.values, pc.spec_id));
    }
    return out;
}

/// Strict peak ordering over method summaries; equal peaks are grouped.
/// Summaries must come from one corpus/base calibration.
inline std::vector<std::vector<std::string>> peak_ordering(
    const std::vector<MethodSummary>& summaries) {
    KVQ_REQUIRE(!summaries.empty(), "peak_ordering: empty summary set");
    for (const auto& s : summaries) {
        KVQ_REQUIRE(s.calibration_id == summaries.front().calibration_id,
                    "peak_ordering: mixed calibrations");
    }
    std::vector<const MethodSummary*> sorted;
    for (const auto& s : summaries) sorted.push_back(&s);
    std::stable_sort(sorted.begin(), sorted.end(), [](const MethodSummary* a, const MethodSummary* b) {
        return a->peak_bytes > b->peak_bytes;
    });
    std::vector<std::vector<std::string>> groups;
    std::uint64_t last_peak = 0;
    for (const auto* s : sorted) {
        if (groups.empty() || s->peak_bytes != last_peak) {
            groups.emplace_back();
        }
        groups.back().push_back(s->method_id);
        last_peak = s->peak_bytes;
    }
    return groups;
}

}  // namespace kvq
