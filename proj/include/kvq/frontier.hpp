// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "kvq/codec.hpp"
#include "kvq/common.hpp"
#include "kvq/ledger.hpp"
#include "kvq/summary.hpp"
#include "kvq/table.hpp"

namespace kvq {

enum class Orientation { Maximize, Minimize };

struct Objective {
    std::string column;
    Orientation orientation = Orientation::Minimize;
};

/// A multi-objective frontier definition over benchmark-table columns.
struct FrontierSpec {
    std::string name;
    std::vector<Objective> objectives;

    void validate(const Table& t) const {
        KVQ_REQUIRE(!objectives.empty(), "FrontierSpec: at least one objective");
        for (const auto& o : objectives) {
            t.column_index(o.column);  // throws on unknown column
        }
    }
};

struct FrontierResult {
    std::vector<std::size_t> frontier;          // row indices, input order
    std::vector<std::size_t> excluded_missing;  // rows with non-finite objectives
};

/// Exact non-dominated subset under weak dominance with one strict
/// objective. Rows with non-finite objective cells are excluded and
/// reported, mirroring the treatment of the paper's "inf" PSNR cells.
inline FrontierResult pareto_frontier(const Table& t, const FrontierSpec& spec) {
    KVQ_REQUIRE(!t.rows.empty(), "pareto_frontier: empty table");
    spec.validate(t);
    std::vector<std::size_t> cols;
    std::vector<double> signs;
    for (const auto& o : spec.objectives) {
        cols.push_back(t.column_index(o.column));
        signs.push_back(o.orientation == Orientation::Minimize ? 1.0 : -1.0);
    }

    FrontierResult res;
    std::vector<bool> usable(t.rows.size(), true);
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
        for (std::size_t k = 0; k < cols.size(); ++k) {
            if (!std::isfinite(t.rows[r][cols[k]])) {
                usable[r] = false;
                break;
            }
        }
        if (!usable[r]) res.excluded_missing.push_back(r);
    }

    auto dominates = [&](std::size_t a, std::size_t b) {
        bool strictly_better = false;
        for (std::size_t k = 0; k < cols.size(); ++k) {
            const double va = signs[k] * t.rows[a][cols[k]];
            const double vb = signs[k] * t.rows[b][cols[k]];
            if (va > vb) return false;
            if (va < vb) strictly_better = true;
        }
        return strictly_better;
    };

    for (std::size_t r = 0; r < t.rows.size(); ++r) {
        if (!usable[r]) continue;
        bool dominated = false;
        for (std::size_t o = 0; o < t.rows.size() && !dominated; ++o) {
            if (o != r && usable[o] && dominates(o, r)) dominated = true;
        }
        if (!dominated) res.frontier.push_back(r);
    }
    return res;
}

/// For a dominated row, one row that dominates it (for report rendering).
inline std::optional<std::size_t> dominated_by(const Table& t, const FrontierSpec& spec,
                                               std::size_t row) {
    std::vector<std::size_t> cols;
    std::vector<double> signs;
    for (const auto& o : spec.objectives) {
        cols.push_back(t.column_index(o.column));
        signs.push_back(o.orientation == Orientation::Minimize ? 1.0 : -1.0);
    }
    for (std::size_t k = 0; k < cols.size(); ++k) {
        if (!std::isfinite(t.rows[row][cols[k]])) return std::nullopt;
    }
    for (std::size_t o = 0; o < t.rows.size(); ++o) {
        if (o == row) continue;
        bool usable = true, strict = false, weak = true;
        for (std::size_t k = 0; k < cols.size() && usable && weak; ++k) {
            const double vo = signs[k] * t.rows[o][cols[k]];
            const double vr = signs[k] * t.rows[row][cols[k]];
            if (!std::isfinite(t.rows[o][cols[k]])) usable = false;
            else if (vo > vr) weak = false;
            else if (vo < vr) strict = true;
        }
        if (usable && weak && strict) return o;
    }
    return std::nullopt;
}

struct CorrelationResult {
    double r = 0.0;
    std::size_t joined = 0;
};

/// Pearson correlation of one column across two tables joined on method id.
/// Pairs with non-finite cells are skipped; at least three joined methods
/// are required.
inline CorrelationResult rank_correlation(const Table& a, const Table& b,
                                          const std::string& column) {
    const std::size_t ca = a.column_index(column);
    const std::size_t cb = b.column_index(column);
    std::vector<double> xs, ys;
    for (std::size_t i = 0; i < a.methods.size(); ++i) {
        for (std::size_t j = 0; j < b.methods.size(); ++j) {
            if (a.methods[i] != b.methods[j]) continue;
            const double x = a.rows[i][ca];
            const double y = b.rows[j][cb];
            if (std::isfinite(x) && std::isfinite(y)) {
                xs.push_back(x);
                ys.push_back(y);
            }
            break;
        }
    }
    KVQ_REQUIRE(xs.size() >= 3, "rank_correlation: fewer than 3 joined methods");
    const double n = static_cast<double>(xs.size());
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        mx += xs[i];
        my += ys[i];
    }
    mx /= n;
    my /= n;
    double num = 0.0, dx = 0.0, dy = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        num += (xs[i] - mx) * (ys[i] - my);
        dx += (xs[i] - mx) * (xs[i] - mx);
        dy += (ys[i] - my) * (ys[i] - my);
    }
    KVQ_REQUIRE(dx > 0.0 && dy > 0.0, "rank_correlation: zero variance column");
    return {num / std::sqrt(dx * dy), xs.size()};
}

/// Assemble a benchmark row from rollout outputs. The realized ratio is the
/// final-step ledger identity: BF16-equivalent bytes over stored bytes.
inline MethodSummary summarize_method(const MemoryLedger& ledger, const DriftTrace& drift,
                                      const QuantError& errors, const std::string& method_id,
                                      const std::string& benchmark_id) {
    KVQ_REQUIRE(!ledger.bf16_equiv_bytes.empty(), "summarize_method: empty ledger");
    KVQ_REQUIRE(ledger.bf16_equiv_bytes.size() == ledger.compressed_bytes.size(),
                "summarize_method: ledger series length mismatch");
    KVQ_REQUIRE(drift.deviation.empty() ||
                    drift.terminal_drift == drift.deviation.back(),
                "summarize_method: drift trace does not match its terminal value");
    MethodSummary m;
    m.method_id = method_id;
    m.benchmark_id = benchmark_id;
    m.realized_ratio = static_cast<double>(ledger.bf16_equiv_bytes.back()) /
                       static_cast<double>(ledger.compressed_bytes.back());
    m.peak_bytes = ledger.peak_bytes();
    m.peak_gib = static_cast<double>(m.peak_bytes) / (1024.0 * 1024.0 * 1024.0);
    m.mse = errors.mse;
    m.snr_db = errors.snr_db;
    m.terminal_drift = drift.terminal_drift;
    return m;
}

/// The four frontier presets used by the analysis reports, expressed over
/// the benchmark-table header contract.
inline std::vector<FrontierSpec> frontier_presets() {
    return {
        {"balanced_practical",
         {{"peak_vram", Orientation::Minimize},
          {"runtime", Orientation::Minimize},
          {"img", Orientation::Maximize}}},
        {"quality_preserving_compression",
         {{"comp", Orientation::Maximize},
          {"ssim", Orientation::Maximize},
          {"lpips", Orientation::Minimize}}},
        {"systems_efficiency",
         {{"peak_vram", Orientation::Minimize},
          {"runtime", Orientation::Minimize},
          {"comp", Orientation::Maximize}}},
        {"quality_first",
         {{"img", Orientation::Maximize},
          {"ssim", Orientation::Maximize},
          {"drift", Orientation::Maximize}}},
    };
}

inline FrontierSpec frontier_preset(const std::string& name) {
    for (auto& f : frontier_presets()) {
        if (f.name == name) return f;
    }
    throw error("unknown frontier preset: " + name);
}

}  // namespace kvq
