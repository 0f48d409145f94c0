// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <ostream>
#include <string>
#include <vector>

#include "kvq/common.hpp"

namespace kvq {

enum class Phase { Append, AttentionRead, Refresh, Prune };

inline std::string to_string(Phase p) {
    switch (p) {
        case Phase::Append: return "append";
        case Phase::AttentionRead: return "attention_read";
        case Phase::Refresh: return "refresh";
        case Phase::Prune: return "prune";
    }
    return "?";
}

struct LedgerEvent {
    std::size_t step = 0;
    Phase phase = Phase::Append;
    std::uint64_t persistent_bytes = 0;
    std::uint64_t transient_bytes = 0;
};

/// Time series of persistent and transient allocations over a rollout.
/// bf16_equiv_bytes counts every chunk appended so far at BF16 width (the
/// uncompressed-baseline counterfactual); compressed_bytes is the stored
/// footprint at the end of each step.
struct MemoryLedger {
    std::uint64_t base_footprint_bytes = 0;
    std::vector<LedgerEvent> events;
    std::vector<std::uint64_t> bf16_equiv_bytes;
    std::vector<std::uint64_t> compressed_bytes;

    std::uint64_t peak_bytes() const {
        std::uint64_t peak = base_footprint_bytes;
        for (const auto& e : events) {
            peak = std::max(peak, base_footprint_bytes + e.persistent_bytes + e.transient_bytes);
        }
        return peak;
    }

    void write_csv(std::ostream& os) const {
        os << "step,phase,persistent_bytes,transient_bytes,total_bytes\n";
        for (const auto& e : events) {
            os << e.step << ',' << to_string(e.phase) << ',' << e.persistent_bytes << ','
               << e.transient_bytes << ','
               << (base_footprint_bytes + e.persistent_bytes + e.transient_bytes) << '\n';
        }
    }
};

/// Locale-independent, reproducible float formatting for all file output.
inline std::string format_double(double v, int precision = 12) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.*g", precision, v);
    return buf;
}

struct DriftTrace {
    std::vector<double> deviation;  // one entry per step
    double terminal_drift = 0.0;

    void write_csv(std::ostream& os) const {
        os << "step,deviation\n";
        for (std::size_t i = 0; i < deviation.size(); ++i) {
            os << (i + 1) << ',' << format_double(deviation[i]) << '\n';
        }
    }
};

}  // namespace kvq
