// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>

namespace kvq {

/// One row of a benchmark table: the six evaluation axes for one method run.
struct MethodSummary {
    std::string method_id;
    double nominal_ratio = 1.0;
    double realized_ratio = 1.0;
    std::uint64_t peak_bytes = 0;  // desk-scale bytes, base footprint included
    double peak_gib = 0.0;         // calibrated scale when a target is set
    std::uint64_t work_units = 0;  // encode/decode element operations
    double mse = 0.0;
    double snr_db = 0.0;
    double terminal_drift = 0.0;
    std::string benchmark_id;
    std::string calibration_id;  // corpus + memory-model calibration tag
    std::string config_hash;
};

}  // namespace kvq
