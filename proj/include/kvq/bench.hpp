// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <atomic>
#include <filesystem>
#include <fstream>
#include <future>
#include <sstream>
#include <string>
#include <vector>

#include "kvq/common.hpp"
#include "kvq/config.hpp"
#include "kvq/frontier.hpp"
#include "kvq/presets.hpp"
#include "kvq/rollout.hpp"
#include "kvq/table.hpp"

namespace kvq {

struct MatrixCell {
    std::string method;
    std::uint64_t seed = 0;
    RolloutResult result;
};

struct MatrixOutput {
    std::vector<MatrixCell> cells;  // method-major, seed-minor order
    std::string hash;
};

namespace detail {

inline std::string summary_row(const MethodSummary& m, std::uint64_t seed) {
    std::ostringstream os;
    os << m.method_id << ',' << seed << ',' << format_double(m.nominal_ratio) << ','
       << format_double(m.realized_ratio) << ',' << m.peak_bytes << ','
       << format_double(m.peak_gib) << ',' << m.work_units << ',' << format_double(m.mse) << ','
       << format_cell(m.snr_db) << ',' << format_double(m.terminal_drift);
    return os.str();
}

inline void write_file(const std::filesystem::path& path, const std::string& content) {
    std::ofstream f(path, std::ios::binary);
    KVQ_REQUIRE(f.good(), "cannot write output file: " + path.string());
    f << content;
}

}  // namespace detail

/// Run the (method x seed) matrix. Cells may execute in parallel; output
/// files are written serially in a fixed order so results are bit-identical
/// for every schedule.
inline MatrixOutput run_matrix(const BenchConfig& config, const std::string& out_dir,
                               unsigned jobs = 1) {
    config.validate();
    const auto methods = config.method_list();
    MatrixOutput out;
    out.hash = config_hash(config);

    struct CellPlan {
        std::string method;
        std::uint64_t seed;
        RolloutConfig rc;
    };
    std::vector<CellPlan> plan;
    for (const auto& name : methods) {
        const MethodPreset& preset = find_preset(name);
        for (const auto seed : config.seeds) {
            plan.push_back({name, seed, make_rollout_config(config, preset, seed)});
        }
    }

    std::vector<RolloutResult> results(plan.size());
    if (jobs <= 1) {
        for (std::size_t i = 0; i < plan.size(); ++i) {
            results[i] = simulate_rollout(plan[i].rc);
        }
    } else {
        std::vector<std::future<void>> futures;
        std::atomic<std::size_t> next{0};
        for (unsigned w = 0; w < jobs; ++w) {
            futures.push_back(std::async(std::launch::async, [&] {
                for (;;) {
                    const std::size_t i = next.fetch_add(1);
                    if (i >= plan.size()) return;
                    results[i] = simulate_rollout(plan[i].rc);
                }
            }));
        }
        for (auto& f : futures) f.get();
    }

    for (std::size_t i = 0; i < plan.size(); ++i) {
        MatrixCell cell;
        cell.method = plan[i].method;
        cell.seed = plan[i].seed;
        cell.result = std::move(results[i]);
        cell.result.summary.config_hash = out.hash;
        cell.result.summary.calibration_id =
            out.hash + "/seed" + std::to_string(plan[i].seed);
        out.cells.push_back(std::move(cell));
    }

    if (!out_dir.empty()) {
        namespace fs = std::filesystem;
        fs::create_directories(out_dir);
        const std::string stamp = "# config_hash=" + out.hash + "\n";

        std::ostringstream summary;
        summary << stamp
                << "method,seed,nominal_ratio,realized_ratio,peak_bytes,peak_gib,work_units,mse,"
                   "snr_db,terminal_drift\n";
        for (const auto& c : out.cells) {
            summary << detail::summary_row(c.result.summary, c.seed) << '\n';
        }
        detail::write_file(fs::path(out_dir) / "summary.csv", summary.str());

        std::ostringstream means;
        means << stamp << "method,seeds,realized_ratio_mean,peak_gib_mean,mse_mean,drift_mean\n";
        for (const auto& name : methods) {
            double ratio = 0, peak = 0, mse = 0, drift = 0;
            std::size_t n = 0;
            for (const auto& c : out.cells) {
                if (c.method != name) continue;
                ratio += c.result.summary.realized_ratio;
                peak += c.result.summary.peak_gib;
                mse += c.result.summary.mse;
                drift += c.result.summary.terminal_drift;
                ++n;
            }
            means << name << ',' << n << ',' << format_double(ratio / n) << ','
                  << format_double(peak / n) << ',' << format_double(mse / n) << ','
                  << format_double(drift / n) << '\n';
        }
        detail::write_file(fs::path(out_dir) / "summary_mean.csv", means.str());

        for (const auto& c : out.cells) {
            std::ostringstream trace;
            trace << stamp;
            c.result.ledger.write_csv(trace);
            detail::write_file(fs::path(out_dir) /
                                   ("trace_" + c.method + "_seed" + std::to_string(c.seed) + ".csv"),
                               trace.str());
            std::ostringstream drift;
            drift << stamp;
            c.result.drift.write_csv(drift);
            detail::write_file(fs::path(out_dir) /
                                   ("drift_" + c.method + "_seed" + std::to_string(c.seed) + ".csv"),
                               drift.str());
        }
    }
    return out;
}

struct AnalyzeInput {
    std::string label;
    Table table;
};

/// Frontier membership, dominated-by explanations and cross-table
/// correlations over header-contract tables. Returns the plain-text report.
inline std::string analyze(const std::vector<AnalyzeInput>& tables, const FrontierSpec& frontier,
                           const std::string& out_dir) {
    KVQ_REQUIRE(!tables.empty(), "analyze: no tables");
    for (const auto& t : tables) {
        KVQ_REQUIRE(!t.table.methods.empty(), "analyze: empty method list in table " + t.label);
    }

    std::ostringstream report;
    report << "frontier " << frontier.name << " objectives:";
    for (const auto& o : frontier.objectives) {
        report << ' ' << (o.orientation == Orientation::Minimize ? "min " : "max ") << o.column;
        report << ';';
    }
    report << '\n';

    std::ostringstream frontier_csv;
    frontier_csv << "table,method,status,dominated_by\n";

    for (const auto& in : tables) {
        const FrontierResult fr = pareto_frontier(in.table, frontier);
        report << "\ntable " << in.label << " (" << in.table.methods.size() << " methods)\n";
        report << "  non-dominated (" << fr.frontier.size() << "):\n";
        std::vector<bool> on_frontier(in.table.methods.size(), false);
        std::vector<bool> excluded(in.table.methods.size(), false);
        for (auto r : fr.frontier) on_frontier[r] = true;
        for (auto r : fr.excluded_missing) excluded[r] = true;
        for (auto r : fr.frontier) {
            report << "    " << in.table.methods[r] << '\n';
            frontier_csv << in.label << ',' << in.table.methods[r] << ",frontier,\n";
        }
        report << "  dominated:\n";
        for (std::size_t r = 0; r < in.table.methods.size(); ++r) {
            if (on_frontier[r] || excluded[r]) continue;
            const auto by = dominated_by(in.table, frontier, r);
            const std::string by_name = by ? in.table.methods[*by] : "";
            report << "    " << in.table.methods[r] << " (dominated by " << by_name << ")\n";
            frontier_csv << in.label << ',' << in.table.methods[r] << ",dominated," << by_name
                         << '\n';
        }
        if (!fr.excluded_missing.empty()) {
            report << "  excluded (non-finite objective values):\n";
            for (auto r : fr.excluded_missing) {
                report << "    " << in.table.methods[r] << '\n';
                frontier_csv << in.label << ',' << in.table.methods[r] << ",excluded,\n";
            }
        }
    }

    std::ostringstream corr_csv;
    corr_csv << "table_a,table_b,column,r,joined\n";
    if (tables.size() >= 2) {
        report << "\ncross-table correlations:\n";
        for (std::size_t a = 0; a < tables.size(); ++a) {
            for (std::size_t b = a + 1; b < tables.size(); ++b) {
                for (const auto& col : table_contract_columns()) {
                    bool have = true;
                    try {
                        tables[a].table.column_index(col);
                        tables[b].table.column_index(col);
                    } catch (const error&) {
                        have = false;
                    }
                    if (!have) continue;
                    CorrelationResult cr;
                    try {
                        cr = rank_correlation(tables[a].table, tables[b].table, col);
                    } catch (const error&) {
                        continue;  // insufficient finite overlap for this column
                    }
                    report << "  " << tables[a].label << " vs " << tables[b].label << ": " << col
                           << " r=" << format_double(cr.r, 6) << " (n=" << cr.joined << ")\n";
                    corr_csv << tables[a].label << ',' << tables[b].label << ',' << col << ','
                             << format_double(cr.r, 10) << ',' << cr.joined << '\n';
                }
            }
        }
    }

    if (!out_dir.empty()) {
        namespace fs = std::filesystem;
        fs::create_directories(out_dir);
        detail::write_file(fs::path(out_dir) / "report.txt", report.str());
        detail::write_file(fs::path(out_dir) / ("frontier_" + frontier.name + ".csv"),
                           frontier_csv.str());
        detail::write_file(fs::path(out_dir) / "correlations.csv", corr_csv.str());
    }
    return report.str();
}

}  // namespace kvq
