// SPDX-License-Identifier: Apache-2.0
//
// kvqbench: config-driven harness around the kvq library. `run` executes the
// method x seed matrix, `analyze` runs frontier/correlation reports over
// benchmark tables, `presets` lists or exports the shipped method presets.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "kvq/bench.hpp"

namespace fs = std::filesystem;

namespace {

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

std::string default_out_dir() {
    if (const char* env = std::getenv("KVQBENCH_OUT")) return env;
    return "kvqbench_out";
}

int cmd_run(const std::string& config_path, const std::string& out_dir,
            const std::string& methods_csv, const std::string& seeds_csv, unsigned jobs) {
    kvq::BenchConfig config =
        config_path.empty() ? kvq::BenchConfig{} : kvq::load_bench_config(config_path);
    if (!methods_csv.empty()) config.methods = split_list(methods_csv);
    if (!seeds_csv.empty()) {
        config.seeds.clear();
        for (const auto& s : split_list(seeds_csv)) config.seeds.push_back(std::stoull(s));
    }
    std::string dir = !out_dir.empty() ? out_dir
                      : !config.output_dir.empty() ? config.output_dir
                                                   : default_out_dir();
    const auto out = kvq::run_matrix(config, dir, jobs);
    std::cout << "config_hash " << out.hash << "\n";
    std::cout << "cells " << out.cells.size() << " -> " << dir << "\n";
    for (const auto& c : out.cells) {
        std::cout << c.method << " seed=" << c.seed
                  << " ratio=" << kvq::format_double(c.result.summary.realized_ratio, 6)
                  << " peak_gib=" << kvq::format_double(c.result.summary.peak_gib, 6)
                  << " mse=" << kvq::format_double(c.result.summary.mse, 6)
                  << " drift=" << kvq::format_double(c.result.summary.terminal_drift, 6) << "\n";
    }
    return 0;
}

int cmd_analyze(const std::string& tables_csv, const std::string& frontier_name,
                const std::string& out_dir) {
    std::vector<kvq::AnalyzeInput> inputs;
    for (const auto& path : split_list(tables_csv)) {
        kvq::AnalyzeInput in;
        in.label = fs::path(path).stem().string();
        in.table = kvq::read_table_csv(path);
        inputs.push_back(std::move(in));
    }
    const auto spec = kvq::frontier_preset(frontier_name);
    const std::string report = kvq::analyze(inputs, spec, out_dir);
    std::cout << report;
    return 0;
}

int cmd_presets_list() {
    for (const auto& p : kvq::all_presets()) {
        std::cout << p.name;
        if (!std::isnan(p.target_ratio)) {
            std::cout << "  target_ratio=" << kvq::format_double(p.target_ratio, 4);
        }
        std::cout << "\n";
    }
    return 0;
}

int cmd_presets_dump(const std::string& dir) {
    fs::create_directories(dir);
    for (const auto& p : kvq::all_presets()) {
        std::ofstream f(fs::path(dir) / (p.name + ".json"), std::ios::binary);
        f << kvq::to_json(p).dump(2) << "\n";
    }
    std::cout << "wrote " << kvq::all_presets().size() << " presets to " << dir << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"KV-cache compression benchmark harness"};
    app.require_subcommand(1);

    std::string config_path, out_dir, methods_csv, seeds_csv;
    unsigned jobs = 1;
    auto* run = app.add_subcommand("run", "run the method x seed matrix");
    run->add_option("--config", config_path, "benchmark config JSON (defaults when omitted)");
    run->add_option("--out", out_dir, "output directory (or KVQBENCH_OUT)");
    run->add_option("--methods", methods_csv, "comma-separated preset names");
    run->add_option("--seeds", seeds_csv, "comma-separated seeds");
    run->add_option("--jobs", jobs, "parallel rollout workers");

    std::string tables_csv, frontier_name = "balanced_practical", analyze_out;
    auto* analyze = app.add_subcommand("analyze", "frontier + correlation report over tables");
    analyze->add_option("--tables", tables_csv, "comma-separated CSV table paths")->required();
    analyze->add_option("--frontier", frontier_name, "frontier preset name");
    analyze->add_option("--out", analyze_out, "output directory for report files");

    auto* presets = app.add_subcommand("presets", "inspect shipped method presets");
    std::string dump_dir;
    auto* plist = presets->add_subcommand("list", "list preset names");
    auto* pdump = presets->add_subcommand("dump", "write presets as JSON files");
    pdump->add_option("--dir", dump_dir, "target directory")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (run->parsed()) return cmd_run(config_path, out_dir, methods_csv, seeds_csv, jobs);
        if (analyze->parsed()) return cmd_analyze(tables_csv, frontier_name, analyze_out);
        if (presets->parsed()) {
            if (plist->parsed()) return cmd_presets_list();
            if (pdump->parsed()) return cmd_presets_dump(dump_dir);
            return cmd_presets_list();
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
