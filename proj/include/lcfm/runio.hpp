#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "lcfm/pipeline.hpp"
#include "lcfm/solvers.hpp"

namespace lcfm {

// Run directory layout shared by the CLI subcommands.
struct RunPaths {
    std::string root;
    std::string config_json;
    std::string metrics_csv;
    std::string manifest_json;
    std::string checkpoints_dir;
    std::string samples_dir;

    static RunPaths at(const std::string& root);
};

// Creates the directory tree and writes config.json atomically.
RunPaths init_run_dir(const std::string& root, const nlohmann::json& config);

// 16-hex-digit FNV-1a of the canonical (sorted-key) JSON dump.
std::string config_hash(const nlohmann::json& config);
// FNV-1a over raw file bytes, for manifest stamping.
std::uint64_t file_fnv1a(const std::string& path);

// Shortest decimal that round-trips to the same double (deterministic csv).
std::string format_double(double v);

// metrics.csv, schema: step,metric,value,seed,method. Whole-file atomic write.
void write_metrics_csv(const std::string& path, const std::vector<MetricRow>& rows,
                       std::uint64_t seed, const std::string& method);
std::vector<MetricRow> read_metrics_csv(const std::string& path, std::uint64_t* seed_out = nullptr,
                                        std::string* method_out = nullptr);

struct EvalRow {
    std::string metric;
    double value = 0.0;
    std::size_t n_a = 0, n_b = 0;
    std::string config_hash;
};
// eval.csv, schema: metric,value,n_a,n_b,config_hash.
void write_eval_csv(const std::string& path, const std::vector<EvalRow>& rows);

// sweep.csv, schema: beta,test_kl,final_loss.
void write_beta_csv(const std::string& path, const std::vector<BetaSweepRow>& rows);

// Long-format trajectory table, schema: traj_id,t,x,y (first two state
// columns; 1-d states emit y=0).
void write_traj_csv(const std::string& path, const Trajectory& traj);

// Histogram over log10(values), schema: bin_lo,bin_hi,count. Nonpositive
// values are clamped to the smallest positive entry.
void write_histogram_csv(const std::string& path, std::vector<double> values, std::size_t bins);

// manifest.json: run id, command line, config hash, creation time, and a
// hash-stamped artifact list. Artifacts must exist.
void write_manifest(const RunPaths& paths, const std::string& command,
                    const nlohmann::json& config, const std::vector<std::string>& artifacts);

}  // namespace lcfm
