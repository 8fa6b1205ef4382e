#pragma once

#include <cstddef>
#include <iosfwd>
#include <string>
#include <vector>

#include "moerlab/config.hpp"
#include "moerlab/trainer.hpp"

namespace moerlab {

// ---------------------------------------------------------------------------
// File formats. All floating point values print with %.17g so files are
// byte-identical across runs of the same (config, seed).
// ---------------------------------------------------------------------------

/// Header "step,train_loss,eval_loss", one row per record.
void write_run_csv(const RunResult& run, std::ostream& out);

/// Header "step,mean_train_loss,var_train_loss,mean_eval_loss,var_eval_loss".
void write_aggregate_csv(const std::vector<AggregatePoint>& points, std::ostream& out);

struct ComparisonRow {
    std::string name;
    RouterKind kind;
    std::size_t experts;
    std::size_t k;
    std::size_t h_e;
    std::size_t total_params;   // MoE layer only
    std::size_t active_params;  // router + k experts
    double mean_final_eval_loss;
    double var_final_eval_loss;
    double mean_zero_gate_fraction;
};

/// Header "name,kind,M,k,h_e,total_params,active_params,
/// mean_final_eval_loss,var_final_eval_loss,mean_zero_gate_fraction".
void write_comparison_csv(const std::vector<ComparisonRow>& rows, std::ostream& out);

/// JSON summary of one experiment: resolved config (canonical fields), its
/// hash, per-seed final losses, aggregate stats, and wall_clock_seconds.
/// Wall clock is the only field that varies between identical runs.
void write_summary_json(const TrainConfig& config, const std::vector<RunResult>& runs,
                        std::ostream& out);

// ---------------------------------------------------------------------------
// Experiment drivers
// ---------------------------------------------------------------------------

struct ExperimentResult {
    TrainConfig config;
    std::vector<RunResult> runs;  // one per seed, config order
    ComparisonRow row;
    std::vector<std::string> files_written;
};

/// Trains every seed of the config and writes, under out_dir:
///   <name>_seed<S>.csv, <name>_seed<S>.ckpt per seed,
///   <name>_aggregate.csv (when more than one seed), <name>_summary.json.
ExperimentResult run_experiment(const TrainConfig& config, const std::string& out_dir);

/// Worker count for sweeps: MOERLAB_THREADS when set to a positive integer,
/// else 1.
std::size_t sweep_threads_from_env();

/// Runs each config, writes per-experiment files plus sweep_comparison.csv
/// with rows sorted by (M, k, h_e, kind). Jobs are (config, seed) pairs
/// spread over `threads` workers; results are identical to threads == 1.
std::vector<ExperimentResult> run_sweep(const std::vector<TrainConfig>& configs,
                                        const std::string& out_dir, std::size_t threads);

}  // namespace moerlab
