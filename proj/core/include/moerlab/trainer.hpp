#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "moerlab/config.hpp"
#include "moerlab/matrix.hpp"
#include "moerlab/moe.hpp"
#include "moerlab/rng.hpp"

namespace moerlab {

// ---------------------------------------------------------------------------
// Layer norm
// ---------------------------------------------------------------------------

struct LayerNormParams {
    Vector gamma;
    Vector beta;

    static LayerNormParams identity(std::size_t d);
};

struct LayerNormCache {
    Vector normalized;  // (x - mean) * inv_std
    double inv_std = 0.0;
};

inline constexpr double kLayerNormEps = 1e-5;

/// y = gamma * (x - mean) / sqrt(var + eps) + beta, biased variance.
Vector layer_norm_forward(const LayerNormParams& params, std::span<const double> x,
                          LayerNormCache* cache = nullptr);

struct LayerNormGrads {
    Vector gamma;
    Vector beta;
};

/// Accumulates parameter grads, returns dx.
Vector layer_norm_backward(const LayerNormParams& params, const LayerNormCache& cache,
                           std::span<const double> upstream, LayerNormGrads& grads);

// ---------------------------------------------------------------------------
// Byte-level toy LM
// ---------------------------------------------------------------------------

/// Next-byte predictor around one MoE layer:
///   e      = mean of the window's byte embeddings
///   h      = e + moe(ln_in(e))
///   logits = output_proj * ln_out(h)
/// Cross-entropy over 256 byte classes. The bag-of-bytes context keeps the
/// model tiny; routing quality is the variable under study, not the LM.
struct ToyLmModel {
    static constexpr std::size_t kVocab = 256;

    Matrix embedding;  // kVocab x d
    LayerNormParams ln_in;
    MoeLayer moe;
    LayerNormParams ln_out;
    Matrix output_proj;  // kVocab x d
    std::size_t window = 8;

    std::size_t dim() const { return embedding.cols(); }
};

/// Embedding and output_proj draw from N(0, 0.02^2) so the initial
/// cross-entropy sits near ln(256); the MoE layer follows make_moe_layer.
ToyLmModel make_toy_lm_model(const TrainConfig& config, double scale_initial, Rng& rng);

/// (total, active) for the whole model: the dense parts (embedding, layer
/// norms, output projection) count in both, the experts count M-fold in
/// total and k-fold in active.
std::pair<std::size_t, std::size_t> lm_param_count(const ToyLmModel& model);

struct LmGrads {
    Matrix embedding;
    LayerNormGrads ln_in;
    MoeGrads moe;
    LayerNormGrads ln_out;
    Matrix output_proj;
};

LmGrads make_zero_lm_grads(const ToyLmModel& model);

struct LmEvalStats {
    double loss = 0.0;
    std::size_t selected_gates = 0;
    std::size_t zero_gates = 0;  // selected gates equal to 0.0
};

/// Cross-entropy of one (context, target) example. When grads is non-null
/// the backward pass accumulates into it, scaled by upstream_scale (the
/// caller passes 1/batch for averaged batch losses). stats, when non-null,
/// accumulates gate-sparsity counters from the routing decision.
double lm_example_loss(const ToyLmModel& model, std::span<const unsigned char> context,
                       unsigned target, LmGrads* grads = nullptr, double upstream_scale = 1.0,
                       LmEvalStats* stats = nullptr);

// ---------------------------------------------------------------------------
// Synthetic regression
// ---------------------------------------------------------------------------

/// Fixed two-layer tanh target network, d -> 32 -> d, drawn once from a
/// constant seed so every run regresses the same function.
struct RegressionTeacher {
    Matrix w1;
    Vector b1;
    Matrix w2;
    Vector b2;

    Vector operator()(std::span<const double> x) const;
};

RegressionTeacher make_regression_teacher(std::size_t d);

/// Held-out inputs for the regression task, drawn from a constant seed
/// (independent of the run seed) so all seeds share one eval set.
std::vector<Vector> make_regression_eval_set(std::size_t d, std::size_t n);

/// 0.5 * mean_j (moe(x)_j - teacher(x)_j)^2, with optional backward into
/// grads (scaled by upstream_scale) and gate counters into stats.
double regression_example_loss(const MoeLayer& layer, const RegressionTeacher& teacher,
                               std::span<const double> x, MoeGrads* grads = nullptr,
                               double upstream_scale = 1.0, LmEvalStats* stats = nullptr);

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

class TrainingAborted final : public std::runtime_error {
public:
    TrainingAborted(const std::string& what, std::size_t step)
        : std::runtime_error(what), step(step) {}

    std::size_t step;
};

struct TrainRecord {
    std::size_t step;
    double train_loss;  // mean batch loss since the previous record
    double eval_loss;
};

struct RunResult {
    std::uint64_t seed = 0;
    std::vector<TrainRecord> records;
    double final_eval_loss = 0.0;
    double zero_gate_fraction = 0.0;  // over selected gates in the final eval pass
    double wall_clock_seconds = 0.0;
    MoeLayer moe;  // trained layer, for checkpointing
};

std::string load_corpus(const std::string& path);

/// scale_initial for the run's router: 1.0, or the frozen Monte Carlo
/// estimate (10000 samples from a constant seed, so every seed of a config
/// shares the same value).
double resolve_scale_initial(const TrainConfig& config);

/// One seed of one config. Deterministic and single threaded: identical
/// (config, seed, corpus) reproduce the result bit for bit, wall clock
/// aside. Throws TrainingAborted when a batch loss goes non-finite.
/// corpus is the raw byte string for char_lm and ignored for regression.
RunResult train_single(const TrainConfig& config, std::uint64_t seed, const std::string& corpus);

// ---------------------------------------------------------------------------
// Aggregation across seeds
// ---------------------------------------------------------------------------

struct AggregatePoint {
    std::size_t step;
    double mean_train_loss;
    double var_train_loss;
    double mean_eval_loss;
    double var_eval_loss;
};

/// Population variance (divide by n): the seeds enumerate the cohort being
/// described rather than sampling a larger one. Two-pass computation.
std::pair<double, double> mean_and_population_variance(std::span<const double> values);

/// Per-step mean and variance over runs; requires every run to share the
/// same record grid (guaranteed for equal configs).
std::vector<AggregatePoint> aggregate_runs(const std::vector<RunResult>& runs);

}  // namespace moerlab
