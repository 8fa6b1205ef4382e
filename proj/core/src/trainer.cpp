#include "moerlab/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <sstream>

#include "moerlab/adam.hpp"

namespace moerlab {

// ---------------------------------------------------------------------------
// Layer norm
// ---------------------------------------------------------------------------

LayerNormParams LayerNormParams::identity(std::size_t d) {
    LayerNormParams p;
    p.gamma.assign(d, 1.0);
    p.beta.assign(d, 0.0);
    return p;
}

Vector layer_norm_forward(const LayerNormParams& params, std::span<const double> x,
                          LayerNormCache* cache) {
    const std::size_t n = x.size();
    require(n >= 1 && params.gamma.size() == n && params.beta.size() == n,
            "layer_norm_forward: shape mismatch");
    double mean = 0.0;
    for (double v : x)
        mean += v;
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (double v : x)
        var += (v - mean) * (v - mean);
    var /= static_cast<double>(n);
    const double inv_std = 1.0 / std::sqrt(var + kLayerNormEps);

    Vector out(n);
    Vector normalized(n);
    for (std::size_t i = 0; i < n; ++i) {
        normalized[i] = (x[i] - mean) * inv_std;
        out[i] = params.gamma[i] * normalized[i] + params.beta[i];
    }
    if (cache) {
        cache->normalized = std::move(normalized);
        cache->inv_std = inv_std;
    }
    return out;
}

Vector layer_norm_backward(const LayerNormParams& params, const LayerNormCache& cache,
                           std::span<const double> upstream, LayerNormGrads& grads) {
    const std::size_t n = upstream.size();
    require(cache.normalized.size() == n, "layer_norm_backward: cache/upstream mismatch");
    require(grads.gamma.size() == n && grads.beta.size() == n,
            "layer_norm_backward: grads shape mismatch");

    Vector dnorm(n);
    for (std::size_t i = 0; i < n; ++i) {
        grads.gamma[i] += upstream[i] * cache.normalized[i];
        grads.beta[i] += upstream[i];
        dnorm[i] = upstream[i] * params.gamma[i];
    }
    double m1 = 0.0, m2 = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        m1 += dnorm[i];
        m2 += dnorm[i] * cache.normalized[i];
    }
    m1 /= static_cast<double>(n);
    m2 /= static_cast<double>(n);
    Vector dx(n);
    for (std::size_t i = 0; i < n; ++i)
        dx[i] = cache.inv_std * (dnorm[i] - m1 - cache.normalized[i] * m2);
    return dx;
}

// ---------------------------------------------------------------------------
// Toy LM
// ---------------------------------------------------------------------------

ToyLmModel make_toy_lm_model(const TrainConfig& config, double scale_initial, Rng& rng) {
    ToyLmModel model;
    model.window = config.window;
    model.embedding = normal_init(ToyLmModel::kVocab, config.d, 0.02, rng);
    model.ln_in = LayerNormParams::identity(config.d);
    model.moe = make_moe_layer(config.kind, config.experts, config.k, config.d, config.h_e,
                               config.expert_activation, config.eps, scale_initial, rng);
    model.moe.renormalize_after_topk = config.renormalize_after_topk;
    model.ln_out = LayerNormParams::identity(config.d);
    model.output_proj = normal_init(ToyLmModel::kVocab, config.d, 0.02, rng);
    return model;
}

std::pair<std::size_t, std::size_t> lm_param_count(const ToyLmModel& model) {
    const std::size_t d = model.dim();
    const std::size_t dense = model.embedding.size() + model.output_proj.size() + 4 * d;
    const auto [moe_total, moe_active] = moe_active_param_count(model.moe);
    return {dense + moe_total, dense + moe_active};
}

LmGrads make_zero_lm_grads(const ToyLmModel& model) {
    LmGrads g;
    const std::size_t d = model.dim();
    g.embedding = Matrix(ToyLmModel::kVocab, d);
    g.ln_in.gamma.assign(d, 0.0);
    g.ln_in.beta.assign(d, 0.0);
    g.moe = make_zero_grads(model.moe);
    g.ln_out.gamma.assign(d, 0.0);
    g.ln_out.beta.assign(d, 0.0);
    g.output_proj = Matrix(ToyLmModel::kVocab, d);
    return g;
}

namespace {

void count_gate_stats(const GateOutput& gates, LmEvalStats* stats) {
    if (!stats)
        return;
    for (std::size_t idx : gates.selected) {
        ++stats->selected_gates;
        if (gates.sparse_gates[idx] == 0.0)
            ++stats->zero_gates;
    }
}

}  // namespace

double lm_example_loss(const ToyLmModel& model, std::span<const unsigned char> context,
                       unsigned target, LmGrads* grads, double upstream_scale,
                       LmEvalStats* stats) {
    const std::size_t d = model.dim();
    require(!context.empty(), "lm_example_loss: empty context");
    require(target < ToyLmModel::kVocab, "lm_example_loss: target out of range");

    // e: mean embedding of the context bytes
    Vector e(d, 0.0);
    for (unsigned char byte : context)
        axpy(1.0, model.embedding.row(byte), e);
    scale_inplace(e, 1.0 / static_cast<double>(context.size()));

    LayerNormCache ln_in_cache;
    const Vector u = layer_norm_forward(model.ln_in, e, grads ? &ln_in_cache : nullptr);

    MoeCache moe_cache;
    const Vector moe_out = moe_forward(model.moe, u, &moe_cache);
    count_gate_stats(moe_cache.gates, stats);

    Vector h(d);
    for (std::size_t i = 0; i < d; ++i)
        h[i] = e[i] + moe_out[i];

    LayerNormCache ln_out_cache;
    const Vector z = layer_norm_forward(model.ln_out, h, grads ? &ln_out_cache : nullptr);

    Vector logits = matvec(model.output_proj, z);
    const double mx = *std::max_element(logits.begin(), logits.end());
    double sum = 0.0;
    for (double l : logits)
        sum += std::exp(l - mx);
    const double lse = mx + std::log(sum);
    const double loss = lse - logits[target];
    if (stats)
        stats->loss += loss;
    if (!grads)
        return loss;

    // d loss / d logits = softmax(logits) - onehot(target)
    Vector dlogits(ToyLmModel::kVocab);
    for (std::size_t j = 0; j < ToyLmModel::kVocab; ++j)
        dlogits[j] = std::exp(logits[j] - lse) * upstream_scale;
    dlogits[target] -= upstream_scale;

    add_outer(grads->output_proj, dlogits, z);
    const Vector dz = matvec_transpose(model.output_proj, dlogits);
    const Vector dh = layer_norm_backward(model.ln_out, ln_out_cache, dz, grads->ln_out);

    // h = e + moe(u): dh feeds both the residual path and the MoE. The
    // accumulated grads.moe.x slot doubles as this example's du scratch
    // (input gradients are never consumed across examples).
    std::fill(grads->moe.x.begin(), grads->moe.x.end(), 0.0);
    moe_backward_accum(model.moe, moe_cache, dh, grads->moe);
    const Vector du = grads->moe.x;

    const Vector de_ln = layer_norm_backward(model.ln_in, ln_in_cache, du, grads->ln_in);
    Vector de(d);
    for (std::size_t i = 0; i < d; ++i)
        de[i] = dh[i] + de_ln[i];

    const double inv_window = 1.0 / static_cast<double>(context.size());
    for (unsigned char byte : context)
        axpy(inv_window, de, grads->embedding.row(byte));

    return loss;
}

// ---------------------------------------------------------------------------
// Synthetic regression
// ---------------------------------------------------------------------------

Vector RegressionTeacher::operator()(std::span<const double> x) const {
    Vector h = matvec(w1, x);
    for (std::size_t i = 0; i < h.size(); ++i)
        h[i] = std::tanh(h[i] + b1[i]);
    Vector y = matvec(w2, h);
    for (std::size_t i = 0; i < y.size(); ++i)
        y[i] += b2[i];
    return y;
}

RegressionTeacher make_regression_teacher(std::size_t d) {
    Rng rng(0x7e2c8e52u);
    RegressionTeacher t;
    t.w1 = kaiming_init(32, d, rng);
    t.b1.assign(32, 0.0);
    t.w2 = kaiming_init(d, 32, rng);
    t.b2.assign(d, 0.0);
    return t;
}

std::vector<Vector> make_regression_eval_set(std::size_t d, std::size_t n) {
    Rng rng(0xe7a15e7u);
    std::vector<Vector> points(n, Vector(d));
    for (auto& x : points)
        rng.fill_normal(x, 0.0, 1.0);
    return points;
}

double regression_example_loss(const MoeLayer& layer, const RegressionTeacher& teacher,
                               std::span<const double> x, MoeGrads* grads, double upstream_scale,
                               LmEvalStats* stats) {
    const std::size_t d = layer.dim();
    const Vector y = teacher(x);
    MoeCache cache;
    const Vector yhat = moe_forward(layer, x, &cache);
    count_gate_stats(cache.gates, stats);

    double loss = 0.0;
    Vector residual(d);
    for (std::size_t j = 0; j < d; ++j) {
        residual[j] = yhat[j] - y[j];
        loss += residual[j] * residual[j];
    }
    loss *= 0.5 / static_cast<double>(d);
    if (stats)
        stats->loss += loss;
    if (!grads)
        return loss;

    Vector upstream(d);
    for (std::size_t j = 0; j < d; ++j)
        upstream[j] = residual[j] * upstream_scale / static_cast<double>(d);
    moe_backward_accum(layer, cache, upstream, *grads);
    return loss;
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

namespace {

// One optimizer slot: a parameter tensor, its gradient, and Adam moments.
struct TensorSlot {
    std::span<double> param;
    std::span<double> grad;
    AdamState state;
};

void add_slot(std::vector<TensorSlot>& slots, std::span<double> param, std::span<double> grad,
              const TrainConfig& config) {
    require(param.size() == grad.size(), "trainer: slot size mismatch");
    slots.push_back(TensorSlot{param, grad,
                               AdamState::for_size(param.size(), config.lr, config.betas[0],
                                                   config.betas[1])});
}

void add_moe_slots(std::vector<TensorSlot>& slots, MoeLayer& moe, MoeGrads& grads,
                   const TrainConfig& config) {
    add_slot(slots, moe.router.w.flat(), grads.router.w.flat(), config);
    add_slot(slots, moe.router.b, grads.router.b, config);
    if (is_kern_family(moe.router.kind))
        add_slot(slots, {&moe.router.gamma, 1}, {&grads.router.gamma, 1}, config);
    for (std::size_t m = 0; m < moe.experts.size(); ++m) {
        add_slot(slots, moe.experts[m].w1.flat(), grads.experts[m].w1.flat(), config);
        add_slot(slots, moe.experts[m].b1, grads.experts[m].b1, config);
        add_slot(slots, moe.experts[m].w2.flat(), grads.experts[m].w2.flat(), config);
        add_slot(slots, moe.experts[m].b2, grads.experts[m].b2, config);
    }
}

void zero_slot_grads(std::vector<TensorSlot>& slots) {
    for (auto& slot : slots)
        std::fill(slot.grad.begin(), slot.grad.end(), 0.0);
}

// Global-norm clip at 1.0 across every slot, then one Adam step per slot.
void clip_and_step(std::vector<TensorSlot>& slots) {
    double ssq = 0.0;
    for (const auto& slot : slots)
        for (double g : slot.grad)
            ssq += g * g;
    const double norm = std::sqrt(ssq);
    if (norm > 1.0) {
        const double scale = 1.0 / norm;
        for (auto& slot : slots)
            scale_inplace(slot.grad, scale);
    }
    for (auto& slot : slots)
        adam_step(slot.param, slot.grad, slot.state);
}

std::string abort_message(std::size_t step, const LmEvalStats& stats) {
    std::ostringstream os;
    os << "non-finite batch loss at step " << step << " (selected gates " << stats.selected_gates
       << ", zero gates " << stats.zero_gates << ")";
    return os.str();
}

// Shared schedule: record at step 0 (no update), then every eval_every
// steps and at the final step. train_loss in a record is the mean batch
// loss since the previous record.
template <typename BatchFn, typename EvalFn>
RunResult run_schedule(const TrainConfig& config, std::uint64_t seed,
                       std::vector<TensorSlot>& slots, BatchFn&& batch_loss, EvalFn&& eval_loss) {
    const auto t0 = std::chrono::steady_clock::now();
    RunResult result;
    result.seed = seed;

    const double initial = batch_loss(false);
    result.records.push_back({0, initial, eval_loss(nullptr)});

    double running_sum = 0.0;
    std::size_t running_count = 0;
    for (std::size_t step = 1; step <= config.steps; ++step) {
        zero_slot_grads(slots);
        double loss = 0.0;
        try {
            loss = batch_loss(true);
        } catch (const ContractViolation& e) {
            // Shapes are fixed for the whole run, so a contract failure
            // inside the step loop means parameters went non-finite.
            throw TrainingAborted("aborted at step " + std::to_string(step) + ": " + e.what(),
                                  step);
        }
        if (!std::isfinite(loss)) {
            LmEvalStats stats;
            try {
                eval_loss(&stats);
            } catch (const ContractViolation&) {
            }
            throw TrainingAborted(abort_message(step, stats), step);
        }
        clip_and_step(slots);
        running_sum += loss;
        ++running_count;
        if (step % config.eval_every == 0 || step == config.steps) {
            LmEvalStats stats;
            const bool final_step = step == config.steps;
            const double ev = eval_loss(final_step ? &stats : nullptr);
            result.records.push_back({step, running_sum / static_cast<double>(running_count), ev});
            running_sum = 0.0;
            running_count = 0;
            if (final_step) {
                result.final_eval_loss = ev;
                result.zero_gate_fraction =
                    stats.selected_gates == 0
                        ? 0.0
                        : static_cast<double>(stats.zero_gates) /
                              static_cast<double>(stats.selected_gates);
            }
        }
    }

    result.wall_clock_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return result;
}

RunResult train_char_lm(const TrainConfig& config, std::uint64_t seed, const std::string& corpus) {
    const std::size_t len = corpus.size();
    const std::size_t window = config.window;
    require(len >= window + 20, "train: corpus too short for the context window");
    const std::size_t split = len * 9 / 10;
    require(split > window && split < len, "train: corpus too short to carve an eval shard");

    Rng rng(seed);
    ToyLmModel model = make_toy_lm_model(config, resolve_scale_initial(config), rng);
    LmGrads grads = make_zero_lm_grads(model);

    std::vector<TensorSlot> slots;
    add_slot(slots, model.embedding.flat(), grads.embedding.flat(), config);
    add_slot(slots, model.ln_in.gamma, grads.ln_in.gamma, config);
    add_slot(slots, model.ln_in.beta, grads.ln_in.beta, config);
    add_moe_slots(slots, model.moe, grads.moe, config);
    add_slot(slots, model.ln_out.gamma, grads.ln_out.gamma, config);
    add_slot(slots, model.ln_out.beta, grads.ln_out.beta, config);
    add_slot(slots, model.output_proj.flat(), grads.output_proj.flat(), config);

    const auto* bytes = reinterpret_cast<const unsigned char*>(corpus.data());
    const std::size_t n_avail = len - split;
    const std::size_t n_eval = std::min<std::size_t>(512, n_avail);
    std::vector<std::size_t> eval_positions(n_eval);
    for (std::size_t i = 0; i < n_eval; ++i)
        eval_positions[i] = split + i * n_avail / n_eval;

    auto batch_loss = [&](bool with_grads) {
        double total = 0.0;
        const double inv_batch = 1.0 / static_cast<double>(config.batch_size);
        for (std::size_t b = 0; b < config.batch_size; ++b) {
            const std::size_t p = window + rng.uniform_index(split - window);
            total += lm_example_loss(model, {bytes + p - window, window},
                                     bytes[p], with_grads ? &grads : nullptr, inv_batch);
        }
        return total * inv_batch;
    };
    auto eval_loss = [&](LmEvalStats* stats) {
        double total = 0.0;
        for (std::size_t p : eval_positions)
            total += lm_example_loss(model, {bytes + p - window, window}, bytes[p], nullptr, 1.0,
                                     stats);
        return total / static_cast<double>(n_eval);
    };

    RunResult result = run_schedule(config, seed, slots, batch_loss, eval_loss);
    result.moe = std::move(model.moe);
    return result;
}

RunResult train_regression(const TrainConfig& config, std::uint64_t seed) {
    Rng rng(seed);
    MoeLayer model = make_moe_layer(config.kind, config.experts, config.k, config.d, config.h_e,
                                    config.expert_activation, config.eps,
                                    resolve_scale_initial(config), rng);
    model.renormalize_after_topk = config.renormalize_after_topk;
    MoeGrads grads = make_zero_grads(model);

    std::vector<TensorSlot> slots;
    add_moe_slots(slots, model, grads, config);

    const RegressionTeacher teacher = make_regression_teacher(config.d);
    const std::vector<Vector> eval_set = make_regression_eval_set(config.d, 256);

    Vector x(config.d);
    auto batch_loss = [&](bool with_grads) {
        double total = 0.0;
        const double inv_batch = 1.0 / static_cast<double>(config.batch_size);
        for (std::size_t b = 0; b < config.batch_size; ++b) {
            rng.fill_normal(x, 0.0, 1.0);
            total += regression_example_loss(model, teacher, x, with_grads ? &grads : nullptr,
                                             inv_batch);
        }
        return total * inv_batch;
    };
    auto eval_loss = [&](LmEvalStats* stats) {
        double total = 0.0;
        for (const Vector& point : eval_set)
            total += regression_example_loss(model, teacher, point, nullptr, 1.0, stats);
        return total / static_cast<double>(eval_set.size());
    };

    RunResult result = run_schedule(config, seed, slots, batch_loss, eval_loss);
    result.moe = std::move(model);
    return result;
}

}  // namespace

std::string load_corpus(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw ConfigError("cannot open corpus file '" + path + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    std::string corpus = buf.str();
    if (corpus.empty())
        throw ConfigError("corpus file '" + path + "' is empty");
    return corpus;
}

double resolve_scale_initial(const TrainConfig& config) {
    if (config.init_method == ScaleInitMethod::One)
        return 1.0;
    // Frozen at a constant seed: every seed of a config shares the value.
    Rng rng(0x5ca1e0u);
    return monte_carlo_scale_init(config.experts, config.k, 10000, rng);
}

RunResult train_single(const TrainConfig& config, std::uint64_t seed, const std::string& corpus) {
    config.validate();
    if (config.task == Task::CharLm)
        return train_char_lm(config, seed, corpus);
    return train_regression(config, seed);
}

std::pair<double, double> mean_and_population_variance(std::span<const double> values) {
    require(!values.empty(), "mean_and_population_variance: empty input");
    double mean = 0.0;
    for (double v : values)
        mean += v;
    mean /= static_cast<double>(values.size());
    double var = 0.0;
    for (double v : values)
        var += (v - mean) * (v - mean);
    var /= static_cast<double>(values.size());
    return {mean, var};
}

std::vector<AggregatePoint> aggregate_runs(const std::vector<RunResult>& runs) {
    require(!runs.empty(), "aggregate_runs: no runs");
    const std::size_t n_records = runs[0].records.size();
    for (const RunResult& run : runs)
        require(run.records.size() == n_records, "aggregate_runs: record grids differ");

    std::vector<AggregatePoint> points;
    points.reserve(n_records);
    Vector train(runs.size()), eval(runs.size());
    for (std::size_t r = 0; r < n_records; ++r) {
        const std::size_t step = runs[0].records[r].step;
        for (std::size_t i = 0; i < runs.size(); ++i) {
            require(runs[i].records[r].step == step, "aggregate_runs: record grids differ");
            train[i] = runs[i].records[r].train_loss;
            eval[i] = runs[i].records[r].eval_loss;
        }
        const auto [mt, vt] = mean_and_population_variance(train);
        const auto [me, ve] = mean_and_population_variance(eval);
        points.push_back({step, mt, vt, me, ve});
    }
    return points;
}

}  // namespace moerlab
