#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <vector>

#include "moerlab/matrix.hpp"
#include "moerlab/rng.hpp"
#include "moerlab/router.hpp"

namespace moerlab {

enum class Activation { Gelu, Relu };

const char* to_string(Activation act) noexcept;

/// Two-layer expert: E(x) = w2 * act(w1 x + b1) + b2, mapping d -> d
/// through hidden width h_e.
struct ExpertParams {
    Matrix w1;  // h_e × d
    Vector b1;  // h_e
    Matrix w2;  // d × h_e
    Vector b2;  // d
    Activation activation = Activation::Gelu;

    std::size_t dim() const noexcept { return w1.cols(); }
    std::size_t hidden() const noexcept { return w1.rows(); }
};

struct ExpertCache {
    Vector pre;     // w1 x + b1
    Vector hidden;  // act(pre)
};

Vector expert_forward(const ExpertParams& e, std::span<const double> x,
                      ExpertCache* cache = nullptr);

struct ExpertGrads {
    Matrix w1;
    Vector b1;
    Matrix w2;
    Vector b2;
};

/// Gate-weighted mixture of M experts with top-k dispatch.
struct MoeLayer {
    RouterParams router;
    std::vector<ExpertParams> experts;
    std::size_t k = 1;
    bool renormalize_after_topk = false;

    std::size_t expert_count() const noexcept { return experts.size(); }
    std::size_t dim() const noexcept { return router.dim(); }
    std::size_t hidden() const noexcept { return experts.empty() ? 0 : experts[0].hidden(); }
};

MoeLayer make_moe_layer(RouterKind kind, std::size_t experts, std::size_t k, std::size_t dim,
                        std::size_t hidden, Activation activation, double eps,
                        double scale_initial, Rng& rng);

struct MoeCache {
    GateOutput gates;
    std::vector<ExpertCache> expert_caches;   // selected order
    std::vector<Vector> expert_outputs;       // selected order
    Vector input;
};

/// out = sum over selected m of g_m(x) * E_m(x). Only selected experts are
/// evaluated; accumulation runs in ascending expert index order.
Vector moe_forward(const MoeLayer& layer, std::span<const double> x, MoeCache* cache = nullptr);

struct MoeGrads {
    RouterGrads router;
    std::vector<ExpertGrads> experts;  // size M; exactly zero for unselected experts
    Vector x;
};

MoeGrads make_zero_grads(const MoeLayer& layer);

/// Full backward through the mixture. Router upstream is
/// dLoss/dg_m = <upstream, E_m(x)> on selected entries; expert gradients
/// are nonzero only for selected experts. Accumulates into `grads`.
void moe_backward_accum(const MoeLayer& layer, const MoeCache& cache,
                        std::span<const double> upstream, MoeGrads& grads);

/// Convenience wrapper returning freshly zeroed gradients.
MoeGrads moe_backward(const MoeLayer& layer, const MoeCache& cache,
                      std::span<const double> upstream);

/// Monte Carlo estimate of E |MoE(x)|_2^2 at initialization: standard
/// normal inputs against Kaiming-initialized layers (the layer is redrawn
/// four times across the sample budget).
double output_scale_probe(RouterKind kind, std::size_t experts, std::size_t k, std::size_t dim,
                          std::size_t hidden, std::size_t samples, Rng& rng);

/// Router parameters plus M * (2 d h_e + h_e + d).
std::size_t moe_param_count(const MoeLayer& layer);

/// (total, active): active replaces the M experts with k.
std::pair<std::size_t, std::size_t> moe_active_param_count(const MoeLayer& layer);

/// Flat binary checkpoint, little-endian:
///   u32 magic 'M','O','E','1'; u32 version (1); u32 M, d, h_e, k;
///   u32 router kind; u32 expert activation; u32 renormalize flag;
///   f64 eps, scale_initial, gamma;
///   f64 router w (row-major), router b;
///   per expert m = 0..M-1: f64 w1, b1, w2, b2.
void save_checkpoint(const MoeLayer& layer, const std::filesystem::path& path);
MoeLayer load_checkpoint(const std::filesystem::path& path);

}  // namespace moerlab
