#pragma once

#include <cstddef>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "moerlab/matrix.hpp"
#include "moerlab/rng.hpp"

namespace moerlab {

enum class RouterKind {
    Softmax,
    Sigmoid,
    Tanh,
    Kern,
    KernNoRelu,
    KernAfterTopK,
};

const char* to_string(RouterKind kind) noexcept;
std::optional<RouterKind> parse_router_kind(const std::string& name) noexcept;
bool is_kern_family(RouterKind kind) noexcept;

/// Router weights. The score pipeline, per kind, with s = w x + b:
///
///   Softmax        g = exp(s - max s) / sum exp(s - max s)
///   Sigmoid        g_m = 1 / (1 + exp(-s_m))
///   Tanh           g_m = tanh(s_m)
///   Kern           sbar = s / (|s|_2 + eps); g = gamma * scale_initial * relu(sbar)
///   KernNoRelu     g = gamma * scale_initial * sbar
///   KernAfterTopK  top-k selects on raw s; the selected subvector is then
///                  l2-normalized, relu'd and scaled (see top_k_select)
///
/// gamma is the only trainable scalar beyond w and b; scale_initial is a
/// frozen constant (1, or the Monte Carlo estimate from
/// monte_carlo_scale_init).
struct RouterParams {
    Matrix w;                    // M × d
    Vector b;                    // M
    double gamma = 1.0;
    double eps = 1e-8;
    RouterKind kind = RouterKind::Softmax;
    double scale_initial = 1.0;  // frozen, not trained

    std::size_t experts() const noexcept { return w.rows(); }
    std::size_t dim() const noexcept { return w.cols(); }
};

/// Values saved by the forward pass for the backward pass.
struct RouterCache {
    Vector logits;          // s, always present
    Vector activated;       // full pre-top-k gate vector (per-kind activation)
    Vector normalized;      // sbar, Kern/KernNoRelu only
    double logit_norm = 0;  // |s|_2, Kern/KernNoRelu only
    // KernAfterTopK, filled by top_k_select:
    Vector selected_normalized;  // k-dim normalized selected subvector
    double selected_norm = 0;    // |s restricted to selected|_2
    bool forward_done = false;
};

/// Dense gates plus top-k retention. `selected` holds exactly k indices in
/// ascending order (selection is by value, ties broken toward the lower
/// index). sparse_gates matches dense_gates on selected entries and is zero
/// elsewhere. For Kern, a selected gate may itself be zero (relu), so fewer
/// than k nonzero entries is normal. For KernAfterTopK, dense_gates holds
/// the raw logits until top_k_select rewrites the selected entries with
/// their final gate values.
struct GateOutput {
    Vector dense_gates;
    std::vector<std::size_t> selected;
    Vector sparse_gates;
    RouterCache cache;
    bool renormalized = false;  // l1 rescale applied over the selected set
    double renorm_sum = 0.0;
};

/// Dense scoring pass. Returns a GateOutput precursor: dense_gates and
/// cache are filled, selected/sparse_gates are not.
GateOutput router_forward(const RouterParams& params, std::span<const double> x);

/// Retains the k largest dense gates. With renormalize_after_topk the
/// surviving gates are rescaled to sum to one (valid for Softmax and
/// Sigmoid only; the Kern pipeline never rescales).
void top_k_select(const RouterParams& params, GateOutput& gate, std::size_t k,
                  bool renormalize_after_topk = false);

/// forward + top_k_select in one call.
GateOutput route(const RouterParams& params, std::span<const double> x, std::size_t k,
                 bool renormalize_after_topk = false);

struct RouterGrads {
    Matrix w;      // M × d
    Vector b;      // M
    double gamma = 0.0;
    Vector x;      // d
};

/// Analytic backward. `upstream` is dLoss/d(sparse_gates), length M.
/// Selection indices are constants; gradient flows through selected gate
/// values only. The Kern chain routes gradient through the full
/// l2-normalization Jacobian
///   d sbar_i / d s_j = delta_ij / (n + eps) - s_i s_j / (n (n + eps)^2),
/// n = |s|_2, so every logit can receive gradient even when unselected.
/// Softmax couples all logits through its own Jacobian; Sigmoid and Tanh
/// are elementwise and leave unselected logits at exactly zero.
RouterGrads router_backward(const RouterParams& params, const GateOutput& gate,
                            std::span<const double> upstream, std::span<const double> x);

/// Mean over num_samples of 1/sqrt(sum of squares of the k largest entries
/// of relu(x / |x|_2)), x ~ N(0, I_d). Samples whose top-k mass is all zero
/// are rejected and redrawn. Every per-sample value is >= 1.
double monte_carlo_scale_init(std::size_t d, std::size_t k, std::size_t num_samples, Rng& rng);

/// M*d + M, plus one for the Kern-family gamma scalar.
std::size_t param_count(const RouterParams& params);

/// Static per-token FLOP count of the scoring pipeline (documented
/// convention: one flop per multiply, add, compare, divide, or libm call).
/// All kinds share the 2*M*d + M projection term; they differ only in an
/// O(M) activation/normalization term.
std::size_t routing_flops(RouterKind kind, std::size_t experts, std::size_t dim);

/// Golden-vector dump: one CSV record per input with the input vector,
/// dense gates, selected indices and sparse gates, floats at 17
/// significant digits.
void write_golden_csv(const RouterParams& params, std::span<const Vector> inputs,
                      std::size_t k, std::ostream& os);

namespace testhooks {
// Deliberate fault injection for verifier sensitivity tests: flips the sign
// of the norm-coupling term in the Kern backward pass.
extern bool kern_backward_sign_flip;
}  // namespace testhooks

}  // namespace moerlab
