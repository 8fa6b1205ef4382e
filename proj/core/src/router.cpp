#include "moerlab/router.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>

#include "fmt_detail.hpp"

namespace moerlab {

namespace testhooks {
bool kern_backward_sign_flip = false;
}  // namespace testhooks

const char* to_string(RouterKind kind) noexcept {
    switch (kind) {
        case RouterKind::Softmax: return "softmax";
        case RouterKind::Sigmoid: return "sigmoid";
        case RouterKind::Tanh: return "tanh";
        case RouterKind::Kern: return "kern";
        case RouterKind::KernNoRelu: return "kern_norelu";
        case RouterKind::KernAfterTopK: return "kern_after_topk";
    }
    return "?";
}

std::optional<RouterKind> parse_router_kind(const std::string& name) noexcept {
    for (RouterKind kind :
         {RouterKind::Softmax, RouterKind::Sigmoid, RouterKind::Tanh, RouterKind::Kern,
          RouterKind::KernNoRelu, RouterKind::KernAfterTopK}) {
        if (name == to_string(kind))
            return kind;
    }
    return std::nullopt;
}

bool is_kern_family(RouterKind kind) noexcept {
    return kind == RouterKind::Kern || kind == RouterKind::KernNoRelu ||
           kind == RouterKind::KernAfterTopK;
}

GateOutput router_forward(const RouterParams& params, std::span<const double> x) {
    const std::size_t m = params.experts();
    require(m >= 1, "router_forward: no experts");
    require(x.size() == params.dim(), "router_forward: input dimension mismatch");
    require(params.b.size() == m, "router_forward: bias size mismatch");
    require(all_finite(x), "router_forward: non-finite input");

    GateOutput out;
    auto& cache = out.cache;
    cache.logits = matvec(params.w, x);
    for (std::size_t i = 0; i < m; ++i)
        cache.logits[i] += params.b[i];
    require(all_finite(cache.logits), "router_forward: non-finite logits");

    const Vector& s = cache.logits;
    out.dense_gates.assign(m, 0.0);
    const double scale = params.gamma * params.scale_initial;

    switch (params.kind) {
        case RouterKind::Softmax: {
            const double mx = *std::max_element(s.begin(), s.end());
            double sum = 0.0;
            for (std::size_t i = 0; i < m; ++i) {
                out.dense_gates[i] = std::exp(s[i] - mx);
                sum += out.dense_gates[i];
            }
            for (double& g : out.dense_gates)
                g /= sum;
            break;
        }
        case RouterKind::Sigmoid:
            for (std::size_t i = 0; i < m; ++i)
                out.dense_gates[i] = 1.0 / (1.0 + std::exp(-s[i]));
            break;
        case RouterKind::Tanh:
            for (std::size_t i = 0; i < m; ++i)
                out.dense_gates[i] = std::tanh(s[i]);
            break;
        case RouterKind::Kern:
        case RouterKind::KernNoRelu: {
            cache.logit_norm = norm2(s);
            const double inv = 1.0 / (cache.logit_norm + params.eps);
            cache.normalized.resize(m);
            for (std::size_t i = 0; i < m; ++i)
                cache.normalized[i] = s[i] * inv;
            for (std::size_t i = 0; i < m; ++i) {
                const double v = (params.kind == RouterKind::Kern)
                                     ? std::max(cache.normalized[i], 0.0)
                                     : cache.normalized[i];
                out.dense_gates[i] = scale * v;
            }
            break;
        }
        case RouterKind::KernAfterTopK:
            // Selection happens on raw logits; the per-kind activation runs
            // on the selected subvector inside top_k_select.
            out.dense_gates = s;
            break;
    }

    cache.activated = out.dense_gates;
    cache.forward_done = true;
    return out;
}

void top_k_select(const RouterParams& params, GateOutput& gate, std::size_t k,
                  bool renormalize_after_topk) {
    const std::size_t m = params.experts();
    require(gate.cache.forward_done, "top_k_select: forward pass missing");
    require(k >= 1 && k <= m, "top_k_select: k out of range");

    std::vector<std::size_t> order(m);
    std::iota(order.begin(), order.end(), 0);
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                      [&](std::size_t a, std::size_t b) {
                          if (gate.dense_gates[a] != gate.dense_gates[b])
                              return gate.dense_gates[a] > gate.dense_gates[b];
                          return a < b;
                      });
    gate.selected.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k));
    std::sort(gate.selected.begin(), gate.selected.end());

    gate.sparse_gates.assign(m, 0.0);

    if (params.kind == RouterKind::KernAfterTopK) {
        auto& cache = gate.cache;
        Vector picked(k);
        for (std::size_t i = 0; i < k; ++i)
            picked[i] = cache.logits[gate.selected[i]];
        cache.selected_norm = norm2(picked);
        const double inv = 1.0 / (cache.selected_norm + params.eps);
        cache.selected_normalized.resize(k);
        const double scale = params.gamma * params.scale_initial;
        for (std::size_t i = 0; i < k; ++i) {
            cache.selected_normalized[i] = picked[i] * inv;
            const double g = scale * std::max(cache.selected_normalized[i], 0.0);
            gate.sparse_gates[gate.selected[i]] = g;
            gate.dense_gates[gate.selected[i]] = g;
        }
    } else {
        for (std::size_t idx : gate.selected)
            gate.sparse_gates[idx] = gate.dense_gates[idx];
    }

    if (renormalize_after_topk) {
        require(params.kind == RouterKind::Softmax || params.kind == RouterKind::Sigmoid,
                "top_k_select: renormalize_after_topk requires softmax or sigmoid gates");
        double sum = 0.0;
        for (std::size_t idx : gate.selected)
            sum += gate.sparse_gates[idx];
        require(sum > 0.0, "top_k_select: degenerate renormalization sum");
        for (std::size_t idx : gate.selected) {
            gate.sparse_gates[idx] /= sum;
            gate.dense_gates[idx] = gate.sparse_gates[idx];
        }
        gate.renormalized = true;
        gate.renorm_sum = sum;
    }
}

GateOutput route(const RouterParams& params, std::span<const double> x, std::size_t k,
                 bool renormalize_after_topk) {
    GateOutput gate = router_forward(params, x);
    top_k_select(params, gate, k, renormalize_after_topk);
    return gate;
}

namespace {

// ds = J^T dsbar for sbar = s / (n + eps), n = |s|_2. The Jacobian
//   d sbar_i / d s_j = delta_ij / (n + eps) - s_i s_j / (n (n + eps)^2)
// is symmetric. At n == 0 the coupling term vanishes (the map is s / eps
// to first order). The testhook flips the coupling sign to exercise the
// gradient verifier's sensitivity.
Vector norm_jacobian_apply(const Vector& s, double n, double eps, const Vector& dsbar) {
    const double denom = n + eps;
    Vector ds(s.size());
    for (std::size_t i = 0; i < s.size(); ++i)
        ds[i] = dsbar[i] / denom;
    if (n > 0.0) {
        double coupling = dot(s, dsbar) / (n * denom * denom);
        if (testhooks::kern_backward_sign_flip)
            coupling = -coupling;
        for (std::size_t i = 0; i < s.size(); ++i)
            ds[i] -= s[i] * coupling;
    }
    return ds;
}

}  // namespace

RouterGrads router_backward(const RouterParams& params, const GateOutput& gate,
                            std::span<const double> upstream, std::span<const double> x) {
    const std::size_t m = params.experts();
    require(gate.cache.forward_done, "router_backward: forward pass missing");
    require(!gate.selected.empty(), "router_backward: top_k_select missing");
    require(upstream.size() == m, "router_backward: upstream size mismatch");
    require(x.size() == params.dim(), "router_backward: input dimension mismatch");

    // Gradient reaches the router only through the selected gate values.
    Vector u(m, 0.0);
    for (std::size_t idx : gate.selected)
        u[idx] = upstream[idx];

    if (gate.renormalized) {
        // g_i = t_i / S over the selected set; dL/dt_i = (u_i - <u, g>) / S.
        double inner = 0.0;
        for (std::size_t idx : gate.selected)
            inner += u[idx] * gate.sparse_gates[idx];
        for (std::size_t idx : gate.selected)
            u[idx] = (u[idx] - inner) / gate.renorm_sum;
    }

    const auto& cache = gate.cache;
    const double scale_c = params.scale_initial;
    RouterGrads grads;
    grads.w = Matrix(m, params.dim());
    grads.b.assign(m, 0.0);
    grads.x.assign(params.dim(), 0.0);
    Vector ds(m, 0.0);

    switch (params.kind) {
        case RouterKind::Softmax: {
            const Vector& p = cache.activated;
            double inner = 0.0;
            for (std::size_t i = 0; i < m; ++i)
                inner += u[i] * p[i];
            for (std::size_t i = 0; i < m; ++i)
                ds[i] = p[i] * (u[i] - inner);
            break;
        }
        case RouterKind::Sigmoid: {
            const Vector& p = cache.activated;
            for (std::size_t i = 0; i < m; ++i)
                ds[i] = u[i] * p[i] * (1.0 - p[i]);
            break;
        }
        case RouterKind::Tanh: {
            const Vector& a = cache.activated;
            for (std::size_t i = 0; i < m; ++i)
                ds[i] = u[i] * (1.0 - a[i] * a[i]);
            break;
        }
        case RouterKind::Kern:
        case RouterKind::KernNoRelu: {
            const bool with_relu = params.kind == RouterKind::Kern;
            Vector dsbar(m);
            for (std::size_t i = 0; i < m; ++i) {
                const double act = with_relu ? std::max(cache.normalized[i], 0.0)
                                             : cache.normalized[i];
                grads.gamma += u[i] * scale_c * act;
                double d = u[i] * params.gamma * scale_c;
                if (with_relu && cache.normalized[i] <= 0.0)
                    d = 0.0;
                dsbar[i] = d;
            }
            ds = norm_jacobian_apply(cache.logits, cache.logit_norm, params.eps, dsbar);
            break;
        }
        case RouterKind::KernAfterTopK: {
            const std::size_t k = gate.selected.size();
            Vector picked(k), u_sel(k), dsbar(k);
            for (std::size_t i = 0; i < k; ++i) {
                picked[i] = cache.logits[gate.selected[i]];
                u_sel[i] = u[gate.selected[i]];
            }
            for (std::size_t i = 0; i < k; ++i) {
                const double act = std::max(cache.selected_normalized[i], 0.0);
                grads.gamma += u_sel[i] * scale_c * act;
                double d = u_sel[i] * params.gamma * scale_c;
                if (cache.selected_normalized[i] <= 0.0)
                    d = 0.0;
                dsbar[i] = d;
            }
            const Vector ds_sel =
                norm_jacobian_apply(picked, cache.selected_norm, params.eps, dsbar);
            for (std::size_t i = 0; i < k; ++i)
                ds[gate.selected[i]] = ds_sel[i];
            break;
        }
    }

    add_outer(grads.w, ds, x);
    grads.b = ds;
    matvec_transpose_into(params.w, ds, grads.x);
    return grads;
}

double monte_carlo_scale_init(std::size_t d, std::size_t k, std::size_t num_samples, Rng& rng) {
    require(d >= 1 && k >= 1 && k <= d, "monte_carlo_scale_init: need 1 <= k <= d");
    require(num_samples >= 1, "monte_carlo_scale_init: need at least one sample");

    Vector x(d), y(d);
    double total = 0.0;
    for (std::size_t s = 0; s < num_samples; ++s) {
        double top_mass = 0.0;
        std::size_t attempts = 0;
        do {
            require(++attempts <= 10000, "monte_carlo_scale_init: rejection loop stuck");
            rng.fill_normal(x, 0.0, 1.0);
            const double n = norm2(x);
            if (n == 0.0)
                continue;
            for (std::size_t i = 0; i < d; ++i)
                y[i] = std::max(x[i] / n, 0.0);
            std::sort(y.begin(), y.end(), std::greater<>());
            top_mass = 0.0;
            for (std::size_t i = 0; i < k; ++i)
                top_mass += y[i] * y[i];
        } while (top_mass == 0.0);
        // top_mass <= |x/n|^2 = 1, so each sample is >= 1.
        total += 1.0 / std::sqrt(top_mass);
    }
    return total / static_cast<double>(num_samples);
}

std::size_t param_count(const RouterParams& params) {
    std::size_t n = params.experts() * params.dim() + params.b.size();
    if (is_kern_family(params.kind))
        n += 1;  // gamma
    return n;
}

std::size_t routing_flops(RouterKind kind, std::size_t experts, std::size_t dim) {
    // Convention: one flop per multiply, add, compare, divide, or libm call.
    // Projection w x + b: M*d multiplies and M*d adds (inner-sum adds plus
    // the bias add).
    const std::size_t m = experts;
    std::size_t flops = 2 * m * dim;
    switch (kind) {
        case RouterKind::Softmax:
            // max scan M, subtract M, exp M, sum M-1, divide M
            flops += 5 * m - 1;
            break;
        case RouterKind::Sigmoid:
            // negate, exp, add, divide per entry
            flops += 4 * m;
            break;
        case RouterKind::Tanh:
            flops += m;
            break;
        case RouterKind::Kern:
            // norm: M mul + (M-1) add + sqrt + eps add; divide M; relu
            // compare M; scale: 1 mul + M mul
            flops += 5 * m + 2;
            break;
        case RouterKind::KernNoRelu:
            flops += 4 * m + 2;
            break;
        case RouterKind::KernAfterTopK:
            // Dense scoring emits raw logits; the O(k) post-selection
            // normalization is not part of the dense pipeline.
            break;
    }
    return flops;
}

void write_golden_csv(const RouterParams& params, std::span<const Vector> inputs, std::size_t k,
                      std::ostream& os) {
    const std::size_t m = params.experts();
    const std::size_t d = params.dim();
    for (std::size_t j = 0; j < d; ++j)
        os << "input_" << j << ",";
    for (std::size_t j = 0; j < m; ++j)
        os << "dense_" << j << ",";
    os << "selected";
    for (std::size_t j = 0; j < m; ++j)
        os << ",sparse_" << j;
    os << "\n";
    for (const Vector& x : inputs) {
        const GateOutput gate = route(params, x, k);
        for (double v : x)
            os << detail::g17(v) << ",";
        for (double v : gate.dense_gates)
            os << detail::g17(v) << ",";
        for (std::size_t i = 0; i < gate.selected.size(); ++i)
            os << (i ? ";" : "") << gate.selected[i];
        for (double v : gate.sparse_gates)
            os << "," << detail::g17(v);
        os << "\n";
    }
}

}  // namespace moerlab
