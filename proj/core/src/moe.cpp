#include "moerlab/moe.hpp"

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <numbers>
#include <stdexcept>

namespace moerlab {

namespace {

inline constexpr double kInvSqrt2 = 1.0 / std::numbers::sqrt2;

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); }

double gelu_derivative(double x) {
    const double cdf = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
    const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
    return cdf + x * pdf;
}

double activate(Activation act, double x) {
    return act == Activation::Gelu ? gelu(x) : std::max(x, 0.0);
}

double activate_derivative(Activation act, double x) {
    if (act == Activation::Gelu)
        return gelu_derivative(x);
    return x > 0.0 ? 1.0 : 0.0;
}

}  // namespace

const char* to_string(Activation act) noexcept {
    return act == Activation::Gelu ? "gelu" : "relu";
}

Vector expert_forward(const ExpertParams& e, std::span<const double> x, ExpertCache* cache) {
    require(x.size() == e.dim(), "expert_forward: input dimension mismatch");
    Vector pre = matvec(e.w1, x);
    for (std::size_t i = 0; i < pre.size(); ++i)
        pre[i] += e.b1[i];
    Vector hidden(pre.size());
    for (std::size_t i = 0; i < pre.size(); ++i)
        hidden[i] = activate(e.activation, pre[i]);
    Vector out = matvec(e.w2, hidden);
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] += e.b2[i];
    if (cache) {
        cache->pre = std::move(pre);
        cache->hidden = std::move(hidden);
    }
    return out;
}

MoeLayer make_moe_layer(RouterKind kind, std::size_t experts, std::size_t k, std::size_t dim,
                        std::size_t hidden, Activation activation, double eps,
                        double scale_initial, Rng& rng) {
    require(experts >= 1 && k >= 1 && k <= experts, "make_moe_layer: need 1 <= k <= M");
    require(dim >= 1 && hidden >= 1, "make_moe_layer: need positive dim and hidden");

    MoeLayer layer;
    layer.k = k;
    layer.router.kind = kind;
    layer.router.eps = eps;
    layer.router.scale_initial = scale_initial;
    layer.router.gamma = 1.0;
    layer.router.w = kaiming_init(experts, dim, rng);
    layer.router.b.assign(experts, 0.0);
    layer.experts.reserve(experts);
    for (std::size_t m = 0; m < experts; ++m) {
        ExpertParams e;
        e.activation = activation;
        e.w1 = kaiming_init(hidden, dim, rng);
        e.b1.assign(hidden, 0.0);
        e.w2 = kaiming_init(dim, hidden, rng);
        e.b2.assign(dim, 0.0);
        layer.experts.push_back(std::move(e));
    }
    return layer;
}

Vector moe_forward(const MoeLayer& layer, std::span<const double> x, MoeCache* cache) {
    require(layer.expert_count() == layer.router.experts(),
            "moe_forward: router/expert count mismatch");
    GateOutput gate = route(layer.router, x, layer.k, layer.renormalize_after_topk);

    Vector out(layer.dim(), 0.0);
    std::vector<ExpertCache> expert_caches;
    std::vector<Vector> expert_outputs;
    expert_caches.resize(gate.selected.size());
    expert_outputs.reserve(gate.selected.size());

    for (std::size_t i = 0; i < gate.selected.size(); ++i) {
        const std::size_t m = gate.selected[i];
        Vector em = expert_forward(layer.experts[m], x, cache ? &expert_caches[i] : nullptr);
        axpy(gate.sparse_gates[m], em, out);
        expert_outputs.push_back(std::move(em));
    }

    if (cache) {
        cache->gates = std::move(gate);
        cache->expert_caches = std::move(expert_caches);
        cache->expert_outputs = std::move(expert_outputs);
        cache->input.assign(x.begin(), x.end());
    }
    return out;
}

MoeGrads make_zero_grads(const MoeLayer& layer) {
    MoeGrads g;
    g.router.w = Matrix(layer.router.experts(), layer.dim());
    g.router.b.assign(layer.router.experts(), 0.0);
    g.router.gamma = 0.0;
    g.router.x.assign(layer.dim(), 0.0);
    g.experts.resize(layer.expert_count());
    for (std::size_t m = 0; m < layer.expert_count(); ++m) {
        g.experts[m].w1 = Matrix(layer.hidden(), layer.dim());
        g.experts[m].b1.assign(layer.hidden(), 0.0);
        g.experts[m].w2 = Matrix(layer.dim(), layer.hidden());
        g.experts[m].b2.assign(layer.dim(), 0.0);
    }
    g.x.assign(layer.dim(), 0.0);
    return g;
}

void moe_backward_accum(const MoeLayer& layer, const MoeCache& cache,
                        std::span<const double> upstream, MoeGrads& grads) {
    require(upstream.size() == layer.dim(), "moe_backward: upstream dimension mismatch");
    require(cache.expert_caches.size() == cache.gates.selected.size(),
            "moe_backward: cache missing expert activations");
    require(grads.experts.size() == layer.expert_count(), "moe_backward: grads shape mismatch");

    const std::size_t d = layer.dim();
    Vector router_upstream(layer.expert_count(), 0.0);
    Vector expert_up(d), dhidden(layer.hidden()), dpre(layer.hidden()), dx_part(d);

    for (std::size_t i = 0; i < cache.gates.selected.size(); ++i) {
        const std::size_t m = cache.gates.selected[i];
        const double g = cache.gates.sparse_gates[m];
        const ExpertParams& e = layer.experts[m];
        const ExpertCache& ec = cache.expert_caches[i];

        router_upstream[m] = dot(upstream, cache.expert_outputs[i]);

        for (std::size_t j = 0; j < d; ++j)
            expert_up[j] = g * upstream[j];
        add_outer(grads.experts[m].w2, expert_up, ec.hidden);
        axpy(1.0, expert_up, grads.experts[m].b2);
        matvec_transpose_into(e.w2, expert_up, dhidden);
        for (std::size_t j = 0; j < dpre.size(); ++j)
            dpre[j] = dhidden[j] * activate_derivative(e.activation, ec.pre[j]);
        add_outer(grads.experts[m].w1, dpre, cache.input);
        axpy(1.0, dpre, grads.experts[m].b1);
        matvec_transpose_into(e.w1, dpre, dx_part);
        axpy(1.0, dx_part, grads.x);
    }

    const RouterGrads rg =
        router_backward(layer.router, cache.gates, router_upstream, cache.input);
    for (std::size_t i = 0; i < rg.w.size(); ++i)
        grads.router.w.flat()[i] += rg.w.flat()[i];
    axpy(1.0, rg.b, grads.router.b);
    grads.router.gamma += rg.gamma;
    axpy(1.0, rg.x, grads.router.x);
    axpy(1.0, rg.x, grads.x);
}

MoeGrads moe_backward(const MoeLayer& layer, const MoeCache& cache,
                      std::span<const double> upstream) {
    MoeGrads grads = make_zero_grads(layer);
    moe_backward_accum(layer, cache, upstream, grads);
    return grads;
}

double output_scale_probe(RouterKind kind, std::size_t experts, std::size_t k, std::size_t dim,
                          std::size_t hidden, std::size_t samples, Rng& rng) {
    require(samples >= 4, "output_scale_probe: need at least 4 samples");
    const std::size_t redraws = 4;
    double total = 0.0;
    std::size_t used = 0;
    Vector x(dim);
    for (std::size_t r = 0; r < redraws; ++r) {
        const std::size_t chunk = samples / redraws + (r < samples % redraws ? 1 : 0);
        MoeLayer layer =
            make_moe_layer(kind, experts, k, dim, hidden, Activation::Gelu, 1e-8, 1.0, rng);
        for (std::size_t s = 0; s < chunk; ++s) {
            rng.fill_normal(x, 0.0, 1.0);
            const Vector out = moe_forward(layer, x);
            const double n = norm2(out);
            total += n * n;
            ++used;
        }
    }
    return total / static_cast<double>(used);
}

std::size_t moe_param_count(const MoeLayer& layer) {
    const std::size_t d = layer.dim();
    const std::size_t h = layer.hidden();
    return param_count(layer.router) + layer.expert_count() * (2 * d * h + h + d);
}

std::pair<std::size_t, std::size_t> moe_active_param_count(const MoeLayer& layer) {
    const std::size_t d = layer.dim();
    const std::size_t h = layer.hidden();
    const std::size_t per_expert = 2 * d * h + h + d;
    const std::size_t router = param_count(layer.router);
    return {router + layer.expert_count() * per_expert, router + layer.k * per_expert};
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

namespace {

constexpr std::uint32_t kMagic = 0x31454f4dU;  // "MOE1" little-endian
constexpr std::uint32_t kVersion = 1;

void put_u32(std::ostream& os, std::uint32_t v) {
    char b[4];
    for (int i = 0; i < 4; ++i)
        b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    os.write(b, 4);
}

void put_f64(std::ostream& os, double d) {
    const auto v = std::bit_cast<std::uint64_t>(d);
    char b[8];
    for (int i = 0; i < 8; ++i)
        b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    os.write(b, 8);
}

void put_span(std::ostream& os, std::span<const double> xs) {
    for (double v : xs)
        put_f64(os, v);
}

std::uint32_t get_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    if (!is)
        throw std::runtime_error("checkpoint: truncated file");
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

double get_f64(std::istream& is) {
    unsigned char b[8];
    is.read(reinterpret_cast<char*>(b), 8);
    if (!is)
        throw std::runtime_error("checkpoint: truncated file");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
        v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return std::bit_cast<double>(v);
}

void get_span(std::istream& is, std::span<double> xs) {
    for (double& v : xs)
        v = get_f64(is);
}

}  // namespace

void save_checkpoint(const MoeLayer& layer, const std::filesystem::path& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os)
        throw std::runtime_error("checkpoint: cannot open " + path.string() + " for writing");

    put_u32(os, kMagic);
    put_u32(os, kVersion);
    put_u32(os, static_cast<std::uint32_t>(layer.expert_count()));
    put_u32(os, static_cast<std::uint32_t>(layer.dim()));
    put_u32(os, static_cast<std::uint32_t>(layer.hidden()));
    put_u32(os, static_cast<std::uint32_t>(layer.k));
    put_u32(os, static_cast<std::uint32_t>(layer.router.kind));
    put_u32(os, static_cast<std::uint32_t>(layer.experts.empty()
                                               ? Activation::Gelu
                                               : layer.experts[0].activation));
    put_u32(os, layer.renormalize_after_topk ? 1 : 0);
    put_f64(os, layer.router.eps);
    put_f64(os, layer.router.scale_initial);
    put_f64(os, layer.router.gamma);
    put_span(os, layer.router.w.flat());
    put_span(os, layer.router.b);
    for (const ExpertParams& e : layer.experts) {
        put_span(os, e.w1.flat());
        put_span(os, e.b1);
        put_span(os, e.w2.flat());
        put_span(os, e.b2);
    }
    os.flush();
    if (!os)
        throw std::runtime_error("checkpoint: write failed for " + path.string());
}

MoeLayer load_checkpoint(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is)
        throw std::runtime_error("checkpoint: cannot open " + path.string());

    if (get_u32(is) != kMagic)
        throw std::runtime_error("checkpoint: bad magic in " + path.string());
    if (get_u32(is) != kVersion)
        throw std::runtime_error("checkpoint: unsupported version in " + path.string());
    const std::uint32_t m = get_u32(is);
    const std::uint32_t d = get_u32(is);
    const std::uint32_t h = get_u32(is);
    const std::uint32_t k = get_u32(is);
    const std::uint32_t kind_raw = get_u32(is);
    const std::uint32_t act_raw = get_u32(is);
    const std::uint32_t renorm = get_u32(is);
    if (m == 0 || d == 0 || h == 0 || k == 0 || k > m)
        throw std::runtime_error("checkpoint: invalid shape header in " + path.string());
    if (kind_raw > static_cast<std::uint32_t>(RouterKind::KernAfterTopK))
        throw std::runtime_error("checkpoint: unknown router kind in " + path.string());
    if (act_raw > static_cast<std::uint32_t>(Activation::Relu))
        throw std::runtime_error("checkpoint: unknown activation in " + path.string());
    if (renorm > 1)
        throw std::runtime_error("checkpoint: invalid renormalize flag in " + path.string());

    MoeLayer layer;
    layer.k = k;
    layer.renormalize_after_topk = renorm == 1;
    layer.router.kind = static_cast<RouterKind>(kind_raw);
    layer.router.eps = get_f64(is);
    layer.router.scale_initial = get_f64(is);
    layer.router.gamma = get_f64(is);
    layer.router.w = Matrix(m, d);
    get_span(is, layer.router.w.flat());
    layer.router.b.assign(m, 0.0);
    get_span(is, layer.router.b);
    layer.experts.resize(m);
    for (ExpertParams& e : layer.experts) {
        e.activation = static_cast<Activation>(act_raw);
        e.w1 = Matrix(h, d);
        get_span(is, e.w1.flat());
        e.b1.assign(h, 0.0);
        get_span(is, e.b1);
        e.w2 = Matrix(d, h);
        get_span(is, e.w2.flat());
        e.b2.assign(d, 0.0);
        get_span(is, e.b2);
    }
    is.peek();
    if (!is.eof())
        throw std::runtime_error("checkpoint: trailing bytes in " + path.string());
    return layer;
}

}  // namespace moerlab
