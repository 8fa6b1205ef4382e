#include "moerlab/verify.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <sstream>

#include "moerlab/moe.hpp"
#include "moerlab/nwkernel.hpp"
#include "moerlab/router.hpp"
#include "moerlab/rng.hpp"

namespace moerlab {

namespace {

constexpr RouterKind kAllKinds[] = {RouterKind::Softmax,    RouterKind::Sigmoid,
                                    RouterKind::Tanh,       RouterKind::Kern,
                                    RouterKind::KernNoRelu, RouterKind::KernAfterTopK};

double block_rel_error(std::span<const double> analytic, std::span<const double> fd) {
    const double na = norm2(analytic);
    const double nf = norm2(fd);
    if (na < 1e-10 && nf < 1e-10)
        return 0.0;
    double dsq = 0.0;
    for (std::size_t i = 0; i < analytic.size(); ++i) {
        const double d = analytic[i] - fd[i];
        dsq += d * d;
    }
    return std::sqrt(dsq) / std::max(na, nf);
}

std::string join(std::span<const double> xs) {
    std::ostringstream os;
    os.precision(17);
    for (std::size_t i = 0; i < xs.size(); ++i)
        os << (i ? " " : "") << xs[i];
    return os.str();
}

// Finite differences need the top-k selection and every ReLU kink to be
// stable under +-fd_step parameter nudges. Rejected instances are redrawn.
bool routing_fd_safe(const RouterParams& params, const GateOutput& gate, std::size_t k) {
    const std::size_t m = params.experts();
    const auto& cache = gate.cache;

    if (params.kind == RouterKind::Kern || params.kind == RouterKind::KernNoRelu) {
        if (cache.logit_norm < 1e-2)
            return false;
        if (params.kind == RouterKind::Kern)
            for (double v : cache.normalized)
                if (std::abs(v) < 1e-5)
                    return false;
    }
    if (params.kind == RouterKind::KernAfterTopK) {
        if (cache.selected_norm < 1e-2)
            return false;
        for (double v : cache.selected_normalized)
            if (std::abs(v) < 1e-5)
                return false;
    }

    if (k == m)
        return true;

    // Selection boundary: sort the values selection actually ranks on.
    Vector ranked = params.kind == RouterKind::KernAfterTopK ? cache.logits : cache.activated;
    std::sort(ranked.begin(), ranked.end(), std::greater<>());
    const double at_k = ranked[k - 1];
    const double below = ranked[k];
    if (params.kind == RouterKind::Kern && at_k == 0.0)
        return true;  // tie among exact zeros resolves by index and is nudge-stable
    if (params.kind == RouterKind::Kern && below == 0.0)
        return at_k > 1e-4;
    return at_k - below > 1e-4;
}

// Scalar test loss over the sparse gates: L = <c, g> + 0.5 <q, g*g>.
double router_loss(const RouterParams& params, std::span<const double> x, std::size_t k,
                   const Vector& c, const Vector& q) {
    const GateOutput gate = route(params, x, k);
    double loss = 0.0;
    for (std::size_t i = 0; i < c.size(); ++i) {
        const double g = gate.sparse_gates[i];
        loss += c[i] * g + 0.5 * q[i] * g * g;
    }
    return loss;
}

struct RouterInstance {
    RouterParams params;
    Vector x, c, q;
    std::size_t k = 1;
};

RouterInstance make_router_instance(RouterKind kind, std::size_t m, std::size_t d, Rng& rng) {
    RouterInstance inst;
    for (std::size_t attempt = 0; attempt < 2000; ++attempt) {
        inst.params.kind = kind;
        inst.params.eps = 1e-8;
        inst.params.w = kaiming_init(m, d, rng);
        inst.params.b.assign(m, 0.0);
        rng.fill_normal(inst.params.b, 0.0, 0.3);
        inst.params.gamma = 0.5 + rng.uniform();
        inst.params.scale_initial = rng.uniform() < 0.5 ? 1.0 : 2.0;
        // KernAfterTopK with k == 1 normalizes a scalar: the gate is
        // sign(s) up to the eps term, so its true logit derivative is
        // ~eps/(|s|+eps)^2. Central differences at step 1e-6 only see
        // cancellation noise there, so FD sampling starts at k = 2.
        inst.k = kind == RouterKind::KernAfterTopK ? 2 + rng.uniform_index(m - 1)
                                                   : 1 + rng.uniform_index(m);
        inst.x.resize(d);
        rng.fill_normal(inst.x, 0.0, 1.0);
        inst.c.resize(m);
        rng.fill_normal(inst.c, 0.0, 1.0);
        inst.q.resize(m);
        rng.fill_normal(inst.q, 0.0, 1.0);

        const GateOutput gate = route(inst.params, inst.x, inst.k);
        if (routing_fd_safe(inst.params, gate, inst.k))
            return inst;
    }
    require(false, "make_router_instance: could not draw an fd-safe instance");
    return inst;
}

struct BlockCheck {
    std::string name;
    double rel_error;
};

// Central differences across every parameter block of one router instance.
std::vector<BlockCheck> fd_check_router(const RouterInstance& inst, double h) {
    const std::size_t m = inst.params.experts();
    const std::size_t d = inst.params.dim();

    const GateOutput gate = route(inst.params, inst.x, inst.k);
    Vector upstream(m);
    for (std::size_t i = 0; i < m; ++i)
        upstream[i] = inst.c[i] + inst.q[i] * gate.sparse_gates[i];
    const RouterGrads grads = router_backward(inst.params, gate, upstream, inst.x);

    std::vector<BlockCheck> checks;
    RouterParams p = inst.params;

    Vector fd_w(m * d);
    for (std::size_t i = 0; i < m * d; ++i) {
        const double orig = p.w.flat()[i];
        p.w.flat()[i] = orig + h;
        const double lp = router_loss(p, inst.x, inst.k, inst.c, inst.q);
        p.w.flat()[i] = orig - h;
        const double lm = router_loss(p, inst.x, inst.k, inst.c, inst.q);
        p.w.flat()[i] = orig;
        fd_w[i] = (lp - lm) / (2.0 * h);
    }
    checks.push_back({"w", block_rel_error(grads.w.flat(), fd_w)});

    Vector fd_b(m);
    for (std::size_t i = 0; i < m; ++i) {
        const double orig = p.b[i];
        p.b[i] = orig + h;
        const double lp = router_loss(p, inst.x, inst.k, inst.c, inst.q);
        p.b[i] = orig - h;
        const double lm = router_loss(p, inst.x, inst.k, inst.c, inst.q);
        p.b[i] = orig;
        fd_b[i] = (lp - lm) / (2.0 * h);
    }
    checks.push_back({"b", block_rel_error(grads.b, fd_b)});

    if (is_kern_family(inst.params.kind)) {
        const double orig = p.gamma;
        p.gamma = orig + h;
        const double lp = router_loss(p, inst.x, inst.k, inst.c, inst.q);
        p.gamma = orig - h;
        const double lm = router_loss(p, inst.x, inst.k, inst.c, inst.q);
        p.gamma = orig;
        const double fd_gamma = (lp - lm) / (2.0 * h);
        checks.push_back({"gamma", block_rel_error({&grads.gamma, 1}, {&fd_gamma, 1})});
    }

    Vector xp = inst.x;
    Vector fd_x(d);
    for (std::size_t i = 0; i < d; ++i) {
        const double orig = xp[i];
        xp[i] = orig + h;
        const double lp = router_loss(inst.params, xp, inst.k, inst.c, inst.q);
        xp[i] = orig - h;
        const double lm = router_loss(inst.params, xp, inst.k, inst.c, inst.q);
        xp[i] = orig;
        fd_x[i] = (lp - lm) / (2.0 * h);
    }
    checks.push_back({"x", block_rel_error(grads.x, fd_x)});

    return checks;
}

double moe_loss(const MoeLayer& layer, std::span<const double> x) {
    const Vector out = moe_forward(layer, x);
    return 0.5 * dot(out, out);
}

MoeLayer make_moe_instance(RouterKind kind, std::size_t m, std::size_t d, std::size_t h_e,
                           Activation activation, Vector& x, Rng& rng) {
    for (std::size_t attempt = 0; attempt < 2000; ++attempt) {
        MoeLayer layer = make_moe_layer(kind, m, 1 + rng.uniform_index(m), d, h_e, activation,
                                        1e-8, 1.0, rng);
        rng.fill_normal(layer.router.b, 0.0, 0.3);
        layer.router.gamma = 0.5 + rng.uniform();
        x.resize(d);
        rng.fill_normal(x, 0.0, 1.0);

        MoeCache cache;
        moe_forward(layer, x, &cache);
        if (!routing_fd_safe(layer.router, cache.gates, layer.k))
            continue;
        if (activation == Activation::Relu) {
            bool near_kink = false;
            for (const ExpertCache& ec : cache.expert_caches)
                for (double pre : ec.pre)
                    near_kink |= std::abs(pre) < 1e-5;
            if (near_kink)
                continue;
        }
        return layer;
    }
    require(false, "make_moe_instance: could not draw an fd-safe instance");
    return MoeLayer{};
}

std::vector<BlockCheck> fd_check_moe(const MoeLayer& layer, const Vector& x, double h) {
    MoeCache cache;
    const Vector out = moe_forward(layer, x, &cache);
    const MoeGrads grads = moe_backward(layer, cache, out);

    std::vector<BlockCheck> checks;
    MoeLayer lp = layer;

    auto fd_block = [&](std::span<double> block, std::span<const double> analytic,
                        const std::string& name) {
        Vector fd(block.size());
        for (std::size_t i = 0; i < block.size(); ++i) {
            const double orig = block[i];
            block[i] = orig + h;
            const double plus = moe_loss(lp, x);
            block[i] = orig - h;
            const double minus = moe_loss(lp, x);
            block[i] = orig;
            fd[i] = (plus - minus) / (2.0 * h);
        }
        checks.push_back({name, block_rel_error(analytic, fd)});
    };

    fd_block(lp.router.w.flat(), grads.router.w.flat(), "router.w");
    fd_block(lp.router.b, grads.router.b, "router.b");
    if (is_kern_family(layer.router.kind))
        fd_block({&lp.router.gamma, 1}, {&grads.router.gamma, 1}, "router.gamma");
    for (std::size_t m = 0; m < layer.expert_count(); ++m) {
        const std::string tag = "expert" + std::to_string(m);
        fd_block(lp.experts[m].w1.flat(), grads.experts[m].w1.flat(), tag + ".w1");
        fd_block(lp.experts[m].b1, grads.experts[m].b1, tag + ".b1");
        fd_block(lp.experts[m].w2.flat(), grads.experts[m].w2.flat(), tag + ".w2");
        fd_block(lp.experts[m].b2, grads.experts[m].b2, tag + ".b2");
    }

    Vector xp = x;
    Vector fd_x(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double orig = xp[i];
        xp[i] = orig + h;
        const double plus = moe_loss(layer, xp);
        xp[i] = orig - h;
        const double minus = moe_loss(layer, xp);
        xp[i] = orig;
        fd_x[i] = (plus - minus) / (2.0 * h);
    }
    checks.push_back({"x", block_rel_error(grads.x, fd_x)});

    return checks;
}

}  // namespace

VerifyReport verify_gradients(const VerifyOptions& options) {
    VerifyReport report;
    std::ostringstream detail;
    Rng rng(options.seed);

    constexpr std::size_t ms[] = {4, 8, 64};
    constexpr std::size_t ds[] = {8, 16};

    for (RouterKind kind : kAllKinds) {
        double worst = 0.0;
        for (std::size_t i = 0; i < options.instances; ++i) {
            const std::size_t m = ms[i % 3];
            const std::size_t d = ds[(i / 3) % 2];
            const RouterInstance inst = make_router_instance(kind, m, d, rng);
            for (const BlockCheck& check : fd_check_router(inst, options.fd_step)) {
                worst = std::max(worst, check.rel_error);
                if (check.rel_error > options.tolerance && report.ok) {
                    report.ok = false;
                    detail << "FAIL router=" << to_string(kind) << " M=" << m << " d=" << d
                           << " k=" << inst.k << " block=" << check.name
                           << " rel_error=" << check.rel_error << "\n"
                           << "  x = " << join(inst.x) << "\n"
                           << "  b = " << join(inst.params.b) << "\n"
                           << "  gamma = " << inst.params.gamma
                           << " scale_initial = " << inst.params.scale_initial << "\n";
                }
            }
            ++report.checked;
        }
        detail << "router " << to_string(kind) << ": " << options.instances
               << " instances, worst block rel error " << worst << "\n";
    }

    double worst_moe = 0.0;
    for (std::size_t i = 0; i < options.instances; ++i) {
        const std::size_t m = (i % 2) ? 8 : 4;
        const RouterKind kind = kAllKinds[i % 6];
        const Activation act = (i % 4 == 3) ? Activation::Relu : Activation::Gelu;
        Vector x;
        const MoeLayer layer = make_moe_instance(kind, m, 6, 5, act, x, rng);
        for (const BlockCheck& check : fd_check_moe(layer, x, options.fd_step)) {
            worst_moe = std::max(worst_moe, check.rel_error);
            if (check.rel_error > options.tolerance && report.ok) {
                report.ok = false;
                detail << "FAIL moe router=" << to_string(kind) << " M=" << m
                       << " k=" << layer.k << " act=" << to_string(act)
                       << " block=" << check.name << " rel_error=" << check.rel_error << "\n"
                       << "  x = " << join(x) << "\n";
            }
        }
        ++report.checked;
    }
    detail << "moe layer: " << options.instances << " instances, worst block rel error "
           << worst_moe << "\n";

    report.detail = detail.str();
    return report;
}

VerifyReport verify_unselected_gradients(const VerifyOptions& options) {
    VerifyReport report;
    std::ostringstream detail;
    Rng rng(options.seed + 1);
    const std::size_t m = 8, d = 8, k = 3;
    const double h = options.fd_step;

    std::size_t kern_coupled = 0;
    for (std::size_t i = 0; i < options.instances; ++i) {
        // Kern: at least one positive selected gate, else the whole gradient
        // vanishes and the coupling claim is vacuous.
        RouterInstance inst;
        GateOutput gate;
        bool found = false;
        for (std::size_t attempt = 0; attempt < 500 && !found; ++attempt) {
            inst = make_router_instance(RouterKind::Kern, m, d, rng);
            inst.k = k;
            gate = route(inst.params, inst.x, k);
            if (!routing_fd_safe(inst.params, gate, k))
                continue;
            for (std::size_t idx : gate.selected)
                if (gate.sparse_gates[idx] > 0.0)
                    found = true;
        }
        require(found, "verify_unselected_gradients: no usable Kern instance");

        Vector upstream(m);
        for (std::size_t j = 0; j < m; ++j)
            upstream[j] = inst.c[j] + inst.q[j] * gate.sparse_gates[j];
        const RouterGrads grads = router_backward(inst.params, gate, upstream, inst.x);

        std::vector<bool> selected(m, false);
        for (std::size_t idx : gate.selected)
            selected[idx] = true;

        double best = 0.0;
        std::size_t best_j = m;
        for (std::size_t j = 0; j < m; ++j) {
            if (selected[j])
                continue;
            if (std::abs(grads.b[j]) > best) {
                best = std::abs(grads.b[j]);
                best_j = j;
            }
        }
        if (best > 1e-12) {
            ++kern_coupled;
            // finite-difference confirmation on the strongest unselected logit
            RouterParams p = inst.params;
            const double orig = p.b[best_j];
            p.b[best_j] = orig + h;
            const double lp = router_loss(p, inst.x, k, inst.c, inst.q);
            p.b[best_j] = orig - h;
            const double lm = router_loss(p, inst.x, k, inst.c, inst.q);
            const double fd = (lp - lm) / (2.0 * h);
            const double rel = std::abs(fd - grads.b[best_j]) /
                               std::max(std::abs(fd), std::abs(grads.b[best_j]));
            if (rel > options.tolerance && report.ok) {
                report.ok = false;
                detail << "FAIL kern unselected-logit fd mismatch: j=" << best_j
                       << " analytic=" << grads.b[best_j] << " fd=" << fd << "\n"
                       << "  x = " << join(inst.x) << "\n";
            }
        } else if (report.ok) {
            report.ok = false;
            detail << "FAIL kern: no unselected logit received gradient (expected norm "
                      "coupling)\n"
                   << "  x = " << join(inst.x) << "\n  b = " << join(inst.params.b) << "\n";
        }

        // Sigmoid under the same shape: unselected logits get exactly zero.
        const RouterInstance sg = make_router_instance(RouterKind::Sigmoid, m, d, rng);
        GateOutput sgate = route(sg.params, sg.x, k);
        Vector sup(m);
        for (std::size_t j = 0; j < m; ++j)
            sup[j] = sg.c[j] + sg.q[j] * sgate.sparse_gates[j];
        const RouterGrads sgrads = router_backward(sg.params, sgate, sup, sg.x);
        std::vector<bool> ssel(m, false);
        for (std::size_t idx : sgate.selected)
            ssel[idx] = true;
        for (std::size_t j = 0; j < m; ++j) {
            if (ssel[j])
                continue;
            RouterParams p = sg.params;
            const double orig = p.b[j];
            p.b[j] = orig + h;
            const double lp = router_loss(p, sg.x, k, sg.c, sg.q);
            p.b[j] = orig - h;
            const double lm = router_loss(p, sg.x, k, sg.c, sg.q);
            if ((sgrads.b[j] != 0.0 || lp != lm) && report.ok) {
                report.ok = false;
                detail << "FAIL sigmoid unselected logit " << j
                       << " received gradient: analytic=" << sgrads.b[j]
                       << " fd_delta=" << (lp - lm) << "\n"
                       << "  x = " << join(sg.x) << "\n";
            }
        }
        ++report.checked;
    }

    detail << "unselected gradients: " << report.checked << " instances, kern coupling seen in "
           << kern_coupled << "/" << report.checked << " (sigmoid always exactly zero)\n";
    report.detail = detail.str();
    return report;
}

VerifyReport verify_gate_properties(const VerifyOptions& options) {
    VerifyReport report;
    std::ostringstream detail;
    Rng rng(options.seed + 2);

    // Norm bound over 1e5 inputs, random Kern routers of both flavors.
    const std::size_t total_inputs = 100000;
    const std::size_t per_router = 1000;
    double worst_margin = -1e300;
    for (std::size_t r = 0; r < total_inputs / per_router; ++r) {
        RouterParams params;
        params.kind = (r % 2) ? RouterKind::KernAfterTopK : RouterKind::Kern;
        const std::size_t m = (r % 3 == 0) ? 64 : 8;
        const std::size_t d = (r % 3 == 0) ? 16 : 8;
        params.w = kaiming_init(m, d, rng);
        params.b.assign(m, 0.0);
        rng.fill_normal(params.b, 0.0, 0.5);
        params.gamma = rng.normal(1.0, 0.5);
        params.scale_initial = (r % 2) ? 2.7 : 1.0;
        const std::size_t k = 1 + rng.uniform_index(m);
        const double bound = std::abs(params.gamma) * params.scale_initial + 1e-9;

        Vector x(d);
        for (std::size_t s = 0; s < per_router; ++s) {
            rng.fill_normal(x, 0.0, 1.0);
            const GateOutput gate = route(params, x, k);
            const Vector& gates = params.kind == RouterKind::Kern ? gate.dense_gates
                                                                  : gate.sparse_gates;
            const double n = norm2(gates);
            worst_margin = std::max(worst_margin, n - bound);
            if (n > bound && report.ok) {
                report.ok = false;
                detail << "FAIL gate-norm bound: |g| = " << n << " > " << bound
                       << " (gamma=" << params.gamma << " scale=" << params.scale_initial
                       << " kind=" << to_string(params.kind) << ")\n  x = " << join(x) << "\n";
            }
            ++report.checked;
        }
    }
    detail << "gate-norm bound: " << total_inputs << " inputs, worst margin " << worst_margin
           << " (<= 0 required)\n";

    // ReLU zero fraction at init: half the dense Kern gate entries vanish.
    RouterParams params;
    params.kind = RouterKind::Kern;
    const std::size_t m = 16, d = 16;
    params.w = kaiming_init(m, d, rng);
    params.b.assign(m, 0.0);
    std::size_t zeros = 0;
    const std::size_t samples = 10000;
    Vector x(d);
    for (std::size_t s = 0; s < samples; ++s) {
        rng.fill_normal(x, 0.0, 1.0);
        const GateOutput gate = router_forward(params, x);
        for (double g : gate.dense_gates)
            if (g == 0.0)
                ++zeros;
    }
    const double frac = static_cast<double>(zeros) / static_cast<double>(samples * m);
    detail << "relu zero fraction at init: " << frac << " (expected 0.5 +- 0.02)\n";
    if (std::abs(frac - 0.5) > 0.02) {
        report.ok = false;
        detail << "FAIL zero fraction out of band\n";
    }
    report.checked += samples;

    report.detail = detail.str();
    return report;
}

namespace {

// Straightforward re-implementation of the Monte Carlo initializer used as
// an independent oracle; kept deliberately naive.
double mc_scale_oracle(std::size_t d, std::size_t k, std::size_t num_samples, Rng& rng,
                       double* min_sample) {
    Vector x(d);
    double total = 0.0;
    if (min_sample)
        *min_sample = 1e300;
    for (std::size_t s = 0; s < num_samples; ++s) {
        double acc = 0.0;
        while (true) {
            rng.fill_normal(x, 0.0, 1.0);
            double sq = 0.0;
            for (double v : x)
                sq += v * v;
            const double n = std::sqrt(sq);
            if (n == 0.0)
                continue;
            Vector squares;
            squares.reserve(d);
            for (double v : x) {
                const double r = v > 0.0 ? v / n : 0.0;
                squares.push_back(r * r);
            }
            std::sort(squares.begin(), squares.end());
            acc = 0.0;
            for (std::size_t i = 0; i < k; ++i)
                acc += squares[d - 1 - i];
            if (acc > 0.0)
                break;
        }
        const double sample = 1.0 / std::sqrt(acc);
        if (min_sample)
            *min_sample = std::min(*min_sample, sample);
        total += sample;
    }
    return total / static_cast<double>(num_samples);
}

}  // namespace

VerifyReport verify_mc_init(const VerifyOptions& options) {
    VerifyReport report;
    std::ostringstream detail;

    Rng oracle_rng(options.seed + 3);
    double min_sample = 0.0;
    const double oracle = mc_scale_oracle(64, 8, 100000, oracle_rng, &min_sample);
    Rng impl_rng(options.seed + 4);
    const double impl = monte_carlo_scale_init(64, 8, 100000, impl_rng);
    const double rel = std::abs(impl - oracle) / oracle;
    report.checked = 200000;

    detail << "mc init d=64 k=8: impl " << impl << " vs oracle " << oracle << " (rel diff "
           << rel << ", min sample " << min_sample << ")\n";
    if (rel > 0.005) {
        report.ok = false;
        detail << "FAIL mc init disagrees with the independent oracle beyond 0.5%\n";
    }
    if (min_sample < 1.0 - 1e-12) {
        report.ok = false;
        detail << "FAIL mc init sample below 1: " << min_sample << "\n";
    }

    Rng tiny_rng(options.seed + 5);
    const double tiny = monte_carlo_scale_init(1, 1, 100, tiny_rng);
    if (std::abs(tiny - 1.0) > 1e-12) {
        report.ok = false;
        detail << "FAIL d=1 k=1 must give exactly 1, got " << tiny << "\n";
    }

    report.detail = detail.str();
    return report;
}

VerifyReport verify_param_flop_parity(const VerifyOptions& options) {
    (void)options;
    VerifyReport report;
    std::ostringstream detail;

    constexpr std::size_t ms[] = {4, 8, 64, 256};
    constexpr std::size_t dims[] = {8, 16, 768};
    for (std::size_t m : ms) {
        for (std::size_t d : dims) {
            RouterParams softmax;
            softmax.kind = RouterKind::Softmax;
            softmax.w = Matrix(m, d);
            softmax.b.assign(m, 0.0);
            RouterParams kern = softmax;
            kern.kind = RouterKind::Kern;
            const std::size_t diff = param_count(kern) - param_count(softmax);
            if (diff != 1) {
                report.ok = false;
                detail << "FAIL param diff M=" << m << " d=" << d << ": " << diff << "\n";
            }
            for (RouterKind kind : kAllKinds) {
                const std::size_t base = routing_flops(RouterKind::Softmax, m, d);
                const std::size_t mine = routing_flops(kind, m, d);
                const std::size_t delta = mine > base ? mine - base : base - mine;
                if (delta > 8 * m + 4) {
                    report.ok = false;
                    detail << "FAIL flop delta " << to_string(kind) << " M=" << m << " d=" << d
                           << ": " << delta << " exceeds O(M)\n";
                }
                // The activation term must not depend on d.
                const std::size_t at_d8 =
                    routing_flops(kind, m, 8) - routing_flops(RouterKind::Softmax, m, 8);
                const std::size_t here = mine - base;
                if (at_d8 != here) {
                    report.ok = false;
                    detail << "FAIL flop delta depends on d for " << to_string(kind)
                           << " M=" << m << "\n";
                }
            }
            ++report.checked;
        }
    }
    detail << "param/flop parity: " << report.checked
           << " (M, d) shapes, kern-minus-softmax params = 1, activation deltas O(M) and "
              "d-independent\n";
    report.detail = detail.str();
    return report;
}

VerifyReport verify_nw_equivalence(const VerifyOptions& options) {
    VerifyReport report;
    std::ostringstream detail;
    Rng rng(options.seed + 6);

    constexpr std::size_t ms[] = {4, 8, 16};
    constexpr std::size_t dims[] = {4, 8, 16};
    double worst = 0.0;
    for (std::size_t i = 0; i < 1000; ++i) {
        const std::size_t m = ms[i % 3];
        const std::size_t d = dims[(i / 3) % 3];
        MoeLayer layer =
            make_moe_layer(RouterKind::Softmax, m, m, d, 8, Activation::Gelu, 1e-8, 1.0, rng);
        Vector x(d);
        rng.fill_normal(x, 0.0, 1.0);

        const Vector dense = moe_forward(layer, x);
        std::vector<Vector> expert_outputs;
        expert_outputs.reserve(m);
        for (const ExpertParams& e : layer.experts)
            expert_outputs.push_back(expert_forward(e, x));
        const Vector nw = softmax_router_as_nw(layer.router.w, x, expert_outputs);

        double diff = 0.0;
        for (std::size_t j = 0; j < d; ++j)
            diff = std::max(diff, std::abs(dense[j] - nw[j]));
        worst = std::max(worst, diff);
        if (diff > 1e-12 && report.ok) {
            report.ok = false;
            detail << "FAIL softmax-as-nw M=" << m << " d=" << d << " max diff " << diff
                   << "\n  x = " << join(x) << "\n";
        }
        ++report.checked;
    }
    detail << "softmax-as-nw: 1000 instances, worst max-abs diff " << worst << "\n";

    double worst_ffn = 0.0;
    constexpr ScalarActivation acts[] = {ScalarActivation::Identity, ScalarActivation::Relu,
                                         ScalarActivation::Gelu};
    constexpr FfnNormalization norms[] = {FfnNormalization::Identity, FfnNormalization::L1,
                                          FfnNormalization::L2};
    for (std::size_t i = 0; i < 180; ++i) {
        const std::size_t h = (i % 3 == 0) ? 1 : (i % 3 == 1 ? 8 : 32);
        const std::size_t d = 16;
        const std::size_t dout = 12;
        const Matrix w_in = kaiming_init(h, d, rng);
        const Matrix v = kaiming_init(dout, h, rng);
        Vector x(d);
        rng.fill_normal(x, 0.0, 1.0);
        const FfnDualResult r =
            ffn_as_kernel_sum(w_in, v, x, acts[i % 3], norms[(i / 3) % 3]);
        double diff = 0.0;
        for (std::size_t j = 0; j < dout; ++j)
            diff = std::max(diff, std::abs(r.pipeline[j] - r.kernel_sum[j]));
        worst_ffn = std::max(worst_ffn, diff);
        if (diff > 1e-12 && report.ok) {
            report.ok = false;
            detail << "FAIL ffn dual path h=" << h << " max diff " << diff << "\n";
        }
        ++report.checked;
    }
    detail << "ffn dual path: 180 instances, worst max-abs diff " << worst_ffn << "\n";

    report.detail = detail.str();
    return report;
}

VerifyReport verify_all(const VerifyOptions& options) {
    VerifyReport all;
    std::ostringstream detail;
    const struct {
        const char* name;
        VerifyReport (*fn)(const VerifyOptions&);
    } suites[] = {
        {"gradients", verify_gradients},
        {"unselected-gradients", verify_unselected_gradients},
        {"gate-properties", verify_gate_properties},
        {"mc-init", verify_mc_init},
        {"param-flop-parity", verify_param_flop_parity},
        {"nw-equivalence", verify_nw_equivalence},
    };
    for (const auto& suite : suites) {
        const VerifyReport r = suite.fn(options);
        all.ok = all.ok && r.ok;
        all.checked += r.checked;
        detail << "[" << (r.ok ? "PASS" : "FAIL") << "] " << suite.name << "\n" << r.detail;
    }
    all.detail = detail.str();
    return all;
}

}  // namespace moerlab
