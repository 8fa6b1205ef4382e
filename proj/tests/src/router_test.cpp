#include <doctest.h>

#include <cmath>
#include <sstream>

#include "moerlab/router.hpp"
#include "moerlab/rng.hpp"

using namespace moerlab;

namespace {

RouterParams identity_router(RouterKind kind, std::size_t n, double eps = 1e-12) {
    RouterParams params;
    params.kind = kind;
    params.eps = eps;
    params.w = Matrix(n, n);
    for (std::size_t i = 0; i < n; ++i)
        params.w(i, i) = 1.0;
    params.b.assign(n, 0.0);
    return params;
}

}  // namespace

TEST_CASE("kern gates are the positive part of the unit logit vector") {
    const RouterParams params = identity_router(RouterKind::Kern, 2);
    const GateOutput gate = router_forward(params, Vector{3.0, 4.0});
    CHECK(gate.dense_gates[0] == doctest::Approx(0.6).epsilon(1e-9));
    CHECK(gate.dense_gates[1] == doctest::Approx(0.8).epsilon(1e-9));

    const GateOutput neg = router_forward(params, Vector{-3.0, 4.0});
    CHECK(neg.dense_gates[0] == 0.0);
    CHECK(neg.dense_gates[1] == doctest::Approx(0.8).epsilon(1e-9));
}

TEST_CASE("kern gamma and scale multiply the gates") {
    RouterParams params = identity_router(RouterKind::Kern, 2);
    params.gamma = 2.0;
    params.scale_initial = 3.0;
    const GateOutput gate = router_forward(params, Vector{3.0, 4.0});
    CHECK(gate.dense_gates[1] == doctest::Approx(6.0 * 0.8).epsilon(1e-9));
}

TEST_CASE("kern_norelu keeps negative components") {
    const RouterParams params = identity_router(RouterKind::KernNoRelu, 2);
    const GateOutput gate = router_forward(params, Vector{-3.0, 4.0});
    CHECK(gate.dense_gates[0] == doctest::Approx(-0.6).epsilon(1e-9));
    CHECK(gate.dense_gates[1] == doctest::Approx(0.8).epsilon(1e-9));
}

TEST_CASE("softmax of equal logits is uniform") {
    const RouterParams params = identity_router(RouterKind::Softmax, 2);
    const GateOutput gate = router_forward(params, Vector{0.0, 0.0});
    CHECK(gate.dense_gates[0] == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(gate.dense_gates[1] == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("softmax gates sum to one") {
    Rng rng(3);
    RouterParams params = identity_router(RouterKind::Softmax, 8);
    params.w = kaiming_init(8, 8, rng);
    Vector x(8);
    for (int trial = 0; trial < 50; ++trial) {
        rng.fill_normal(x, 0.0, 2.0);
        const GateOutput gate = router_forward(params, x);
        double sum = 0.0;
        for (double g : gate.dense_gates)
            sum += g;
        CHECK(std::abs(sum - 1.0) < 1e-12);
    }
}

TEST_CASE("tanh and sigmoid at zero logits") {
    const GateOutput t = router_forward(identity_router(RouterKind::Tanh, 2), Vector{0.0, 0.0});
    CHECK(t.dense_gates[0] == 0.0);
    CHECK(t.dense_gates[1] == 0.0);

    const RouterParams sig = identity_router(RouterKind::Sigmoid, 8);
    const GateOutput s = router_forward(sig, Vector(8, 0.0));
    for (double g : s.dense_gates)
        CHECK(g == 0.5);
}

TEST_CASE("top-k keeps the k largest gates") {
    RouterParams params = identity_router(RouterKind::Sigmoid, 4);
    // logits chosen so sigmoid ordering matches (0.5, 0.1, 0.7, 0.0)
    GateOutput gate = router_forward(params, Vector{0.5, 0.1, 0.7, 0.0});
    top_k_select(params, gate, 2);
    REQUIRE(gate.selected.size() == 2);
    CHECK(gate.selected[0] == 0);
    CHECK(gate.selected[1] == 2);
    CHECK(gate.sparse_gates[1] == 0.0);
    CHECK(gate.sparse_gates[3] == 0.0);
    CHECK(gate.sparse_gates[0] == gate.dense_gates[0]);
    CHECK(gate.sparse_gates[2] == gate.dense_gates[2]);
}

TEST_CASE("top-k ties break toward the lower index") {
    RouterParams params = identity_router(RouterKind::Sigmoid, 3);
    GateOutput gate = router_forward(params, Vector{0.3, 0.3, 0.3});
    top_k_select(params, gate, 2);
    REQUIRE(gate.selected.size() == 2);
    CHECK(gate.selected[0] == 0);
    CHECK(gate.selected[1] == 1);
}

TEST_CASE("top-k with k = M selects everything") {
    Rng rng(4);
    RouterParams params = identity_router(RouterKind::Softmax, 5);
    params.w = kaiming_init(5, 5, rng);
    Vector x(5);
    rng.fill_normal(x, 0.0, 1.0);
    const GateOutput gate = route(params, x, 5);
    REQUIRE(gate.selected.size() == 5);
    for (std::size_t i = 0; i < 5; ++i) {
        CHECK(gate.selected[i] == i);
        CHECK(gate.sparse_gates[i] == gate.dense_gates[i]);
    }
}

TEST_CASE("k out of range is rejected") {
    RouterParams params = identity_router(RouterKind::Softmax, 3);
    CHECK_THROWS_AS(route(params, Vector{1.0, 2.0, 3.0}, 0), ContractViolation);
    CHECK_THROWS_AS(route(params, Vector{1.0, 2.0, 3.0}, 4), ContractViolation);
}

TEST_CASE("kern_after_topk normalizes the selected subvector only") {
    const RouterParams params = identity_router(RouterKind::KernAfterTopK, 3);
    const GateOutput gate = route(params, Vector{3.0, -5.0, 4.0}, 2);
    REQUIRE(gate.selected.size() == 2);
    CHECK(gate.selected[0] == 0);
    CHECK(gate.selected[1] == 2);
    CHECK(gate.sparse_gates[0] == doctest::Approx(0.6).epsilon(1e-9));
    CHECK(gate.sparse_gates[1] == 0.0);
    CHECK(gate.sparse_gates[2] == doctest::Approx(0.8).epsilon(1e-9));
}

TEST_CASE("selection on kern_after_topk ranks raw logits, not magnitudes") {
    const RouterParams params = identity_router(RouterKind::KernAfterTopK, 3);
    // -5 has the largest magnitude but the smallest logit
    const GateOutput gate = route(params, Vector{3.0, -5.0, 4.0}, 1);
    REQUIRE(gate.selected.size() == 1);
    CHECK(gate.selected[0] == 2);
}

TEST_CASE("renormalize_after_topk rescales softmax gates to sum one") {
    Rng rng(5);
    RouterParams params = identity_router(RouterKind::Softmax, 6);
    params.w = kaiming_init(6, 6, rng);
    Vector x(6);
    rng.fill_normal(x, 0.0, 1.0);
    const GateOutput gate = route(params, x, 2, true);
    CHECK(gate.renormalized);
    double sum = 0.0;
    for (std::size_t idx : gate.selected)
        sum += gate.sparse_gates[idx];
    CHECK(std::abs(sum - 1.0) < 1e-12);
}

TEST_CASE("renormalization is refused for the kern family") {
    RouterParams params = identity_router(RouterKind::Kern, 3);
    CHECK_THROWS_AS(route(params, Vector{1.0, 2.0, 3.0}, 2, true), ContractViolation);
}

TEST_CASE("positive input scaling leaves the selection unchanged") {
    Rng rng(6);
    for (RouterKind kind : {RouterKind::Softmax, RouterKind::Sigmoid, RouterKind::Tanh,
                            RouterKind::Kern, RouterKind::KernNoRelu, RouterKind::KernAfterTopK}) {
        RouterParams params = identity_router(kind, 8);
        params.w = kaiming_init(8, 8, rng);
        Vector x(8);
        rng.fill_normal(x, 0.0, 1.0);
        const GateOutput base = route(params, x, 1);
        for (double alpha : {0.5, 2.0, 7.0}) {
            Vector scaled = x;
            scale_inplace(scaled, alpha);
            const GateOutput other = route(params, scaled, 1);
            CHECK(other.selected[0] == base.selected[0]);
        }
    }
}

TEST_CASE("kern gate norm respects the gamma scale bound") {
    Rng rng(7);
    RouterParams params = identity_router(RouterKind::Kern, 16);
    params.w = kaiming_init(16, 8, rng);
    params.b.assign(16, 0.0);
    rng.fill_normal(params.b, 0.0, 0.5);
    params.gamma = -1.7;
    params.scale_initial = 2.0;
    Vector x(8);
    for (int trial = 0; trial < 200; ++trial) {
        rng.fill_normal(x, 0.0, 1.0);
        const GateOutput gate = router_forward(params, x);
        CHECK(norm2(gate.dense_gates) <= std::abs(params.gamma) * params.scale_initial + 1e-9);
    }
}

TEST_CASE("route composes forward and top_k_select") {
    Rng rng(8);
    RouterParams params = identity_router(RouterKind::Kern, 6);
    params.w = kaiming_init(6, 4, rng);
    params.b.assign(6, 0.0);
    Vector x(4);
    rng.fill_normal(x, 0.0, 1.0);

    const GateOutput combined = route(params, x, 3);
    GateOutput staged = router_forward(params, x);
    top_k_select(params, staged, 3);
    CHECK(combined.dense_gates == staged.dense_gates);
    CHECK(combined.selected == staged.selected);
    CHECK(combined.sparse_gates == staged.sparse_gates);
}

TEST_CASE("param_count charges one extra scalar to the kern family") {
    RouterParams softmax;
    softmax.kind = RouterKind::Softmax;
    softmax.w = Matrix(64, 768);
    softmax.b.assign(64, 0.0);
    CHECK(param_count(softmax) == 49216);

    RouterParams kern = softmax;
    kern.kind = RouterKind::Kern;
    CHECK(param_count(kern) == 49217);
}

TEST_CASE("router kind names round-trip") {
    for (RouterKind kind : {RouterKind::Softmax, RouterKind::Sigmoid, RouterKind::Tanh,
                            RouterKind::Kern, RouterKind::KernNoRelu, RouterKind::KernAfterTopK}) {
        const auto parsed = parse_router_kind(to_string(kind));
        REQUIRE(parsed.has_value());
        CHECK(*parsed == kind);
    }
    CHECK_FALSE(parse_router_kind("warp").has_value());
}

TEST_CASE("monte carlo scale is one in the degenerate case and at least one in general") {
    Rng rng(9);
    CHECK(monte_carlo_scale_init(1, 1, 100, rng) == doctest::Approx(1.0).epsilon(1e-12));

    Rng rng2(10);
    const double scale = monte_carlo_scale_init(16, 2, 500, rng2);
    CHECK(scale >= 1.0 - 1e-12);

    Rng a(11), b(11);
    CHECK(monte_carlo_scale_init(8, 2, 300, a) == monte_carlo_scale_init(8, 2, 300, b));
}

TEST_CASE("monte carlo rejects k > d") {
    Rng rng(12);
    CHECK_THROWS_AS(monte_carlo_scale_init(4, 5, 10, rng), ContractViolation);
}

TEST_CASE("golden csv shape") {
    const RouterParams params = identity_router(RouterKind::Kern, 2);
    std::vector<Vector> inputs{{3.0, 4.0}, {-3.0, 4.0}};
    std::ostringstream os;
    write_golden_csv(params, inputs, 1, os);
    const std::string text = os.str();

    std::istringstream lines(text);
    std::string header;
    std::getline(lines, header);
    CHECK(header.find("input_0") != std::string::npos);
    CHECK(header.find("dense_0") != std::string::npos);
    CHECK(header.find("selected") != std::string::npos);
    CHECK(header.find("sparse_0") != std::string::npos);

    std::string row;
    std::size_t rows = 0;
    while (std::getline(lines, row))
        rows += !row.empty();
    CHECK(rows == 2);
    // top gate of (3,4): 4/(5 + eps) printed at 17 significant digits
    CHECK(text.find("0.7999999999") != std::string::npos);
}

TEST_CASE("backward sign-flip hook is detectable by finite differences") {
    Rng rng(13);
    RouterParams params = identity_router(RouterKind::Kern, 6);
    params.w = kaiming_init(6, 6, rng);
    params.b.assign(6, 0.0);
    rng.fill_normal(params.b, 0.0, 0.3);
    Vector x(6);
    rng.fill_normal(x, 0.0, 1.0);
    const std::size_t k = 3;

    const GateOutput gate = route(params, x, k);
    Vector upstream(6, 1.0);

    const RouterGrads clean = router_backward(params, gate, upstream, x);
    testhooks::kern_backward_sign_flip = true;
    const RouterGrads flipped = router_backward(params, gate, upstream, x);
    testhooks::kern_backward_sign_flip = false;

    double diff = 0.0;
    for (std::size_t i = 0; i < 6; ++i)
        diff = std::max(diff, std::abs(clean.b[i] - flipped.b[i]));
    CHECK(diff > 1e-8);
}
