#include <doctest.h>

#include <cmath>

#include "moerlab/moe.hpp"
#include "moerlab/nwkernel.hpp"
#include "moerlab/rng.hpp"

using namespace moerlab;

namespace {

SampleSet random_samples(std::size_t n, std::size_t d, std::size_t dout, Rng& rng) {
    SampleSet s;
    s.inputs.resize(n, Vector(d));
    s.targets.resize(n, Vector(dout));
    for (std::size_t i = 0; i < n; ++i) {
        rng.fill_normal(s.inputs[i], 0.0, 1.0);
        rng.fill_normal(s.targets[i], 0.0, 1.0);
    }
    return s;
}

}  // namespace

TEST_CASE("equidistant neighbors average their targets") {
    SampleSet s;
    s.inputs = {{-1.0, 0.0}, {1.0, 0.0}};
    s.targets = {{0.0}, {2.0}};
    const Vector pred = nw_predict(s, KernelSpec::gaussian(1.0), Vector{0.0, 0.0});
    CHECK(pred[0] == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("a single sample dominates every query") {
    SampleSet s;
    s.inputs = {{0.3, -0.7}};
    s.targets = {{4.0, 5.0, 6.0}};
    // at the sample itself the weight is exactly one
    CHECK(nw_predict(s, KernelSpec::gaussian(0.5), s.inputs[0]) == s.targets[0]);
    const Vector far = nw_predict(s, KernelSpec::gaussian(0.5), Vector{10.0, 10.0});
    for (std::size_t j = 0; j < 3; ++j)
        CHECK(far[j] == doctest::Approx(s.targets[0][j]).epsilon(1e-15));
}

TEST_CASE("gaussian prediction matches a direct oracle") {
    Rng rng(31);
    const SampleSet s = random_samples(20, 3, 2, rng);
    Vector x(3);
    rng.fill_normal(x, 0.0, 1.0);

    const Vector pred = nw_predict(s, KernelSpec::gaussian(1.0), x);

    double wsum = 0.0;
    Vector acc(2, 0.0);
    for (std::size_t i = 0; i < s.size(); ++i) {
        double dist = 0.0;
        for (std::size_t j = 0; j < 3; ++j) {
            const double diff = x[j] - s.inputs[i][j];
            dist += diff * diff;
        }
        const double w = std::exp(-dist / 2.0);
        wsum += w;
        axpy(w, s.targets[i], acc);
    }
    for (std::size_t j = 0; j < 2; ++j)
        CHECK(pred[j] == doctest::Approx(acc[j] / wsum).epsilon(1e-12));
}

TEST_CASE("gaussian predictions stay in the convex hull of the targets") {
    Rng rng(32);
    const SampleSet s = random_samples(15, 4, 3, rng);
    Vector lo(3, 1e300), hi(3, -1e300);
    for (const Vector& y : s.targets)
        for (std::size_t j = 0; j < 3; ++j) {
            lo[j] = std::min(lo[j], y[j]);
            hi[j] = std::max(hi[j], y[j]);
        }
    Vector x(4);
    for (int trial = 0; trial < 50; ++trial) {
        rng.fill_normal(x, 0.0, 2.0);
        const Vector pred = nw_predict(s, KernelSpec::gaussian(0.7), x);
        for (std::size_t j = 0; j < 3; ++j) {
            CHECK(pred[j] >= lo[j] - 1e-9);
            CHECK(pred[j] <= hi[j] + 1e-9);
        }
    }
}

TEST_CASE("all-underflowed weights raise a degenerate-neighborhood error") {
    SampleSet s;
    s.inputs = {{0.0}, {1.0}};
    s.targets = {{1.0}, {2.0}};
    CHECK_THROWS_AS(nw_predict(s, KernelSpec::gaussian(1e-3), Vector{1e6}),
                    DegenerateNeighborhoodError);
}

TEST_CASE("exp_dot survives huge dot products via the max shift") {
    SampleSet s;
    s.inputs = {{50.0, 0.0}, {0.0, 50.0}};
    s.targets = {{1.0}, {3.0}};
    const Vector pred = nw_predict(s, KernelSpec::exp_dot(), Vector{40.0, 40.0});
    // both dots are 2000; exp(2000) overflows without the shift
    CHECK(std::isfinite(pred[0]));
    CHECK(pred[0] == doctest::Approx(2.0).epsilon(1e-12));
}

TEST_CASE("kernel factories reject non-positive parameters") {
    CHECK_THROWS_AS(KernelSpec::gaussian(0.0), ContractViolation);
    CHECK_THROWS_AS(KernelSpec::parametric(-1.0), ContractViolation);
}

TEST_CASE("sample sets validate their shape") {
    SampleSet s;
    s.inputs = {{1.0, 2.0}};
    s.targets = {{1.0}, {2.0}};
    CHECK_THROWS_AS(s.validate(), ContractViolation);

    SampleSet ragged;
    ragged.inputs = {{1.0, 2.0}, {3.0}};
    ragged.targets = {{1.0}, {2.0}};
    CHECK_THROWS_AS(ragged.validate(), ContractViolation);
}

TEST_CASE("bandwidth fit recovers a planted bandwidth") {
    Rng rng(33);
    SampleSet train = random_samples(60, 2, 1, rng);
    SampleSet heldout = random_samples(40, 2, 1, rng);
    // Plant w* = 2 by generating held-out targets from the model itself:
    // the held-out loss is exactly zero at w = 2, so 2 is the global
    // minimum.
    for (std::size_t i = 0; i < heldout.size(); ++i)
        heldout.targets[i] = nw_predict(train, KernelSpec::parametric(2.0), heldout.inputs[i]);

    std::vector<double> trace;
    const double fitted = nw_bandwidth_fit(train, heldout, 200, 1e-2, 1.0, &trace);
    CHECK(std::abs(fitted - 2.0) / 2.0 < 0.5);

    // loss at the fitted bandwidth beats the starting point
    CHECK(nw_heldout_mse(train, heldout, fitted) <= nw_heldout_mse(train, heldout, 1.0));

    // descent: the trace is non-increasing on at least 90% of the steps
    REQUIRE(trace.size() == 201);
    std::size_t non_increasing = 0;
    for (std::size_t i = 1; i < trace.size(); ++i)
        non_increasing += trace[i] <= trace[i - 1] + 1e-15;
    CHECK(non_increasing >= 180);
}

TEST_CASE("zero fit steps return the initial bandwidth") {
    Rng rng(34);
    const SampleSet train = random_samples(10, 2, 1, rng);
    const SampleSet heldout = random_samples(5, 2, 1, rng);
    CHECK(nw_bandwidth_fit(train, heldout, 0, 1e-2, 0.75) == 0.75);
}

TEST_CASE("bandwidth fit reduces held-out loss on generic data") {
    Rng rng(35);
    SampleSet train = random_samples(50, 3, 2, rng);
    // targets from a smooth function of the inputs so locality helps
    for (std::size_t i = 0; i < train.size(); ++i) {
        train.targets[i][0] = std::sin(train.inputs[i][0]) + train.inputs[i][1];
        train.targets[i][1] = train.inputs[i][2];
    }
    SampleSet heldout = random_samples(30, 3, 2, rng);
    for (std::size_t i = 0; i < heldout.size(); ++i) {
        heldout.targets[i][0] = std::sin(heldout.inputs[i][0]) + heldout.inputs[i][1];
        heldout.targets[i][1] = heldout.inputs[i][2];
    }
    const double before = nw_heldout_mse(train, heldout, 1.0);
    const double fitted = nw_bandwidth_fit(train, heldout, 200, 1e-2, 1.0);
    const double after = nw_heldout_mse(train, heldout, fitted);
    CHECK(after <= before + 1e-12);
}

TEST_CASE("softmax routing equals kernel regression over the logit rows") {
    Rng rng(36);
    MoeLayer layer =
        make_moe_layer(RouterKind::Softmax, 8, 8, 16, 8, Activation::Gelu, 1e-8, 1.0, rng);
    Vector x(16);
    rng.fill_normal(x, 0.0, 1.0);

    const Vector dense = moe_forward(layer, x);
    std::vector<Vector> outputs;
    for (const ExpertParams& e : layer.experts)
        outputs.push_back(expert_forward(e, x));
    const Vector nw = softmax_router_as_nw(layer.router.w, x, outputs);
    for (std::size_t j = 0; j < 16; ++j)
        CHECK(dense[j] == doctest::Approx(nw[j]).epsilon(1e-12));
}

TEST_CASE("single-expert kernel regression returns that expert") {
    Rng rng(37);
    Matrix w = kaiming_init(1, 4, rng);
    Vector x(4);
    rng.fill_normal(x, 0.0, 1.0);
    const std::vector<Vector> outputs{{2.0, -1.0}};
    const Vector nw = softmax_router_as_nw(w, x, outputs);
    CHECK(nw == outputs[0]);
}

TEST_CASE("identical rows and experts collapse to the common output") {
    Matrix w(4, 3);
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = 0; j < 3; ++j)
            w(i, j) = 0.5 * static_cast<double>(j);
    const std::vector<Vector> outputs(4, Vector{1.0, 2.0});
    const Vector nw = softmax_router_as_nw(w, Vector{0.1, 0.2, 0.3}, outputs);
    CHECK(nw[0] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(nw[1] == doctest::Approx(2.0).epsilon(1e-12));
}

TEST_CASE("ffn dual path with h = 1 and identity maps") {
    Matrix w_in = Matrix::from_rows({{1.0, 2.0, 3.0}});
    Matrix v = Matrix::from_rows({{2.0}, {-1.0}});
    const Vector x{1.0, 1.0, 1.0};
    const FfnDualResult r =
        ffn_as_kernel_sum(w_in, v, x, ScalarActivation::Identity, FfnNormalization::Identity);
    CHECK(r.pipeline[0] == 12.0);  // 2 * 6
    CHECK(r.pipeline[1] == -6.0);
    CHECK(r.pipeline == r.kernel_sum);
}

TEST_CASE("ffn dual path agreement across activations and normalizations") {
    Rng rng(38);
    for (ScalarActivation act :
         {ScalarActivation::Identity, ScalarActivation::Relu, ScalarActivation::Gelu}) {
        for (FfnNormalization norm :
             {FfnNormalization::Identity, FfnNormalization::L1, FfnNormalization::L2}) {
            const Matrix w_in = kaiming_init(32, 16, rng);
            const Matrix v = kaiming_init(16, 32, rng);
            Vector x(16);
            rng.fill_normal(x, 0.0, 1.0);
            const FfnDualResult r = ffn_as_kernel_sum(w_in, v, x, act, norm);
            REQUIRE(r.pipeline.size() == 16);
            for (std::size_t j = 0; j < 16; ++j)
                CHECK(r.pipeline[j] == doctest::Approx(r.kernel_sum[j]).epsilon(1e-12));
        }
    }
}
