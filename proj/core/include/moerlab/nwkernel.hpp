#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

#include "moerlab/matrix.hpp"

namespace moerlab {

/// Thrown by nw_predict when every kernel weight is zero (all weights
/// underflowed; the weighted average is undefined).
class DegenerateNeighborhoodError final : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Training samples {(x_i, y_i)} for kernel regression.
struct SampleSet {
    std::vector<Vector> inputs;
    std::vector<Vector> targets;

    std::size_t size() const noexcept { return inputs.size(); }
    void validate() const;
};

/// Kernel families:
///   Gaussian            K(u, v) = exp(-|u - v|^2 / (2 sigma^2))
///   ParametricGaussian  K(u, v; w) = exp(-w |u - v|^2 / 2), w trainable
///   ExpDot              K(u, v) = exp(<u, v>)
struct KernelSpec {
    enum class Family { Gaussian, ParametricGaussian, ExpDot };

    Family family = Family::Gaussian;
    double sigma = 1.0;      // Gaussian
    double bandwidth = 1.0;  // ParametricGaussian w

    static KernelSpec gaussian(double sigma);
    static KernelSpec parametric(double bandwidth);
    static KernelSpec exp_dot() { return KernelSpec{Family::ExpDot, 1.0, 1.0}; }

    double operator()(std::span<const double> u, std::span<const double> v) const;
};

/// Kernel-weighted average of the targets,
///   f(x) = sum_i [K(x, x_i) / sum_j K(x, x_j)] y_i.
/// ExpDot weights are computed with a max-shift, which leaves the ratio
/// exact while avoiding exp overflow.
Vector nw_predict(const SampleSet& samples, const KernelSpec& kernel, std::span<const double> x);

/// Mean squared prediction error of the parametric-Gaussian estimator on a
/// held-out set at bandwidth w.
double nw_heldout_mse(const SampleSet& samples, const SampleSet& heldout, double bandwidth);

/// Gradient descent on the held-out squared error over log(w), which keeps
/// the bandwidth positive. Returns the fitted w; loss_trace, when given,
/// receives the held-out loss before each step plus the final loss.
double nw_bandwidth_fit(const SampleSet& samples, const SampleSet& heldout, std::size_t steps,
                        double lr, double initial_bandwidth = 1.0,
                        std::vector<double>* loss_trace = nullptr);

/// The dense-softmax mixture written as kernel regression: samples are the
/// rows of w_s, targets are the expert outputs, kernel is ExpDot. Equals
/// the dense Softmax mixture forward (no bias, k = M) by construction.
Vector softmax_router_as_nw(const Matrix& w_s, std::span<const double> x,
                            const std::vector<Vector>& expert_outputs);

enum class ScalarActivation { Identity, Relu, Gelu };
enum class FfnNormalization { Identity, L1, L2 };

struct FfnDualResult {
    Vector pipeline;    // V * phi(normalize(W_in x))
    Vector kernel_sum;  // sum_i phi(normalize(W_in x))_i * v_i over columns v_i
};

/// Evaluates sum_i phi(LN(<w_i, x>)) v_i both as a matrix pipeline and as
/// an explicit kernel-weighted sum over the columns of v. The two routes
/// agree to rounding; callers use .pipeline as the operation result.
FfnDualResult ffn_as_kernel_sum(const Matrix& w_in, const Matrix& v, std::span<const double> x,
                                ScalarActivation activation, FfnNormalization normalization);

}  // namespace moerlab
