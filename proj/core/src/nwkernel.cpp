#include "moerlab/nwkernel.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace moerlab {

namespace {

double squared_distance(std::span<const double> u, std::span<const double> v) {
    require(u.size() == v.size(), "kernel: point dimension mismatch");
    double acc = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i) {
        const double d = u[i] - v[i];
        acc += d * d;
    }
    return acc;
}

double gelu_scalar(double x) {
    return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2));
}

}  // namespace

void SampleSet::validate() const {
    require(!inputs.empty(), "SampleSet: empty");
    require(inputs.size() == targets.size(), "SampleSet: inputs/targets count mismatch");
    for (const Vector& x : inputs)
        require(x.size() == inputs[0].size(), "SampleSet: ragged input dimensions");
    for (const Vector& y : targets)
        require(y.size() == targets[0].size(), "SampleSet: ragged target dimensions");
}

KernelSpec KernelSpec::gaussian(double sigma) {
    require(sigma > 0.0, "KernelSpec: sigma must be positive");
    return KernelSpec{Family::Gaussian, sigma, 1.0};
}

KernelSpec KernelSpec::parametric(double bandwidth) {
    require(bandwidth > 0.0, "KernelSpec: bandwidth must be positive");
    return KernelSpec{Family::ParametricGaussian, 1.0, bandwidth};
}

double KernelSpec::operator()(std::span<const double> u, std::span<const double> v) const {
    switch (family) {
        case Family::Gaussian:
            return std::exp(-squared_distance(u, v) / (2.0 * sigma * sigma));
        case Family::ParametricGaussian:
            return std::exp(-bandwidth * squared_distance(u, v) / 2.0);
        case Family::ExpDot:
            return std::exp(dot(u, v));
    }
    return 0.0;
}

Vector nw_predict(const SampleSet& samples, const KernelSpec& kernel, std::span<const double> x) {
    samples.validate();
    require(x.size() == samples.inputs[0].size(), "nw_predict: query dimension mismatch");

    const std::size_t n = samples.size();
    Vector weights(n);
    if (kernel.family == KernelSpec::Family::ExpDot) {
        // Shift exponents by their max; the normalized ratio is unchanged
        // and the weight sum stays >= 1.
        Vector dots(n);
        for (std::size_t i = 0; i < n; ++i)
            dots[i] = dot(x, samples.inputs[i]);
        const double mx = *std::max_element(dots.begin(), dots.end());
        for (std::size_t i = 0; i < n; ++i)
            weights[i] = std::exp(dots[i] - mx);
    } else {
        for (std::size_t i = 0; i < n; ++i)
            weights[i] = kernel(x, samples.inputs[i]);
    }

    double sum = 0.0;
    for (double w : weights)
        sum += w;
    if (sum == 0.0)
        throw DegenerateNeighborhoodError("nw_predict: every kernel weight underflowed to zero");

    Vector out(samples.targets[0].size(), 0.0);
    for (std::size_t i = 0; i < n; ++i)
        axpy(weights[i], samples.targets[i], out);
    scale_inplace(out, 1.0 / sum);
    return out;
}

double nw_heldout_mse(const SampleSet& samples, const SampleSet& heldout, double bandwidth) {
    heldout.validate();
    const KernelSpec kernel = KernelSpec::parametric(bandwidth);
    const std::size_t dim = heldout.targets[0].size();
    double total = 0.0;
    for (std::size_t p = 0; p < heldout.size(); ++p) {
        const Vector f = nw_predict(samples, kernel, heldout.inputs[p]);
        for (std::size_t j = 0; j < dim; ++j) {
            const double r = f[j] - heldout.targets[p][j];
            total += r * r;
        }
    }
    return total / (static_cast<double>(heldout.size()) * static_cast<double>(dim));
}

double nw_bandwidth_fit(const SampleSet& samples, const SampleSet& heldout, std::size_t steps,
                        double lr, double initial_bandwidth, std::vector<double>* loss_trace) {
    samples.validate();
    heldout.validate();
    require(initial_bandwidth > 0.0, "nw_bandwidth_fit: initial bandwidth must be positive");
    require(lr > 0.0, "nw_bandwidth_fit: lr must be positive");

    const std::size_t n = samples.size();
    const std::size_t dim = heldout.targets[0].size();

    // Optimize rho = log(w) so the bandwidth stays positive. For weights
    // a_i = exp(-w D_i / 2) with gates g_i = a_i / sum(a):
    //   dg_i/dw = g_i (S1 - D_i) / 2,  S1 = sum_j g_j D_j.
    double rho = std::log(initial_bandwidth);
    for (std::size_t step = 0; step <= steps; ++step) {
        const double w = std::exp(rho);
        double loss = 0.0;
        double dloss_dw = 0.0;
        for (std::size_t p = 0; p < heldout.size(); ++p) {
            Vector dist(n), gates(n);
            double sum = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                dist[i] = squared_distance(heldout.inputs[p], samples.inputs[i]);
                gates[i] = std::exp(-w * dist[i] / 2.0);
                sum += gates[i];
            }
            if (sum == 0.0)
                throw DegenerateNeighborhoodError(
                    "nw_bandwidth_fit: every kernel weight underflowed to zero");
            scale_inplace(gates, 1.0 / sum);

            Vector f(dim, 0.0);
            for (std::size_t i = 0; i < n; ++i)
                axpy(gates[i], samples.targets[i], f);

            double s1 = 0.0;
            for (std::size_t i = 0; i < n; ++i)
                s1 += gates[i] * dist[i];
            Vector df_dw(dim, 0.0);
            for (std::size_t i = 0; i < n; ++i)
                axpy(gates[i] * (s1 - dist[i]) / 2.0, samples.targets[i], df_dw);

            for (std::size_t j = 0; j < dim; ++j) {
                const double r = f[j] - heldout.targets[p][j];
                loss += r * r;
                dloss_dw += 2.0 * r * df_dw[j];
            }
        }
        const double scale = 1.0 / (static_cast<double>(heldout.size()) * static_cast<double>(dim));
        loss *= scale;
        dloss_dw *= scale;
        if (loss_trace)
            loss_trace->push_back(loss);
        if (step == steps)
            break;
        rho -= lr * dloss_dw * w;  // chain through w = exp(rho)
    }
    return std::exp(rho);
}

Vector softmax_router_as_nw(const Matrix& w_s, std::span<const double> x,
                            const std::vector<Vector>& expert_outputs) {
    require(expert_outputs.size() == w_s.rows(),
            "softmax_router_as_nw: need one expert output per router row");
    SampleSet samples;
    samples.inputs.reserve(w_s.rows());
    for (std::size_t m = 0; m < w_s.rows(); ++m)
        samples.inputs.emplace_back(w_s.row(m).begin(), w_s.row(m).end());
    samples.targets = expert_outputs;
    return nw_predict(samples, KernelSpec::exp_dot(), x);
}

FfnDualResult ffn_as_kernel_sum(const Matrix& w_in, const Matrix& v, std::span<const double> x,
                                ScalarActivation activation, FfnNormalization normalization) {
    require(v.cols() == w_in.rows(), "ffn_as_kernel_sum: v columns must match w_in rows");

    Vector z = matvec(w_in, x);
    switch (normalization) {
        case FfnNormalization::Identity:
            break;
        case FfnNormalization::L1: {
            double n = 0.0;
            for (double zi : z)
                n += std::abs(zi);
            require(n > 0.0, "ffn_as_kernel_sum: zero l1 norm");
            scale_inplace(z, 1.0 / n);
            break;
        }
        case FfnNormalization::L2: {
            const double n = norm2(z);
            require(n > 0.0, "ffn_as_kernel_sum: zero l2 norm");
            scale_inplace(z, 1.0 / n);
            break;
        }
    }
    for (double& zi : z) {
        switch (activation) {
            case ScalarActivation::Identity: break;
            case ScalarActivation::Relu: zi = std::max(zi, 0.0); break;
            case ScalarActivation::Gelu: zi = gelu_scalar(zi); break;
        }
    }

    FfnDualResult result;
    result.pipeline = matvec(v, z);
    result.kernel_sum.assign(v.rows(), 0.0);
    for (std::size_t i = 0; i < v.cols(); ++i) {
        const double ai = z[i];
        for (std::size_t j = 0; j < v.rows(); ++j)
            result.kernel_sum[j] += ai * v(j, i);
    }
    return result;
}

}  // namespace moerlab
