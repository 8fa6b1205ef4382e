#include "moerlab/adam.hpp"

#include <cmath>

namespace moerlab {

AdamState AdamState::for_size(std::size_t n, double lr, double beta1, double beta2, double eps) {
    AdamState s;
    s.m.assign(n, 0.0);
    s.v.assign(n, 0.0);
    s.lr = lr;
    s.beta1 = beta1;
    s.beta2 = beta2;
    s.eps = eps;
    return s;
}

void adam_step(std::span<double> param, std::span<const double> grad, AdamState& state) {
    require(param.size() == grad.size() && param.size() == state.m.size(),
            "adam_step: size mismatch");
    state.t += 1;
    const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
    for (std::size_t i = 0; i < param.size(); ++i) {
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * grad[i];
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * grad[i] * grad[i];
        const double mhat = state.m[i] / bc1;
        const double vhat = state.v[i] / bc2;
        param[i] -= state.lr * mhat / (std::sqrt(vhat) + state.eps);
    }
}

void adam_step(Matrix& param, const Matrix& grad, AdamState& state) {
    require(param.rows() == grad.rows() && param.cols() == grad.cols(),
            "adam_step: matrix shape mismatch");
    adam_step(param.flat(), grad.flat(), state);
}

}  // namespace moerlab
