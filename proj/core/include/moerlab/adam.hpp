#pragma once

#include <cstdint>
#include <span>

#include "moerlab/matrix.hpp"

namespace moerlab {

/// Adam moments for one parameter tensor. m and v always match the tracked
/// parameter's size; t counts completed steps.
struct AdamState {
    Vector m;
    Vector v;
    std::int64_t t = 0;
    double beta1 = 0.9;
    double beta2 = 0.95;
    double lr = 6e-4;
    double eps = 1e-8;

    static AdamState for_size(std::size_t n, double lr = 6e-4, double beta1 = 0.9,
                              double beta2 = 0.95, double eps = 1e-8);
};

/// One bias-corrected Adam update, in place. Zero gradients leave the
/// parameters unchanged (fresh state has zero moments).
void adam_step(std::span<double> param, std::span<const double> grad, AdamState& state);
void adam_step(Matrix& param, const Matrix& grad, AdamState& state);

}  // namespace moerlab
