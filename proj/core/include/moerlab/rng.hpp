#pragma once

#include <array>
#include <cstdint>
#include <span>

#include "moerlab/matrix.hpp"

namespace moerlab {

/// Deterministic pseudo-random generator: xoshiro256++ state seeded via
/// splitmix64. The full generation scheme is fixed:
///   - uniform():  (next_u64() >> 11) * 2^-53, giving [0, 1) at 53-bit
///     resolution
///   - normal():   Box-Muller on (u1, u2) with u1 in (0, 1]; the second
///     deviate of each pair is cached and returned on the next call
/// Equal seeds produce equal streams on any platform with IEEE-754 doubles
/// and a correctly rounded libm. Cross-language bit-equality is out of
/// scope.
class Rng {
public:
    explicit Rng(std::uint64_t seed);

    std::uint64_t next_u64() noexcept;

    /// Unbiased integer in [0, n). n must be >= 1.
    std::uint64_t uniform_index(std::uint64_t n);

    double uniform() noexcept;
    double normal() noexcept;
    double normal(double mean, double stddev) noexcept { return mean + stddev * normal(); }

    void fill_normal(std::span<double> out, double mean, double stddev) noexcept;

private:
    std::array<std::uint64_t, 4> state_{};
    double cached_normal_ = 0.0;
    bool has_cached_ = false;
};

/// Entries ~ Normal(0, 2/fan_in) with fan_in = cols. Row-major draw order.
Matrix kaiming_init(std::size_t rows, std::size_t cols, Rng& rng);

Matrix normal_init(std::size_t rows, std::size_t cols, double stddev, Rng& rng);

}  // namespace moerlab
