#pragma once

#include <cstdint>
#include <string>

namespace moerlab {

/// Property-check suites behind the `verify` CLI verb. Each returns a
/// report rather than throwing so the CLI can print every suite's outcome
/// before choosing an exit code.
struct VerifyOptions {
    std::size_t instances = 100;  // per router kind / shape
    std::uint64_t seed = 20240611;
    double fd_step = 1e-6;
    double tolerance = 1e-4;  // relative error per parameter block
};

struct VerifyReport {
    bool ok = true;
    std::size_t checked = 0;
    std::string detail;  // failure counterexamples, or a one-line summary
};

/// Finite-difference gradient checks (central differences) for every
/// router kind and for the full MoE layer, across M in {4, 8, 64} and
/// d in {8, 16}. Instances that sit too close to a top-k tie or a ReLU
/// kink are resampled, since finite differences are invalid there.
VerifyReport verify_gradients(const VerifyOptions& options);

/// Dense softmax mixture == Nadaraya-Watson estimator with the ExpDot
/// kernel, and FFN pipeline == explicit kernel sum, to 1e-12.
VerifyReport verify_nw_equivalence(const VerifyOptions& options);

/// |g_hat|_2 <= |gamma| * scale_initial + 1e-9 for the Kern router, and
/// the fraction of dense Kern gate entries equal to 0.0 at init (zero bias,
/// standard normal inputs) is 0.5 +- 0.02.
VerifyReport verify_gate_properties(const VerifyOptions& options);

/// With k < M: some unselected logit receives nonzero gradient under Kern
/// (norm coupling), while every unselected logit gradient is exactly zero
/// under Sigmoid. Checked analytically and by finite differences.
VerifyReport verify_unselected_gradients(const VerifyOptions& options);

/// Monte Carlo scale init: every sample is >= 1, and the d=64, k=8
/// estimate matches an independently coded estimator within 0.5%.
VerifyReport verify_mc_init(const VerifyOptions& options);

/// Kern vs Softmax bookkeeping: parameter counts differ by exactly one
/// (gamma) and routing FLOPs differ by O(M), independent of d.
VerifyReport verify_param_flop_parity(const VerifyOptions& options);

/// Runs every suite above; ok iff all pass, details concatenated.
VerifyReport verify_all(const VerifyOptions& options);

}  // namespace moerlab
