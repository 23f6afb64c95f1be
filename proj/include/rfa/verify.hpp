#pragma once

#include <cstdint>
#include <string>
#include <vector>

// Self-contained verification suites behind both the CLI and the acceptance
// tests. Tolerances are fixed here, not calibrated at run time.

namespace rfa {

struct CheckResult {
    std::string name;
    bool pass = false;
    std::string detail;
};

bool all_pass(const std::vector<CheckResult>& results);

struct RecurrenceOptions {
    std::uint64_t seed = 42;
    std::size_t d = 8;
    std::size_t D = 64;
    std::vector<std::size_t> lengths;  // empty: a built-in mix up to 256
    double tol_recurrence = 1e-10;
    double tol_carry = 1e-12;
};

// Unbiasedness of the kernel estimate and the closed-form variance law,
// checked by Monte Carlo over fresh maps.
std::vector<CheckResult> check_kernel_statistics(std::uint64_t seed);

// Causal/cross equivalence, stateful carry exactness, and the unnormalized
// variant against both the normalized path and a direct-sum oracle.
std::vector<CheckResult> check_recurrence(const RecurrenceOptions& options);

// Analytic vs. central-difference gradients for all four kernels.
std::vector<CheckResult> check_gradients(std::uint64_t seed, double tol = 1e-5);

// Median output error strictly decreasing as the feature count doubles.
std::vector<CheckResult> check_convergence(std::uint64_t seed);

// Decode-time slopes, per-step flatness, and the analytic live-memory law.
std::vector<CheckResult> check_scaling(std::uint64_t seed);

// Toy trainability for all three kernels plus the gating-direction claim.
std::vector<CheckResult> check_toy_training(std::uint64_t seed);

// Every suite above, in order.
std::vector<CheckResult> run_all_checks(std::uint64_t seed);

}  // namespace rfa
