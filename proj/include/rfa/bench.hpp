#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rfa/attention.hpp"
#include "rfa/numerics.hpp"
#include "rfa/toytrain.hpp"

// Measurement harness: approximation error versus feature count, and decode
// time / live-state scaling of softmax-with-cache against the constant-state
// recurrence.

namespace rfa {

struct SweepRecord {
    std::size_t D = 0;
    std::uint64_t seed = 0;
    std::size_t instance = 0;
    double mse_output = 0.0;  // random-feature outputs vs. exact softmax outputs
    double mse_kernel = 0.0;  // kernel estimates vs. the exact exponential kernel
};

struct SweepConfig {
    std::size_t M = 32;           // keys per instance
    std::size_t d = 8;
    std::size_t n_queries = 16;
    std::size_t n_instances = 4;  // shared across all (D, seed) pairs
    std::uint64_t seed = 42;
    double temperature = 1.0;
};

std::vector<SweepRecord> approximation_error_sweep(const std::vector<std::size_t>& Ds,
                                                   std::size_t n_seeds, const SweepConfig& config);

enum class BenchKind { softmax, rfa_gaussian, rfa_arccos };
enum class BenchMode { conditional, unconditional };

const char* to_string(BenchKind kind);
const char* to_string(BenchMode mode);

struct DecodeBenchRecord {
    BenchKind kind = BenchKind::softmax;
    BenchMode mode = BenchMode::unconditional;
    std::size_t length = 0;
    std::size_t batch = 0;
    double median_step_seconds = 0.0;
    double total_seconds = 0.0;
    std::size_t live_elements = 0;  // analytic count of live decode-state scalars at step N
    bool timer_flagged = false;     // run too short for the clock to resolve
};

struct DecodeBenchConfig {
    std::size_t d = 64;  // attention width for the simulation (single head)
    std::size_t D = 64;
    std::size_t warmup = 3;
    std::size_t repetitions = 5;
    std::uint64_t seed = 42;
    double temperature = 1.0;
};

// Greedy single-token decode loop, single-threaded; the softmax backend keeps
// an append-only cache of normalized key/value representations, the
// random-feature backends keep only (S, z).
std::vector<DecodeBenchRecord> decode_bench(BenchKind kind, BenchMode mode,
                                            const std::vector<std::size_t>& lengths,
                                            std::size_t batch, const DecodeBenchConfig& config);

// Closed-form live scalar counts for the decoder-side attention state at step
// N: growing key/value cache for softmax, constant (S, z) for the
// random-feature backends.
std::size_t live_element_count(BenchKind kind, std::size_t length, std::size_t batch,
                               std::size_t d, std::size_t D);

// Least-squares slope of log(y) against log(x).
double fit_loglog_slope(const std::vector<std::size_t>& xs, const std::vector<double>& ys);

// CSV emission: header row plus one row per record, UTF-8, LF endings,
// '.' decimal separator, shortest round-trip float formatting.
void emit_csv(const std::vector<SweepRecord>& records, const std::string& path);
void emit_csv(const std::vector<DecodeBenchRecord>& records, const std::string& path);
void emit_csv(const std::vector<CurvePoint>& curve, const std::string& path);

}  // namespace rfa
