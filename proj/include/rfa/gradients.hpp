#pragma once

#include <functional>
#include <string>
#include <vector>

#include "rfa/attention.hpp"
#include "rfa/feature_map.hpp"
#include "rfa/numerics.hpp"

namespace rfa {

enum class KernelKind { softmax, rfa_cross, rfa_causal, rfa_gated };

// Everything the reverse pass needs to replay the forward exactly: inputs,
// per-step feature vectors, running states after each update, and the raw and
// clamped partition estimates.
struct ForwardCache {
    KernelKind kind = KernelKind::softmax;
    AttentionConfig config;
    bool causal_softmax = false;
    RealizedFeatureMap map;  // unused for softmax

    Matrix queries, keys, values, raw_inputs;
    GateParams gate;
    AttentionState init;

    std::vector<Vector> q_hat, k_hat;    // inputs after optional l2 normalization
    std::vector<double> q_norm, k_norm;  // pre-normalization norms (1.0 when off)
    std::vector<Vector> phi_q, phi_k;
    std::vector<Matrix> S_steps;  // state after step t (single entry for cross)
    std::vector<Vector> z_steps;
    std::vector<double> u_raw;
    std::vector<double> u_clamped;
    Vector gates;
    std::vector<Vector> probs;  // softmax weights per query
    Matrix outputs;
    bool degenerate_partition = false;
};

struct GradBundle {
    Matrix d_queries;
    Matrix d_keys;
    Matrix d_values;
    Matrix d_raw_inputs;  // gated kernel only
    Vector d_gate_w;      // gated kernel only
    double d_gate_b = 0.0;
    Vector d_sigma;       // random-feature kernels only
    Matrix d_init_S;      // gradient w.r.t. the initial state, for segment chaining
    Vector d_init_z;
};

// Gradient flowing into a run's final state from downstream segments.
struct StateGrad {
    Matrix dS;
    Vector dz;
};

struct GradReport {
    struct Entry {
        std::string param;
        double max_rel_err = 0.0;
    };
    std::vector<Entry> entries;
    double max_rel_err = 0.0;
    bool pass = false;
    bool inconclusive = false;  // instance touched the denominator guard
};

// Exact reverse-mode gradient of the forward pass as implemented, including
// the guard (zero derivative inside the clamped region). `incoming` seeds the
// reverse scan with a downstream gradient on the final state.
GradBundle backward(KernelKind kind, const ForwardCache& cache, const Matrix& upstream,
                    const StateGrad* incoming = nullptr);

// Recomputes the outputs from the saved tensors alone; bit-identical to the
// recorded forward.
Matrix replay_outputs(const ForwardCache& cache);

// Central differences (f(p + h e_i) - f(p - h e_i)) / 2h per coordinate.
Vector finite_diff_grad(const std::function<double(const Vector&)>& f, const Vector& params,
                        double h);

// A self-contained instance for checking one kernel's gradients.
struct GradCheckInstance {
    KernelKind kind = KernelKind::softmax;
    AttentionConfig config;
    FeatureMapSpec map_spec;  // random-feature kernels
    Matrix queries, keys, values, raw_inputs;
    GateParams gate;
    AttentionState init;  // empty means zero state
    bool causal_softmax = false;
};

GradCheckInstance make_grad_instance(KernelKind kind, std::uint64_t seed, std::size_t n,
                                     std::size_t d, std::size_t D, std::size_t d_v);

// Runs the instance forward, then compares analytic gradients against central
// differences of the loss ||outputs||^2 / 2. Instances whose partition
// estimate comes within 1e-3 of zero are reported inconclusive, not failed.
GradReport grad_check(const GradCheckInstance& instance, double h = 1e-5, double tol = 1e-5);

// True when central differences can resolve every coordinate of the instance:
// partition estimates stay well clear of the guard (curvature grows as 1/u^2
// there) and no gradient coordinate sits below the double-precision noise
// floor of the loss. Check suites draw instances until this holds.
bool grad_instance_measurable(const GradCheckInstance& instance);

// Forward pass of an instance with cache recording; shared by grad_check and
// the toy trainer.
Matrix forward_instance(const GradCheckInstance& instance, ForwardCache* cache);

}  // namespace rfa
