#pragma once

#include <vector>

#include "rfa/feature_map.hpp"
#include "rfa/numerics.hpp"

namespace rfa {

struct ForwardCache;  // defined in rfa/gradients.hpp; recorded when a backward pass will follow

enum class AttentionKind { softmax, rfa };

struct AttentionConfig {
    AttentionKind kind = AttentionKind::rfa;
    // Temperature of the scaled-dot kernel: tau for softmax, sigma^2 for the
    // random-feature path, so both target the same function.
    double temperature = 1.0;
    bool normalize_qk = true;
    double epsilon = 1e-6;  // denominator guard

    void validate() const;
};

// Running state of the causal recurrence: S accumulates phi(k) outer v,
// z accumulates phi(k). A fresh state is all zeros.
struct AttentionState {
    Matrix S;  // feature_dim x d_v
    Vector z;  // feature_dim

    static AttentionState zero(std::size_t feature_dim, std::size_t d_v);
    bool empty() const { return z.empty(); }
};

struct GateParams {
    Vector w;       // over the raw per-step input dimension
    double b = 0.0;
};

struct SequenceBatch {
    Matrix queries;     // N x d
    Matrix keys;        // M x d
    Matrix values;      // M x d_v
    Matrix raw_inputs;  // N x d_x, the x_t fed to gates (may be empty for ungated kernels)

    std::size_t source_length() const { return keys.rows; }
    std::size_t target_length() const { return queries.rows; }
};

struct CausalResult {
    Matrix outputs;             // N x d_v
    AttentionState final_state;
};

struct GatedResult {
    Matrix outputs;
    AttentionState final_state;
    Vector gates;                       // g_t per step, for inspection
    bool degenerate_partition = false;  // some step's partition estimate fell inside the guard
};

// Sign-preserving guard: |result| >= epsilon, with 0 mapped to +epsilon.
double clamp_denominator(double u, double epsilon);

double sigmoid(double x);

// h = S^T phi_q / denominator, the readout shared by every recurrence path.
Vector rfa_readout(const Matrix& S, const Vector& phi_q, double denominator);

// Reference softmax attention for one query: scaled dot products through
// stable_softmax, then the weighted value sum. With normalize_qk, q and keys
// are l2-normalized first.
Vector softmax_attention(const Vector& q, const Matrix& keys, const Matrix& values,
                         const AttentionConfig& config);

// Batched variant; `causal` restricts query t to keys/values with index <= t.
Matrix softmax_attention(const Matrix& queries, const Matrix& keys, const Matrix& values,
                         const AttentionConfig& config, bool causal = false,
                         ForwardCache* cache = nullptr);

// Cross random feature attention: one accumulation pass over the keys, then a
// constant-cost readout per query. Never materializes per-key outer products.
Matrix rfa_cross(const Matrix& queries, const Matrix& keys, const Matrix& values,
                 const RealizedFeatureMap& map, const AttentionConfig& config,
                 ForwardCache* cache = nullptr);

// Causal random feature attention as a left-to-right recurrence over (S, z).
CausalResult rfa_causal(const Matrix& queries, const Matrix& keys, const Matrix& values,
                        const RealizedFeatureMap& map, const AttentionConfig& config,
                        const AttentionState& init, ForwardCache* cache = nullptr);

CausalResult rfa_causal(const Matrix& queries, const Matrix& keys, const Matrix& values,
                        const RealizedFeatureMap& map, const AttentionConfig& config);

// Runs rfa_causal over consecutive segments of one sequence, feeding each
// segment's final state into the next. Returns the concatenated outputs.
CausalResult rfa_stateful_carry(const std::vector<SequenceBatch>& segments,
                                const RealizedFeatureMap& map, const AttentionConfig& config);

// Gated causal attention: g_t = sigmoid(w_g . x_t + b_g) exponentially decays
// the state, favoring recent context.
GatedResult rfa_gated(const SequenceBatch& batch, const GateParams& gate,
                      const RealizedFeatureMap& map, const AttentionConfig& config,
                      const AttentionState& init, ForwardCache* cache = nullptr);

GatedResult rfa_gated(const SequenceBatch& batch, const GateParams& gate,
                      const RealizedFeatureMap& map, const AttentionConfig& config);

// Cross attention without the norm-1 assumption: each key carries the scalar
// C(k) = exp(||k||^2 / 2 sigma^2) inside both sums; the query-side scalar
// cancels between numerator and denominator and is never computed.
// Requires normalize_qk = false.
Matrix rfa_unnormalized(const Matrix& queries, const Matrix& keys, const Matrix& values,
                        const RealizedFeatureMap& map, const AttentionConfig& config);

// Softmax counterpart of the gated recurrence: keys and values are decayed by
// (1 - g_i) * prod_{j>i} g_j before a plain softmax attention. Not an exact
// kernel pair of rfa_gated (the decay enters before the nonlinear map there).
Vector gated_softmax_oracle(const Vector& q, const Matrix& keys, const Matrix& values,
                            const Vector& gates, const AttentionConfig& config);

}  // namespace rfa
