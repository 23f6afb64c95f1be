#pragma once

#include <cstdint>
#include <vector>

#include "rfa/attention.hpp"
#include "rfa/feature_map.hpp"
#include "rfa/numerics.hpp"

// A single-head attention classifier on a synthetic recency task: the label
// at step t is the token seen `lag` steps earlier. Demonstrates that the
// kernels train end to end with the hand-derived gradients, and probes the
// recency bias of the gated variant.

namespace rfa {

struct ToyTask {
    std::size_t vocab = 8;
    std::size_t length = 16;
    std::size_t lag = 1;

    void validate() const;
};

struct ToyBatch {
    static constexpr int kIgnore = -1;

    std::size_t count = 0;
    std::size_t length = 0;
    std::vector<int> tokens;  // count x length
    std::vector<int> labels;  // count x length, kIgnore where unsupervised

    int token(std::size_t seq, std::size_t t) const { return tokens[seq * length + t]; }
    int label(std::size_t seq, std::size_t t) const { return labels[seq * length + t]; }
};

// Tokens uniform over the vocabulary; labels[t] = tokens[t - lag] for
// t >= lag and kIgnore before that.
ToyBatch gen_recency_task(const ToyTask& task, std::uint64_t seed, std::size_t count);

enum class ToyAttention { softmax, rfa, rfa_gated };

struct ToyModel {
    std::size_t vocab = 0;
    std::size_t dim = 0;
    Matrix embed;                      // V x d
    Matrix w_query, w_key, w_value;    // d x d
    Matrix w_out;                      // V x d, zero-initialized
    GateParams gate;
    FeatureMapSpec map_spec;           // sigma is trained
    FeatureMapPool pool;               // raw draws fixed for the whole run
    AttentionConfig attn;
    ToyAttention kind = ToyAttention::rfa_gated;

    std::size_t param_count() const;
};

struct TrainConfig {
    double learning_rate = 0.5;
    std::size_t steps = 2000;
    std::size_t batch_size = 8;
    std::uint64_t seed = 1;
    ToyAttention kind = ToyAttention::rfa_gated;
    std::size_t pool_size = 50;
    std::size_t model_dim = 16;
    std::size_t feature_D = 32;
    double temperature = 1.0;
    // Width of the denominator guard during training. The clamp subgradient
    // is zero, so a wider guard caps the 1/u^2 factor the backward pass sees
    // when a partition estimate approaches zero.
    double guard_epsilon = 0.1;

    void validate() const;
};

struct CurvePoint {
    std::size_t step = 0;
    double loss = 0.0;
    double accuracy = 0.0;
};

struct TrainResult {
    ToyModel model;
    std::vector<CurvePoint> curve;
};

struct EvalResult {
    double cross_entropy = 0.0;
    double accuracy = 0.0;
};

ToyModel init_toy_model(const ToyTask& task, const TrainConfig& config, std::uint64_t model_seed);

// Plain SGD on cross-entropy over supervised positions. A fresh batch is
// drawn from the seeded stream each step, and the feature map is drawn from
// the pool by step index modulo the pool size. Throws with the step index if
// the loss stops being finite.
TrainResult train_toy(std::uint64_t model_seed, const ToyTask& task, const TrainConfig& config);

// Metrics over supervised positions only, using pool map 0.
EvalResult eval_toy(const ToyModel& model, const ToyBatch& batch);

// Per-step logits for one sequence (length x vocab), with the evaluation
// map. Exposed for causality checks.
Matrix toy_step_logits(const ToyModel& model, const std::vector<int>& tokens);

}  // namespace rfa
