#include "rfa/toytrain.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "rfa/gradients.hpp"

namespace rfa {

namespace {

constexpr double kSigmaFloor = 1e-3;

struct SequenceTensors {
    Matrix x;  // L x d token embeddings
    Matrix q, k, v;
};

SequenceTensors project_sequence(const ToyModel& model, const std::vector<int>& tokens) {
    const std::size_t n = tokens.size();
    const std::size_t d = model.dim;
    SequenceTensors s;
    s.x = Matrix(n, d);
    s.q = Matrix(n, d);
    s.k = Matrix(n, d);
    s.v = Matrix(n, d);
    for (std::size_t t = 0; t < n; ++t) {
        const int tok = tokens[t];
        if (tok < 0 || static_cast<std::size_t>(tok) >= model.vocab) {
            throw std::invalid_argument("toy model: token out of range");
        }
        const double* e = model.embed.row(static_cast<std::size_t>(tok));
        for (std::size_t j = 0; j < d; ++j) {
            s.x.at(t, j) = e[j];
        }
        const Vector xt = s.x.row_vector(t);
        const Vector qt = matvec(model.w_query, xt);
        const Vector kt = matvec(model.w_key, xt);
        const Vector vt = matvec(model.w_value, xt);
        for (std::size_t j = 0; j < d; ++j) {
            s.q.at(t, j) = qt[j];
            s.k.at(t, j) = kt[j];
            s.v.at(t, j) = vt[j];
        }
    }
    return s;
}

KernelKind kernel_of(ToyAttention kind) {
    switch (kind) {
        case ToyAttention::softmax: return KernelKind::softmax;
        case ToyAttention::rfa: return KernelKind::rfa_causal;
        case ToyAttention::rfa_gated: return KernelKind::rfa_gated;
    }
    throw std::invalid_argument("toy model: unknown attention kind");
}

Matrix attention_forward(const ToyModel& model, const SequenceTensors& s,
                         const RealizedFeatureMap& map, ForwardCache* cache) {
    switch (model.kind) {
        case ToyAttention::softmax:
            return softmax_attention(s.q, s.k, s.v, model.attn, /*causal=*/true, cache);
        case ToyAttention::rfa:
            return rfa_causal(s.q, s.k, s.v, map, model.attn, AttentionState{}, cache).outputs;
        case ToyAttention::rfa_gated: {
            SequenceBatch batch{s.q, s.k, s.v, s.x};
            return rfa_gated(batch, model.gate, map, model.attn, AttentionState{}, cache).outputs;
        }
    }
    throw std::invalid_argument("toy model: unknown attention kind");
}

double log_sum_exp(const Vector& logits) {
    const double m = *std::max_element(logits.begin(), logits.end());
    double s = 0.0;
    for (double l : logits) {
        s += std::exp(l - m);
    }
    return m + std::log(s);
}

RealizedFeatureMap eval_map(const ToyModel& model) {
    return with_sigma(model.pool.maps.front(), model.map_spec.sigma);
}

struct Grads {
    Matrix embed, w_query, w_key, w_value, w_out;
    Vector gate_w;
    double gate_b = 0.0;
    Vector sigma;
};

Grads zero_grads(const ToyModel& model) {
    Grads g;
    g.embed = Matrix(model.vocab, model.dim);
    g.w_query = Matrix(model.dim, model.dim);
    g.w_key = Matrix(model.dim, model.dim);
    g.w_value = Matrix(model.dim, model.dim);
    g.w_out = Matrix(model.vocab, model.dim);
    g.gate_w = Vector(model.dim, 0.0);
    g.sigma = Vector(model.dim, 0.0);
    return g;
}

void add_outer_into(Matrix& acc, const Vector& a, const Vector& b) {
    for (std::size_t i = 0; i < a.size(); ++i) {
        double* row = acc.row(i);
        for (std::size_t j = 0; j < b.size(); ++j) {
            row[j] += a[i] * b[j];
        }
    }
}

}  // namespace

void ToyTask::validate() const {
    if (vocab < 2) {
        throw std::invalid_argument("ToyTask: vocab must be >= 2");
    }
    if (lag < 1 || lag >= length) {
        throw std::invalid_argument("ToyTask: lag must satisfy 1 <= lag < length");
    }
}

void TrainConfig::validate() const {
    if (!(learning_rate > 0.0)) {
        throw std::invalid_argument("TrainConfig: learning rate must be positive");
    }
    if (batch_size == 0 || pool_size == 0 || model_dim == 0 || feature_D == 0) {
        throw std::invalid_argument("TrainConfig: sizes must be >= 1");
    }
}

ToyBatch gen_recency_task(const ToyTask& task, std::uint64_t seed, std::size_t count) {
    task.validate();
    ToyBatch batch;
    batch.count = count;
    batch.length = task.length;
    batch.tokens.resize(count * task.length);
    batch.labels.assign(count * task.length, ToyBatch::kIgnore);
    RngState rng{seed, 0};
    for (std::size_t s = 0; s < count; ++s) {
        for (std::size_t t = 0; t < task.length; ++t) {
            batch.tokens[s * task.length + t] =
                static_cast<int>(next_u64(rng) % static_cast<std::uint64_t>(task.vocab));
        }
        for (std::size_t t = task.lag; t < task.length; ++t) {
            batch.labels[s * task.length + t] = batch.tokens[s * task.length + t - task.lag];
        }
    }
    return batch;
}

std::size_t ToyModel::param_count() const {
    std::size_t n = embed.data.size() + w_query.data.size() + w_key.data.size() +
                    w_value.data.size() + w_out.data.size();
    if (kind == ToyAttention::rfa_gated) {
        n += gate.w.size() + 1;
    }
    if (kind != ToyAttention::softmax) {
        n += map_spec.sigma.size();
    }
    return n;
}

ToyModel init_toy_model(const ToyTask& task, const TrainConfig& config, std::uint64_t model_seed) {
    task.validate();
    config.validate();
    ToyModel model;
    model.vocab = task.vocab;
    model.dim = config.model_dim;
    model.kind = config.kind;
    model.attn.kind =
        config.kind == ToyAttention::softmax ? AttentionKind::softmax : AttentionKind::rfa;
    model.attn.temperature = config.temperature;
    model.attn.epsilon = config.guard_epsilon;

    RngState rng = make_stream(model_seed, 11);
    const double scale = 1.0 / std::sqrt(static_cast<double>(model.dim));
    const auto scaled_normal = [&](std::size_t r, std::size_t c) {
        Matrix m = seeded_normal_matrix(rng, r, c);
        for (double& x : m.data) {
            x *= scale;
        }
        return m;
    };
    model.embed = scaled_normal(model.vocab, model.dim);
    model.w_query = scaled_normal(model.dim, model.dim);
    model.w_key = scaled_normal(model.dim, model.dim);
    model.w_value = scaled_normal(model.dim, model.dim);
    // Zero output projection: the untrained model predicts the uniform
    // distribution, so the first loss is exactly ln(vocab).
    model.w_out = Matrix(model.vocab, model.dim);
    model.gate.w = Vector(model.dim, 0.0);
    model.gate.b = 0.0;
    model.map_spec = FeatureMapSpec::make(FeatureMapKind::gaussian, model.dim, config.feature_D,
                                          1.0, make_stream(model_seed, 12).seed);
    if (model.kind != ToyAttention::softmax) {
        model.pool = build_pool(model.map_spec, config.pool_size);
    }
    return model;
}

TrainResult train_toy(std::uint64_t model_seed, const ToyTask& task, const TrainConfig& config) {
    task.validate();
    config.validate();
    TrainResult result;
    result.model = init_toy_model(task, config, model_seed);
    ToyModel& model = result.model;

    for (std::size_t step = 0; step < config.steps; ++step) {
        const ToyBatch batch =
            gen_recency_task(task, make_stream(config.seed, 1000 + step).seed, config.batch_size);
        RealizedFeatureMap map;
        if (model.kind != ToyAttention::softmax) {
            map = with_sigma(model.pool.maps[step % model.pool.size()], model.map_spec.sigma);
        }

        // Count supervised positions so the loss is their mean.
        std::size_t supervised = 0;
        for (int label : batch.labels) {
            if (label != ToyBatch::kIgnore) {
                ++supervised;
            }
        }
        const double inv_sup = 1.0 / static_cast<double>(supervised);

        Grads grads = zero_grads(model);
        double loss = 0.0;
        std::size_t correct = 0;
        for (std::size_t s = 0; s < batch.count; ++s) {
            std::vector<int> tokens(batch.tokens.begin() + s * batch.length,
                                    batch.tokens.begin() + (s + 1) * batch.length);
            const SequenceTensors seq = project_sequence(model, tokens);
            ForwardCache cache;
            Matrix h;
            try {
                h = attention_forward(model, seq, map, &cache);
            } catch (const std::domain_error&) {
                // degenerate projections (zero or non-finite norms) mean the
                // parameters have blown up
                throw std::runtime_error("train_toy: loss diverged (non-finite) at step " +
                                         std::to_string(step));
            }

            Matrix dh(h.rows, h.cols);
            for (std::size_t t = 0; t < batch.length; ++t) {
                const int label = batch.label(s, t);
                if (label == ToyBatch::kIgnore) {
                    continue;
                }
                const Vector ht = h.row_vector(t);
                const Vector logits = matvec(model.w_out, ht);
                const double lse = log_sum_exp(logits);
                loss += (lse - logits[static_cast<std::size_t>(label)]) * inv_sup;
                const std::size_t pred = static_cast<std::size_t>(
                    std::max_element(logits.begin(), logits.end()) - logits.begin());
                if (pred == static_cast<std::size_t>(label)) {
                    ++correct;
                }
                Vector dlogits(model.vocab);
                for (std::size_t c = 0; c < model.vocab; ++c) {
                    dlogits[c] = std::exp(logits[c] - lse) * inv_sup;
                }
                dlogits[static_cast<std::size_t>(label)] -= inv_sup;
                add_outer_into(grads.w_out, dlogits, ht);
                const Vector dht = matvec_transposed(model.w_out, dlogits);
                for (std::size_t j = 0; j < model.dim; ++j) {
                    dh.at(t, j) += dht[j];
                }
            }

            const GradBundle bundle = backward(kernel_of(model.kind), cache, dh);
            for (std::size_t t = 0; t < batch.length; ++t) {
                const Vector xt = seq.x.row_vector(t);
                add_outer_into(grads.w_query, bundle.d_queries.row_vector(t), xt);
                add_outer_into(grads.w_key, bundle.d_keys.row_vector(t), xt);
                add_outer_into(grads.w_value, bundle.d_values.row_vector(t), xt);
                Vector dx = matvec_transposed(model.w_query, bundle.d_queries.row_vector(t));
                const Vector dxk = matvec_transposed(model.w_key, bundle.d_keys.row_vector(t));
                const Vector dxv = matvec_transposed(model.w_value, bundle.d_values.row_vector(t));
                for (std::size_t j = 0; j < model.dim; ++j) {
                    dx[j] += dxk[j] + dxv[j];
                    if (!bundle.d_raw_inputs.data.empty()) {
                        dx[j] += bundle.d_raw_inputs.at(t, j);
                    }
                }
                double* erow = grads.embed.row(static_cast<std::size_t>(tokens[t]));
                for (std::size_t j = 0; j < model.dim; ++j) {
                    erow[j] += dx[j];
                }
            }
            if (!bundle.d_gate_w.empty()) {
                for (std::size_t j = 0; j < model.dim; ++j) {
                    grads.gate_w[j] += bundle.d_gate_w[j];
                }
                grads.gate_b += bundle.d_gate_b;
            }
            if (!bundle.d_sigma.empty()) {
                for (std::size_t j = 0; j < model.dim; ++j) {
                    grads.sigma[j] += bundle.d_sigma[j];
                }
            }
        }

        if (!std::isfinite(loss)) {
            throw std::runtime_error("train_toy: loss diverged (non-finite) at step " +
                                     std::to_string(step));
        }

        const double lr = config.learning_rate;
        const auto apply = [lr](Matrix& param, const Matrix& grad) {
            for (std::size_t i = 0; i < param.data.size(); ++i) {
                param.data[i] -= lr * grad.data[i];
            }
        };
        apply(model.embed, grads.embed);
        apply(model.w_query, grads.w_query);
        apply(model.w_key, grads.w_key);
        apply(model.w_value, grads.w_value);
        apply(model.w_out, grads.w_out);
        if (model.kind == ToyAttention::rfa_gated) {
            for (std::size_t j = 0; j < model.dim; ++j) {
                model.gate.w[j] -= lr * grads.gate_w[j];
            }
            model.gate.b -= lr * grads.gate_b;
        }
        if (model.kind != ToyAttention::softmax) {
            for (std::size_t j = 0; j < model.dim; ++j) {
                model.map_spec.sigma[j] =
                    std::max(kSigmaFloor, model.map_spec.sigma[j] - lr * grads.sigma[j]);
            }
        }
        if (!all_finite(model.embed) || !all_finite(model.w_query) || !all_finite(model.w_key) ||
            !all_finite(model.w_value) || !all_finite(model.w_out)) {
            throw std::runtime_error("train_toy: loss diverged (non-finite) at step " +
                                     std::to_string(step));
        }

        const double acc = static_cast<double>(correct) / static_cast<double>(supervised);
        result.curve.push_back({step, loss, acc});
    }
    return result;
}

EvalResult eval_toy(const ToyModel& model, const ToyBatch& batch) {
    RealizedFeatureMap map;
    if (model.kind != ToyAttention::softmax) {
        map = eval_map(model);
    }
    double loss = 0.0;
    std::size_t supervised = 0;
    std::size_t correct = 0;
    for (std::size_t s = 0; s < batch.count; ++s) {
        std::vector<int> tokens(batch.tokens.begin() + s * batch.length,
                                batch.tokens.begin() + (s + 1) * batch.length);
        const SequenceTensors seq = project_sequence(model, tokens);
        const Matrix h = attention_forward(model, seq, map, nullptr);
        for (std::size_t t = 0; t < batch.length; ++t) {
            const int label = batch.label(s, t);
            if (label == ToyBatch::kIgnore) {
                continue;
            }
            const Vector logits = matvec(model.w_out, h.row_vector(t));
            const double lse = log_sum_exp(logits);
            loss += lse - logits[static_cast<std::size_t>(label)];
            ++supervised;
            const std::size_t pred = static_cast<std::size_t>(
                std::max_element(logits.begin(), logits.end()) - logits.begin());
            if (pred == static_cast<std::size_t>(label)) {
                ++correct;
            }
        }
    }
    EvalResult r;
    r.cross_entropy = loss / static_cast<double>(supervised);
    r.accuracy = static_cast<double>(correct) / static_cast<double>(supervised);
    return r;
}

Matrix toy_step_logits(const ToyModel& model, const std::vector<int>& tokens) {
    RealizedFeatureMap map;
    if (model.kind != ToyAttention::softmax) {
        map = eval_map(model);
    }
    const SequenceTensors seq = project_sequence(model, tokens);
    const Matrix h = attention_forward(model, seq, map, nullptr);
    Matrix logits(tokens.size(), model.vocab);
    for (std::size_t t = 0; t < tokens.size(); ++t) {
        const Vector l = matvec(model.w_out, h.row_vector(t));
        for (std::size_t c = 0; c < model.vocab; ++c) {
            logits.at(t, c) = l[c];
        }
    }
    return logits;
}

}  // namespace rfa
