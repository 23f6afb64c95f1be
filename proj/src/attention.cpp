#include "rfa/attention.hpp"

#include <cmath>
#include <stdexcept>

#include "rfa/gradients.hpp"

namespace rfa {

namespace {

void check_kv(const Matrix& keys, const Matrix& values) {
    if (keys.rows == 0) {
        throw std::invalid_argument("attention: empty key set");
    }
    if (keys.rows != values.rows) {
        throw std::invalid_argument("attention: keys and values disagree in count");
    }
}

void check_map_dim(const RealizedFeatureMap& map, std::size_t d) {
    if (map.spec.d != d) {
        throw std::invalid_argument("attention: feature map input dimension mismatch");
    }
}

Vector normalize_or_copy(const Vector& v, bool normalize, double* norm_out) {
    if (!normalize) {
        if (norm_out) *norm_out = 1.0;
        return v;
    }
    const double norm = l2_norm(v);
    if (norm_out) *norm_out = norm;
    if (norm == 0.0 || !std::isfinite(norm)) {
        throw std::domain_error("attention: zero-norm input with normalize_qk enabled");
    }
    Vector out(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
        out[i] = v[i] / norm;
    }
    return out;
}

void add_outer(Matrix& S, const Vector& a, const Vector& b, double scale = 1.0) {
    for (std::size_t i = 0; i < a.size(); ++i) {
        double* row = S.row(i);
        const double ai = scale * a[i];
        for (std::size_t j = 0; j < b.size(); ++j) {
            row[j] += ai * b[j];
        }
    }
}

AttentionState resolve_init(const AttentionState& init, std::size_t feature_dim,
                            std::size_t d_v) {
    if (init.empty()) {
        return AttentionState::zero(feature_dim, d_v);
    }
    if (init.z.size() != feature_dim || init.S.rows != feature_dim || init.S.cols != d_v) {
        throw std::invalid_argument("attention: init state shape mismatch");
    }
    return init;
}

}  // namespace

void AttentionConfig::validate() const {
    if (!(temperature > 0.0)) {
        throw std::invalid_argument("AttentionConfig: temperature must be positive");
    }
    if (!(epsilon > 0.0)) {
        throw std::invalid_argument("AttentionConfig: epsilon must be positive");
    }
}

AttentionState AttentionState::zero(std::size_t feature_dim, std::size_t d_v) {
    AttentionState s;
    s.S = Matrix(feature_dim, d_v);
    s.z = Vector(feature_dim, 0.0);
    return s;
}

double clamp_denominator(double u, double epsilon) {
    if (u >= 0.0) {
        return u < epsilon ? epsilon : u;
    }
    return u > -epsilon ? -epsilon : u;
}

double sigmoid(double x) {
    if (x >= 0.0) {
        return 1.0 / (1.0 + std::exp(-x));
    }
    const double e = std::exp(x);
    return e / (1.0 + e);
}

Vector rfa_readout(const Matrix& S, const Vector& phi_q, double denominator) {
    Vector out = matvec_transposed(S, phi_q);
    for (double& x : out) {
        x /= denominator;
    }
    return out;
}

Vector softmax_attention(const Vector& q, const Matrix& keys, const Matrix& values,
                         const AttentionConfig& config) {
    config.validate();
    check_kv(keys, values);
    if (q.size() != keys.cols) {
        throw std::invalid_argument("softmax_attention: query dimension mismatch");
    }
    const Vector qh = normalize_or_copy(q, config.normalize_qk, nullptr);
    Vector logits(keys.rows);
    for (std::size_t i = 0; i < keys.rows; ++i) {
        const Vector kh = normalize_or_copy(keys.row_vector(i), config.normalize_qk, nullptr);
        logits[i] = dot(qh, kh);
    }
    const Vector w = stable_softmax(logits, config.temperature);
    Vector out(values.cols, 0.0);
    for (std::size_t i = 0; i < keys.rows; ++i) {
        const double* v = values.row(i);
        for (std::size_t c = 0; c < values.cols; ++c) {
            out[c] += w[i] * v[c];
        }
    }
    return out;
}

Matrix softmax_attention(const Matrix& queries, const Matrix& keys, const Matrix& values,
                         const AttentionConfig& config, bool causal, ForwardCache* cache) {
    config.validate();
    check_kv(keys, values);
    if (queries.cols != keys.cols) {
        throw std::invalid_argument("softmax_attention: query dimension mismatch");
    }
    if (causal && queries.rows != keys.rows) {
        throw std::invalid_argument("softmax_attention: causal attention requires N = M");
    }

    std::vector<Vector> k_hat(keys.rows);
    std::vector<double> k_norm(keys.rows);
    for (std::size_t i = 0; i < keys.rows; ++i) {
        k_hat[i] = normalize_or_copy(keys.row_vector(i), config.normalize_qk, &k_norm[i]);
    }

    Matrix out(queries.rows, values.cols);
    std::vector<Vector> q_hat(queries.rows);
    std::vector<double> q_norm(queries.rows);
    std::vector<Vector> probs(queries.rows);
    for (std::size_t t = 0; t < queries.rows; ++t) {
        q_hat[t] = normalize_or_copy(queries.row_vector(t), config.normalize_qk, &q_norm[t]);
        const std::size_t limit = causal ? t + 1 : keys.rows;
        Vector logits(limit);
        for (std::size_t i = 0; i < limit; ++i) {
            logits[i] = dot(q_hat[t], k_hat[i]);
        }
        probs[t] = stable_softmax(logits, config.temperature);
        for (std::size_t i = 0; i < limit; ++i) {
            const double* v = values.row(i);
            for (std::size_t c = 0; c < values.cols; ++c) {
                out.at(t, c) += probs[t][i] * v[c];
            }
        }
    }

    if (cache) {
        cache->kind = KernelKind::softmax;
        cache->config = config;
        cache->causal_softmax = causal;
        cache->queries = queries;
        cache->keys = keys;
        cache->values = values;
        cache->q_hat = std::move(q_hat);
        cache->k_hat = std::move(k_hat);
        cache->q_norm = std::move(q_norm);
        cache->k_norm = std::move(k_norm);
        cache->probs = std::move(probs);
        cache->outputs = out;
    }
    return out;
}

Matrix rfa_cross(const Matrix& queries, const Matrix& keys, const Matrix& values,
                 const RealizedFeatureMap& map, const AttentionConfig& config,
                 ForwardCache* cache) {
    config.validate();
    check_kv(keys, values);
    check_map_dim(map, keys.cols);
    if (queries.cols != keys.cols) {
        throw std::invalid_argument("rfa_cross: query dimension mismatch");
    }

    const std::size_t fdim = map.feature_dim();
    Matrix S(fdim, values.cols);
    Vector z(fdim, 0.0);
    std::vector<Vector> k_hat(keys.rows), phi_k(keys.rows);
    std::vector<double> k_norm(keys.rows);
    for (std::size_t i = 0; i < keys.rows; ++i) {
        k_hat[i] = normalize_or_copy(keys.row_vector(i), config.normalize_qk, &k_norm[i]);
        phi_k[i] = apply_map(map, k_hat[i]);
        add_outer(S, phi_k[i], values.row_vector(i));
        for (std::size_t f = 0; f < fdim; ++f) {
            z[f] += phi_k[i][f];
        }
    }

    Matrix out(queries.rows, values.cols);
    std::vector<Vector> q_hat(queries.rows), phi_q(queries.rows);
    std::vector<double> q_norm(queries.rows), u_raw(queries.rows), u_clamped(queries.rows);
    for (std::size_t t = 0; t < queries.rows; ++t) {
        q_hat[t] = normalize_or_copy(queries.row_vector(t), config.normalize_qk, &q_norm[t]);
        phi_q[t] = apply_map(map, q_hat[t]);
        u_raw[t] = dot(phi_q[t], z);
        u_clamped[t] = clamp_denominator(u_raw[t], config.epsilon);
        const Vector h = rfa_readout(S, phi_q[t], u_clamped[t]);
        for (std::size_t c = 0; c < values.cols; ++c) {
            out.at(t, c) = h[c];
        }
    }

    if (cache) {
        cache->kind = KernelKind::rfa_cross;
        cache->config = config;
        cache->map = map;
        cache->queries = queries;
        cache->keys = keys;
        cache->values = values;
        cache->q_hat = std::move(q_hat);
        cache->k_hat = std::move(k_hat);
        cache->q_norm = std::move(q_norm);
        cache->k_norm = std::move(k_norm);
        cache->phi_q = std::move(phi_q);
        cache->phi_k = std::move(phi_k);
        cache->S_steps = {S};
        cache->z_steps = {z};
        cache->u_raw = std::move(u_raw);
        cache->u_clamped = std::move(u_clamped);
        cache->outputs = out;
    }
    return out;
}

CausalResult rfa_causal(const Matrix& queries, const Matrix& keys, const Matrix& values,
                        const RealizedFeatureMap& map, const AttentionConfig& config,
                        const AttentionState& init, ForwardCache* cache) {
    config.validate();
    check_kv(keys, values);
    check_map_dim(map, keys.cols);
    if (queries.rows != keys.rows || queries.cols != keys.cols) {
        throw std::invalid_argument("rfa_causal: self-attention requires N = M");
    }

    const std::size_t n = queries.rows;
    const std::size_t fdim = map.feature_dim();
    AttentionState state = resolve_init(init, fdim, values.cols);

    Matrix out(n, values.cols);
    std::vector<Vector> q_hat(n), k_hat(n), phi_q(n), phi_k(n);
    std::vector<double> q_norm(n), k_norm(n), u_raw(n), u_clamped(n);
    std::vector<Matrix> S_steps;
    std::vector<Vector> z_steps;
    if (cache) {
        S_steps.reserve(n);
        z_steps.reserve(n);
    }
    for (std::size_t t = 0; t < n; ++t) {
        k_hat[t] = normalize_or_copy(keys.row_vector(t), config.normalize_qk, &k_norm[t]);
        phi_k[t] = apply_map(map, k_hat[t]);
        add_outer(state.S, phi_k[t], values.row_vector(t));
        for (std::size_t f = 0; f < fdim; ++f) {
            state.z[f] += phi_k[t][f];
        }
        q_hat[t] = normalize_or_copy(queries.row_vector(t), config.normalize_qk, &q_norm[t]);
        phi_q[t] = apply_map(map, q_hat[t]);
        u_raw[t] = dot(phi_q[t], state.z);
        u_clamped[t] = clamp_denominator(u_raw[t], config.epsilon);
        const Vector h = rfa_readout(state.S, phi_q[t], u_clamped[t]);
        for (std::size_t c = 0; c < values.cols; ++c) {
            out.at(t, c) = h[c];
        }
        if (cache) {
            S_steps.push_back(state.S);
            z_steps.push_back(state.z);
        }
    }

    if (cache) {
        cache->kind = KernelKind::rfa_causal;
        cache->config = config;
        cache->map = map;
        cache->queries = queries;
        cache->keys = keys;
        cache->values = values;
        cache->init = resolve_init(init, fdim, values.cols);
        cache->q_hat = std::move(q_hat);
        cache->k_hat = std::move(k_hat);
        cache->q_norm = std::move(q_norm);
        cache->k_norm = std::move(k_norm);
        cache->phi_q = std::move(phi_q);
        cache->phi_k = std::move(phi_k);
        cache->S_steps = std::move(S_steps);
        cache->z_steps = std::move(z_steps);
        cache->u_raw = std::move(u_raw);
        cache->u_clamped = std::move(u_clamped);
        cache->outputs = out;
    }
    return CausalResult{std::move(out), std::move(state)};
}

CausalResult rfa_causal(const Matrix& queries, const Matrix& keys, const Matrix& values,
                        const RealizedFeatureMap& map, const AttentionConfig& config) {
    return rfa_causal(queries, keys, values, map, config, AttentionState{});
}

CausalResult rfa_stateful_carry(const std::vector<SequenceBatch>& segments,
                                const RealizedFeatureMap& map, const AttentionConfig& config) {
    if (segments.empty()) {
        throw std::invalid_argument("rfa_stateful_carry: no segments");
    }
    const std::size_t d = segments.front().queries.cols;
    const std::size_t d_v = segments.front().values.cols;
    std::size_t total = 0;
    for (const SequenceBatch& seg : segments) {
        if (seg.queries.cols != d || seg.keys.cols != d || seg.values.cols != d_v) {
            throw std::invalid_argument("rfa_stateful_carry: inconsistent segment dimensions");
        }
        total += seg.target_length();
    }

    Matrix out(total, d_v);
    AttentionState state;
    std::size_t offset = 0;
    for (const SequenceBatch& seg : segments) {
        CausalResult r = rfa_causal(seg.queries, seg.keys, seg.values, map, config, state);
        for (std::size_t t = 0; t < r.outputs.rows; ++t) {
            for (std::size_t c = 0; c < d_v; ++c) {
                out.at(offset + t, c) = r.outputs.at(t, c);
            }
        }
        offset += r.outputs.rows;
        state = std::move(r.final_state);
    }
    return CausalResult{std::move(out), std::move(state)};
}

GatedResult rfa_gated(const SequenceBatch& batch, const GateParams& gate,
                      const RealizedFeatureMap& map, const AttentionConfig& config,
                      const AttentionState& init, ForwardCache* cache) {
    config.validate();
    check_kv(batch.keys, batch.values);
    check_map_dim(map, batch.keys.cols);
    if (batch.queries.rows != batch.keys.rows) {
        throw std::invalid_argument("rfa_gated: self-attention requires N = M");
    }
    if (batch.raw_inputs.rows != batch.queries.rows) {
        throw std::invalid_argument("rfa_gated: raw_inputs missing or wrong length");
    }
    if (gate.w.size() != batch.raw_inputs.cols) {
        throw std::invalid_argument("rfa_gated: gate weight dimension mismatch");
    }

    const std::size_t n = batch.queries.rows;
    const std::size_t fdim = map.feature_dim();
    const std::size_t d_v = batch.values.cols;
    AttentionState state = resolve_init(init, fdim, d_v);

    Matrix out(n, d_v);
    Vector gates(n);
    std::vector<Vector> q_hat(n), k_hat(n), phi_q(n), phi_k(n);
    std::vector<double> q_norm(n), k_norm(n), u_raw(n), u_clamped(n);
    std::vector<Matrix> S_steps;
    std::vector<Vector> z_steps;
    if (cache) {
        S_steps.reserve(n);
        z_steps.reserve(n);
    }
    bool degenerate = false;
    for (std::size_t t = 0; t < n; ++t) {
        const double g = sigmoid(dot(gate.w, batch.raw_inputs.row_vector(t)) + gate.b);
        gates[t] = g;
        k_hat[t] = normalize_or_copy(batch.keys.row_vector(t), config.normalize_qk, &k_norm[t]);
        phi_k[t] = apply_map(map, k_hat[t]);
        for (double& s : state.S.data) {
            s *= g;
        }
        add_outer(state.S, phi_k[t], batch.values.row_vector(t), 1.0 - g);
        for (std::size_t f = 0; f < fdim; ++f) {
            state.z[f] = g * state.z[f] + (1.0 - g) * phi_k[t][f];
        }
        q_hat[t] = normalize_or_copy(batch.queries.row_vector(t), config.normalize_qk, &q_norm[t]);
        phi_q[t] = apply_map(map, q_hat[t]);
        u_raw[t] = dot(phi_q[t], state.z);
        u_clamped[t] = clamp_denominator(u_raw[t], config.epsilon);
        if (std::abs(u_raw[t]) < config.epsilon) {
            degenerate = true;
        }
        const Vector h = rfa_readout(state.S, phi_q[t], u_clamped[t]);
        for (std::size_t c = 0; c < d_v; ++c) {
            out.at(t, c) = h[c];
        }
        if (cache) {
            S_steps.push_back(state.S);
            z_steps.push_back(state.z);
        }
    }

    if (cache) {
        cache->kind = KernelKind::rfa_gated;
        cache->config = config;
        cache->map = map;
        cache->queries = batch.queries;
        cache->keys = batch.keys;
        cache->values = batch.values;
        cache->raw_inputs = batch.raw_inputs;
        cache->gate = gate;
        cache->init = resolve_init(init, fdim, d_v);
        cache->q_hat = std::move(q_hat);
        cache->k_hat = std::move(k_hat);
        cache->q_norm = std::move(q_norm);
        cache->k_norm = std::move(k_norm);
        cache->phi_q = std::move(phi_q);
        cache->phi_k = std::move(phi_k);
        cache->S_steps = std::move(S_steps);
        cache->z_steps = std::move(z_steps);
        cache->u_raw = std::move(u_raw);
        cache->u_clamped = std::move(u_clamped);
        cache->gates = gates;
        cache->outputs = out;
        cache->degenerate_partition = degenerate;
    }
    return GatedResult{std::move(out), std::move(state), std::move(gates), degenerate};
}

GatedResult rfa_gated(const SequenceBatch& batch, const GateParams& gate,
                      const RealizedFeatureMap& map, const AttentionConfig& config) {
    return rfa_gated(batch, gate, map, config, AttentionState{});
}

Matrix rfa_unnormalized(const Matrix& queries, const Matrix& keys, const Matrix& values,
                        const RealizedFeatureMap& map, const AttentionConfig& config) {
    config.validate();
    if (config.normalize_qk) {
        throw std::invalid_argument("rfa_unnormalized: requires normalize_qk = false");
    }
    if (map.spec.kind == FeatureMapKind::elu) {
        throw std::invalid_argument("rfa_unnormalized: requires a random feature map");
    }
    check_kv(keys, values);
    check_map_dim(map, keys.cols);
    if (queries.cols != keys.cols) {
        throw std::invalid_argument("rfa_unnormalized: query dimension mismatch");
    }

    const std::size_t fdim = map.feature_dim();
    const double two_sigma_sq = 2.0 * config.temperature;
    Matrix S(fdim, values.cols);
    Vector z(fdim, 0.0);
    for (std::size_t i = 0; i < keys.rows; ++i) {
        const Vector k = keys.row_vector(i);
        const double exponent = dot(k, k) / two_sigma_sq;
        if (exponent > 700.0) {
            throw std::range_error("rfa_unnormalized: key scalar exp(||k||^2 / 2 sigma^2) overflows");
        }
        const double c_k = std::exp(exponent);
        const Vector phi = apply_map(map, k);
        Vector scaled(fdim);
        for (std::size_t f = 0; f < fdim; ++f) {
            scaled[f] = c_k * phi[f];
        }
        add_outer(S, scaled, values.row_vector(i));
        for (std::size_t f = 0; f < fdim; ++f) {
            z[f] += scaled[f];
        }
    }

    Matrix out(queries.rows, values.cols);
    for (std::size_t t = 0; t < queries.rows; ++t) {
        const Vector phi_q = apply_map(map, queries.row_vector(t));
        const double u = clamp_denominator(dot(phi_q, z), config.epsilon);
        const Vector h = rfa_readout(S, phi_q, u);
        for (std::size_t c = 0; c < values.cols; ++c) {
            out.at(t, c) = h[c];
        }
    }
    return out;
}

Vector gated_softmax_oracle(const Vector& q, const Matrix& keys, const Matrix& values,
                            const Vector& gates, const AttentionConfig& config) {
    config.validate();
    check_kv(keys, values);
    if (gates.size() != keys.rows) {
        throw std::invalid_argument("gated_softmax_oracle: one gate per key required");
    }
    for (double g : gates) {
        if (!(g >= 0.0 && g <= 1.0)) {
            throw std::invalid_argument("gated_softmax_oracle: gates must lie in [0, 1]");
        }
    }

    Matrix decayed_keys(keys.rows, keys.cols);
    Matrix decayed_values(values.rows, values.cols);
    double suffix = 1.0;
    for (std::size_t ri = keys.rows; ri-- > 0;) {
        const double decay = (1.0 - gates[ri]) * suffix;
        suffix *= gates[ri];
        for (std::size_t c = 0; c < keys.cols; ++c) {
            decayed_keys.at(ri, c) = decay * keys.at(ri, c);
        }
        for (std::size_t c = 0; c < values.cols; ++c) {
            decayed_values.at(ri, c) = decay * values.at(ri, c);
        }
    }
    AttentionConfig plain = config;
    plain.normalize_qk = false;  // decayed keys may be zero; scale carries the gating
    return softmax_attention(q, decayed_keys, decayed_values, plain);
}

}  // namespace rfa
