#include "rfa/gradients.hpp"

#include <cmath>
#include <stdexcept>

namespace rfa {

namespace {

// Minimum |phi(q) . z| for a grad check to be conclusive; keeps central
// differences away from the guard's kink.
constexpr double kGuardMargin = 1e-3;

bool guard_passthrough(double u_raw, double epsilon) {
    return u_raw >= epsilon || u_raw <= -epsilon;
}

// Pulls a gradient w.r.t. the map input out of a gradient w.r.t. phi(x).
// Accumulates the per-dimension scale gradient when d_sigma is non-null
// (the raw draws are constants; only sigma is differentiated).
Vector phi_backward(const RealizedFeatureMap& map, const Vector& x_hat, const Vector& dphi,
                    Vector* d_sigma) {
    const FeatureMapSpec& spec = map.spec;
    Vector dx(x_hat.size(), 0.0);
    if (spec.kind == FeatureMapKind::elu) {
        for (std::size_t j = 0; j < x_hat.size(); ++j) {
            dx[j] = dphi[j] * (x_hat[j] > 0.0 ? 1.0 : std::exp(x_hat[j]));
        }
        return dx;
    }
    const double scale = std::sqrt(1.0 / static_cast<double>(spec.D));
    for (std::size_t i = 0; i < spec.D; ++i) {
        const double* w = map.weights.row(i);
        double a = 0.0;
        for (std::size_t j = 0; j < x_hat.size(); ++j) {
            a += w[j] * x_hat[j];
        }
        double da;
        if (spec.kind == FeatureMapKind::gaussian) {
            da = scale * (dphi[i] * std::cos(a) - dphi[spec.D + i] * std::sin(a));
        } else {  // arccos
            da = a > 0.0 ? scale * dphi[i] : 0.0;
        }
        if (da == 0.0) {
            continue;
        }
        for (std::size_t j = 0; j < x_hat.size(); ++j) {
            dx[j] += da * w[j];
        }
        if (d_sigma) {
            const double* raw = map.raw.row(i);
            for (std::size_t j = 0; j < x_hat.size(); ++j) {
                (*d_sigma)[j] += da * raw[j] * x_hat[j];
            }
        }
    }
    return dx;
}

// Through x_hat = x / ||x||.
Vector norm_backward(const Vector& d_xhat, const Vector& x_hat, double norm, bool normalize) {
    if (!normalize) {
        return d_xhat;
    }
    const double proj = dot(d_xhat, x_hat);
    Vector dx(d_xhat.size());
    for (std::size_t j = 0; j < d_xhat.size(); ++j) {
        dx[j] = (d_xhat[j] - proj * x_hat[j]) / norm;
    }
    return dx;
}

void add_scaled(Vector& acc, const Vector& v, double s) {
    for (std::size_t i = 0; i < v.size(); ++i) {
        acc[i] += s * v[i];
    }
}

void add_outer(Matrix& m, const Vector& a, const Vector& b) {
    for (std::size_t i = 0; i < a.size(); ++i) {
        double* row = m.row(i);
        for (std::size_t j = 0; j < b.size(); ++j) {
            row[j] += a[i] * b[j];
        }
    }
}

double frobenius_dot(const Matrix& a, const Matrix& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        s += a.data[i] * b.data[i];
    }
    return s;
}

GradBundle make_bundle_shell(const ForwardCache& cache) {
    GradBundle g;
    g.d_queries = Matrix(cache.queries.rows, cache.queries.cols);
    g.d_keys = Matrix(cache.keys.rows, cache.keys.cols);
    g.d_values = Matrix(cache.values.rows, cache.values.cols);
    if (cache.kind == KernelKind::rfa_gated) {
        g.d_raw_inputs = Matrix(cache.raw_inputs.rows, cache.raw_inputs.cols);
        g.d_gate_w = Vector(cache.gate.w.size(), 0.0);
    }
    if (cache.kind != KernelKind::softmax && cache.map.spec.kind != FeatureMapKind::elu) {
        g.d_sigma = Vector(cache.map.spec.sigma.size(), 0.0);
    }
    return g;
}

void backward_softmax(const ForwardCache& cache, const Matrix& upstream, GradBundle& g) {
    const Matrix& values = cache.values;
    const double tau = cache.config.temperature;
    std::vector<Vector> dk_hat(cache.keys.rows, Vector(cache.keys.cols, 0.0));
    for (std::size_t t = 0; t < cache.queries.rows; ++t) {
        const std::size_t limit = cache.probs[t].size();
        const Vector& p = cache.probs[t];
        const double* hhat = upstream.row(t);
        Vector dp(limit);
        for (std::size_t i = 0; i < limit; ++i) {
            const double* v = values.row(i);
            double s = 0.0;
            for (std::size_t c = 0; c < values.cols; ++c) {
                g.d_values.at(i, c) += p[i] * hhat[c];
                s += hhat[c] * v[c];
            }
            dp[i] = s;
        }
        double mean = 0.0;
        for (std::size_t i = 0; i < limit; ++i) {
            mean += p[i] * dp[i];
        }
        Vector dq_hat(cache.queries.cols, 0.0);
        for (std::size_t i = 0; i < limit; ++i) {
            const double dl = p[i] * (dp[i] - mean) / tau;
            add_scaled(dq_hat, cache.k_hat[i], dl);
            add_scaled(dk_hat[i], cache.q_hat[t], dl);
        }
        const Vector dq =
            norm_backward(dq_hat, cache.q_hat[t], cache.q_norm[t], cache.config.normalize_qk);
        for (std::size_t c = 0; c < cache.queries.cols; ++c) {
            g.d_queries.at(t, c) = dq[c];
        }
    }
    for (std::size_t i = 0; i < cache.keys.rows; ++i) {
        const Vector dk =
            norm_backward(dk_hat[i], cache.k_hat[i], cache.k_norm[i], cache.config.normalize_qk);
        for (std::size_t c = 0; c < cache.keys.cols; ++c) {
            g.d_keys.at(i, c) = dk[c];
        }
    }
}

void backward_rfa_cross(const ForwardCache& cache, const Matrix& upstream,
                        const StateGrad* incoming, GradBundle& g) {
    const Matrix& S = cache.S_steps.front();
    const Vector& z = cache.z_steps.front();
    const std::size_t fdim = z.size();
    Matrix dS(fdim, cache.values.cols);
    Vector dz(fdim, 0.0);
    if (incoming) {
        dS = incoming->dS;
        dz = incoming->dz;
    }
    Vector* d_sigma = g.d_sigma.empty() ? nullptr : &g.d_sigma;

    for (std::size_t t = 0; t < cache.queries.rows; ++t) {
        const double c = cache.u_clamped[t];
        const Vector n = matvec_transposed(S, cache.phi_q[t]);
        const double* hhat = upstream.row(t);
        Vector dn(n.size());
        double hn = 0.0;
        for (std::size_t j = 0; j < n.size(); ++j) {
            dn[j] = hhat[j] / c;
            hn += hhat[j] * n[j];
        }
        const double dc = -hn / (c * c);
        const double du = guard_passthrough(cache.u_raw[t], cache.config.epsilon) ? dc : 0.0;
        Vector dphi_q = matvec(S, dn);
        add_scaled(dphi_q, z, du);
        add_outer(dS, cache.phi_q[t], dn);
        add_scaled(dz, cache.phi_q[t], du);
        const Vector dq_hat = phi_backward(cache.map, cache.q_hat[t], dphi_q, d_sigma);
        const Vector dq =
            norm_backward(dq_hat, cache.q_hat[t], cache.q_norm[t], cache.config.normalize_qk);
        for (std::size_t j = 0; j < dq.size(); ++j) {
            g.d_queries.at(t, j) = dq[j];
        }
    }

    for (std::size_t i = 0; i < cache.keys.rows; ++i) {
        Vector dphi_k = matvec(dS, cache.values.row_vector(i));
        for (std::size_t f = 0; f < fdim; ++f) {
            dphi_k[f] += dz[f];
        }
        const Vector dv = matvec_transposed(dS, cache.phi_k[i]);
        for (std::size_t c = 0; c < cache.values.cols; ++c) {
            g.d_values.at(i, c) = dv[c];
        }
        const Vector dk_hat = phi_backward(cache.map, cache.k_hat[i], dphi_k, d_sigma);
        const Vector dk =
            norm_backward(dk_hat, cache.k_hat[i], cache.k_norm[i], cache.config.normalize_qk);
        for (std::size_t j = 0; j < dk.size(); ++j) {
            g.d_keys.at(i, j) = dk[j];
        }
    }
}

void backward_rfa_recurrent(const ForwardCache& cache, const Matrix& upstream,
                            const StateGrad* incoming, GradBundle& g) {
    const bool gated = cache.kind == KernelKind::rfa_gated;
    const std::size_t n = cache.queries.rows;
    const std::size_t fdim = cache.z_steps.front().size();
    Matrix S_bar(fdim, cache.values.cols);
    Vector z_bar(fdim, 0.0);
    if (incoming) {
        S_bar = incoming->dS;
        z_bar = incoming->dz;
    }
    Vector* d_sigma = g.d_sigma.empty() ? nullptr : &g.d_sigma;

    for (std::size_t t = n; t-- > 0;) {
        const Matrix& S_t = cache.S_steps[t];
        const Vector& z_t = cache.z_steps[t];
        const double c = cache.u_clamped[t];
        const Vector n_t = matvec_transposed(S_t, cache.phi_q[t]);
        const double* hhat = upstream.row(t);
        Vector dn(n_t.size());
        double hn = 0.0;
        for (std::size_t j = 0; j < n_t.size(); ++j) {
            dn[j] = hhat[j] / c;
            hn += hhat[j] * n_t[j];
        }
        const double dc = -hn / (c * c);
        const double du = guard_passthrough(cache.u_raw[t], cache.config.epsilon) ? dc : 0.0;

        Vector dphi_q = matvec(S_t, dn);
        add_scaled(dphi_q, z_t, du);
        add_outer(S_bar, cache.phi_q[t], dn);
        add_scaled(z_bar, cache.phi_q[t], du);

        const Vector v_t = cache.values.row_vector(t);
        double one_minus_g = 1.0;
        if (gated) {
            const double g_t = cache.gates[t];
            one_minus_g = 1.0 - g_t;
            const Matrix& S_prev = t > 0 ? cache.S_steps[t - 1] : cache.init.S;
            const Vector& z_prev = t > 0 ? cache.z_steps[t - 1] : cache.init.z;
            // dL/dg_t = <S_bar, S_prev - phi_k (x) v> + <z_bar, z_prev - phi_k>
            double dg = frobenius_dot(S_bar, S_prev);
            for (std::size_t f = 0; f < fdim; ++f) {
                const double* srow = S_bar.row(f);
                double s = 0.0;
                for (std::size_t cix = 0; cix < v_t.size(); ++cix) {
                    s += srow[cix] * v_t[cix];
                }
                dg -= cache.phi_k[t][f] * s;
                dg += z_bar[f] * (z_prev[f] - cache.phi_k[t][f]);
            }
            const double dpre = dg * g_t * one_minus_g;
            add_scaled(g.d_gate_w, cache.raw_inputs.row_vector(t), dpre);
            g.d_gate_b += dpre;
            for (std::size_t j = 0; j < cache.gate.w.size(); ++j) {
                g.d_raw_inputs.at(t, j) += dpre * cache.gate.w[j];
            }
        }

        Vector dphi_k = matvec(S_bar, v_t);
        for (std::size_t f = 0; f < fdim; ++f) {
            dphi_k[f] = one_minus_g * (dphi_k[f] + z_bar[f]);
        }
        const Vector dv = matvec_transposed(S_bar, cache.phi_k[t]);
        for (std::size_t cix = 0; cix < cache.values.cols; ++cix) {
            g.d_values.at(t, cix) = one_minus_g * dv[cix];
        }

        if (gated) {
            const double g_t = cache.gates[t];
            for (double& x : S_bar.data) {
                x *= g_t;
            }
            for (double& x : z_bar) {
                x *= g_t;
            }
        }

        const Vector dq_hat = phi_backward(cache.map, cache.q_hat[t], dphi_q, d_sigma);
        const Vector dq =
            norm_backward(dq_hat, cache.q_hat[t], cache.q_norm[t], cache.config.normalize_qk);
        for (std::size_t j = 0; j < dq.size(); ++j) {
            g.d_queries.at(t, j) = dq[j];
        }
        const Vector dk_hat = phi_backward(cache.map, cache.k_hat[t], dphi_k, d_sigma);
        const Vector dk =
            norm_backward(dk_hat, cache.k_hat[t], cache.k_norm[t], cache.config.normalize_qk);
        for (std::size_t j = 0; j < dk.size(); ++j) {
            g.d_keys.at(t, j) = dk[j];
        }
    }

    g.d_init_S = std::move(S_bar);
    g.d_init_z = std::move(z_bar);
}

}  // namespace

GradBundle backward(KernelKind kind, const ForwardCache& cache, const Matrix& upstream,
                    const StateGrad* incoming) {
    if (kind != cache.kind) {
        throw std::invalid_argument("backward: kind does not match the cache");
    }
    if (!upstream.same_shape(cache.outputs)) {
        throw std::invalid_argument("backward: upstream shape mismatch");
    }
    if (incoming && kind == KernelKind::softmax) {
        throw std::invalid_argument("backward: softmax has no recurrent state to chain");
    }
    GradBundle g = make_bundle_shell(cache);
    switch (kind) {
        case KernelKind::softmax:
            backward_softmax(cache, upstream, g);
            break;
        case KernelKind::rfa_cross:
            backward_rfa_cross(cache, upstream, incoming, g);
            break;
        case KernelKind::rfa_causal:
        case KernelKind::rfa_gated:
            backward_rfa_recurrent(cache, upstream, incoming, g);
            break;
    }
    return g;
}

Matrix replay_outputs(const ForwardCache& cache) {
    Matrix out(cache.outputs.rows, cache.outputs.cols);
    if (cache.kind == KernelKind::softmax) {
        for (std::size_t t = 0; t < cache.queries.rows; ++t) {
            for (std::size_t i = 0; i < cache.probs[t].size(); ++i) {
                const double* v = cache.values.row(i);
                for (std::size_t c = 0; c < cache.values.cols; ++c) {
                    out.at(t, c) += cache.probs[t][i] * v[c];
                }
            }
        }
        return out;
    }
    for (std::size_t t = 0; t < cache.queries.rows; ++t) {
        const Matrix& S =
            cache.kind == KernelKind::rfa_cross ? cache.S_steps.front() : cache.S_steps[t];
        const Vector h = rfa_readout(S, cache.phi_q[t], cache.u_clamped[t]);
        for (std::size_t c = 0; c < out.cols; ++c) {
            out.at(t, c) = h[c];
        }
    }
    return out;
}

Vector finite_diff_grad(const std::function<double(const Vector&)>& f, const Vector& params,
                        double h) {
    if (!(h > 0.0)) {
        throw std::invalid_argument("finite_diff_grad: step must be positive");
    }
    Vector p = params;
    Vector grad(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
        p[i] = params[i] + h;
        const double fp = f(p);
        p[i] = params[i] - h;
        const double fm = f(p);
        p[i] = params[i];
        grad[i] = (fp - fm) / (2.0 * h);
    }
    return grad;
}

GradCheckInstance make_grad_instance(KernelKind kind, std::uint64_t seed, std::size_t n,
                                     std::size_t d, std::size_t D, std::size_t d_v) {
    GradCheckInstance inst;
    inst.kind = kind;
    inst.config.kind = kind == KernelKind::softmax ? AttentionKind::softmax : AttentionKind::rfa;
    RngState rng = make_stream(seed, 701);
    inst.queries = seeded_normal_matrix(rng, n, d);
    inst.keys = seeded_normal_matrix(rng, n, d);
    inst.values = seeded_normal_matrix(rng, n, d_v);
    if (kind != KernelKind::softmax) {
        inst.map_spec = FeatureMapSpec::make(FeatureMapKind::gaussian, d, D, 1.0,
                                             make_stream(seed, 702).seed);
    }
    if (kind == KernelKind::rfa_gated) {
        inst.raw_inputs = seeded_normal_matrix(rng, n, d);
        Matrix gw = seeded_normal_matrix(rng, 1, d);
        inst.gate.w = gw.row_vector(0);
        for (double& x : inst.gate.w) {
            x *= 0.3;
        }
        inst.gate.b = 0.1;
    }
    if (kind == KernelKind::rfa_causal || kind == KernelKind::rfa_gated) {
        // A nonzero starting state keeps every query gradient structurally
        // nonzero; from a zero state the first step's output is independent
        // of its query, and finite differences of an exact zero are noise.
        const std::size_t fdim = inst.map_spec.feature_dim();
        inst.init = AttentionState::zero(fdim, d_v);
        Matrix s0 = seeded_normal_matrix(rng, fdim, d_v);
        for (std::size_t i = 0; i < s0.data.size(); ++i) {
            inst.init.S.data[i] = 0.5 * s0.data[i];
        }
        Matrix z0 = seeded_normal_matrix(rng, 1, fdim);
        for (std::size_t f = 0; f < fdim; ++f) {
            inst.init.z[f] = 0.5 * z0.at(0, f);
        }
    }
    return inst;
}

Matrix forward_instance(const GradCheckInstance& inst, ForwardCache* cache) {
    switch (inst.kind) {
        case KernelKind::softmax:
            return softmax_attention(inst.queries, inst.keys, inst.values, inst.config,
                                     inst.causal_softmax, cache);
        case KernelKind::rfa_cross:
            return rfa_cross(inst.queries, inst.keys, inst.values,
                             build_feature_map(inst.map_spec), inst.config, cache);
        case KernelKind::rfa_causal:
            return rfa_causal(inst.queries, inst.keys, inst.values,
                              build_feature_map(inst.map_spec), inst.config, inst.init, cache)
                .outputs;
        case KernelKind::rfa_gated: {
            SequenceBatch batch{inst.queries, inst.keys, inst.values, inst.raw_inputs};
            return rfa_gated(batch, inst.gate, build_feature_map(inst.map_spec), inst.config,
                             inst.init, cache)
                .outputs;
        }
    }
    throw std::invalid_argument("forward_instance: unknown kernel kind");
}

namespace {

double half_squared_norm(const Matrix& m) {
    double s = 0.0;
    for (double x : m.data) {
        s += x * x;
    }
    return 0.5 * s;
}

double rel_err(double a, double n) {
    const double denom = std::max({std::abs(a), std::abs(n), 1e-8});
    return std::abs(a - n) / denom;
}

double compare_group(const Vector& analytic, const Vector& numeric) {
    double worst = 0.0;
    for (std::size_t i = 0; i < analytic.size(); ++i) {
        worst = std::max(worst, rel_err(analytic[i], numeric[i]));
    }
    return worst;
}

}  // namespace

bool grad_instance_measurable(const GradCheckInstance& instance) {
    ForwardCache cache;
    const Matrix outputs = forward_instance(instance, &cache);
    if (instance.kind != KernelKind::softmax) {
        for (double u : cache.u_raw) {
            if (std::abs(u) < 0.05) {
                return false;
            }
        }
    }
    const GradBundle bundle = backward(instance.kind, cache, outputs);
    // Loss values round at |f| * 2^-53; a coordinate smaller than the induced
    // central-difference noise cannot be certified at 1e-5 relative.
    constexpr double kSmallestMeasurable = 5e-6;
    const auto group_ok = [](const Vector& g) {
        for (double x : g) {
            if (std::abs(x) < kSmallestMeasurable) {
                return false;
            }
        }
        return true;
    };
    if (!group_ok(bundle.d_queries.data) || !group_ok(bundle.d_keys.data) ||
        !group_ok(bundle.d_values.data) || !group_ok(bundle.d_raw_inputs.data) ||
        !group_ok(bundle.d_gate_w) || !group_ok(bundle.d_sigma)) {
        return false;
    }
    if (instance.kind == KernelKind::rfa_gated &&
        std::abs(bundle.d_gate_b) < kSmallestMeasurable) {
        return false;
    }
    return true;
}

GradReport grad_check(const GradCheckInstance& instance, double h, double tol) {
    ForwardCache cache;
    const Matrix outputs = forward_instance(instance, &cache);

    GradReport report;
    if (instance.kind != KernelKind::softmax) {
        for (double u : cache.u_raw) {
            if (std::abs(u) < kGuardMargin) {
                report.inconclusive = true;
                return report;
            }
        }
    }

    const GradBundle bundle = backward(instance.kind, cache, outputs);

    const auto loss_of = [](const GradCheckInstance& inst) {
        return half_squared_norm(forward_instance(inst, nullptr));
    };

    const auto check = [&](const std::string& name, const Vector& analytic,
                           const std::function<void(GradCheckInstance&, const Vector&)>& set,
                           const Vector& base) {
        const Vector numeric = finite_diff_grad(
            [&](const Vector& p) {
                GradCheckInstance tmp = instance;
                set(tmp, p);
                return loss_of(tmp);
            },
            base, h);
        const double worst = compare_group(analytic, numeric);
        report.entries.push_back({name, worst});
        report.max_rel_err = std::max(report.max_rel_err, worst);
    };

    check(
        "queries", bundle.d_queries.data,
        [](GradCheckInstance& i, const Vector& p) { i.queries.data = p; },
        instance.queries.data);
    check(
        "keys", bundle.d_keys.data, [](GradCheckInstance& i, const Vector& p) { i.keys.data = p; },
        instance.keys.data);
    check(
        "values", bundle.d_values.data,
        [](GradCheckInstance& i, const Vector& p) { i.values.data = p; }, instance.values.data);
    if (instance.kind == KernelKind::rfa_gated) {
        check(
            "raw_inputs", bundle.d_raw_inputs.data,
            [](GradCheckInstance& i, const Vector& p) { i.raw_inputs.data = p; },
            instance.raw_inputs.data);
        check(
            "gate_w", bundle.d_gate_w,
            [](GradCheckInstance& i, const Vector& p) { i.gate.w = p; }, instance.gate.w);
        check(
            "gate_b", Vector{bundle.d_gate_b},
            [](GradCheckInstance& i, const Vector& p) { i.gate.b = p[0]; },
            Vector{instance.gate.b});
    }
    if (!bundle.d_sigma.empty()) {
        check(
            "sigma", bundle.d_sigma,
            [](GradCheckInstance& i, const Vector& p) { i.map_spec.sigma = p; },
            instance.map_spec.sigma);
    }

    report.pass = report.max_rel_err <= tol;
    return report;
}

}  // namespace rfa
