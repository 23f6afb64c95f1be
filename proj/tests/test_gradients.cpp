#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "rfa/gradients.hpp"

using namespace rfa;

namespace {

double max_abs_diff(const Matrix& a, const Matrix& b) {
    REQUIRE(a.data.size() == b.data.size());
    double worst = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        worst = std::max(worst, std::abs(a.data[i] - b.data[i]));
    }
    return worst;
}

}  // namespace

TEST_CASE("finite differences on closed forms") {
    // quadratic: grad of p.p at (1, 2) is (2, 4)
    const auto quadratic = [](const Vector& p) {
        double s = 0.0;
        for (double x : p) {
            s += x * x;
        }
        return s;
    };
    const Vector g = finite_diff_grad(quadratic, Vector{1.0, 2.0}, 1e-5);
    CHECK(std::abs(g[0] - 2.0) < 1e-8);
    CHECK(std::abs(g[1] - 4.0) < 1e-8);

    // constant function
    const Vector zero = finite_diff_grad([](const Vector&) { return 3.5; }, Vector{1.0, -1.0},
                                         1e-5);
    CHECK(zero[0] == 0.0);
    CHECK(zero[1] == 0.0);

    // sine: derivative at 0.3 is cos(0.3) = 0.955336
    const Vector ds =
        finite_diff_grad([](const Vector& p) { return std::sin(p[0]); }, Vector{0.3}, 1e-5);
    CHECK(std::abs(ds[0] - std::cos(0.3)) < 1e-8);

    CHECK_THROWS_AS(finite_diff_grad(quadratic, Vector{1.0}, 0.0), std::invalid_argument);
}

TEST_CASE("zero upstream produces zero gradients") {
    const GradCheckInstance inst = make_grad_instance(KernelKind::rfa_causal, 5, 6, 4, 16, 4);
    ForwardCache cache;
    const Matrix out = forward_instance(inst, &cache);
    const Matrix zeros(out.rows, out.cols);
    const GradBundle g = backward(KernelKind::rfa_causal, cache, zeros);
    for (double x : g.d_queries.data) CHECK(x == 0.0);
    for (double x : g.d_keys.data) CHECK(x == 0.0);
    for (double x : g.d_values.data) CHECK(x == 0.0);
    for (double x : g.d_sigma) CHECK(x == 0.0);
}

TEST_CASE("single-key softmax passes upstream to the value only") {
    GradCheckInstance inst = make_grad_instance(KernelKind::softmax, 9, 1, 4, 0, 3);
    ForwardCache cache;
    const Matrix out = forward_instance(inst, &cache);
    Matrix upstream(out.rows, out.cols);
    upstream.at(0, 0) = 1.25;
    upstream.at(0, 2) = -0.5;
    const GradBundle g = backward(KernelKind::softmax, cache, upstream);
    CHECK(max_abs_diff(g.d_values, upstream) < 1e-15);
    for (double x : g.d_queries.data) CHECK(std::abs(x) < 1e-15);
    for (double x : g.d_keys.data) CHECK(std::abs(x) < 1e-15);
}

TEST_CASE("grad_check passes for every kernel kind") {
    const KernelKind kinds[] = {KernelKind::softmax, KernelKind::rfa_cross,
                                KernelKind::rfa_causal, KernelKind::rfa_gated};
    for (KernelKind kind : kinds) {
        std::size_t done = 0;
        std::uint64_t attempt = 0;
        while (done < 5 && attempt < 20) {
            const GradCheckInstance inst =
                make_grad_instance(kind, 1000 + 11 * attempt, 4 + attempt % 5, 4, 16, 4);
            ++attempt;
            if (!grad_instance_measurable(inst)) {
                continue;
            }
            // h = 1e-4 keeps central-difference rounding noise an order of
            // magnitude below the tolerance at these loss scales
            const GradReport report = grad_check(inst, 1e-4);
            if (report.inconclusive) {
                continue;
            }
            ++done;
            CHECK(report.pass);
            CHECK(report.max_rel_err <= 1e-5);
        }
        CHECK(done == 5);
    }
}

TEST_CASE("causal softmax gradients also check out") {
    GradCheckInstance inst = make_grad_instance(KernelKind::softmax, 77, 6, 4, 0, 4);
    inst.causal_softmax = true;
    const GradReport report = grad_check(inst);
    CHECK(report.pass);
}

TEST_CASE("engineered guard-region instance is inconclusive") {
    GradCheckInstance inst = make_grad_instance(KernelKind::rfa_causal, 21, 3, 4, 16, 4);
    // cancel the first key's feature vector so phi(q).z_1 is about zero
    const RealizedFeatureMap map = build_feature_map(inst.map_spec);
    const Vector k1 = l2_normalize(inst.keys.row_vector(0));
    const Vector phi_k1 = apply_map(map, k1);
    AttentionState init = AttentionState::zero(map.feature_dim(), 4);
    for (std::size_t f = 0; f < phi_k1.size(); ++f) {
        init.z[f] = -phi_k1[f];
    }
    inst.init = init;
    const GradReport report = grad_check(inst);
    CHECK(report.inconclusive);
    CHECK_FALSE(report.pass);
}

TEST_CASE("gradients are deterministic") {
    const GradCheckInstance inst = make_grad_instance(KernelKind::rfa_gated, 31, 7, 4, 16, 4);
    ForwardCache c1, c2;
    const Matrix o1 = forward_instance(inst, &c1);
    const Matrix o2 = forward_instance(inst, &c2);
    REQUIRE(o1.data == o2.data);
    const GradBundle g1 = backward(KernelKind::rfa_gated, c1, o1);
    const GradBundle g2 = backward(KernelKind::rfa_gated, c2, o2);
    CHECK(g1.d_queries.data == g2.d_queries.data);
    CHECK(g1.d_keys.data == g2.d_keys.data);
    CHECK(g1.d_values.data == g2.d_values.data);
    CHECK(g1.d_raw_inputs.data == g2.d_raw_inputs.data);
    CHECK(g1.d_gate_w == g2.d_gate_w);
    CHECK(g1.d_sigma == g2.d_sigma);
}

TEST_CASE("cache replay reproduces outputs bit for bit") {
    for (KernelKind kind : {KernelKind::softmax, KernelKind::rfa_cross, KernelKind::rfa_causal,
                            KernelKind::rfa_gated}) {
        const GradCheckInstance inst = make_grad_instance(kind, 41, 6, 4, 16, 4);
        ForwardCache cache;
        const Matrix out = forward_instance(inst, &cache);
        const Matrix replayed = replay_outputs(cache);
        CHECK(out.data == replayed.data);
    }
}

TEST_CASE("backward rejects mismatched kinds and shapes") {
    const GradCheckInstance inst = make_grad_instance(KernelKind::rfa_cross, 51, 4, 4, 16, 4);
    ForwardCache cache;
    const Matrix out = forward_instance(inst, &cache);
    CHECK_THROWS_AS(backward(KernelKind::rfa_causal, cache, out), std::invalid_argument);
    CHECK_THROWS_AS(backward(KernelKind::rfa_cross, cache, Matrix(2, 2)), std::invalid_argument);
}

TEST_CASE("segmented backward matches the unsegmented gradient") {
    const std::size_t n = 8, d = 4, d_v = 4;
    const GradCheckInstance whole = make_grad_instance(KernelKind::rfa_causal, 61, n, d, 16, d_v);
    ForwardCache cache;
    const Matrix out = forward_instance(whole, &cache);
    const GradBundle full = backward(KernelKind::rfa_causal, cache, out);

    const auto slice = [](const Matrix& m, std::size_t begin, std::size_t end) {
        Matrix s(end - begin, m.cols);
        for (std::size_t r = begin; r < end; ++r) {
            for (std::size_t c = 0; c < m.cols; ++c) {
                s.at(r - begin, c) = m.at(r, c);
            }
        }
        return s;
    };

    const RealizedFeatureMap map = build_feature_map(whole.map_spec);
    const std::size_t half = n / 2;
    ForwardCache cache1, cache2;
    const CausalResult first =
        rfa_causal(slice(whole.queries, 0, half), slice(whole.keys, 0, half),
                   slice(whole.values, 0, half), map, whole.config, whole.init, &cache1);
    rfa_causal(slice(whole.queries, half, n), slice(whole.keys, half, n),
               slice(whole.values, half, n), map, whole.config, first.final_state, &cache2);

    const GradBundle g2 = backward(KernelKind::rfa_causal, cache2, slice(out, half, n));
    StateGrad carry{g2.d_init_S, g2.d_init_z};
    const GradBundle g1 = backward(KernelKind::rfa_causal, cache1, slice(out, 0, half), &carry);

    for (std::size_t t = 0; t < n; ++t) {
        const GradBundle& part = t < half ? g1 : g2;
        const std::size_t local = t < half ? t : t - half;
        for (std::size_t c = 0; c < d; ++c) {
            CHECK(std::abs(part.d_queries.at(local, c) - full.d_queries.at(t, c)) <= 1e-9);
            CHECK(std::abs(part.d_keys.at(local, c) - full.d_keys.at(t, c)) <= 1e-9);
        }
        for (std::size_t c = 0; c < d_v; ++c) {
            CHECK(std::abs(part.d_values.at(local, c) - full.d_values.at(t, c)) <= 1e-9);
        }
    }
    // sigma gradient splits additively across segments
    for (std::size_t j = 0; j < d; ++j) {
        CHECK(std::abs(g1.d_sigma[j] + g2.d_sigma[j] - full.d_sigma[j]) <= 1e-9);
    }
}
