#include "rfa/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace rfa {

namespace {

constexpr std::uint64_t kGolden = 0x9e3779b97f4a7c15ULL;

std::uint64_t mix64(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

constexpr double kTwoPi = 6.283185307179586476925286766559;

}  // namespace

std::uint64_t next_u64(RngState& rng) {
    ++rng.counter;
    return mix64(rng.seed + kGolden * rng.counter);
}

double next_unit(RngState& rng) {
    // 53-bit mantissa, shifted into (0, 1].
    return static_cast<double>((next_u64(rng) >> 11) + 1) * 0x1.0p-53;
}

double next_normal(RngState& rng) {
    const double u1 = next_unit(rng);
    const double u2 = next_unit(rng);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(kTwoPi * u2);
}

void fill_normal(RngState& rng, double* out, std::size_t n) {
    std::size_t i = 0;
    for (; i + 1 < n; i += 2) {
        const double u1 = next_unit(rng);
        const double u2 = next_unit(rng);
        const double r = std::sqrt(-2.0 * std::log(u1));
        out[i] = r * std::cos(kTwoPi * u2);
        out[i + 1] = r * std::sin(kTwoPi * u2);
    }
    if (i < n) {
        out[i] = next_normal(rng);
    }
}

RngState make_stream(std::uint64_t seed, std::uint64_t stream) {
    return RngState{mix64(seed ^ mix64(kGolden * (stream + 1))), 0};
}

Matrix seeded_normal_matrix(RngState& rng, std::size_t rows, std::size_t cols) {
    if (rows == 0 || cols == 0) {
        throw std::invalid_argument("seeded_normal_matrix: dimensions must be >= 1");
    }
    Matrix m(rows, cols);
    fill_normal(rng, m.data.data(), m.data.size());
    return m;
}

double dot(const Vector& a, const Vector& b) {
    if (a.size() != b.size()) {
        throw std::invalid_argument("dot: length mismatch");
    }
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        s += a[i] * b[i];
    }
    return s;
}

double l2_norm(const Vector& v) {
    double s = 0.0;
    for (double x : v) {
        s += x * x;
    }
    return std::sqrt(s);
}

Vector l2_normalize(const Vector& v) {
    const double norm = l2_norm(v);
    if (norm == 0.0 || !std::isfinite(norm)) {
        throw std::domain_error("l2_normalize: degenerate input (zero or non-finite norm)");
    }
    Vector out(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
        out[i] = v[i] / norm;
    }
    return out;
}

Vector stable_softmax(const Vector& logits, double temperature) {
    if (logits.empty()) {
        throw std::invalid_argument("stable_softmax: empty logits");
    }
    if (!(temperature > 0.0)) {
        throw std::invalid_argument("stable_softmax: temperature must be positive");
    }
    Vector scaled(logits.size());
    for (std::size_t i = 0; i < logits.size(); ++i) {
        scaled[i] = logits[i] / temperature;
    }
    const double m = *std::max_element(scaled.begin(), scaled.end());
    double sum = 0.0;
    Vector out(scaled.size());
    for (std::size_t i = 0; i < scaled.size(); ++i) {
        out[i] = std::exp(scaled[i] - m);
        sum += out[i];
    }
    for (double& x : out) {
        x /= sum;
    }
    return out;
}

Vector matvec_transposed(const Matrix& m, const Vector& x) {
    if (x.size() != m.rows) {
        throw std::invalid_argument("matvec_transposed: length mismatch");
    }
    Vector out(m.cols, 0.0);
    for (std::size_t r = 0; r < m.rows; ++r) {
        const double xr = x[r];
        const double* row = m.row(r);
        for (std::size_t c = 0; c < m.cols; ++c) {
            out[c] += xr * row[c];
        }
    }
    return out;
}

Vector matvec(const Matrix& m, const Vector& x) {
    if (x.size() != m.cols) {
        throw std::invalid_argument("matvec: length mismatch");
    }
    Vector out(m.rows, 0.0);
    for (std::size_t r = 0; r < m.rows; ++r) {
        const double* row = m.row(r);
        double s = 0.0;
        for (std::size_t c = 0; c < m.cols; ++c) {
            s += row[c] * x[c];
        }
        out[r] = s;
    }
    return out;
}

bool all_finite(const Vector& v) {
    for (double x : v) {
        if (!std::isfinite(x)) return false;
    }
    return true;
}

bool all_finite(const Matrix& m) {
    return all_finite(m.data);
}

}  // namespace rfa
