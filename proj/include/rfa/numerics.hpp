#pragma once

#include <cstdint>
#include <vector>

// Minimal dense linear algebra and deterministic sampling used by every
// other component. All verification-path arithmetic is 64-bit.

namespace rfa {

using Vector = std::vector<double>;

struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;  // row-major

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c, double fill = 0.0)
        : rows(r), cols(c), data(r * c, fill) {}

    double& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    double at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

    const double* row(std::size_t r) const { return data.data() + r * cols; }
    double* row(std::size_t r) { return data.data() + r * cols; }

    Vector row_vector(std::size_t r) const {
        return Vector(row(r), row(r) + cols);
    }

    bool same_shape(const Matrix& other) const {
        return rows == other.rows && cols == other.cols;
    }
};

// Counter-based deterministic generator. Each draw mixes (seed, ++counter)
// through the splitmix64 finalizer, so a state is just two integers and
// sub-streams can be derived without sharing.
struct RngState {
    std::uint64_t seed = 0;
    std::uint64_t counter = 0;
};

std::uint64_t next_u64(RngState& rng);

// Uniform in (0, 1]; never returns 0 so log() is safe.
double next_unit(RngState& rng);

// Single standard normal draw (Box-Muller, cosine branch; consumes two
// uniforms).
double next_normal(RngState& rng);

// Fills `out` with standard normal draws, generated in Box-Muller pairs.
void fill_normal(RngState& rng, double* out, std::size_t n);

// Derives an independent stream from (seed, stream index).
RngState make_stream(std::uint64_t seed, std::uint64_t stream);

// rows x cols of i.i.d. standard normal draws from the given state.
Matrix seeded_normal_matrix(RngState& rng, std::size_t rows, std::size_t cols);

double dot(const Vector& a, const Vector& b);
double l2_norm(const Vector& v);

// v / ||v||; throws on zero norm rather than emitting NaN.
Vector l2_normalize(const Vector& v);

// softmax(logits / temperature) with max-subtraction; safe for logits up
// to +-1e4.
Vector stable_softmax(const Vector& logits, double temperature);

// y = M^T x  (x has length rows, result has length cols).
Vector matvec_transposed(const Matrix& m, const Vector& x);

// y = M x  (x has length cols, result has length rows).
Vector matvec(const Matrix& m, const Vector& x);

bool all_finite(const Vector& v);
bool all_finite(const Matrix& m);

}  // namespace rfa
