#pragma once

#include <cstdint>
#include <vector>

#include "rfa/numerics.hpp"

namespace rfa {

enum class FeatureMapKind { gaussian, arccos, elu };

// Construction recipe for a feature map. `sigma` holds one positive scale
// per input dimension; a scalar is broadcast at construction.
struct FeatureMapSpec {
    FeatureMapKind kind = FeatureMapKind::gaussian;
    std::size_t d = 0;       // input dimension
    std::size_t D = 0;       // number of random vectors (unused for elu)
    Vector sigma;            // length d, all entries > 0
    std::uint64_t seed = 0;

    static FeatureMapSpec make(FeatureMapKind kind, std::size_t d, std::size_t D,
                               double sigma, std::uint64_t seed);
    static FeatureMapSpec make(FeatureMapKind kind, std::size_t d, std::size_t D,
                               Vector sigma, std::uint64_t seed);

    // 2D for gaussian (sines then cosines), D for arccos, d for elu.
    std::size_t feature_dim() const;

    void validate() const;
};

// A spec plus its realized random matrix. Row i of `weights` is
// sigma (elementwise) raw row i; `raw` keeps the unscaled standard-normal
// draws so rescaling under a new sigma is exact.
struct RealizedFeatureMap {
    FeatureMapSpec spec;
    Matrix raw;      // D x d standard normal draws (empty for elu)
    Matrix weights;  // D x d, row i = sigma o raw_i (empty for elu)

    std::size_t feature_dim() const { return spec.feature_dim(); }
};

struct FeatureMapPool {
    std::vector<RealizedFeatureMap> maps;

    std::size_t size() const { return maps.size(); }
};

// Realizes the random matrix from (seed, spec); deterministic.
RealizedFeatureMap build_feature_map(const FeatureMapSpec& spec);

// Same raw draws, new per-dimension scales. Used when sigma is trained.
RealizedFeatureMap with_sigma(const RealizedFeatureMap& map, const Vector& sigma);

// P maps sharing the spec, with sub-seeds derived from (spec.seed, index).
// Default pool size follows the usual pre-sampling setup.
FeatureMapPool build_pool(const FeatureMapSpec& spec, std::size_t P = 200);

// phi(x). Gaussian: sqrt(1/D)[sin(w_i.x)..., cos(w_i.x)...] with all sines
// before all cosines. Arccos: sqrt(1/D)[relu(w_i.x)...]. Elu: elu(x)+1
// applied elementwise to x itself.
Vector apply_map(const RealizedFeatureMap& map, const Vector& x);

// phi(x).phi(y); for the gaussian map an unbiased estimate of
// exp(-||x-y||^2 / 2 sigma^2) under isotropic sigma.
double kernel_estimate(const RealizedFeatureMap& map, const Vector& x, const Vector& y);

// Closed-form estimator variance (1/2D)(1 - e^{-z^2})^2 with
// z = ||x - y|| / sigma.
double rff_variance(double z, std::size_t D);

}  // namespace rfa
