#include "rfa/feature_map.hpp"

#include <cmath>
#include <stdexcept>

namespace rfa {

FeatureMapSpec FeatureMapSpec::make(FeatureMapKind kind, std::size_t d, std::size_t D,
                                    double sigma, std::uint64_t seed) {
    return make(kind, d, D, Vector(d, sigma), seed);
}

FeatureMapSpec FeatureMapSpec::make(FeatureMapKind kind, std::size_t d, std::size_t D,
                                    Vector sigma, std::uint64_t seed) {
    FeatureMapSpec spec;
    spec.kind = kind;
    spec.d = d;
    spec.D = D;
    spec.sigma = std::move(sigma);
    spec.seed = seed;
    spec.validate();
    return spec;
}

std::size_t FeatureMapSpec::feature_dim() const {
    switch (kind) {
        case FeatureMapKind::gaussian: return 2 * D;
        case FeatureMapKind::arccos: return D;
        case FeatureMapKind::elu: return d;
    }
    return 0;
}

void FeatureMapSpec::validate() const {
    if (d == 0) {
        throw std::invalid_argument("FeatureMapSpec: input dimension must be >= 1");
    }
    if (kind != FeatureMapKind::elu && D == 0) {
        throw std::invalid_argument("FeatureMapSpec: D must be >= 1 for random feature maps");
    }
    if (sigma.size() != d) {
        throw std::invalid_argument("FeatureMapSpec: sigma length must equal d");
    }
    for (double s : sigma) {
        if (!(s > 0.0)) {
            throw std::invalid_argument("FeatureMapSpec: sigma entries must be positive");
        }
    }
}

RealizedFeatureMap build_feature_map(const FeatureMapSpec& spec) {
    spec.validate();
    RealizedFeatureMap map;
    map.spec = spec;
    if (spec.kind == FeatureMapKind::elu) {
        return map;  // no random matrix
    }
    RngState rng{spec.seed, 0};
    map.raw = seeded_normal_matrix(rng, spec.D, spec.d);
    map.weights = Matrix(spec.D, spec.d);
    for (std::size_t i = 0; i < spec.D; ++i) {
        for (std::size_t j = 0; j < spec.d; ++j) {
            map.weights.at(i, j) = spec.sigma[j] * map.raw.at(i, j);
        }
    }
    return map;
}

RealizedFeatureMap with_sigma(const RealizedFeatureMap& map, const Vector& sigma) {
    FeatureMapSpec spec = map.spec;
    spec.sigma = sigma;
    spec.validate();
    if (spec.kind == FeatureMapKind::elu) {
        RealizedFeatureMap out;
        out.spec = spec;
        return out;
    }
    RealizedFeatureMap out;
    out.spec = spec;
    out.raw = map.raw;
    out.weights = Matrix(spec.D, spec.d);
    for (std::size_t i = 0; i < spec.D; ++i) {
        for (std::size_t j = 0; j < spec.d; ++j) {
            out.weights.at(i, j) = sigma[j] * out.raw.at(i, j);
        }
    }
    return out;
}

FeatureMapPool build_pool(const FeatureMapSpec& spec, std::size_t P) {
    spec.validate();
    if (P == 0) {
        throw std::invalid_argument("build_pool: pool size must be >= 1");
    }
    FeatureMapPool pool;
    pool.maps.reserve(P);
    for (std::size_t i = 0; i < P; ++i) {
        FeatureMapSpec sub = spec;
        sub.seed = make_stream(spec.seed, i).seed;
        pool.maps.push_back(build_feature_map(sub));
    }
    return pool;
}

Vector apply_map(const RealizedFeatureMap& map, const Vector& x) {
    const FeatureMapSpec& spec = map.spec;
    if (x.size() != spec.d) {
        throw std::invalid_argument("apply_map: input dimension mismatch");
    }
    if (spec.kind == FeatureMapKind::elu) {
        Vector out(spec.d);
        for (std::size_t j = 0; j < spec.d; ++j) {
            out[j] = (x[j] > 0.0 ? x[j] : std::expm1(x[j])) + 1.0;
        }
        return out;
    }
    const double scale = std::sqrt(1.0 / static_cast<double>(spec.D));
    if (spec.kind == FeatureMapKind::gaussian) {
        Vector out(2 * spec.D);
        for (std::size_t i = 0; i < spec.D; ++i) {
            const double* w = map.weights.row(i);
            double a = 0.0;
            for (std::size_t j = 0; j < spec.d; ++j) {
                a += w[j] * x[j];
            }
            out[i] = scale * std::sin(a);
            out[spec.D + i] = scale * std::cos(a);
        }
        return out;
    }
    // arccos
    Vector out(spec.D);
    for (std::size_t i = 0; i < spec.D; ++i) {
        const double* w = map.weights.row(i);
        double a = 0.0;
        for (std::size_t j = 0; j < spec.d; ++j) {
            a += w[j] * x[j];
        }
        out[i] = a > 0.0 ? scale * a : 0.0;
    }
    return out;
}

double kernel_estimate(const RealizedFeatureMap& map, const Vector& x, const Vector& y) {
    if (map.spec.kind == FeatureMapKind::elu) {
        throw std::invalid_argument("kernel_estimate: elu is not a random-feature estimator");
    }
    return dot(apply_map(map, x), apply_map(map, y));
}

double rff_variance(double z, std::size_t D) {
    if (z < 0.0) {
        throw std::invalid_argument("rff_variance: z must be nonnegative");
    }
    if (D == 0) {
        throw std::invalid_argument("rff_variance: D must be >= 1");
    }
    const double damp = 1.0 - std::exp(-z * z);
    return damp * damp / (2.0 * static_cast<double>(D));
}

}  // namespace rfa
