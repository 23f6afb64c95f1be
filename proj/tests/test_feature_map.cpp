#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "rfa/feature_map.hpp"

using namespace rfa;

namespace {

FeatureMapSpec gaussian_spec(std::size_t d, std::size_t D, double sigma, std::uint64_t seed) {
    return FeatureMapSpec::make(FeatureMapKind::gaussian, d, D, sigma, seed);
}

}  // namespace

TEST_CASE("build is deterministic and scales with sigma") {
    const RealizedFeatureMap a = build_feature_map(gaussian_spec(2, 4, 1.0, 1));
    const RealizedFeatureMap b = build_feature_map(gaussian_spec(2, 4, 1.0, 1));
    REQUIRE(a.weights.data == b.weights.data);

    // sigma = 2 doubles every entry exactly (same raw draws)
    const RealizedFeatureMap doubled = build_feature_map(gaussian_spec(2, 4, 2.0, 1));
    for (std::size_t i = 0; i < a.weights.data.size(); ++i) {
        CHECK(doubled.weights.data[i] == 2.0 * a.weights.data[i]);
    }

    // the stored raw draws are exactly the unit-sigma realization
    CHECK(doubled.raw.data == a.weights.data);

    CHECK_THROWS_AS(FeatureMapSpec::make(FeatureMapKind::gaussian, 2, 4, Vector{1.0, -1.0}, 1),
                    std::invalid_argument);
    CHECK_THROWS_AS(FeatureMapSpec::make(FeatureMapKind::gaussian, 2, 0, 1.0, 1),
                    std::invalid_argument);
}

TEST_CASE("with_sigma rescales the same raw draws") {
    const RealizedFeatureMap base = build_feature_map(gaussian_spec(3, 5, 1.0, 9));
    const RealizedFeatureMap rescaled = with_sigma(base, Vector{2.0, 4.0, 0.5});
    for (std::size_t i = 0; i < base.spec.D; ++i) {
        CHECK(rescaled.weights.at(i, 0) == 2.0 * base.raw.at(i, 0));
        CHECK(rescaled.weights.at(i, 1) == 4.0 * base.raw.at(i, 1));
        CHECK(rescaled.weights.at(i, 2) == 0.5 * base.raw.at(i, 2));
    }
    // identical to a fresh build at the new sigma
    const RealizedFeatureMap direct =
        build_feature_map(FeatureMapSpec::make(FeatureMapKind::gaussian, 3, 5,
                                               Vector{2.0, 4.0, 0.5}, 9));
    CHECK(rescaled.weights.data == direct.weights.data);
}

TEST_CASE("pool construction") {
    const FeatureMapSpec spec = gaussian_spec(3, 4, 1.0, 5);
    const FeatureMapPool pool = build_pool(spec, 3);
    REQUIRE(pool.size() == 3);
    CHECK(pool.maps[0].weights.data != pool.maps[1].weights.data);
    CHECK(pool.maps[1].weights.data != pool.maps[2].weights.data);

    const FeatureMapPool again = build_pool(spec, 3);
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(pool.maps[i].weights.data == again.maps[i].weights.data);
    }

    const FeatureMapPool one = build_pool(spec, 1);
    FeatureMapSpec sub = spec;
    sub.seed = make_stream(spec.seed, 0).seed;
    CHECK(one.maps[0].weights.data == build_feature_map(sub).weights.data);

    CHECK_THROWS_AS(build_pool(spec, 0), std::invalid_argument);
    CHECK(build_pool(spec).size() == 200);
}

TEST_CASE("gaussian map at the origin and unit norm everywhere") {
    const std::size_t D = 6;
    const RealizedFeatureMap map = build_feature_map(gaussian_spec(3, D, 1.0, 2));
    const Vector at_zero = apply_map(map, Vector{0.0, 0.0, 0.0});
    const double s = std::sqrt(1.0 / static_cast<double>(D));
    for (std::size_t i = 0; i < D; ++i) {
        CHECK(at_zero[i] == 0.0);               // sines first
        CHECK(at_zero[D + i] == doctest::Approx(s).epsilon(1e-15));  // then cosines
    }

    RngState rng{77, 0};
    for (int trial = 0; trial < 25; ++trial) {
        Vector x(3);
        fill_normal(rng, x.data(), x.size());
        const Vector phi = apply_map(map, x);
        CHECK(phi.size() == 2 * D);
        CHECK(std::abs(dot(phi, phi) - 1.0) < 1e-12);
    }
}

TEST_CASE("arccos map is nonnegative, elu map is positive") {
    const RealizedFeatureMap arccos = build_feature_map(
        FeatureMapSpec::make(FeatureMapKind::arccos, 4, 8, 1.0, 3));
    RngState rng{13, 0};
    for (int trial = 0; trial < 25; ++trial) {
        Vector x(4);
        fill_normal(rng, x.data(), x.size());
        const Vector phi = apply_map(arccos, x);
        CHECK(phi.size() == 8);
        for (double v : phi) {
            CHECK(v >= 0.0);
        }
    }

    const RealizedFeatureMap elu =
        build_feature_map(FeatureMapSpec::make(FeatureMapKind::elu, 2, 0, 1.0, 4));
    const Vector phi = apply_map(elu, Vector{0.0, -20.0});
    CHECK(phi.size() == 2);
    CHECK(phi[0] == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(phi[1] == doctest::Approx(std::exp(-20.0)).epsilon(1e-9));
    for (double v : phi) {
        CHECK(v > 0.0);
    }

    CHECK_THROWS_AS(apply_map(arccos, Vector{1.0, 2.0}), std::invalid_argument);
}

TEST_CASE("kernel estimate basics") {
    const RealizedFeatureMap map = build_feature_map(gaussian_spec(4, 16, 1.0, 6));
    RngState rng{21, 0};
    Vector x(4);
    fill_normal(rng, x.data(), x.size());
    CHECK(std::abs(kernel_estimate(map, x, x) - 1.0) < 1e-12);

    for (int trial = 0; trial < 25; ++trial) {
        Vector a(4), b(4);
        fill_normal(rng, a.data(), a.size());
        fill_normal(rng, b.data(), b.size());
        const Vector ah = l2_normalize(a);
        const Vector bh = l2_normalize(b);
        CHECK(std::abs(kernel_estimate(map, ah, bh)) <= 1.0 + 1e-12);
    }

    const RealizedFeatureMap elu =
        build_feature_map(FeatureMapSpec::make(FeatureMapKind::elu, 4, 0, 1.0, 4));
    CHECK_THROWS_AS(kernel_estimate(elu, x, x), std::invalid_argument);
}

TEST_CASE("kernel estimate is unbiased at x.y = 0.5") {
    // Monte Carlo oracle over fresh maps: mean estimate of the kernel at
    // ||x-y||^2 = 2 - 2 x.y = 1 must approach exp(-1/2) = 0.606531.
    const std::size_t n_mc = 1000000;
    const Vector x{1.0, 0.0, 0.0, 0.0};
    const Vector y{0.5, std::sqrt(3.0) / 2.0, 0.0, 0.0};
    double sum = 0.0, sum_sq = 0.0;
    for (std::size_t m = 0; m < n_mc; ++m) {
        const RealizedFeatureMap map =
            build_feature_map(gaussian_spec(4, 4, 1.0, make_stream(9001, m).seed));
        const double est = kernel_estimate(map, x, y);
        sum += est;
        sum_sq += est * est;
    }
    const double mean = sum / n_mc;
    const double var = (sum_sq - n_mc * mean * mean) / (n_mc - 1);
    const double se = std::sqrt(var / n_mc);
    const double target = std::exp(-0.5);
    CHECK(std::abs(mean - target) <= 3.0 * se);
    CHECK(std::abs(mean - 0.606531) < 0.01);
}

TEST_CASE("variance formula values and empirical match") {
    CHECK(rff_variance(0.0, 16) == 0.0);
    CHECK(rff_variance(1e8, 8) == doctest::Approx(0.0625).epsilon(1e-12));
    const double z = std::sqrt(std::log(2.0));
    CHECK(rff_variance(z, 4) == doctest::Approx(0.03125).epsilon(1e-12));

    // empirical variance over fresh single maps at D=4
    const std::size_t n_mc = 100000;
    Vector x(6, 0.0), y(6, 0.0);
    x[0] = 0.5 * z;
    y[0] = -0.5 * z;
    double sum = 0.0, sum_sq = 0.0;
    for (std::size_t m = 0; m < n_mc; ++m) {
        const RealizedFeatureMap map =
            build_feature_map(gaussian_spec(6, 4, 1.0, make_stream(5150, m).seed));
        const double est = kernel_estimate(map, x, y);
        sum += est;
        sum_sq += est * est;
    }
    const double mean = sum / n_mc;
    const double var = (sum_sq - n_mc * mean * mean) / (n_mc - 1);
    CHECK(std::abs(var - rff_variance(z, 4)) / rff_variance(z, 4) < 0.10);

    CHECK_THROWS_AS(rff_variance(-1.0, 4), std::invalid_argument);
    CHECK_THROWS_AS(rff_variance(1.0, 0), std::invalid_argument);
}

TEST_CASE("apply_map is deterministic under identical specs") {
    const RealizedFeatureMap a = build_feature_map(gaussian_spec(5, 7, 1.5, 123));
    const RealizedFeatureMap b = build_feature_map(gaussian_spec(5, 7, 1.5, 123));
    RngState rng{55, 0};
    Vector x(5);
    fill_normal(rng, x.data(), x.size());
    CHECK(apply_map(a, x) == apply_map(b, x));
}
