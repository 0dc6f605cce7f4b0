#include <cmath>

#include "doctest.h"
#include "support.hpp"
#include "uidsc/cse.hpp"
#include "uidsc/errors.hpp"

using namespace uidsc;
using namespace uidsc::cse;

TEST_CASE("signal power") {
    CHECK(signal_power(Tensor(Shape{1, 2, 4, 4}, 1.0), 0) == 1.0);
    CHECK(signal_power(Tensor(Shape{1, 2, 4, 4}, 0.0), 0) == 0.0);
    const Tensor z = testing::random_tensor({2, 3, 5, 4}, 1);
    for (int n = 0; n < 2; ++n) {
        double acc = 0.0;
        for (int c = 0; c < 3; ++c)
            for (int h = 0; h < 5; ++h)
                for (int w = 0; w < 4; ++w) acc += z.at(n, c, h, w) * z.at(n, c, h, w);
        CHECK(std::abs(signal_power(z, n) - acc / 60.0) < 1e-12);
    }
    CHECK_THROWS_AS(signal_power(std::span<const double>{}), ShapeError);
}

TEST_CASE("signal power is homogeneous of degree two") {
    for (std::uint64_t s = 0; s < 20; ++s) {
        Tensor z = testing::random_tensor({1, 2, 3, 3}, s);
        const double p = signal_power(z, 0);
        const double alpha = 0.1 + 0.37 * s;
        for (double& v : z.storage()) v *= alpha;
        CHECK(signal_power(z, 0) == doctest::Approx(alpha * alpha * p).epsilon(1e-12));
    }
}

TEST_CASE("noise level") {
    CHECK(noise_level(1.0, 0.0) == 1.0);
    CHECK(noise_level(1.0, 10.0) == doctest::Approx(0.1).epsilon(1e-15));
    CHECK(noise_level(2.0, 3.0) == doctest::Approx(1.00237).epsilon(5e-6));
    const long double oracle = 2.0L / std::pow(10.0L, 0.3L);
    CHECK(std::abs((noise_level(2.0, 3.0) - oracle) / oracle) < 1e-12);
    CHECK_THROWS_AS(noise_level(-1.0, 3.0), DomainError);
    double prev = noise_level(1.5, -5.0);
    for (double snr = -4.5; snr <= 25.0; snr += 0.5) {
        const double cur = noise_level(1.5, snr);
        CHECK(cur < prev);
        prev = cur;
    }
}

TEST_CASE("noise map embedding") {
    SUBCASE("shape and constant channel") {
        const Tensor z = testing::random_tensor({1, 4, 8, 8}, 2);
        const Tensor out = embed_noise_map(z, 7.0);
        CHECK(out.shape() == Shape{1, 5, 8, 8});
        const double expect = noise_level(signal_power(z, 0), 7.0);
        for (int i = 0; i < 64; ++i) CHECK(std::abs(out.plane(0, 4)[i] - expect) < 1e-9);
        for (int c = 0; c < 4; ++c)
            for (int i = 0; i < 64; ++i) CHECK(out.plane(0, c)[i] == z.plane(0, c)[i]);
    }
    SUBCASE("all ones at 0 dB") {
        const Tensor out = embed_noise_map(Tensor(Shape{1, 3, 4, 4}, 1.0), 0.0);
        for (int i = 0; i < 16; ++i) CHECK(out.plane(0, 3)[i] == 1.0);
    }
    SUBCASE("per-sample SNR and broadcast") {
        const Tensor z = testing::random_tensor({3, 2, 4, 4}, 3);
        const double snr[] = {-5.0, 5.0, 25.0};
        const Var out = embed_noise_map(Var(z), snr);
        for (int n = 0; n < 3; ++n)
            CHECK(out.value().plane(n, 2)[0] == doctest::Approx(noise_level(signal_power(z, n), snr[n])));
        const double one[] = {10.0};
        const Var b = embed_noise_map(Var(z), one);
        for (int n = 0; n < 3; ++n)
            CHECK(b.value().plane(n, 2)[5] == doctest::Approx(noise_level(signal_power(z, n), 10.0)));
        const double two[] = {1.0, 2.0};
        CHECK_THROWS_AS(embed_noise_map(Var(z), two), ShapeError);
    }
    SUBCASE("log scale option") {
        CseOptions opt;
        opt.scale = MapScale::Log10;
        const Tensor out = embed_noise_map(Tensor(Shape{1, 1, 2, 2}, 1.0), 20.0, opt);
        CHECK(out.plane(0, 1)[0] == doctest::Approx(-2.0).epsilon(1e-12));
    }
}

TEST_CASE("noise map gradient is stopped by default") {
    Var z(testing::random_tensor({1, 2, 3, 3}, 4), true);
    const double snr[] = {3.0};
    Tensor seed(Shape{1, 3, 3, 3}, 0.0);
    for (int i = 0; i < 9; ++i) seed.plane(0, 2)[i] = 1.0;
    backward(embed_noise_map(z, snr), seed);
    CHECK((!z.has_grad() || testing::max_abs_diff(z.grad(), Tensor(z.shape(), 0.0)) == 0.0));

    CseOptions through;
    through.gradient_through_map = true;
    const auto r = testing::gradcheck([&] { return embed_noise_map(z, snr, through); }, {z});
    CHECK(r.max_rel_error < 1e-6);
}
