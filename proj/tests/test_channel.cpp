#include <algorithm>
#include <cmath>
#include <limits>

#include "doctest.h"
#include "oracles.hpp"
#include "support.hpp"
#include "uidsc/channel.hpp"
#include "uidsc/errors.hpp"
#include "uidsc/ops.hpp"

using namespace uidsc;
using namespace uidsc::channel;

namespace {

ComplexSignal unit_signal(std::size_t k, std::uint64_t seed) {
    Rng rng(seed);
    ComplexSignal z = complex_gaussian(k, 1.0, rng);
    const double p = mean_power(z);
    for (auto& s : z) s /= std::sqrt(p);
    return z;
}

}  // namespace

TEST_CASE("complex packing") {
    const std::vector<double> v{1, 2, 3, 4};
    const ComplexSignal z = to_complex(v);
    REQUIRE(z.size() == 2);
    CHECK(z[0] == Complex(1, 2));
    CHECK(z[1] == Complex(3, 4));
    CHECK(from_complex(z) == v);
    CHECK(from_complex(ComplexSignal{Complex(1, 2)}) == std::vector<double>{1, 2});
    CHECK(from_complex(ComplexSignal(3)) == std::vector<double>(6, 0.0));
    const std::vector<double> odd{1, 2, 3};
    CHECK_THROWS_AS(to_complex(odd), LengthError);
    const Tensor r = testing::random_tensor({1, 64, 1, 1}, 3);
    CHECK(from_complex(to_complex(r.storage())) == r.storage());
}

TEST_CASE("power normalization") {
    SUBCASE("unit-power input is a fixed point") {
        const std::vector<double> v{1, 0, 0, 1, -1, 0, 0, -1};
        const NormalizedSignal n = power_normalize(v);
        CHECK(n.scale == doctest::Approx(1.0).epsilon(1e-15));
        CHECK(from_complex(n.symbols) == v);
    }
    SUBCASE("random vectors reach unit power") {
        for (std::uint64_t s = 0; s < 200; ++s) {
            const Tensor v = testing::random_tensor({1, 2 * static_cast<int>(1 + s % 50), 1, 1}, s, -10 * (s + 1),
                                                     5 * (s + 1));
            const NormalizedSignal n = power_normalize(v.storage());
            CHECK(std::abs(mean_power(n.symbols) - 1.0) < 1e-6);
        }
    }
    SUBCASE("all zeros is degenerate") {
        const std::vector<double> zeros(8, 0.0);
        CHECK_THROWS_AS(power_normalize(zeros), DegenerateSignalError);
    }
}

TEST_CASE("noise variance law") {
    CHECK(noise_variance(1.0, 0.0) == 1.0);
    CHECK(noise_variance(1.0, std::numeric_limits<double>::infinity()) == 0.0);
    for (double snr = -10.0; snr <= 30.0; snr += 0.37) {
        const long double oracle = 2.5L * std::pow(10.0L, -static_cast<long double>(snr) / 10.0L);
        CHECK(std::abs((noise_variance(2.5, snr) - oracle) / oracle) < 1e-12);
    }
}

TEST_CASE("awgn transmit") {
    const ComplexSignal z = unit_signal(1000000, 5);
    SUBCASE("infinite SNR leaves the signal untouched") {
        Rng rng(1);
        CHECK(awgn_transmit(z, std::numeric_limits<double>::infinity(), rng).received == z);
    }
    SUBCASE("measured SNR at 10 dB and 5 dB") {
        for (double snr : {10.0, 5.0}) {
            Rng rng(2);
            const ChannelOutcome out = awgn_transmit(z, snr, rng);
            CHECK(out.gain == Complex(1, 0));
            CHECK(std::abs(measure_snr(z, out.received) - snr) < 0.1);
        }
    }
    SUBCASE("noise variance follows the measured input power") {
        ComplexSignal big = z;
        for (auto& s : big) s *= 3.0;
        Rng rng(3);
        const ChannelOutcome out = awgn_transmit(big, 0.0, rng);
        CHECK(out.noise_variance == doctest::Approx(9.0).epsilon(1e-9));
        CHECK(std::abs(measure_snr(big, out.received)) < 0.1);
    }
    SUBCASE("real and imaginary noise parts each carry half the variance") {
        Rng rng(4);
        const ChannelOutcome out = awgn_transmit(z, 0.0, rng);
        double re = 0.0, im = 0.0, cross = 0.0;
        for (std::size_t i = 0; i < z.size(); ++i) {
            const Complex n = out.received[i] - z[i];
            re += n.real() * n.real();
            im += n.imag() * n.imag();
            cross += n.real() * n.imag();
        }
        const double k = static_cast<double>(z.size());
        CHECK(std::abs(re / k - 0.5) < 0.005);
        CHECK(std::abs(im / k - 0.5) < 0.005);
        CHECK(std::abs(cross / k) < 0.005);
    }
    SUBCASE("same seed, same output") {
        Rng a(7), b(7), c(8);
        const auto x = awgn_transmit(z, 3.0, a).received;
        CHECK(x == awgn_transmit(z, 3.0, b).received);
        CHECK(x != awgn_transmit(z, 3.0, c).received);
    }
}

TEST_CASE("rayleigh gains") {
    Rng rng(11);
    const ComplexSignal h = complex_gaussian(1000000, 1.0, rng);
    double e = 0.0, re = 0.0, im = 0.0;
    for (const auto& g : h) {
        e += std::norm(g);
        re += g.real() * g.real();
        im += g.imag() * g.imag();
    }
    const double n = static_cast<double>(h.size());
    CHECK(e / n >= 0.99);
    CHECK(e / n <= 1.01);
    CHECK(std::abs(re / n - 0.5) < 0.005);
    CHECK(std::abs(im / n - 0.5) < 0.005);

    std::vector<double> mags;
    const ComplexSignal z = unit_signal(4, 12);
    Rng r2(13);
    for (int i = 0; i < 100000; ++i) mags.push_back(std::abs(rayleigh_transmit(z, 10.0, 2.0, r2).gain));
    CHECK(oracle::ks_rayleigh(mags, 2.0) < 0.01);

    Rng r3(14);
    CHECK_THROWS_AS(rayleigh_transmit(z, 10.0, 0.0, r3), ConfigError);
}

TEST_CASE("equalization") {
    ChannelOutcome o;
    o.received = {Complex(2, 2)};
    o.gain = Complex(2, 0);
    CHECK(equalize(o)[0] == Complex(1, 1));
    o.gain = Complex(1, 0);
    CHECK(equalize(o) == o.received);
    o.gain = Complex(1e-7, 0);
    CHECK_THROWS_AS(equalize(o), DeepFadeError);

    ChannelConfig cfg;
    cfg.kind = ChannelKind::Rayleigh;
    cfg.force_zero_noise = true;
    cfg.seed = 21;
    Channel ch(cfg);
    const ComplexSignal z = unit_signal(256, 22);
    for (int i = 0; i < 20; ++i) {
        const ChannelOutcome out = ch.transmit(z);
        const ComplexSignal back = equalize(out);
        for (std::size_t j = 0; j < z.size(); ++j) CHECK(std::abs(back[j] - z[j]) < 1e-9);
    }
}

TEST_CASE("measure_snr") {
    const ComplexSignal z = unit_signal(1000, 30);
    CHECK(std::isinf(measure_snr(z, z)));
    ComplexSignal noisy = z;
    for (std::size_t j = 0; j < z.size(); ++j) noisy[j] += (j % 2 ? 1.0 : -1.0) * std::sqrt(0.1);
    CHECK(measure_snr(z, noisy) == doctest::Approx(10.0).epsilon(1e-12));
}

TEST_CASE("channel instances are counter based") {
    ChannelConfig cfg;
    cfg.kind = ChannelKind::Rayleigh;
    cfg.seed = 40;
    const ComplexSignal z = unit_signal(64, 41);
    Channel a(cfg), b(cfg);
    const auto first = a.transmit(z, 5.0);
    a.transmit(z, 5.0);
    CHECK(a.calls() == 2);
    CHECK(b.transmit(z, 5.0).received == first.received);

    cfg.forced_gain = Complex(1, 0);
    cfg.force_zero_noise = true;
    Channel identity(cfg);
    CHECK(identity.transmit(z).received == z);
}

TEST_CASE("awgn gradient is the identity") {
    // The latent passes through an additive constant; d(out)/d(in) = I.
    Var v(testing::random_tensor({1, 16, 1, 1}, 50), true);
    Rng rng(51);
    const ComplexSignal n = complex_gaussian(8, 0.3, rng);
    Tensor offset(Shape{1, 16, 1, 1}, from_complex(n));
    const auto r = testing::gradcheck([&] { return ops::add_constant(v, offset); }, {v});
    CHECK(r.max_rel_error < 1e-5);
    Var out = ops::add_constant(v, offset);
    const Tensor seed = testing::random_tensor({1, 16, 1, 1}, 52);
    v.zero_grad();
    backward(out, seed);
    CHECK(v.grad().storage() == seed.storage());
}
