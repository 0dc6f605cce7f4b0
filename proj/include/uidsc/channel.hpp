#pragma once

#include <complex>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "uidsc/rng.hpp"

namespace uidsc::channel {

using Complex = std::complex<double>;
/// Complex baseband block; after power normalization mean(|z|^2) = 1.
using ComplexSignal = std::vector<Complex>;

enum class ChannelKind { Awgn, Rayleigh };

std::string to_string(ChannelKind kind);
ChannelKind parse_channel_kind(const std::string& text);

struct ChannelConfig {
    ChannelKind kind = ChannelKind::Awgn;
    double snr_db = 10.0;
    double h_c = 1.0;       // variance of the Rayleigh gain
    bool equalize = true;   // perfect receiver CSI, Rayleigh only
    std::uint64_t seed = 0;

    // Test hooks.
    std::optional<Complex> forced_gain;
    bool force_zero_noise = false;

    void validate() const;
};

struct ChannelOutcome {
    ComplexSignal received;
    Complex gain{1.0, 0.0};
    double noise_variance = 0.0;
};

/// Pairs v[2j], v[2j+1] into symbol j.
ComplexSignal to_complex(std::span<const double> v);
std::vector<double> from_complex(const ComplexSignal& z);

double mean_power(const ComplexSignal& z);

struct NormalizedSignal {
    ComplexSignal symbols;
    double scale = 1.0;  // divisor applied to the input
};

NormalizedSignal power_normalize(std::span<const double> v, double eps = 1e-12);

/// sigma^2 = power * 10^(-snr_db / 10); +infinity SNR gives zero noise.
double noise_variance(double power, double snr_db);

/// Draws `k` circularly symmetric CN(0, variance) samples.
ComplexSignal complex_gaussian(std::size_t k, double variance, Rng& rng);

ChannelOutcome awgn_transmit(const ComplexSignal& z, double snr_db, Rng& rng);
ChannelOutcome rayleigh_transmit(const ComplexSignal& z, double snr_db, double h_c, Rng& rng);

/// Deep-fade threshold on |h| below which equalization refuses to divide.
inline constexpr double kDeepFadeThreshold = 1e-6;

ComplexSignal equalize(const ChannelOutcome& outcome);

/// 10 log10(mean|clean|^2 / mean|noisy - clean|^2); +infinity when noiseless.
double measure_snr(const ComplexSignal& clean, const ComplexSignal& noisy);

/// One draw of the channel state for a block: gain and additive noise.
struct Realization {
    Complex gain{1.0, 0.0};
    ComplexSignal noise;
    double noise_variance = 0.0;
};

/// A channel instance with a counter-based random stream: call i draws from a
/// generator seeded by (seed, i), so results depend only on (input, seed, i).
class Channel {
public:
    explicit Channel(ChannelConfig config);

    const ChannelConfig& config() const { return config_; }
    std::uint64_t calls() const { return calls_; }

    /// Draws the state for a k-symbol block whose measured power is `signal_power`.
    Realization draw(std::size_t k, double signal_power, double snr_db);

    /// Full transmission of a block at the configured SNR (no equalization).
    ChannelOutcome transmit(const ComplexSignal& z);
    ChannelOutcome transmit(const ComplexSignal& z, double snr_db);

private:
    ChannelConfig config_;
    std::uint64_t calls_ = 0;
};

}  // namespace uidsc::channel
