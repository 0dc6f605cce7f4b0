#include "uidsc/channel.hpp"

#include <cmath>
#include <limits>

#include "uidsc/errors.hpp"

namespace uidsc::channel {

std::string to_string(ChannelKind kind) {
    return kind == ChannelKind::Awgn ? "awgn" : "rayleigh";
}

ChannelKind parse_channel_kind(const std::string& text) {
    if (text == "awgn" || text == "AWGN") return ChannelKind::Awgn;
    if (text == "rayleigh" || text == "RAYLEIGH") return ChannelKind::Rayleigh;
    throw ConfigError("unknown channel kind '" + text + "' (expected awgn or rayleigh)");
}

void ChannelConfig::validate() const {
    if (!(h_c > 0.0) || !std::isfinite(h_c)) throw ConfigError("channel h_c must be > 0");
    if (std::isnan(snr_db) || snr_db == -std::numeric_limits<double>::infinity()) {
        throw ConfigError("channel snr_db must be finite or +inf");
    }
}

ComplexSignal to_complex(std::span<const double> v) {
    if (v.size() < 2 || v.size() % 2 != 0) {
        throw LengthError("to_complex: length " + std::to_string(v.size()) +
                          " is not a positive even number");
    }
    ComplexSignal z(v.size() / 2);
    for (std::size_t j = 0; j < z.size(); ++j) z[j] = Complex(v[2 * j], v[2 * j + 1]);
    return z;
}

std::vector<double> from_complex(const ComplexSignal& z) {
    std::vector<double> v(2 * z.size());
    for (std::size_t j = 0; j < z.size(); ++j) {
        v[2 * j] = z[j].real();
        v[2 * j + 1] = z[j].imag();
    }
    return v;
}

double mean_power(const ComplexSignal& z) {
    if (z.empty()) throw LengthError("mean_power of empty signal");
    double acc = 0.0;
    for (const auto& s : z) acc += std::norm(s);
    return acc / static_cast<double>(z.size());
}

NormalizedSignal power_normalize(std::span<const double> v, double eps) {
    ComplexSignal z = to_complex(v);
    const double power = mean_power(z);
    if (!(power > eps)) {
        throw DegenerateSignalError("power_normalize: mean symbol power " + std::to_string(power) +
                                    " below threshold; encoder output is degenerate");
    }
    const double scale = std::sqrt(power);
    for (auto& s : z) s /= scale;
    return {std::move(z), scale};
}

double noise_variance(double power, double snr_db) {
    if (snr_db == std::numeric_limits<double>::infinity()) return 0.0;
    return power / std::pow(10.0, snr_db / 10.0);
}

ComplexSignal complex_gaussian(std::size_t k, double variance, Rng& rng) {
    ComplexSignal out(k);
    if (variance <= 0.0) return out;
    std::normal_distribution<double> normal(0.0, std::sqrt(variance / 2.0));
    for (auto& s : out) {
        const double re = normal(rng);
        const double im = normal(rng);
        s = Complex(re, im);
    }
    return out;
}

ChannelOutcome awgn_transmit(const ComplexSignal& z, double snr_db, Rng& rng) {
    ChannelOutcome out;
    out.noise_variance = noise_variance(mean_power(z), snr_db);
    const ComplexSignal noise = complex_gaussian(z.size(), out.noise_variance, rng);
    out.received.resize(z.size());
    for (std::size_t j = 0; j < z.size(); ++j) out.received[j] = z[j] + noise[j];
    return out;
}

ChannelOutcome rayleigh_transmit(const ComplexSignal& z, double snr_db, double h_c, Rng& rng) {
    if (!(h_c > 0.0)) throw ConfigError("rayleigh_transmit: h_c must be > 0");
    ChannelOutcome out;
    out.gain = complex_gaussian(1, h_c, rng).front();
    out.noise_variance = noise_variance(mean_power(z), snr_db);
    const ComplexSignal noise = complex_gaussian(z.size(), out.noise_variance, rng);
    out.received.resize(z.size());
    for (std::size_t j = 0; j < z.size(); ++j) out.received[j] = out.gain * z[j] + noise[j];
    return out;
}

ComplexSignal equalize(const ChannelOutcome& outcome) {
    if (std::abs(outcome.gain) <= kDeepFadeThreshold) {
        throw DeepFadeError("equalize: |h| = " + std::to_string(std::abs(outcome.gain)) +
                            " is below the deep-fade threshold");
    }
    ComplexSignal out(outcome.received.size());
    for (std::size_t j = 0; j < out.size(); ++j) out[j] = outcome.received[j] / outcome.gain;
    return out;
}

double measure_snr(const ComplexSignal& clean, const ComplexSignal& noisy) {
    if (clean.size() != noisy.size()) {
        throw LengthError("measure_snr: lengths " + std::to_string(clean.size()) + " and " +
                          std::to_string(noisy.size()));
    }
    double noise = 0.0;
    for (std::size_t j = 0; j < clean.size(); ++j) noise += std::norm(noisy[j] - clean[j]);
    if (noise == 0.0) return std::numeric_limits<double>::infinity();
    noise /= static_cast<double>(clean.size());
    return 10.0 * std::log10(mean_power(clean) / noise);
}

Channel::Channel(ChannelConfig config) : config_(config) { config_.validate(); }

Realization Channel::draw(std::size_t k, double signal_power, double snr_db) {
    Rng rng = make_rng(config_.seed, {calls_++});
    Realization r;
    if (config_.kind == ChannelKind::Rayleigh) r.gain = complex_gaussian(1, config_.h_c, rng).front();
    if (config_.forced_gain) r.gain = *config_.forced_gain;
    r.noise_variance = config_.force_zero_noise ? 0.0 : noise_variance(signal_power, snr_db);
    r.noise = complex_gaussian(k, r.noise_variance, rng);
    return r;
}

ChannelOutcome Channel::transmit(const ComplexSignal& z) { return transmit(z, config_.snr_db); }

ChannelOutcome Channel::transmit(const ComplexSignal& z, double snr_db) {
    Realization r = draw(z.size(), mean_power(z), snr_db);
    ChannelOutcome out;
    out.gain = r.gain;
    out.noise_variance = r.noise_variance;
    out.received.resize(z.size());
    for (std::size_t j = 0; j < z.size(); ++j) out.received[j] = r.gain * z[j] + r.noise[j];
    return out;
}

}  // namespace uidsc::channel
