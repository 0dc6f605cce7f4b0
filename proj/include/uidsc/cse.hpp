#pragma once

#include <span>

#include "uidsc/tensor.hpp"

/// Channel state embedding: the SNR becomes a constant noise-variance map
/// appended to a feature map as one extra channel.
namespace uidsc::cse {

enum class MapScale {
    Raw,    // sigma_n^2 as is
    Log10,  // log10(max(sigma_n^2, 1e-12))
};

struct CseOptions {
    MapScale scale = MapScale::Raw;
    /// When false (default) the appended channel is a constant w.r.t. the features.
    bool gradient_through_map = false;
};

/// Mean of squared entries over a single h x w x c map.
double signal_power(std::span<const double> features);
/// Per-sample signal power of an (N, C, H, W) tensor.
double signal_power(const Tensor& features, int sample);

/// sigma_n^2 = p_s / 10^(snr_db / 10).
double noise_level(double p_s, double snr_db);

/// Appends one channel per sample filled with noise_level(signal_power(z_n), snr_db[n]).
/// `snr_db` has either one entry (broadcast) or one per sample.
Var embed_noise_map(const Var& features, std::span<const double> snr_db,
                    const CseOptions& options = {});

/// Single feature map convenience form; `features` has n = 1.
Tensor embed_noise_map(const Tensor& features, double snr_db, const CseOptions& options = {});

}  // namespace uidsc::cse
