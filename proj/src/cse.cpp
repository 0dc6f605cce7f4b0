#include "uidsc/cse.hpp"

#include <algorithm>
#include <cmath>

#include "uidsc/errors.hpp"
#include "uidsc/ops.hpp"

namespace uidsc::cse {

double signal_power(std::span<const double> features) {
    if (features.empty()) throw ShapeError("signal_power: empty feature map");
    double acc = 0.0;
    for (double v : features) acc += v * v;
    return acc / static_cast<double>(features.size());
}

double signal_power(const Tensor& features, int sample) {
    const std::size_t len = features.shape().per_sample();
    return signal_power(std::span<const double>(features.sample(sample), len));
}

double noise_level(double p_s, double snr_db) {
    if (!(p_s >= 0.0)) throw DomainError("noise_level: negative signal power");
    return p_s / std::pow(10.0, snr_db / 10.0);
}

namespace {

double map_value(double sigma2, MapScale scale) {
    return scale == MapScale::Raw ? sigma2 : std::log10(std::max(sigma2, 1e-12));
}

}  // namespace

Var embed_noise_map(const Var& features, std::span<const double> snr_db, const CseOptions& options) {
    const Shape& s = features.shape();
    if (s.numel() == 0) throw ShapeError("embed_noise_map: empty feature map");
    if (snr_db.size() != 1 && snr_db.size() != static_cast<std::size_t>(s.n)) {
        throw ShapeError("embed_noise_map: " + std::to_string(snr_db.size()) + " SNR values for " +
                         std::to_string(s.n) + " samples");
    }
    const std::size_t plane = s.plane();
    const double count = static_cast<double>(s.per_sample());
    Tensor map(Shape{s.n, 1, s.h, s.w});
    // d(map)/d(z) = 2 z / (K * 10^(snr/10)) * d(scale)/d(sigma2).
    std::vector<double> dmap_dpower(static_cast<std::size_t>(s.n));
    for (int n = 0; n < s.n; ++n) {
        const double snr = snr_db.size() == 1 ? snr_db[0] : snr_db[n];
        const double p_s = signal_power(features.value(), n);
        const double sigma2 = noise_level(p_s, snr);
        std::fill_n(map.plane(n, 0), plane, map_value(sigma2, options.scale));
        const double dsigma = 1.0 / std::pow(10.0, snr / 10.0);
        dmap_dpower[n] = options.scale == MapScale::Raw
                             ? dsigma
                             : (sigma2 > 1e-12 ? dsigma / (sigma2 * std::log(10.0)) : 0.0);
    }

    Var map_var;
    if (options.gradient_through_map) {
        auto fn = features.node();
        map_var = Var::from_op(std::move(map), {features}, [fn, dmap_dpower, count](const Tensor& g) {
            const Shape& s = fn->value.shape();
            for (int n = 0; n < s.n; ++n) {
                double gsum = 0.0;
                const double* gp = g.sample(n);
                for (std::size_t i = 0; i < s.plane(); ++i) gsum += gp[i];
                const double coef = gsum * dmap_dpower[n] * 2.0 / count;
                const double* z = fn->value.sample(n);
                double* d = fn->grad_buffer().sample(n);
                for (std::size_t i = 0; i < s.per_sample(); ++i) d[i] += coef * z[i];
            }
        });
    } else {
        map_var = Var(std::move(map), false);
    }
    const Var parts[] = {features, map_var};
    return ops::concat_channels(parts);
}

Tensor embed_noise_map(const Tensor& features, double snr_db, const CseOptions& options) {
    if (features.n() != 1) throw ShapeError("embed_noise_map: expected a single feature map");
    NoGradGuard guard;
    const double snr[] = {snr_db};
    return embed_noise_map(Var(features), snr, options).value();
}

}  // namespace uidsc::cse
