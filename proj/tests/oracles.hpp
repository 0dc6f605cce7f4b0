#pragma once

// Brute-force reference implementations shared by unit and acceptance tests.
// Each is written directly from its defining formula, independent of the
// library code it checks.

#include <algorithm>
#include <cmath>
#include <vector>

#include "uidsc/image.hpp"
#include "uidsc/tensor.hpp"

namespace oracle {

inline double psnr(const uidsc::Image& a, const uidsc::Image& b) {
    long double acc = 0.0L;
    for (int y = 0; y < a.height; ++y)
        for (int x = 0; x < a.width; ++x)
            for (int c = 0; c < a.channels; ++c) {
                const long double d = static_cast<long double>(a.at(y, x, c)) - b.at(y, x, c);
                acc += d * d;
            }
    const long double mse = acc / a.size();
    return static_cast<double>(10.0L * std::log10(1.0L / mse));
}

/// Per-window two-pass moments with an explicit 11x11 Gaussian (sigma 1.5),
/// K1 = 0.01, K2 = 0.03, dynamic range 1, valid windows only.
inline double ssim(const uidsc::Image& a, const uidsc::Image& b) {
    const int win = 11;
    const double sigma = 1.5, c1 = 1e-4, c2 = 9e-4;
    std::vector<double> w(win * win);
    double total = 0.0;
    for (int u = 0; u < win; ++u)
        for (int v = 0; v < win; ++v) {
            w[u * win + v] = std::exp(-((u - 5.0) * (u - 5.0) + (v - 5.0) * (v - 5.0)) / (2 * sigma * sigma));
            total += w[u * win + v];
        }
    for (double& x : w) x /= total;
    double acc = 0.0;
    for (int c = 0; c < a.channels; ++c) {
        double sum = 0.0;
        int n = 0;
        for (int y = 0; y + win <= a.height; ++y)
            for (int x = 0; x + win <= a.width; ++x) {
                double ma = 0, mb = 0;
                for (int u = 0; u < win; ++u)
                    for (int v = 0; v < win; ++v) {
                        ma += w[u * win + v] * a.at(y + u, x + v, c);
                        mb += w[u * win + v] * b.at(y + u, x + v, c);
                    }
                double va = 0, vb = 0, cov = 0;
                for (int u = 0; u < win; ++u)
                    for (int v = 0; v < win; ++v) {
                        const double da = a.at(y + u, x + v, c) - ma, db = b.at(y + u, x + v, c) - mb;
                        va += w[u * win + v] * da * da;
                        vb += w[u * win + v] * db * db;
                        cov += w[u * win + v] * da * db;
                    }
                sum += (2 * ma * mb + c1) * (2 * cov + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                ++n;
            }
        acc += sum / n;
    }
    return acc / a.channels;
}

/// r x r mean filter with zero padding, per channel.
inline uidsc::Tensor box_blur(const uidsc::Tensor& k, int r) {
    uidsc::Tensor out(k.shape());
    const int h = r / 2;
    for (int n = 0; n < k.n(); ++n)
        for (int c = 0; c < k.c(); ++c)
            for (int y = 0; y < k.h(); ++y)
                for (int x = 0; x < k.w(); ++x) {
                    double acc = 0.0;
                    for (int dy = -h; dy <= h; ++dy)
                        for (int dx = -h; dx <= h; ++dx) {
                            const int yy = y + dy, xx = x + dx;
                            if (yy >= 0 && xx >= 0 && yy < k.h() && xx < k.w()) acc += k.at(n, c, yy, xx);
                        }
                    out.at(n, c, y, x) = acc / (r * r);
                }
    return out;
}

/// Kolmogorov-Smirnov statistic of |h| samples against the Rayleigh CDF
/// 1 - exp(-r^2 / h_c), i.e. sigma_R = sqrt(h_c / 2).
inline double ks_rayleigh(std::vector<double> r, double h_c) {
    std::sort(r.begin(), r.end());
    const double n = static_cast<double>(r.size());
    double d = 0.0;
    for (std::size_t i = 0; i < r.size(); ++i) {
        const double f = 1.0 - std::exp(-r[i] * r[i] / h_c);
        d = std::max({d, (i + 1) / n - f, f - i / n});
    }
    return d;
}

}  // namespace oracle
