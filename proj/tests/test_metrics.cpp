#include <cmath>
#include <limits>

#include "doctest.h"
#include "oracles.hpp"
#include "support.hpp"
#include "uidsc/errors.hpp"
#include "uidsc/metrics.hpp"
#include "uidsc/tensor_archive.hpp"

using namespace uidsc;
using namespace uidsc::metrics;

namespace {

Image noisy_copy(const Image& a, double amp, std::uint64_t seed) {
    Image b = a;
    const Image n = testing::random_image(a.height, a.width, a.channels, seed);
    for (std::size_t i = 0; i < b.size(); ++i) b.data[i] = std::clamp(b.data[i] + amp * (n.data[i] - 0.5), 0.0, 1.0);
    return b;
}

// conv 3->4 (3x3, pad 1) -> relu -> tap -> maxpool 2 -> conv 4->5 (1x1) -> tap
void write_lpips(const std::filesystem::path& path, bool negative_lin = false) {
    TensorArchive ar;
    ar.meta = {{"kind", "lpips"},
               {"layers",
                {{{"type", "conv"}, {"name", "c0"}, {"stride", 1}, {"padding", 1}},
                 {{"type", "relu"}},
                 {{"type", "tap"}},
                 {{"type", "maxpool"}, {"size", 2}},
                 {{"type", "conv"}, {"name", "c1"}, {"stride", 1}, {"padding", 0}},
                 {{"type", "tap"}}}}};
    ar.tensors["c0.weight"] = testing::random_tensor({4, 3, 3, 3}, 1);
    ar.tensors["c0.bias"] = testing::random_tensor({1, 4, 1, 1}, 2);
    ar.tensors["c1.weight"] = testing::random_tensor({5, 4, 1, 1}, 3);
    ar.tensors["c1.bias"] = testing::random_tensor({1, 5, 1, 1}, 4);
    ar.tensors["lin0.weight"] = testing::random_tensor({1, 4, 1, 1}, 5, 0.0, 1.0);
    ar.tensors["lin1.weight"] = testing::random_tensor({1, 5, 1, 1}, 6, negative_lin ? -1.0 : 0.0, 1.0);
    write_archive(path, ar);
}

// Loop implementation of the archive above.
double lpips_oracle(const std::filesystem::path& path, const Image& a, const Image& b) {
    const TensorArchive ar = read_archive(path);
    auto feats = [&](const Image& img) {
        const int H = img.height, W = img.width;
        const Tensor& w0 = ar.tensors.at("c0.weight");
        const Tensor& b0 = ar.tensors.at("c0.bias");
        std::vector<std::vector<double>> f0(4, std::vector<double>(H * W));
        for (int o = 0; o < 4; ++o)
            for (int y = 0; y < H; ++y)
                for (int x = 0; x < W; ++x) {
                    double s = b0.at(0, o, 0, 0);
                    for (int c = 0; c < 3; ++c)
                        for (int u = 0; u < 3; ++u)
                            for (int v = 0; v < 3; ++v) {
                                const int yy = y + u - 1, xx = x + v - 1;
                                if (yy >= 0 && xx >= 0 && yy < H && xx < W)
                                    s += w0.at(o, c, u, v) * (2.0 * img.at(yy, xx, c) - 1.0);
                            }
                    f0[o][y * W + x] = std::max(0.0, s);
                }
        const int h = H / 2, w = W / 2;
        std::vector<std::vector<double>> f1(5, std::vector<double>(h * w));
        const Tensor& w1 = ar.tensors.at("c1.weight");
        const Tensor& b1 = ar.tensors.at("c1.bias");
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                double pooled[4];
                for (int c = 0; c < 4; ++c)
                    pooled[c] = std::max({f0[c][2 * y * W + 2 * x], f0[c][2 * y * W + 2 * x + 1],
                                          f0[c][(2 * y + 1) * W + 2 * x], f0[c][(2 * y + 1) * W + 2 * x + 1]});
                for (int o = 0; o < 5; ++o) {
                    double s = b1.at(0, o, 0, 0);
                    for (int c = 0; c < 4; ++c) s += w1.at(o, c, 0, 0) * pooled[c];
                    f1[o][y * w + x] = s;
                }
            }
        return std::make_pair(f0, f1);
    };
    auto tap = [](const std::vector<std::vector<double>>& fa, const std::vector<std::vector<double>>& fb,
                  const Tensor& lin) {
        const std::size_t C = fa.size(), P = fa[0].size();
        double total = 0.0;
        for (std::size_t p = 0; p < P; ++p) {
            double na = 0, nb = 0;
            for (std::size_t c = 0; c < C; ++c) {
                na += fa[c][p] * fa[c][p];
                nb += fb[c][p] * fb[c][p];
            }
            na = std::sqrt(na) + 1e-10;
            nb = std::sqrt(nb) + 1e-10;
            for (std::size_t c = 0; c < C; ++c) {
                const double d = fa[c][p] / na - fb[c][p] / nb;
                total += lin.data()[c] * d * d;
            }
        }
        return total / P;
    };
    const auto fa = feats(a), fb = feats(b);
    return tap(fa.first, fb.first, ar.tensors.at("lin0.weight")) + tap(fa.second, fb.second, ar.tensors.at("lin1.weight"));
}

}  // namespace

TEST_CASE("psnr and ssim against loop oracles") {
    for (std::uint64_t s = 0; s < 50; ++s) {
        const int h = 11 + static_cast<int>(s % 7), w = 11 + static_cast<int>((s * 3) % 9);
        const Image a = testing::random_image(h, w, 3, 1000 + s);
        const Image b = noisy_copy(a, 0.05 + 0.02 * (s % 10), 2000 + s);
        CHECK(std::abs(psnr(a, b) - oracle::psnr(a, b)) < 1e-9);
        CHECK(std::abs(ssim(a, b) - oracle::ssim(a, b)) < 1e-6);
    }
}

TEST_CASE("psnr edge cases") {
    const Image a = testing::random_image(8, 8, 3, 1);
    CHECK(std::isinf(psnr(a, a)));
    Image b = a;
    for (double& v : b.data) v = std::clamp(v + 0.1, 0.0, 1.0);
    Image c(8, 8, 3, 0.0), d(8, 8, 3, 0.1);
    CHECK(psnr(c, d) == doctest::Approx(20.0).epsilon(1e-12));
    CHECK(mse(c, d) == doctest::Approx(0.01).epsilon(1e-12));
    CHECK_THROWS_AS(psnr(a, Image(8, 9, 3)), ShapeError);
}

TEST_CASE("ssim closed forms") {
    const Image a = testing::random_image(16, 16, 3, 2);
    CHECK(ssim(a, a) == doctest::Approx(1.0).epsilon(1e-12));
    // Constant images: no variance, so SSIM = (2ab + C1) / (a^2 + b^2 + C1).
    for (const auto& [x, y] : std::vector<std::pair<double, double>>{{0.2, 0.7}, {0.0, 1.0}, {0.5, 0.5}}) {
        const double c1 = 1e-4;
        const double expect = (2 * x * y + c1) / (x * x + y * y + c1);
        CHECK(ssim(Image(12, 12, 3, x), Image(12, 12, 3, y)) == doctest::Approx(expect).epsilon(1e-12));
    }
    CHECK_THROWS_AS(ssim(Image(10, 20, 3), Image(10, 20, 3)), ShapeError);
    const auto g = gaussian_window(11, 1.5);
    double total = 0.0;
    for (double v : g) total += v;
    CHECK(total == doctest::Approx(1.0).epsilon(1e-14));
    CHECK(g[60] == *std::max_element(g.begin(), g.end()));
}

TEST_CASE("lpips from an archive") {
    testing::TempDir dir("lpips");
    write_lpips(dir / "net.uidsc");
    const Lpips net = Lpips::load(dir / "net.uidsc");
    CHECK(net.taps() == 2);
    const Image a = testing::random_image(12, 14, 3, 3);
    const Image b = noisy_copy(a, 0.3, 4);
    CHECK(net.distance(a, a) == 0.0);
    CHECK(net.distance(a, b) > 0.0);
    CHECK(net.distance(a, b) == doctest::Approx(net.distance(b, a)).epsilon(1e-12));
    CHECK(std::abs(net.distance(a, b) - lpips_oracle(dir / "net.uidsc", a, b)) < 1e-9);
    const Image far = noisy_copy(a, 1.0, 5);
    CHECK(net.distance(a, far) > net.distance(a, noisy_copy(a, 0.05, 5)));

    CHECK_THROWS_AS(Lpips::load(dir / "missing.uidsc"), MetricUnavailable);
    write_lpips(dir / "neg.uidsc", true);
    CHECK_THROWS_AS(Lpips::load(dir / "neg.uidsc"), MetricUnavailable);
    TensorArchive bad = read_archive(dir / "net.uidsc");
    bad.tensors.erase("lin1.weight");
    write_archive(dir / "bad.uidsc", bad);
    CHECK_THROWS_AS(Lpips::load(dir / "bad.uidsc"), MetricUnavailable);

    const MetricRecord r = full_metrics(a, b, &net);
    CHECK(r.lpips.has_value());
    CHECK(r.region == Region::Full);
    CHECK_FALSE(full_metrics(a, b).lpips.has_value());
}

TEST_CASE("masked metrics") {
    const Image a = testing::random_image(32, 32, 3, 6);
    Image b = noisy_copy(a, 0.2, 7);
    const Mask m = testing::box_mask(32, 32, 10, 12, 20, 24);
    const MetricRecord r = masked_metrics(a, b, m);
    CHECK(r.region == Region::Masked);
    CHECK(to_string(r.region) == "masked");

    // Oracle: the 10x12 box grows by one row upward to reach the 11-pixel window.
    const int y0 = 9, x0 = 12, h = 11, w = 12;
    Image ca(h, w, 3), cb(h, w, 3);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c) {
                const double keep = m.at(y0 + y, x0 + x, 0);
                ca.at(y, x, c) = a.at(y0 + y, x0 + x, c) * keep;
                cb.at(y, x, c) = b.at(y0 + y, x0 + x, c) * keep;
            }
    CHECK(r.psnr_db == doctest::Approx(oracle::psnr(ca, cb)).epsilon(1e-12));
    CHECK(r.ssim == doctest::Approx(oracle::ssim(ca, cb)).epsilon(1e-9));

    // Errors outside the mask are ignored.
    Image outside = a;
    for (int y = 0; y < 5; ++y)
        for (int x = 0; x < 32; ++x) outside.at(y, x, 0) = 1.0 - a.at(y, x, 0);
    CHECK(std::isinf(masked_metrics(a, outside, m).psnr_db));
    CHECK(masked_metrics(a, outside, m).ssim == doctest::Approx(1.0));

    // A single pixel near a corner still yields a window-sized region.
    const MetricRecord tiny = masked_metrics(a, b, testing::box_mask(32, 32, 31, 31, 32, 32));
    CHECK(std::isfinite(tiny.ssim));
    CHECK_THROWS_AS(masked_metrics(a, b, Mask(32, 32, 1)), DomainError);
}
