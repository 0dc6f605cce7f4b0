#include "uidsc/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "uidsc/errors.hpp"
#include "uidsc/ops.hpp"
#include "uidsc/tensor_archive.hpp"

namespace uidsc::metrics {

std::string to_string(Region region) { return region == Region::Full ? "full" : "masked"; }

namespace {

void check_pair(const Image& a, const Image& b, const char* what) {
    if (a.height != b.height || a.width != b.width || a.channels != b.channels) {
        throw ShapeError(std::string(what) + ": images differ in shape (" + std::to_string(a.height) + "x" +
                         std::to_string(a.width) + "x" + std::to_string(a.channels) + " vs " +
                         std::to_string(b.height) + "x" + std::to_string(b.width) + "x" +
                         std::to_string(b.channels) + ")");
    }
    if (a.empty()) throw ShapeError(std::string(what) + ": empty images");
}

}  // namespace

double mse(const Image& a, const Image& b) {
    check_pair(a, b, "mse");
    double sum = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        const double d = a.data[i] - b.data[i];
        sum += d * d;
    }
    return sum / static_cast<double>(a.data.size());
}

double psnr(const Image& a, const Image& b, double peak) {
    const double e = mse(a, b);
    if (e == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(peak * peak / e);
}

std::vector<double> gaussian_window(int size, double sigma) {
    std::vector<double> g(static_cast<std::size_t>(size));
    const double mid = (size - 1) / 2.0;
    double total = 0.0;
    for (int i = 0; i < size; ++i) {
        g[i] = std::exp(-(i - mid) * (i - mid) / (2.0 * sigma * sigma));
        total += g[i];
    }
    for (double& v : g) v /= total;
    std::vector<double> w(static_cast<std::size_t>(size) * size);
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) w[static_cast<std::size_t>(y) * size + x] = g[y] * g[x];
    return w;
}

double ssim(const Image& a, const Image& b, const SsimOptions& o) {
    check_pair(a, b, "ssim");
    if (a.height < o.window || a.width < o.window) {
        throw ShapeError("ssim: image " + std::to_string(a.height) + "x" + std::to_string(a.width) +
                         " is smaller than the " + std::to_string(o.window) + "x" + std::to_string(o.window) + " window");
    }
    // Separable 1-D weights; their outer product is gaussian_window().
    std::vector<double> g(static_cast<std::size_t>(o.window));
    {
        const double mid = (o.window - 1) / 2.0;
        double total = 0.0;
        for (int i = 0; i < o.window; ++i) {
            g[i] = std::exp(-(i - mid) * (i - mid) / (2.0 * o.sigma * o.sigma));
            total += g[i];
        }
        for (double& v : g) v /= total;
    }
    const double c1 = (o.k1 * o.range) * (o.k1 * o.range);
    const double c2 = (o.k2 * o.range) * (o.k2 * o.range);
    const int H = a.height, W = a.width, C = a.channels;
    const int oh = H - o.window + 1, ow = W - o.window + 1;

    // Horizontal pass, then vertical, for the five moment images.
    auto filter = [&](const std::vector<double>& src) {
        std::vector<double> tmp(static_cast<std::size_t>(H) * ow, 0.0);
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < ow; ++x) {
                double s = 0.0;
                for (int k = 0; k < o.window; ++k) s += g[k] * src[static_cast<std::size_t>(y) * W + x + k];
                tmp[static_cast<std::size_t>(y) * ow + x] = s;
            }
        std::vector<double> out(static_cast<std::size_t>(oh) * ow, 0.0);
        for (int y = 0; y < oh; ++y)
            for (int x = 0; x < ow; ++x) {
                double s = 0.0;
                for (int k = 0; k < o.window; ++k) s += g[k] * tmp[static_cast<std::size_t>(y + k) * ow + x];
                out[static_cast<std::size_t>(y) * ow + x] = s;
            }
        return out;
    };

    double total = 0.0;
    const std::size_t plane = static_cast<std::size_t>(H) * W;
    std::vector<double> pa(plane), pb(plane), aa(plane), bb(plane), ab(plane);
    for (int c = 0; c < C; ++c) {
        for (std::size_t p = 0; p < plane; ++p) {
            pa[p] = a.data[p * C + c];
            pb[p] = b.data[p * C + c];
            aa[p] = pa[p] * pa[p];
            bb[p] = pb[p] * pb[p];
            ab[p] = pa[p] * pb[p];
        }
        const auto mu_a = filter(pa), mu_b = filter(pb), e_aa = filter(aa), e_bb = filter(bb), e_ab = filter(ab);
        double sum = 0.0;
        for (std::size_t i = 0; i < mu_a.size(); ++i) {
            const double va = e_aa[i] - mu_a[i] * mu_a[i];
            const double vb = e_bb[i] - mu_b[i] * mu_b[i];
            const double cov = e_ab[i] - mu_a[i] * mu_b[i];
            sum += ((2.0 * mu_a[i] * mu_b[i] + c1) * (2.0 * cov + c2)) /
                   ((mu_a[i] * mu_a[i] + mu_b[i] * mu_b[i] + c1) * (va + vb + c2));
        }
        total += sum / static_cast<double>(mu_a.size());
    }
    return total / C;
}

Lpips Lpips::load(const std::filesystem::path& path) {
    TensorArchive archive;
    try {
        archive = read_archive(path);
    } catch (const Error& e) {
        throw MetricUnavailable(std::string("LPIPS backbone unavailable: ") + e.what());
    }
    auto fail = [&](const std::string& why) { return MetricUnavailable("LPIPS backbone " + path.string() + ": " + why); };
    if (archive.meta.value("kind", "") != "lpips") throw fail("meta.kind is not 'lpips'");
    Lpips l;
    try {
        if (archive.meta.contains("input_shift")) {
            const auto v = archive.meta.at("input_shift").get<std::vector<double>>();
            if (v.size() != 3) throw fail("input_shift needs 3 values");
            std::copy(v.begin(), v.end(), l.shift_);
        }
        if (archive.meta.contains("input_scale")) {
            const auto v = archive.meta.at("input_scale").get<std::vector<double>>();
            if (v.size() != 3) throw fail("input_scale needs 3 values");
            std::copy(v.begin(), v.end(), l.scale_);
        }
        int channels = 3;
        for (const auto& j : archive.meta.at("layers")) {
            const std::string type = j.at("type").get<std::string>();
            Layer layer{};
            if (type == "conv") {
                layer.kind = Layer::Conv;
                const std::string name = j.at("name").get<std::string>();
                auto w = archive.tensors.find(name + ".weight");
                auto b = archive.tensors.find(name + ".bias");
                if (w == archive.tensors.end() || b == archive.tensors.end()) throw fail("missing tensors for " + name);
                if (w->second.c() != channels || w->second.h() != w->second.w() ||
                    !(b->second.shape() == Shape{1, w->second.n(), 1, 1})) {
                    throw fail("inconsistent shapes for " + name);
                }
                channels = w->second.n();
                layer.weight = Var(w->second);
                layer.bias = Var(b->second);
                layer.stride = j.value("stride", 1);
                layer.padding = j.value("padding", 0);
            } else if (type == "relu") {
                layer.kind = Layer::Relu;
            } else if (type == "maxpool") {
                layer.kind = Layer::MaxPool;
                layer.pool = j.value("size", 2);
            } else if (type == "tap") {
                layer.kind = Layer::Tap;
                const std::string name = "lin" + std::to_string(l.lin_.size()) + ".weight";
                auto w = archive.tensors.find(name);
                if (w == archive.tensors.end() || !(w->second.shape() == Shape{1, channels, 1, 1})) {
                    throw fail("missing or mis-shaped " + name);
                }
                for (double v : w->second.values())
                    if (!(v >= 0.0)) throw fail(name + " has negative or non-finite weights");
                l.lin_.push_back(w->second);
            } else {
                throw fail("unknown layer type '" + type + "'");
            }
            l.layers_.push_back(std::move(layer));
        }
    } catch (const nlohmann::json::exception& e) {
        throw fail(std::string("bad meta: ") + e.what());
    }
    if (l.lin_.empty()) throw fail("no feature taps");
    return l;
}

std::vector<Tensor> Lpips::features(const Image& image) const {
    if (image.channels != 3) throw ShapeError("lpips expects 3-channel images");
    NoGradGuard guard;
    Tensor x = to_tensor(image);
    for (int c = 0; c < 3; ++c) {
        double* p = x.plane(0, c);
        for (std::size_t i = 0; i < x.shape().plane(); ++i) p[i] = ((2.0 * p[i] - 1.0) - shift_[c]) / scale_[c];
    }
    Var v(std::move(x));
    std::vector<Tensor> taps;
    for (const auto& layer : layers_) {
        switch (layer.kind) {
        case Layer::Conv:
            v = ops::conv2d(v, layer.weight, layer.bias, layer.stride, layer.padding);
            break;
        case Layer::Relu:
            v = ops::relu(v);
            break;
        case Layer::MaxPool: {
            const Tensor& in = v.value();
            const int k = layer.pool;
            if (in.h() < k || in.w() < k) throw ShapeError("lpips: image too small for the backbone");
            Tensor out(Shape{in.n(), in.c(), in.h() / k, in.w() / k});
            for (int c = 0; c < in.c(); ++c)
                for (int y = 0; y < out.h(); ++y)
                    for (int xx = 0; xx < out.w(); ++xx) {
                        double m = -std::numeric_limits<double>::infinity();
                        for (int dy = 0; dy < k; ++dy)
                            for (int dx = 0; dx < k; ++dx) m = std::max(m, in.at(0, c, y * k + dy, xx * k + dx));
                        out.at(0, c, y, xx) = m;
                    }
            v = Var(std::move(out));
            break;
        }
        case Layer::Tap: {
            Tensor f = v.value();
            const std::size_t plane = f.shape().plane();
            for (std::size_t p = 0; p < plane; ++p) {
                double norm = 0.0;
                for (int c = 0; c < f.c(); ++c) norm += f.plane(0, c)[p] * f.plane(0, c)[p];
                norm = std::sqrt(norm) + 1e-10;
                for (int c = 0; c < f.c(); ++c) f.plane(0, c)[p] /= norm;
            }
            taps.push_back(std::move(f));
            break;
        }
        }
    }
    return taps;
}

double Lpips::distance(const Image& a, const Image& b) const {
    check_pair(a, b, "lpips");
    const auto fa = features(a);
    const auto fb = features(b);
    double total = 0.0;
    for (std::size_t t = 0; t < fa.size(); ++t) {
        const std::size_t plane = fa[t].shape().plane();
        double sum = 0.0;
        for (int c = 0; c < fa[t].c(); ++c) {
            const double w = lin_[t].data()[c];
            const double* pa = fa[t].plane(0, c);
            const double* pb = fb[t].plane(0, c);
            for (std::size_t p = 0; p < plane; ++p) sum += w * (pa[p] - pb[p]) * (pa[p] - pb[p]);
        }
        total += sum / static_cast<double>(plane);
    }
    return total;
}

MetricRecord full_metrics(const Image& a, const Image& b, const Lpips* lpips) {
    MetricRecord r;
    r.region = Region::Full;
    r.psnr_db = psnr(a, b);
    r.ssim = ssim(a, b);
    if (lpips) r.lpips = lpips->distance(a, b);
    return r;
}

MetricRecord masked_metrics(const Image& a, const Image& b, const Mask& mask, const Lpips* lpips) {
    check_pair(a, b, "masked_metrics");
    if (!mask.same_geometry(a) || mask.channels != 1) throw ShapeError("masked_metrics: mask does not match images");
    int y0 = a.height, y1 = -1, x0 = a.width, x1 = -1;
    for (int y = 0; y < mask.height; ++y)
        for (int x = 0; x < mask.width; ++x)
            if (mask.at(y, x, 0) >= 0.5) {
                y0 = std::min(y0, y);
                y1 = std::max(y1, y);
                x0 = std::min(x0, x);
                x1 = std::max(x1, x);
            }
    if (y1 < 0) throw DomainError("masked_metrics: empty mask");
    const int win = SsimOptions{}.window;
    auto grow = [win](int& lo, int& hi, int limit) {
        // [lo, hi] inclusive -> at least `win` wide, kept inside [0, limit).
        while (hi - lo + 1 < win && (lo > 0 || hi < limit - 1)) {
            if (lo > 0) --lo;
            if (hi - lo + 1 < win && hi < limit - 1) ++hi;
        }
    };
    grow(y0, y1, a.height);
    grow(x0, x1, a.width);
    const int h = y1 - y0 + 1, w = x1 - x0 + 1;
    Image ca(h, w, a.channels), cb(h, w, b.channels);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const double m = mask.at(y + y0, x + x0, 0) >= 0.5 ? 1.0 : 0.0;
            for (int c = 0; c < a.channels; ++c) {
                ca.at(y, x, c) = a.at(y + y0, x + x0, c) * m;
                cb.at(y, x, c) = b.at(y + y0, x + x0, c) * m;
            }
        }
    MetricRecord r = full_metrics(ca, cb, lpips);
    r.region = Region::Masked;
    return r;
}

}  // namespace uidsc::metrics
