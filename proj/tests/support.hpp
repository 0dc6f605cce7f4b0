#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "uidsc/image.hpp"
#include "uidsc/rng.hpp"
#include "uidsc/tensor.hpp"

namespace testing {

inline uidsc::Tensor random_tensor(uidsc::Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
    uidsc::Rng rng(seed);
    std::uniform_real_distribution<double> u(lo, hi);
    uidsc::Tensor t(shape);
    for (double& v : t.storage()) v = u(rng);
    return t;
}

inline uidsc::Image random_image(int h, int w, int c, std::uint64_t seed) {
    uidsc::Rng rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    uidsc::Image img(h, w, c);
    for (double& v : img.data) v = u(rng);
    return img;
}

inline uidsc::Mask box_mask(int h, int w, int y0, int x0, int y1, int x1) {
    uidsc::Mask m(h, w, 1);
    for (int y = y0; y < y1; ++y)
        for (int x = x0; x < x1; ++x) m.at(y, x, 0) = 1.0;
    return m;
}

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        std::random_device rd;
        path_ = std::filesystem::temp_directory_path() /
                ("uidsc-" + tag + "-" + std::to_string(rd()) + std::to_string(rd()));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;
    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

struct GradCheck {
    double max_rel_error = 0.0;
    std::size_t checked = 0;
};

/// Compares reverse-mode gradients of <w, f()> with central differences for
/// every entry of `leaves`, where w is a fixed random projection of the
/// output. Each entry's error is |a - n| / max(|a|, |n|, floor) with the floor
/// at 1e-3 of the largest numeric gradient, so entries that are zero up to
/// rounding do not dominate.
inline GradCheck gradcheck(const std::function<uidsc::Var()>& f, std::vector<uidsc::Var> leaves,
                           double step = 1e-6, std::uint64_t seed = 99) {
    uidsc::Var out = f();
    const uidsc::Tensor w = random_tensor(out.shape(), seed);
    auto project = [&](const uidsc::Var& y) {
        double acc = 0.0;
        for (std::size_t i = 0; i < w.size(); ++i) acc += w.data()[i] * y.value().data()[i];
        return acc;
    };
    for (auto& leaf : leaves) leaf.zero_grad();
    uidsc::backward(out, w);

    std::vector<double> analytic, numeric;
    for (auto& leaf : leaves) {
        uidsc::Tensor& value = leaf.mutable_value();
        const bool has = leaf.has_grad();
        for (std::size_t i = 0; i < value.size(); ++i) {
            const double keep = value.data()[i];
            double plus, minus;
            {
                uidsc::NoGradGuard guard;
                value.data()[i] = keep + step;
                plus = project(f());
                value.data()[i] = keep - step;
                minus = project(f());
            }
            value.data()[i] = keep;
            numeric.push_back((plus - minus) / (2.0 * step));
            analytic.push_back(has ? leaf.grad().data()[i] : 0.0);
        }
    }
    double scale = 0.0;
    for (double v : numeric) scale = std::max(scale, std::abs(v));
    const double floor = std::max(1e-3 * scale, 1e-12);
    GradCheck r;
    r.checked = numeric.size();
    for (std::size_t i = 0; i < numeric.size(); ++i) {
        const double d = std::max({std::abs(analytic[i]), std::abs(numeric[i]), floor});
        r.max_rel_error = std::max(r.max_rel_error, std::abs(analytic[i] - numeric[i]) / d);
    }
    return r;
}

inline double max_abs_diff(const uidsc::Tensor& a, const uidsc::Tensor& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
    return m;
}

}  // namespace testing
