#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "uidsc/image.hpp"
#include "uidsc/tensor.hpp"

namespace uidsc::metrics {

enum class Region { Full, Masked };
std::string to_string(Region region);

struct MetricRecord {
    double psnr_db = 0.0;  // +infinity when the images are identical
    double ssim = 0.0;
    std::optional<double> lpips;
    Region region = Region::Full;
};

double mse(const Image& a, const Image& b);
/// 10 log10(peak^2 / MSE); +infinity on zero error.
double psnr(const Image& a, const Image& b, double peak = 1.0);

struct SsimOptions {
    int window = 11;
    double sigma = 1.5;
    double k1 = 0.01;
    double k2 = 0.03;
    double range = 1.0;
};

/// Mean of the local SSIM map over valid window positions and channels.
/// Throws ShapeError when either side is shorter than the window.
double ssim(const Image& a, const Image& b, const SsimOptions& options = {});

/// Normalized Gaussian window weights, row-major window x window.
std::vector<double> gaussian_window(int size, double sigma);

/// Learned perceptual distance over a feature backbone read from a tensor
/// archive. Meta layout:
///   {"kind": "lpips",
///    "input_shift": [3], "input_scale": [3],        (optional)
///    "layers": [{"type": "conv", "name": n, "stride": s, "padding": p},
///               {"type": "relu"}, {"type": "maxpool", "size": k},
///               {"type": "tap"}, ...]}
/// Tensors: "<n>.weight" (Cout,Cin,k,k), "<n>.bias" (1,Cout,1,1), and one
/// "lin<i>.weight" (1,C,1,1) per tap. Inputs in [0,1] are mapped to [-1,1].
class Lpips {
public:
    /// Throws MetricUnavailable if the file is missing or inconsistent.
    static Lpips load(const std::filesystem::path& path);

    double distance(const Image& a, const Image& b) const;
    std::size_t taps() const { return lin_.size(); }

private:
    struct Layer {
        enum Kind { Conv, Relu, MaxPool, Tap } kind;
        Var weight;
        Var bias;
        int stride = 1;
        int padding = 0;
        int pool = 2;
    };

    std::vector<Tensor> features(const Image& image) const;

    std::vector<Layer> layers_;
    std::vector<Tensor> lin_;
    double shift_[3] = {0.0, 0.0, 0.0};
    double scale_[3] = {1.0, 1.0, 1.0};
};

MetricRecord full_metrics(const Image& a, const Image& b, const Lpips* lpips = nullptr);

/// Metrics over the mask bounding box (grown to at least the SSIM window,
/// within the image) with off-mask pixels zeroed in both images.
/// Throws DomainError on an empty mask.
MetricRecord masked_metrics(const Image& a, const Image& b, const Mask& mask, const Lpips* lpips = nullptr);

}  // namespace uidsc::metrics
