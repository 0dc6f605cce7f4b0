#pragma once

#include <complex>
#include <span>

#include "uidsc/tensor.hpp"

/// Differentiable tensor operations on NCHW `Var`s.
namespace uidsc::ops {

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
/// x[n,c,:,:] * g[n,c]; g has shape (N, C, 1, 1).
Var mul_channel(const Var& x, const Var& g);

Var sigmoid(const Var& x);
Var relu(const Var& x);
/// Per-channel parametric ReLU; slope has shape (1, C, 1, 1).
Var prelu(const Var& x, const Var& slope);

Var concat_channels(std::span<const Var> parts);

/// Cross-correlation, square kernel. weight: (Cout, Cin, k, k); bias (1, Cout, 1, 1) or undefined.
Var conv2d(const Var& x, const Var& weight, const Var& bias, int stride, int padding);

/// Transposed convolution. weight: (Cin, Cout, k, k). Output size is
/// (in - 1) * stride - 2 * padding + k + output_padding.
Var conv_transpose2d(const Var& x, const Var& weight, const Var& bias, int stride, int padding,
                     int output_padding);

enum class NormMode { Batch, Instance };

struct NormOptions {
    NormMode mode = NormMode::Batch;
    bool training = true;
    double momentum = 0.1;
    double eps = 1e-5;
};

/// Batch normalization (or per-instance statistics). In batch mode with
/// training = true the running buffers are updated in place.
Var batch_norm(const Var& x, const Var& gamma, const Var& beta, Tensor& running_mean,
               Tensor& running_var, const NormOptions& options);

Var global_avg_pool(const Var& x);

/// Softmax over consecutive groups of `taps` channels at every pixel.
Var softmax_taps(const Var& logits, int taps);

/// Per-pixel, per-channel r x r filtering of `features` with the kernel field
/// `kernels` of shape (N, C * r * r, H, W); zero padding at the borders.
Var dynamic_depthwise_conv(const Var& features, const Var& kernels, int r);

/// Mean squared error, returned as a (1,1,1,1) scalar.
Var mse(const Var& a, const Var& b);

/// (N, C, H, W) -> (N, H*W*C, 1, 1), row-major (h, w, c) order per sample.
Var flatten_hwc(const Var& x);
Var unflatten_hwc(const Var& v, int channels, int height, int width);

/// Per-sample power normalization of real latents (N, 2k, 1, 1) so that the
/// packed complex symbols have unit mean power. Writes the divisors to `scales`.
Var power_normalize(const Var& v, std::vector<double>* scales = nullptr, double eps = 1e-12);

/// Multiplies each sample's complex-packed pairs by a complex scalar.
Var complex_scale(const Var& z, std::span<const std::complex<double>> gains);

/// Adds a constant tensor (no gradient to the constant).
Var add_constant(const Var& x, const Tensor& offset);

}  // namespace uidsc::ops
