#pragma once

#include <string>

#include "uidsc/nn.hpp"
#include "uidsc/tensor.hpp"

/// Mask-guided attention: a binary ROI mask drives spatially adaptive
/// depthwise filtering of a feature map, blended with the static features
/// through a per-channel gate.
namespace uidsc::mga {

struct MgaConfig {
    int kernel_size = 3;        // r, taps per dynamic kernel = r * r
    int hidden_channels = 16;   // width of query encoder and kernel generator
    int reduction = 4;          // channel-attention bottleneck reduction
    double gate_bias = 0.0;     // bias of the sigmoid gate logits
    double gate_scale_init = 0.0;  // 0 makes the block the identity at init

    void validate() const;
};

/// Area-average pooling of (N, 1, H, W) masks to (N, 1, h, w). Hard mode
/// thresholds the coverage at 0.5; soft mode keeps the fraction.
Tensor downsample_mask(const Tensor& mask, int height, int width, bool soft = false);

class MaskGuidedAttention {
public:
    MaskGuidedAttention() = default;

    static MaskGuidedAttention create(nn::ParamStore& store, const std::string& name, int channels,
                                      const MgaConfig& config, nn::InitRng& rng);

    int channels() const { return channels_; }
    const MgaConfig& config() const { return config_; }

    /// Mask at feature resolution (N, 1, h, w) -> query q (N, C, h, w).
    Var encode_query(const Var& mask) const;

    /// Per-position depthwise kernels (N, C * r * r, h, w), softmax-normalized over taps.
    Var dkwg(const Var& query, const Var& key) const;

    /// Gate g (N, C, 1, 1) from channel attention over concat(dynamic, static).
    Var gate(const Var& dynamic, const Var& features) const;

    /// features + g * (dynamic - features); same shape as `features`.
    /// `mask` may be at input resolution; it is pooled to the feature size.
    Var forward(const Var& features, const Tensor& mask) const;

    /// Parameter handle for tests (e.g. forcing the gate scale).
    Var gate_scale() const { return gate_scale_; }

private:
    int channels_ = 0;
    MgaConfig config_;
    nn::Conv2d query1_;
    nn::PRelu query_act_;
    nn::Conv2d query2_;
    nn::Conv2d key_;
    nn::Conv2d gen1_;
    nn::PRelu gen_act_;
    nn::Conv2d gen2_;
    nn::Conv2d att1_;
    nn::Conv2d att2_;
    Var gate_scale_;
};

}  // namespace uidsc::mga
