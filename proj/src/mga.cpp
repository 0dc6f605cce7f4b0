#include "uidsc/mga.hpp"

#include <algorithm>
#include <cmath>

#include "uidsc/errors.hpp"
#include "uidsc/ops.hpp"

namespace uidsc::mga {

void MgaConfig::validate() const {
    if (kernel_size < 1 || kernel_size % 2 == 0) throw ConfigError("mga.kernel_size must be odd and >= 1");
    if (hidden_channels < 1) throw ConfigError("mga.hidden_channels must be >= 1");
    if (reduction < 1) throw ConfigError("mga.reduction must be >= 1");
}

namespace {

// Overlap weights of source cells [0, src) with destination cell `i` of `dst` cells.
std::vector<std::pair<int, double>> area_weights(int src, int dst, int i) {
    const double ratio = static_cast<double>(src) / dst;
    const double lo = i * ratio;
    const double hi = (i + 1) * ratio;
    std::vector<std::pair<int, double>> out;
    for (int s = static_cast<int>(std::floor(lo)); s < static_cast<int>(std::ceil(hi)) && s < src; ++s) {
        const double overlap = std::min<double>(hi, s + 1) - std::max<double>(lo, s);
        if (overlap > 0.0) out.emplace_back(s, overlap / ratio);
    }
    return out;
}

// g (N, C, 1, 1) * s (1, C, 1, 1), broadcast over the batch.
Var scale_per_channel(const Var& g, const Var& s) {
    const Shape& gs = g.shape();
    Tensor y = g.value();
    for (int n = 0; n < gs.n; ++n)
        for (int c = 0; c < gs.c; ++c) y.data()[n * gs.c + c] *= s.value().data()[c];
    auto gn = g.node();
    auto sn = s.node();
    return Var::from_op(std::move(y), {g, s}, [gn, sn](const Tensor& grad) {
        const Shape& gs = gn->value.shape();
        for (int n = 0; n < gs.n; ++n)
            for (int c = 0; c < gs.c; ++c) {
                const std::size_t i = static_cast<std::size_t>(n) * gs.c + c;
                if (gn->requires_grad) gn->grad_buffer().data()[i] += grad.data()[i] * sn->value.data()[c];
                if (sn->requires_grad) sn->grad_buffer().data()[c] += grad.data()[i] * gn->value.data()[i];
            }
    });
}

}  // namespace

Tensor downsample_mask(const Tensor& mask, int height, int width, bool soft) {
    const Shape& s = mask.shape();
    if (s.c != 1) throw ShapeError("downsample_mask: mask must have one channel, got " + s.str());
    if (height < 1 || width < 1 || height > s.h || width > s.w) {
        throw ShapeError("downsample_mask: cannot resize " + s.str() + " to " +
                         std::to_string(height) + "x" + std::to_string(width));
    }
    Tensor out(Shape{s.n, 1, height, width});
    std::vector<std::vector<std::pair<int, double>>> wy(height), wx(width);
    for (int i = 0; i < height; ++i) wy[i] = area_weights(s.h, height, i);
    for (int j = 0; j < width; ++j) wx[j] = area_weights(s.w, width, j);
    for (int n = 0; n < s.n; ++n) {
        const double* src = mask.plane(n, 0);
        double* dst = out.plane(n, 0);
        for (int i = 0; i < height; ++i)
            for (int j = 0; j < width; ++j) {
                double acc = 0.0;
                for (const auto& [y, a] : wy[i])
                    for (const auto& [x, b] : wx[j]) acc += a * b * src[y * s.w + x];
                acc = std::clamp(acc, 0.0, 1.0);
                dst[i * width + j] = soft ? acc : (acc >= 0.5 ? 1.0 : 0.0);
            }
    }
    return out;
}

MaskGuidedAttention MaskGuidedAttention::create(nn::ParamStore& store, const std::string& name,
                                                int channels, const MgaConfig& config,
                                                nn::InitRng& rng) {
    config.validate();
    MaskGuidedAttention m;
    m.channels_ = channels;
    m.config_ = config;
    const int hidden = config.hidden_channels;
    const int taps = config.kernel_size * config.kernel_size;
    m.query1_ = nn::Conv2d::create(store, name + ".query.0", 1, hidden, 3, 1, rng);
    m.query_act_ = nn::PRelu::create(store, name + ".query.act", hidden);
    m.query2_ = nn::Conv2d::create(store, name + ".query.1", hidden, channels, 3, 1, rng);
    m.key_ = nn::Conv2d::create(store, name + ".key", channels, channels, 1, 1, rng);
    m.gen1_ = nn::Conv2d::create(store, name + ".dkwg.0", 2 * channels, hidden, 3, 1, rng);
    m.gen_act_ = nn::PRelu::create(store, name + ".dkwg.act", hidden);
    m.gen2_ = nn::Conv2d::create(store, name + ".dkwg.1", hidden, channels * taps, 1, 1, rng);
    const int bottleneck = std::max(1, 2 * channels / config.reduction);
    m.att1_ = nn::Conv2d::create(store, name + ".attn.0", 2 * channels, bottleneck, 1, 1, rng);
    m.att2_ = nn::Conv2d::create(store, name + ".attn.1", bottleneck, channels, 1, 1, rng);
    m.att2_.bias.mutable_value().fill(config.gate_bias);
    m.gate_scale_ = store.add_param(name + ".gate_scale",
                                    Tensor(Shape{1, channels, 1, 1}, config.gate_scale_init));
    return m;
}

Var MaskGuidedAttention::encode_query(const Var& mask) const {
    if (mask.shape().c != 1) throw ShapeError("encode_query: mask must have one channel");
    return query2_(query_act_(query1_(mask)));
}

Var MaskGuidedAttention::dkwg(const Var& query, const Var& key) const {
    if (!(query.shape() == key.shape())) {
        throw ShapeError("dkwg: query " + query.shape().str() + " vs key " + key.shape().str());
    }
    const Var parts[] = {query, key};
    const Var logits = gen2_(gen_act_(gen1_(ops::concat_channels(parts))));
    return ops::softmax_taps(logits, config_.kernel_size * config_.kernel_size);
}

Var MaskGuidedAttention::gate(const Var& dynamic, const Var& features) const {
    const Var parts[] = {dynamic, features};
    const Var pooled = ops::global_avg_pool(ops::concat_channels(parts));
    const Var logits = att2_(ops::relu(att1_(pooled)));
    return scale_per_channel(ops::sigmoid(logits), gate_scale_);
}

Var MaskGuidedAttention::forward(const Var& features, const Tensor& mask) const {
    const Shape& fs = features.shape();
    if (fs.c != channels_) {
        throw ShapeError("mga: expected " + std::to_string(channels_) + " channels, got " + fs.str());
    }
    if (mask.n() != fs.n || mask.c() != 1) {
        throw ShapeError("mga: mask " + mask.shape().str() + " for features " + fs.str());
    }
    Tensor small = (mask.h() == fs.h && mask.w() == fs.w) ? mask : downsample_mask(mask, fs.h, fs.w);
    const Var query = encode_query(Var(std::move(small)));
    const Var key = key_(features);
    const Var kernels = dkwg(query, key);
    const Var dynamic = ops::dynamic_depthwise_conv(features, kernels, config_.kernel_size);
    const Var g = gate(dynamic, features);
    return ops::add(features, ops::mul_channel(ops::sub(dynamic, features), g));
}

}  // namespace uidsc::mga
