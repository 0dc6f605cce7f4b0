#include "uidsc/codec.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "uidsc/errors.hpp"
#include "uidsc/rng.hpp"
#include "uidsc/tensor_archive.hpp"

namespace uidsc::codec {

void CodecConfig::validate() const {
    if (stage_channels.empty()) throw ConfigError("codec.stage_channels must not be empty");
    if (stage_channels.size() != downsample_factors.size()) {
        throw ConfigError("codec.stage_channels and codec.downsample_factors differ in length");
    }
    for (int c : stage_channels)
        if (c < 1) throw ConfigError("codec.stage_channels entries must be >= 1");
    for (int f : downsample_factors)
        if (f < 1) throw ConfigError("codec.downsample_factors entries must be >= 1");
    if (latent_channels != stage_channels.back()) {
        throw ConfigError("codec.latent_channels must equal the last stage channel count");
    }
    if (first_kernel < 1 || first_kernel % 2 == 0 || kernel < 1 || kernel % 2 == 0) {
        throw ConfigError("codec kernel sizes must be odd and >= 1");
    }
    for (int i : mga_block_indices)
        if (i < 0 || i >= stages()) throw ConfigError("codec.mga_block_indices out of range");
    mga.validate();
}

int CodecConfig::total_factor() const {
    int f = 1;
    for (int d : downsample_factors) f *= d;
    return f;
}

void CodecConfig::check_resolution(int height, int width) const {
    const int f = total_factor();
    if (height < f || width < f || height % f != 0 || width % f != 0) {
        throw ShapeError("resolution " + std::to_string(height) + "x" + std::to_string(width) +
                         " is not divisible by the total downsampling factor " + std::to_string(f));
    }
}

std::size_t CodecConfig::latent_size(int height, int width) const {
    check_resolution(height, width);
    const int f = total_factor();
    return static_cast<std::size_t>(height / f) * (width / f) * latent_channels;
}

double CodecConfig::bandwidth_ratio(int height, int width) const {
    return static_cast<double>(latent_size(height, width)) / (2.0 * height * width * 3.0);
}

Json to_json(const CodecConfig& c) {
    return Json{
        {"stage_channels", c.stage_channels},
        {"downsample_factors", c.downsample_factors},
        {"latent_channels", c.latent_channels},
        {"first_kernel", c.first_kernel},
        {"kernel", c.kernel},
        {"use_cse", c.use_cse},
        {"use_mga", c.use_mga},
        {"mga_block_indices", c.mga_block_indices},
        {"mga",
         {{"kernel_size", c.mga.kernel_size},
          {"hidden_channels", c.mga.hidden_channels},
          {"reduction", c.mga.reduction},
          {"gate_bias", c.mga.gate_bias},
          {"gate_scale_init", c.mga.gate_scale_init}}},
        {"cse",
         {{"scale", c.cse.scale == cse::MapScale::Raw ? "raw" : "log10"},
          {"gradient_through_map", c.cse.gradient_through_map}}},
        {"norm", c.norm == ops::NormMode::Batch ? "batch" : "instance"},
    };
}

CodecConfig codec_config_from_json(const Json& node) {
    CodecConfig c;
    StrictReader r(node, "model");
    r.read("stage_channels", c.stage_channels);
    r.read("downsample_factors", c.downsample_factors);
    c.latent_channels = c.stage_channels.empty() ? 0 : c.stage_channels.back();
    r.read("latent_channels", c.latent_channels);
    r.read("first_kernel", c.first_kernel);
    r.read("kernel", c.kernel);
    r.read("use_cse", c.use_cse);
    r.read("use_mga", c.use_mga);
    r.read("mga_block_indices", c.mga_block_indices);
    {
        StrictReader m = r.child("mga");
        m.read("kernel_size", c.mga.kernel_size);
        m.read("hidden_channels", c.mga.hidden_channels);
        m.read("reduction", c.mga.reduction);
        m.read("gate_bias", c.mga.gate_bias);
        m.read("gate_scale_init", c.mga.gate_scale_init);
        m.finish();
    }
    {
        StrictReader s = r.child("cse");
        std::string scale = "raw";
        s.read("scale", scale);
        if (scale == "raw") c.cse.scale = cse::MapScale::Raw;
        else if (scale == "log10") c.cse.scale = cse::MapScale::Log10;
        else throw ConfigError("model.cse.scale must be raw or log10");
        s.read("gradient_through_map", c.cse.gradient_through_map);
        s.finish();
    }
    std::string norm = "batch";
    r.read("norm", norm);
    if (norm == "batch") c.norm = ops::NormMode::Batch;
    else if (norm == "instance") c.norm = ops::NormMode::Instance;
    else throw ConfigError("model.norm must be batch or instance");
    r.finish();
    c.validate();
    return c;
}

SemanticCodec::SemanticCodec(CodecConfig config, std::uint64_t init_seed) : config_(std::move(config)) {
    config_.validate();
    nn::InitRng rng(derive_seed(init_seed, {1}));
    // MGA draws from its own stream so the shared trunk initializes identically
    // with and without attention.
    nn::InitRng mga_rng(derive_seed(init_seed, {2}));
    const int stages = config_.stages();
    const int cse_extra = config_.use_cse ? 1 : 0;
    const std::set<int> mga_at(config_.mga_block_indices.begin(), config_.mga_block_indices.end());

    attention_.resize(static_cast<std::size_t>(stages));
    for (int i = 0; i < stages; ++i) {
        const int in_c = (i == 0 ? 3 : config_.stage_channels[i - 1]) + cse_extra;
        const std::string name = "enc." + std::to_string(i);
        encoder_.push_back({nn::ConvBnPrelu::create(store_, name + ".cbp", in_c, config_.stage_channels[i],
                                                   config_.kernel_for_stage(i),
                                                   config_.downsample_factors[i], rng)});
        if (config_.use_mga && mga_at.count(i)) {
            attention_[i] = mga::MaskGuidedAttention::create(store_, "mga." + std::to_string(i),
                                                             config_.stage_channels[i], config_.mga,
                                                             mga_rng);
        }
    }
    for (int j = 0; j < stages; ++j) {
        const int mirror = stages - 1 - j;
        const int in_c = config_.stage_channels[mirror] + cse_extra;
        const int out_c = mirror == 0 ? config_.stage_channels[0] : config_.stage_channels[mirror - 1];
        const std::string name = "dec." + std::to_string(j);
        DecoderStage st;
        st.up = nn::ConvTranspose2d::create(store_, name + ".up", in_c, out_c,
                                            config_.kernel_for_stage(mirror),
                                            config_.downsample_factors[mirror], rng);
        st.up_bn = nn::BatchNorm2d::create(store_, name + ".up_bn", out_c);
        st.up_act = nn::PRelu::create(store_, name + ".up_act", out_c);
        st.refine = nn::ConvBnPrelu::create(store_, name + ".refine", out_c, out_c, config_.kernel, 1, rng);
        decoder_.push_back(std::move(st));
    }
    head_conv_ = nn::Conv2d::create(store_, "dec.head.conv", config_.stage_channels[0], 3, config_.kernel, 1, rng);
    head_bn_ = nn::BatchNorm2d::create(store_, "dec.head.bn", 3);
}

Var SemanticCodec::se_block(int stage, const Var& x, std::span<const double> snr_db,
                            const nn::Context& ctx) const {
    if (stage < 0 || stage >= config_.stages()) throw ShapeError("se_block: no stage " + std::to_string(stage));
    const int f = config_.downsample_factors[stage];
    if (x.shape().h % f != 0 || x.shape().w % f != 0) {
        throw ShapeError("se_block " + std::to_string(stage) + ": input " + x.shape().str() +
                         " not divisible by factor " + std::to_string(f));
    }
    const Var in = config_.use_cse ? cse::embed_noise_map(x, snr_db, config_.cse) : x;
    return encoder_[stage].cbp(in, ctx);
}

Var SemanticCodec::sd_block(int stage, const Var& x, std::span<const double> snr_db,
                            const nn::Context& ctx) const {
    if (stage < 0 || stage >= config_.stages()) throw ShapeError("sd_block: no stage " + std::to_string(stage));
    const auto& st = decoder_[stage];
    const Var in = config_.use_cse ? cse::embed_noise_map(x, snr_db, config_.cse) : x;
    const Var up = st.up_act(st.up_bn(st.up(in), ctx));
    return st.refine(up, ctx);
}

Var SemanticCodec::encode(const Var& images, const Tensor& masks, std::span<const double> snr_db,
                          const nn::Context& ctx, std::vector<double>* tx_scales) const {
    const Shape& s = images.shape();
    if (s.c != 3) throw ShapeError("encode: images must have 3 channels, got " + s.str());
    config_.check_resolution(s.h, s.w);
    if (config_.use_mga && (masks.n() != s.n || masks.c() != 1 || masks.h() != s.h || masks.w() != s.w)) {
        throw ShapeError("encode: mask " + masks.shape().str() + " does not match images " + s.str());
    }
    Var x = images;
    for (int i = 0; i < config_.stages(); ++i) {
        x = se_block(i, x, snr_db, ctx);
        if (config_.use_mga && attention_[i].channels() > 0) x = attention_[i].forward(x, masks);
    }
    return ops::power_normalize(ops::flatten_hwc(x), tx_scales);
}

Var SemanticCodec::decode(const Var& latent, std::span<const double> snr_db, const nn::Context& ctx,
                          int height, int width) const {
    const std::size_t expected = config_.latent_size(height, width);
    if (latent.shape().per_sample() != expected) {
        throw ShapeError("decode: latent of " + std::to_string(latent.shape().per_sample()) +
                         " reals, expected " + std::to_string(expected) + " for " +
                         std::to_string(height) + "x" + std::to_string(width));
    }
    const int f = config_.total_factor();
    Var x = ops::unflatten_hwc(latent, config_.latent_channels, height / f, width / f);
    for (int j = 0; j < config_.stages(); ++j) x = sd_block(j, x, snr_db, ctx);
    return ops::sigmoid(head_bn_(head_conv_(x), ctx));
}

namespace {

Tensor mask_tensor(const Image& image, const Mask& mask) {
    if (mask.empty()) return Tensor(Shape{1, 1, image.height, image.width}, 1.0);
    if (!mask.same_geometry(image) || mask.channels != 1) {
        throw ShapeError("mask geometry does not match the image");
    }
    return to_tensor(mask);
}

}  // namespace

channel::ComplexSignal encode(const SemanticCodec& codec, const Image& image, const Mask& mask,
                              double snr_db) {
    NoGradGuard guard;
    const double snr[] = {snr_db};
    const Var z = codec.encode(Var(to_tensor(image)), mask_tensor(image, mask), snr, nn::Context{});
    return channel::to_complex(z.value().values());
}

Image decode(const SemanticCodec& codec, const channel::ComplexSignal& received, double snr_db,
             int height, int width) {
    NoGradGuard guard;
    const auto real = channel::from_complex(received);
    const double snr[] = {snr_db};
    const Var latent(Tensor(Shape{1, static_cast<int>(real.size()), 1, 1}, real));
    return from_tensor(codec.decode(latent, snr, nn::Context{}, height, width).value());
}

PipelineOutput run_pipeline(const SemanticCodec& codec, const Var& images, const Tensor& masks,
                            std::span<const double> snr_db, channel::Channel& channel,
                            const nn::Context& ctx) {
    const Shape& s = images.shape();
    if (snr_db.size() != static_cast<std::size_t>(s.n)) {
        throw ShapeError("run_pipeline: " + std::to_string(snr_db.size()) + " SNR values for " +
                         std::to_string(s.n) + " images");
    }
    PipelineOutput out;
    auto& diag = out.diagnostics;
    out.transmitted = codec.encode(images, masks, snr_db, ctx, &diag.tx_scale);
    diag.bandwidth_ratio = codec.config().bandwidth_ratio(s.h, s.w);

    const Tensor& z = out.transmitted.value();
    const std::size_t len = z.shape().per_sample();
    const std::size_t k = len / 2;
    Tensor noise(z.shape());
    std::vector<channel::Complex> gains(static_cast<std::size_t>(s.n));
    std::vector<channel::Complex> inverse(gains.size(), {1.0, 0.0});
    bool faded = false;
    bool equalized = false;
    for (int n = 0; n < s.n; ++n) {
        const double* zs = z.sample(n);
        double energy = 0.0;
        for (std::size_t i = 0; i < len; ++i) energy += zs[i] * zs[i];
        const double power = energy / static_cast<double>(k);
        channel::Realization r = channel.draw(k, power, snr_db[n]);
        double* ns = noise.sample(n);
        double noise_energy = 0.0;
        for (std::size_t j = 0; j < k; ++j) {
            ns[2 * j] = r.noise[j].real();
            ns[2 * j + 1] = r.noise[j].imag();
            noise_energy += std::norm(r.noise[j]);
        }
        gains[n] = r.gain;
        faded = faded || r.gain != channel::Complex(1.0, 0.0);
        diag.gains.push_back(r.gain);
        diag.noise_variance.push_back(r.noise_variance);
        diag.measured_snr_db.push_back(noise_energy == 0.0
                                           ? std::numeric_limits<double>::infinity()
                                           : 10.0 * std::log10(power * static_cast<double>(k) / noise_energy));
        bool deep = false;
        if (channel.config().equalize && r.gain != channel::Complex(1.0, 0.0)) {
            if (std::abs(r.gain) > channel::kDeepFadeThreshold) {
                inverse[n] = 1.0 / r.gain;
                equalized = true;
            } else {
                deep = true;
            }
        }
        diag.deep_fade.push_back(deep);
    }
    Var y = faded ? ops::complex_scale(out.transmitted, gains) : out.transmitted;
    y = ops::add_constant(y, noise);
    if (equalized) y = ops::complex_scale(y, inverse);
    out.reconstruction = codec.decode(y, snr_db, ctx, s.h, s.w);
    return out;
}

ImageResult forward_pipeline(const SemanticCodec& codec, const Image& image, const Mask& mask,
                             double snr_db, channel::Channel& channel) {
    NoGradGuard guard;
    const double snr[] = {snr_db};
    PipelineOutput out = run_pipeline(codec, Var(to_tensor(image)), mask_tensor(image, mask), snr,
                                      channel, nn::Context{});
    return {from_tensor(out.reconstruction.value()), std::move(out.diagnostics)};
}

void save_checkpoint(const std::filesystem::path& path, const SemanticCodec& codec, const Json& info) {
    TensorArchive archive;
    archive.meta = {{"kind", "uidsc-codec"}, {"codec", to_json(codec.config())}, {"info", info}};
    for (const auto& [name, v] : codec.params().all()) archive.tensors.emplace(name, v.value());
    write_archive(path, archive);
}

namespace {

std::vector<std::string> copy_weights(SemanticCodec& codec, const TensorArchive& archive,
                                      const std::string& source) {
    std::vector<std::string> problems;
    for (const auto& [name, t] : archive.tensors) {
        if (!codec.params().contains(name)) {
            problems.push_back(name + " (not in model)");
            continue;
        }
        const Shape& want = codec.params().get(name).shape();
        if (!(want == t.shape())) problems.push_back(name + " (" + t.shape().str() + " vs model " + want.str() + ")");
    }
    if (!problems.empty()) {
        std::string msg = source + ": incompatible tensors:";
        for (const auto& p : problems) msg += " " + p + ";";
        throw CheckpointError(msg);
    }
    std::vector<std::string> missing;
    for (auto& [name, v] : codec.params().all()) {
        auto it = archive.tensors.find(name);
        if (it == archive.tensors.end()) {
            missing.push_back(name);
            continue;
        }
        Var handle = v;
        handle.mutable_value() = it->second;
    }
    return missing;
}

}  // namespace

LoadedModel load_checkpoint(const std::filesystem::path& path) {
    TensorArchive archive = read_archive(path);
    if (archive.meta.value("kind", "") != "uidsc-codec") {
        throw CheckpointError(path.string() + " is not a codec checkpoint");
    }
    CodecConfig config = codec_config_from_json(archive.meta.at("codec"));
    LoadedModel model{SemanticCodec(config, 0), archive.meta.value("info", Json::object())};
    const auto missing = copy_weights(model.codec, archive, path.string());
    if (!missing.empty()) throw CheckpointError(path.string() + ": missing tensor " + missing.front());
    return model;
}

std::vector<std::string> load_weights(SemanticCodec& codec, const std::filesystem::path& path) {
    return copy_weights(codec, read_archive(path), path.string());
}

}  // namespace uidsc::codec
