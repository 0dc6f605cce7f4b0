#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "uidsc/channel.hpp"
#include "uidsc/config.hpp"
#include "uidsc/cse.hpp"
#include "uidsc/image.hpp"
#include "uidsc/mga.hpp"
#include "uidsc/nn.hpp"

namespace uidsc::codec {

struct CodecConfig {
    std::vector<int> stage_channels{32, 64, 128, 16};
    std::vector<int> downsample_factors{2, 2, 2, 2};
    int latent_channels = 16;   // must equal stage_channels.back()
    int first_kernel = 5;
    int kernel = 3;
    bool use_cse = true;        // false: SNR-agnostic trunk (fixed-SNR baseline)
    bool use_mga = false;
    std::vector<int> mga_block_indices{0};  // MGA follows these encoder blocks
    mga::MgaConfig mga;
    cse::CseOptions cse;
    ops::NormMode norm = ops::NormMode::Batch;

    void validate() const;
    int total_factor() const;
    int stages() const { return static_cast<int>(stage_channels.size()); }
    int kernel_for_stage(int stage) const { return stage == 0 ? first_kernel : kernel; }
    /// Throws ShapeError unless the total downsampling divides both sides.
    void check_resolution(int height, int width) const;
    /// Real latent dimensions per image = 2 * complex symbols.
    std::size_t latent_size(int height, int width) const;
    /// Complex symbols per real source dimension: k / (H * W * 3).
    double bandwidth_ratio(int height, int width) const;
};

Json to_json(const CodecConfig& config);
CodecConfig codec_config_from_json(const Json& node);

/// Encoder/decoder pair with all parameters (theta, zeta and optional MGA).
class SemanticCodec {
public:
    SemanticCodec(CodecConfig config, std::uint64_t init_seed);

    const CodecConfig& config() const { return config_; }
    nn::ParamStore& params() { return store_; }
    const nn::ParamStore& params() const { return store_; }

    /// Encoder stage `i`: noise map (when CSE is on), then strided CBP.
    Var se_block(int stage, const Var& x, std::span<const double> snr_db, const nn::Context& ctx) const;
    /// Decoder stage `j`: noise map, transposed CBP upsampling, CBP refinement.
    Var sd_block(int stage, const Var& x, std::span<const double> snr_db, const nn::Context& ctx) const;

    /// (N,3,H,W) images and (N,1,H,W) masks -> (N, 2k, 1, 1) power-normalized latent.
    Var encode(const Var& images, const Tensor& masks, std::span<const double> snr_db,
               const nn::Context& ctx, std::vector<double>* tx_scales = nullptr) const;
    /// (N, 2k, 1, 1) received latent -> (N, 3, H, W) reconstruction in (0, 1).
    Var decode(const Var& latent, std::span<const double> snr_db, const nn::Context& ctx,
               int height, int width) const;

private:
    struct EncoderStage {
        nn::ConvBnPrelu cbp;
    };
    struct DecoderStage {
        nn::ConvTranspose2d up;
        nn::BatchNorm2d up_bn;
        nn::PRelu up_act;
        nn::ConvBnPrelu refine;
    };

    CodecConfig config_;
    nn::ParamStore store_;
    std::vector<EncoderStage> encoder_;
    std::vector<mga::MaskGuidedAttention> attention_;  // indexed by encoder stage, may be empty
    std::vector<DecoderStage> decoder_;
    nn::Conv2d head_conv_;
    nn::BatchNorm2d head_bn_;
};

// Single-image forms. Images are H x W x 3 in [0,1]; masks H x W x 1.
channel::ComplexSignal encode(const SemanticCodec& codec, const Image& image, const Mask& mask,
                              double snr_db);
Image decode(const SemanticCodec& codec, const channel::ComplexSignal& received, double snr_db,
             int height, int width);

struct PipelineDiagnostics {
    std::vector<double> measured_snr_db;
    std::vector<channel::Complex> gains;
    std::vector<double> noise_variance;
    std::vector<double> tx_scale;
    std::vector<bool> deep_fade;  // equalization skipped, raw signal decoded
    double bandwidth_ratio = 0.0;
};

struct PipelineOutput {
    Var reconstruction;  // (N, 3, H, W)
    Var transmitted;     // (N, 2k, 1, 1) unit-power latent
    PipelineDiagnostics diagnostics;
};

/// encode -> channel (one realization per sample) -> optional equalization -> decode.
/// Channel randomness enters as constants, so the result is differentiable.
PipelineOutput run_pipeline(const SemanticCodec& codec, const Var& images, const Tensor& masks,
                            std::span<const double> snr_db, channel::Channel& channel,
                            const nn::Context& ctx);

struct ImageResult {
    Image reconstruction;
    PipelineDiagnostics diagnostics;
};

ImageResult forward_pipeline(const SemanticCodec& codec, const Image& image, const Mask& mask,
                             double snr_db, channel::Channel& channel);

// Checkpoints: tensor archive with meta {"kind": "uidsc-codec", "codec": config, "info": ...}.
void save_checkpoint(const std::filesystem::path& path, const SemanticCodec& codec,
                     const Json& info = Json::object());

struct LoadedModel {
    SemanticCodec codec;
    Json info;
};

LoadedModel load_checkpoint(const std::filesystem::path& path);

/// Copies archive tensors into a model whose parameters are a superset
/// (warm start). Shape mismatches and unknown names are reported together.
/// Returns the model parameter names absent from the archive.
std::vector<std::string> load_weights(SemanticCodec& codec, const std::filesystem::path& path);

}  // namespace uidsc::codec
