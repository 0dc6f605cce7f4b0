#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "uidsc/channel.hpp"
#include "uidsc/codec.hpp"
#include "uidsc/config.hpp"
#include "uidsc/data.hpp"
#include "uidsc/nn.hpp"

namespace uidsc::train {

struct SnrSampling {
    double low_db = -5.0;
    double high_db = 25.0;
    std::optional<double> fixed_db;  // point mass: fixed-SNR baseline training

    double draw(Rng& rng) const;
};

struct TrainConfig {
    int stage = 1;
    double learning_rate = 1e-4;
    int batch_size = 32;
    int epochs = 100;
    int image_size = 256;
    std::string optimizer = "adam";  // or "sgd"
    double clip_norm = 1.0;
    SnrSampling snr;
    channel::ChannelKind channel = channel::ChannelKind::Awgn;
    double h_c = 1.0;
    bool equalize = true;
    std::uint64_t seed = 0;
    int checkpoint_every = 0;  // epochs between snapshots; 0 keeps only the final checkpoint
    codec::CodecConfig model;
    std::filesystem::path manifest;                     // ORI-train (stage 1) or SEG-train (stage 2)
    std::optional<std::filesystem::path> mask_manifest;  // MASK-train
    std::optional<std::filesystem::path> init_from;      // stage-1 checkpoint, required for stage 2
    std::filesystem::path out_dir = "runs/train";

    void validate() const;
};

/// Full default tree, used for strict parsing and `--set` overrides.
Json default_config_json();
Json to_json(const TrainConfig& config);
TrainConfig train_config_from_json(const Json& node);

/// Mean squared error over every pixel and batch entry.
double loss_l2(const Tensor& s, const Tensor& s_hat);

struct EpochRecord {
    int epoch = 0;
    double mean_loss = 0.0;
    std::size_t steps = 0;
    double mean_grad_norm = 0.0;
    double seconds = 0.0;
};

struct TrainReport {
    std::vector<EpochRecord> epochs;
    double wall_seconds = 0.0;
    std::filesystem::path checkpoint;
    Json config;

    std::vector<double> loss_series() const;
};

/// Called after every epoch; return false to stop early.
using EpochCallback = std::function<bool(const EpochRecord&, const codec::SemanticCodec&)>;

/// Trains on `set`. `out_dir/report.jsonl` receives one record per line
/// (config, one per epoch, final); `out_dir/checkpoint.uidsc` holds the
/// final weights. A non-finite loss writes `nan_snapshot.uidsc` and throws
/// NumericError.
TrainReport fit(const TrainConfig& config, codec::SemanticCodec& model, const data::TrainingSet& set,
                const EpochCallback& on_epoch = {});

/// Stage 1: fresh model without MGA on ORI-train, all-ones masks.
TrainReport train_stage1(const TrainConfig& config, const EpochCallback& on_epoch = {});
/// Stage 2: warm start from `config.init_from` on aligned SEG-train /
/// MASK-train. The trunk architecture comes from the stage-1 checkpoint;
/// `model.use_mga` and the MGA settings come from `config`.
TrainReport train_stage2(const TrainConfig& config, const EpochCallback& on_epoch = {});

/// Builds the codec for `config` and, for stage 2, loads the stage-1 weights.
codec::SemanticCodec make_model(const TrainConfig& config);

}  // namespace uidsc::train
