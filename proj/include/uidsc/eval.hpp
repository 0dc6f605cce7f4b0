#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "uidsc/channel.hpp"
#include "uidsc/codec.hpp"
#include "uidsc/data.hpp"
#include "uidsc/metrics.hpp"
#include "uidsc/skb.hpp"

namespace uidsc::eval {

/// -5 to 25 dB in 2.5 dB steps.
std::vector<double> default_grid();

struct SweepSpec {
    channel::ChannelKind channel = channel::ChannelKind::Awgn;
    double h_c = 1.0;
    bool equalize = true;
    std::vector<double> grid = default_grid();
    int realizations = 10;
    std::uint64_t seed = 0;
    /// Adds a noiseless row at snr = +infinity (CSE sees an infinite SNR).
    bool transparent_row = false;

    void validate() const;
};

struct EvalSample {
    Image image;  // transmitted input s (masked image for SEG-test)
    Mask mask;
    std::string id;
};

/// Loads SEG-test style entries (image plus mask); a missing mask becomes all
/// ones. With `size` > 0 every sample is padded/cropped to size x size
/// (crop offsets seeded by the entry index). `limit` > 0 keeps the first entries.
std::vector<EvalSample> load_samples(const data::Manifest& manifest, std::size_t limit = 0, int size = 0);

struct ModelEntry {
    std::string name;
    const codec::SemanticCodec* codec = nullptr;
};

struct Row {
    std::string model;
    std::string channel;
    double snr_db = 0.0;
    std::string region;  // full | masked
    std::string metric;  // psnr | ssim | lpips
    double mean = 0.0;
    double stderr_ = 0.0;
    std::size_t n = 0;
    std::string source;  // producing model, for combination rows
};

struct Table {
    std::vector<Row> rows;

    const Row* find(const std::string& model, double snr_db, const std::string& region,
                    const std::string& metric) const;
    /// Mean values ordered by snr for one (model, region, metric).
    std::vector<std::pair<double, double>> curve(const std::string& model, const std::string& region,
                                                 const std::string& metric) const;
};

/// Every (model, snr) cell averages metrics over images x realizations.
/// Channel draws depend only on (seed, image, snr index, realization), so all
/// models see the same gains and noise (common random numbers).
Table sweep(const SweepSpec& spec, const std::vector<ModelEntry>& models, const std::vector<EvalSample>& samples,
            const metrics::Lpips* lpips = nullptr);

struct Selection {
    double snr_db;
    double snr_train_db;
};

/// Nearest training SNR per grid point; ties go to the lower training SNR.
std::vector<Selection> combination_selection(const std::vector<double>& snr_train_db, const std::vector<double>& grid);

/// Appends rows named `name` built from the fixed-SNR models' rows
/// (`fixed` maps training SNR to model name already present in `table`).
void combination_curve(Table& table, const std::map<double, std::string>& fixed, const std::vector<double>& grid,
                       const std::string& name = "DJSCC_COMBINATION");

/// Columns: model,channel,snr_db,region,metric,mean,stderr,n,source
void write_csv(const std::filesystem::path& path, const Table& table);
Table read_csv(const std::filesystem::path& path);
/// One file per (metric, region): <dir>/<metric>_<region>.csv with columns
/// snr_db then one mean column per model.
std::vector<std::filesystem::path> write_plot_data(const std::filesystem::path& dir, const Table& table);

/// Spearman rank correlation (average ranks for ties).
double spearman(const std::vector<double>& x, const std::vector<double>& y);

struct TransmitResult {
    Image original;
    Mask mask;
    Image masked;
    Image reconstruction;
    metrics::MetricRecord full;
    metrics::MetricRecord masked_region;
    codec::PipelineDiagnostics diagnostics;
};

/// Resolves the instruction, masks the image, sends it once through the
/// channel and writes original.png, mask.png, masked.png,
/// reconstruction.png and metrics.json to `out_dir`.
TransmitResult transmit_demo(const Image& image, const std::string& image_id, const std::string& instruction,
                             skb::MaskProvider& provider, double snr_db, const channel::ChannelConfig& channel,
                             const codec::SemanticCodec& model, const std::filesystem::path& out_dir,
                             const metrics::Lpips* lpips = nullptr);

}  // namespace uidsc::eval
