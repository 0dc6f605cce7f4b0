#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "uidsc/coco.hpp"
#include "uidsc/image.hpp"
#include "uidsc/rng.hpp"
#include "uidsc/tensor.hpp"

namespace uidsc::data {

inline constexpr const char* kOriTrain = "ORI-train";
inline constexpr const char* kSegTrain = "SEG-train";
inline constexpr const char* kMaskTrain = "MASK-train";
inline constexpr const char* kSegTest = "SEG-test";
inline constexpr const char* kSynth = "SYNTH";

struct ManifestEntry {
    std::filesystem::path image;
    std::optional<std::filesystem::path> mask;
    std::int64_t image_id = 0;
    std::int64_t annotation_id = -1;  // -1 for whole-image entries
};

/// One split. On disk: one JSON object per line with keys split, image,
/// mask (optional), image_id and annotation_id; paths relative to the file.
struct Manifest {
    std::string split;
    std::vector<ManifestEntry> entries;

    std::size_t size() const { return entries.size(); }
    bool empty() const { return entries.empty(); }
};

void write_manifest(const std::filesystem::path& path, const Manifest& manifest);
Manifest read_manifest(const std::filesystem::path& path);

struct CropResult {
    Image image;
    Mask mask;       // empty when no mask was given
    int offset_y = 0;  // top-left of the crop window in the input (0 when padded)
    int offset_x = 0;
};

/// Output is size x size. Sides longer than `size` are cropped at a uniform
/// random offset; shorter sides are zero-padded at the bottom/right. The same
/// geometry is applied to image and mask.
CropResult crop_or_pad(const Image& image, const Mask* mask, int size, Rng& rng);

struct SplitOptions {
    int test_count = 1000;  // images drawn for SEG-test
    std::uint64_t seed = 0;
    double min_area = 1.0;  // instances with fewer mask pixels are skipped
    double max_skip_fraction = 0.10;
    /// When set, SEG-test is drawn from this pool instead of the training one.
    std::optional<std::filesystem::path> test_annotations;
    std::optional<std::filesystem::path> test_image_dir;
};

struct SkipRecord {
    std::string item;
    std::string reason;
};

struct SplitResult {
    Manifest ori_train;
    Manifest seg_train;
    Manifest mask_train;
    Manifest seg_test;
    std::vector<SkipRecord> skipped;
    std::size_t considered = 0;
};

/// Writes ori/, seg/, mask/ PNGs (lossless), the four manifests
/// (<split>.jsonl) and skip_report.json under `out_dir`.
/// SEG-test holds one sample per selected test image: its largest instance.
/// Throws DataError when more than `max_skip_fraction` of items are skipped.
SplitResult build_splits(const std::filesystem::path& annotation_file, const std::filesystem::path& image_dir,
                         const std::filesystem::path& out_dir, const SplitOptions& options);

struct SynthOptions {
    int count = 100;
    int size = 64;
    std::uint64_t seed = 0;
    int max_shapes = 3;
};

/// Random ellipses and rectangles over textured noise. Writes
/// images/synth_<i>.png, annotations.json (rectangles as polygons when fully
/// visible, otherwise compressed RLE; ellipses as uncompressed RLE) and
/// SYNTH.jsonl. Instance masks are the visible part of each shape.
Manifest synth_generate(const std::filesystem::path& out_dir, const SynthOptions& options);

/// Analytic renderers shared by the generator and its tests.
Mask render_ellipse(int height, int width, double cx, double cy, double rx, double ry);
Mask render_rectangle(int height, int width, int x0, int y0, int x1, int y1);

/// (image, mask) training pairs. Stage 1 uses images alone; stage 2 pairs
/// SEG images with their MASK entries.
struct TrainingSet {
    std::vector<std::filesystem::path> images;
    std::vector<std::optional<std::filesystem::path>> masks;
    std::vector<std::string> ids;

    std::size_t size() const { return images.size(); }
};

TrainingSet training_set(const Manifest& images);
/// Pairs index-aligned SEG and MASK manifests; mismatched ids raise DataError.
TrainingSet training_set(const Manifest& images, const Manifest& masks);

struct Batch {
    Tensor images;  // (N, 3, S, S)
    Tensor masks;   // (N, 1, S, S), all ones where no mask exists
    std::vector<std::string> ids;
};

/// Seeded epoch order and batch assembly. The last batch may be partial.
class BatchStream {
public:
    BatchStream(const TrainingSet& set, int batch_size, int image_size, std::uint64_t seed);

    std::size_t batches_per_epoch() const;
    /// Sample indices of every batch of `epoch`, shuffled by (seed, epoch).
    std::vector<std::vector<std::size_t>> epoch_order(int epoch) const;
    /// Loads and crops one batch; crops are seeded by (seed, epoch, sample).
    Batch load(const std::vector<std::size_t>& indices, int epoch) const;

private:
    TrainingSet set_;
    int batch_size_;
    int image_size_;
    std::uint64_t seed_;
};

}  // namespace uidsc::data
