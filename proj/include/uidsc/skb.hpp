#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <semaphore>
#include <string>
#include <string_view>
#include <vector>

#include "uidsc/coco.hpp"
#include "uidsc/config.hpp"
#include "uidsc/image.hpp"

/// Intent-to-mask providers: given an image and an instruction, return the
/// binary region the user wants transmitted.
namespace uidsc::skb {

struct IntentRequest {
    Image image;
    std::string image_id;  // annotation image id or file name, for the oracle
    std::string instruction;
};

class MaskProvider {
public:
    virtual ~MaskProvider() = default;
    /// Binary H x W x 1 mask matching the request image.
    virtual Mask provide_mask(const IntentRequest& request) = 0;
    virtual std::string kind() const = 0;
};

/// s = m * I, broadcast over colour channels.
Image apply_mask(const Image& image, const Mask& mask);

/// `transmit:<category>[#<index>]`; the index selects one instance in
/// annotation-id order.
struct OracleInstruction {
    std::string category;
    std::optional<int> index;
};

std::optional<OracleInstruction> parse_oracle_instruction(std::string_view instruction);

/// Resolves grammar instructions against ground-truth annotations. Free text
/// goes to `fallback` when one is set, otherwise IntentResolutionError.
class AnnotationOracle : public MaskProvider {
public:
    explicit AnnotationOracle(coco::Dataset dataset, std::shared_ptr<MaskProvider> fallback = nullptr);

    Mask provide_mask(const IntentRequest& request) override;
    std::string kind() const override { return "oracle"; }

private:
    const coco::ImageInfo& resolve_image(const std::string& image_id) const;

    coco::Dataset dataset_;
    std::shared_ptr<MaskProvider> fallback_;
};

// Remote service wire format, version 1.
//   request:  {"version": 1, "image": base64 PNG, "instruction": utf-8}
//   response: {"version": 1, "height": H, "width": W, "confidence": c,
//              "mask_rle": [run lengths, row-major, first run is background]}
//          or "mask_probs": [H*W row-major probabilities] instead of mask_rle.
inline constexpr int kWireVersion = 1;

std::string base64_encode(const std::vector<std::uint8_t>& bytes);
std::vector<std::uint8_t> base64_decode(const std::string& text);

Json encode_request(const Image& image, const std::string& instruction);
/// Throws ServiceError on any malformed or mismatched response.
Mask decode_response(const Json& response, int height, int width, double threshold = 0.5);
/// Row-major run lengths of a binary mask, starting with background.
std::vector<std::uint32_t> row_major_rle(const Mask& mask);

struct RemoteOptions {
    std::string url;  // http://host:port/path
    std::chrono::milliseconds timeout{30000};
    double threshold = 0.5;
};

/// HTTP client for an external segmentation service. At most
/// `kMaxInFlight` requests run concurrently per client.
class RemoteMaskProvider : public MaskProvider {
public:
    static constexpr std::ptrdiff_t kMaxInFlight = 4;

    explicit RemoteMaskProvider(RemoteOptions options);

    Mask provide_mask(const IntentRequest& request) override;
    std::string kind() const override { return "remote"; }

private:
    RemoteOptions options_;
    std::string host_;
    std::string path_;
    std::counting_semaphore<kMaxInFlight> slots_{kMaxInFlight};
};

/// $UIDSC_CACHE_DIR, else $HOME/.cache/uidsc/masks.
std::filesystem::path default_cache_dir();

/// Disk cache in front of another provider. Layout:
///   <dir>/<sha256 of image PNG bytes>/<sha256 of instruction>.png
/// Entries are written to a temporary file and renamed into place.
class CachedMaskProvider : public MaskProvider {
public:
    CachedMaskProvider(std::shared_ptr<MaskProvider> inner, std::filesystem::path dir);

    Mask provide_mask(const IntentRequest& request) override;
    std::string kind() const override { return inner_->kind(); }

    std::filesystem::path entry_path(const Image& image, const std::string& instruction) const;
    std::size_t hits() const { return hits_; }

private:
    std::shared_ptr<MaskProvider> inner_;
    std::filesystem::path dir_;
    std::atomic<std::size_t> hits_{0};
};

}  // namespace uidsc::skb
