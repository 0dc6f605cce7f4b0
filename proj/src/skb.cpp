#include "uidsc/skb.hpp"

#include <openssl/evp.h>

#include <cstdlib>
#include <regex>

#include "httplib.h"
#include "uidsc/errors.hpp"
#include "uidsc/tensor_archive.hpp"

namespace uidsc::skb {

Image apply_mask(const Image& image, const Mask& mask) {
    if (!mask.same_geometry(image) || mask.channels != 1) {
        throw ShapeError("apply_mask: mask " + std::to_string(mask.height) + "x" + std::to_string(mask.width) +
                         "x" + std::to_string(mask.channels) + " does not match image " +
                         std::to_string(image.height) + "x" + std::to_string(image.width));
    }
    Image out = image;
    const std::size_t pixels = static_cast<std::size_t>(image.height) * image.width;
    for (std::size_t p = 0; p < pixels; ++p) {
        for (int c = 0; c < image.channels; ++c) out.data[p * image.channels + c] *= mask.data[p];
    }
    return out;
}

std::optional<OracleInstruction> parse_oracle_instruction(std::string_view instruction) {
    static const std::regex grammar(R"(^\s*transmit:([^#\s][^#]*?)(?:#(\d+))?\s*$)");
    std::match_results<std::string_view::const_iterator> m;
    if (!std::regex_match(instruction.begin(), instruction.end(), m, grammar)) return std::nullopt;
    OracleInstruction out;
    out.category = m[1].str();
    if (m[2].matched) out.index = std::stoi(m[2].str());
    return out;
}

AnnotationOracle::AnnotationOracle(coco::Dataset dataset, std::shared_ptr<MaskProvider> fallback)
    : dataset_(std::move(dataset)), fallback_(std::move(fallback)) {
    dataset_.index();
}

const coco::ImageInfo& AnnotationOracle::resolve_image(const std::string& image_id) const {
    const coco::ImageInfo* info = dataset_.find_image_by_name(image_id);
    if (!info) {
        try {
            std::size_t used = 0;
            const long long id = std::stoll(image_id, &used);
            if (used == image_id.size()) info = dataset_.find_image(id);
        } catch (const std::exception&) {
        }
    }
    if (!info) throw IntentResolutionError("image '" + image_id + "' is not in the annotations");
    return *info;
}

Mask AnnotationOracle::provide_mask(const IntentRequest& request) {
    if (request.instruction.empty()) throw IntentResolutionError("empty instruction");
    const auto parsed = parse_oracle_instruction(request.instruction);
    if (!parsed) {
        if (fallback_) return fallback_->provide_mask(request);
        throw IntentResolutionError("instruction '" + request.instruction +
                                    "' does not match transmit:<category>[#<index>] and no remote provider is configured");
    }
    const coco::ImageInfo& info = resolve_image(request.image_id);
    if (!request.image.empty() && (request.image.height != info.height || request.image.width != info.width)) {
        throw ShapeError("image " + request.image_id + " does not match its annotated size");
    }
    const coco::Category* category = dataset_.find_category(parsed->category);
    if (!category) throw IntentResolutionError("unknown category '" + parsed->category + "'");

    std::vector<const coco::Annotation*> instances;
    for (const auto* a : dataset_.annotations_for(info.id))
        if (a->category_id == category->id) instances.push_back(a);
    if (instances.empty()) {
        throw IntentResolutionError("no '" + parsed->category + "' instance in image " + request.image_id);
    }
    if (parsed->index) {
        if (*parsed->index >= static_cast<int>(instances.size())) {
            throw IntentResolutionError("image " + request.image_id + " has " + std::to_string(instances.size()) +
                                        " '" + parsed->category + "' instances, index " +
                                        std::to_string(*parsed->index) + " requested");
        }
        instances = {instances[*parsed->index]};
    }
    Mask mask(info.height, info.width, 1);
    for (const auto* a : instances) {
        const Mask part = coco::rasterize(a->segmentation, info.height, info.width);
        for (std::size_t p = 0; p < mask.data.size(); ++p) mask.data[p] = std::max(mask.data[p], part.data[p]);
    }
    return mask;
}

std::string base64_encode(const std::vector<std::uint8_t>& bytes) {
    std::string out(4 * ((bytes.size() + 2) / 3), '\0');
    const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()), bytes.data(),
                                  static_cast<int>(bytes.size()));
    out.resize(static_cast<std::size_t>(n));
    return out;
}

std::vector<std::uint8_t> base64_decode(const std::string& text) {
    if (text.size() % 4 != 0) throw ServiceError("base64 payload length is not a multiple of 4");
    std::vector<std::uint8_t> out(3 * text.size() / 4);
    const int n = EVP_DecodeBlock(out.data(), reinterpret_cast<const unsigned char*>(text.data()),
                                  static_cast<int>(text.size()));
    if (n < 0) throw ServiceError("invalid base64 payload");
    std::size_t len = static_cast<std::size_t>(n);
    // EVP_DecodeBlock keeps the zero bytes produced by '=' padding.
    for (std::size_t i = text.size(); i > 0 && text[i - 1] == '=' && len > 0; --i) --len;
    out.resize(len);
    return out;
}

Json encode_request(const Image& image, const std::string& instruction) {
    return {{"version", kWireVersion}, {"image", base64_encode(encode_png(image))}, {"instruction", instruction}};
}

std::vector<std::uint32_t> row_major_rle(const Mask& mask) {
    std::vector<std::uint32_t> counts;
    bool current = false;
    std::uint32_t run = 0;
    for (double v : mask.data) {
        const bool on = v >= 0.5;
        if (on != current) {
            counts.push_back(run);
            run = 0;
            current = on;
        }
        ++run;
    }
    counts.push_back(run);
    return counts;
}

Mask decode_response(const Json& response, int height, int width, double threshold) {
    try {
        if (!response.is_object()) throw ServiceError("mask service response is not an object");
        if (response.value("version", -1) != kWireVersion) {
            throw ServiceError("mask service answered with unsupported version " + response.value("version", Json()).dump());
        }
        if (response.at("height").get<int>() != height || response.at("width").get<int>() != width) {
            throw ServiceError("mask service returned a mask of the wrong size");
        }
        Mask mask(height, width, 1);
        const std::size_t total = mask.data.size();
        if (response.contains("mask_rle")) {
            const auto counts = response.at("mask_rle").get<std::vector<std::uint32_t>>();
            std::size_t pos = 0;
            for (std::size_t i = 0; i < counts.size(); ++i) {
                if (pos + counts[i] > total) throw ServiceError("mask_rle overruns the image");
                if (i % 2 == 1) std::fill_n(mask.data.begin() + static_cast<std::ptrdiff_t>(pos), counts[i], 1.0);
                pos += counts[i];
            }
            if (pos != total) throw ServiceError("mask_rle covers " + std::to_string(pos) + " of " + std::to_string(total) + " pixels");
        } else if (response.contains("mask_probs")) {
            const auto probs = response.at("mask_probs").get<std::vector<double>>();
            if (probs.size() != total) throw ServiceError("mask_probs has the wrong length");
            for (std::size_t p = 0; p < total; ++p) mask.data[p] = probs[p] >= threshold ? 1.0 : 0.0;
        } else {
            throw ServiceError("mask service response has neither mask_rle nor mask_probs");
        }
        return mask;
    } catch (const nlohmann::json::exception& e) {
        throw ServiceError(std::string("malformed mask service response: ") + e.what());
    }
}

RemoteMaskProvider::RemoteMaskProvider(RemoteOptions options) : options_(std::move(options)) {
    static const std::regex url_re(R"(^(http://[^/]+)(/.*)?$)");
    std::smatch m;
    if (!std::regex_match(options_.url, m, url_re)) {
        throw ConfigError("remote mask service URL must look like http://host:port/path, got '" + options_.url + "'");
    }
    host_ = m[1].str();
    path_ = m[2].matched ? m[2].str() : "/";
}

Mask RemoteMaskProvider::provide_mask(const IntentRequest& request) {
    if (request.instruction.empty()) throw IntentResolutionError("empty instruction");
    if (request.image.empty()) throw ShapeError("remote mask provider needs the image pixels");
    const std::string body = encode_request(request.image, request.instruction).dump();

    slots_.acquire();
    struct Release {
        std::counting_semaphore<kMaxInFlight>& s;
        ~Release() { s.release(); }
    } release{slots_};

    httplib::Client client(host_);
    const auto seconds = std::chrono::duration_cast<std::chrono::seconds>(options_.timeout);
    const auto micros = std::chrono::duration_cast<std::chrono::microseconds>(options_.timeout - seconds);
    client.set_connection_timeout(seconds.count(), micros.count());
    client.set_read_timeout(seconds.count(), micros.count());
    client.set_write_timeout(seconds.count(), micros.count());
    auto result = client.Post(path_, body, "application/json");
    if (!result) {
        throw ServiceError("mask service request to " + options_.url + " failed: " + httplib::to_string(result.error()));
    }
    if (result->status != 200) {
        throw ServiceError("mask service returned HTTP " + std::to_string(result->status));
    }
    Json response;
    try {
        response = Json::parse(result->body);
    } catch (const nlohmann::json::exception& e) {
        throw ServiceError(std::string("mask service returned invalid JSON: ") + e.what());
    }
    return decode_response(response, request.image.height, request.image.width, options_.threshold);
}

std::filesystem::path default_cache_dir() {
    if (const char* dir = std::getenv("UIDSC_CACHE_DIR"); dir && *dir) return dir;
    if (const char* home = std::getenv("HOME"); home && *home) {
        return std::filesystem::path(home) / ".cache" / "uidsc" / "masks";
    }
    return std::filesystem::temp_directory_path() / "uidsc-masks";
}

CachedMaskProvider::CachedMaskProvider(std::shared_ptr<MaskProvider> inner, std::filesystem::path dir)
    : inner_(std::move(inner)), dir_(std::move(dir)) {}

std::filesystem::path CachedMaskProvider::entry_path(const Image& image, const std::string& instruction) const {
    return dir_ / sha256_hex(encode_png(image)) / (sha256_hex(instruction) + ".png");
}

Mask CachedMaskProvider::provide_mask(const IntentRequest& request) {
    if (request.image.empty()) return inner_->provide_mask(request);
    const auto path = entry_path(request.image, request.instruction);
    if (std::filesystem::exists(path)) {
        Mask cached = load_image(path, 1);
        if (cached.same_geometry(request.image)) {
            ++hits_;
            return cached;
        }
    }
    Mask mask = inner_->provide_mask(request);
    const auto png = encode_png(mask);
    write_file_atomic(path, std::string(png.begin(), png.end()));
    return mask;
}

}  // namespace uidsc::skb
