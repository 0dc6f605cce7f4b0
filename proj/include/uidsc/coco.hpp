#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "uidsc/config.hpp"
#include "uidsc/image.hpp"

/// Instance-segmentation interchange annotations: the `images`,
/// `annotations` and `categories` arrays, with polygon, uncompressed RLE and
/// compressed (string) RLE segmentations.
namespace uidsc::coco {

struct ImageInfo {
    std::int64_t id = 0;
    std::string file_name;
    int height = 0;
    int width = 0;
};

struct Category {
    std::int64_t id = 0;
    std::string name;
};

struct Annotation {
    std::int64_t id = 0;
    std::int64_t image_id = 0;
    std::int64_t category_id = 0;
    bool iscrowd = false;
    Json segmentation;  // decoded lazily so one bad entry does not sink the file
};

/// Column-major run lengths, starting with a (possibly empty) run of zeros.
struct Rle {
    int height = 0;
    int width = 0;
    std::vector<std::uint32_t> counts;
};

class Dataset {
public:
    std::vector<ImageInfo> images;
    std::vector<Annotation> annotations;
    std::vector<Category> categories;

    /// Builds lookup tables; call after filling the arrays.
    void index();

    const ImageInfo* find_image(std::int64_t id) const;
    const ImageInfo* find_image_by_name(const std::string& file_name) const;
    const Category* find_category(std::int64_t id) const;
    const Category* find_category(const std::string& name) const;
    /// Annotations of one image, ordered by annotation id.
    std::vector<const Annotation*> annotations_for(std::int64_t image_id) const;

private:
    std::map<std::int64_t, std::size_t> image_index_;
    std::map<std::string, std::size_t> name_index_;
    std::map<std::int64_t, std::vector<std::size_t>> by_image_;
};

/// Structural problems (missing arrays, wrong types) raise DataError.
Dataset parse(const Json& root);
Dataset load(const std::filesystem::path& path);
Json to_json(const Dataset& dataset);

/// Union of polygons; a pixel is inside when its centre is inside under the
/// even-odd rule. Coordinates are in pixels with (0,0) at the top-left corner.
Mask rasterize_polygons(const std::vector<std::vector<double>>& polygons, int height, int width);

Mask rle_to_mask(const Rle& rle);
Rle mask_to_rle(const Mask& mask);
/// Compact LEB128-like string form of the counts (pycocotools-compatible).
std::string rle_to_string(const Rle& rle);
Rle rle_from_string(const std::string& text, int height, int width);

/// Decodes any supported segmentation variant. Throws DataError on malformed
/// input or a size that disagrees with the image.
Mask rasterize(const Json& segmentation, int height, int width);

}  // namespace uidsc::coco
